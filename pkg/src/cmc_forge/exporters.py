"""Deterministic file writers: OBJ meshes, CSV tables, JSON reports."""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

import numpy as np


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header: str, columns) -> Path:
    """Write columns under a comma-separated header, repr-exact floats."""
    path = Path(path)
    cols = [np.asarray(c) for c in columns]
    n = len(cols[0])
    lines = [header]
    for i in range(n):
        lines.append(",".join(_fmt(c[i]) for c in cols))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_manifest(path, command: str, config: dict, tolerances: dict) -> Path:
    """Run provenance: resolved config, its hash, and library versions.

    Output paths are not semantic configuration and stay out of the hash,
    so reruns into different directories produce identical manifests.
    """
    import matplotlib
    import scipy

    config = {k: v for k, v in config.items() if k not in ("out",)}
    payload = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "tolerances": tolerances,
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__,
        },
    }
    return write_json(path, payload)


def field_to_obj(path, field) -> Path:
    """'v x y u' vertices with the grid triangulation of complete cells."""
    dom = field.domain
    path = Path(path)
    lines = []
    for (xb, yb), val in zip(dom.node_base, field.values):
        lines.append(f"v {_fmt(xb)} {_fmt(yb)} {_fmt(val)}")
    nx, ny = dom.shape
    pk = dom.packed
    for i in range(nx - 1):
        for j in range(ny - 1):
            q = (pk[i, j], pk[i + 1, j], pk[i + 1, j + 1], pk[i, j + 1])
            if min(q) < 0:
                continue
            lines.append(f"f {q[0] + 1} {q[1] + 1} {q[2] + 1}")
            lines.append(f"f {q[0] + 1} {q[2] + 1} {q[3] + 1}")
    path.write_text("\n".join(lines) + "\n")
    return path


def field_to_csv(path, field) -> Path:
    dom = field.domain
    return write_csv(path, "x,y,u",
                     [dom.node_base[:, 0], dom.node_base[:, 1], field.values])


def helicoid_to_obj(path, model, u_span=None, v_span=1.5, nu: int = 96,
                    nv: int = 48) -> Path:
    """Triangulated (u, v) patch of the helicoid in ambient coordinates."""
    path = Path(path)
    u_span = u_span if u_span is not None else (-model.U, model.U)
    uu = np.linspace(u_span[0], u_span[1], nu)
    vv = np.linspace(-v_span, v_span, nv)
    lines = []
    for i, u in enumerate(uu):
        pts = model.point(np.full(nv, u), vv)
        for p in np.atleast_2d(pts):
            lines.append(f"v {_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}")
    def vid(i, j):
        return i * nv + j + 1
    for i in range(nu - 1):
        for j in range(nv - 1):
            lines.append(f"f {vid(i, j)} {vid(i + 1, j)} {vid(i + 1, j + 1)}")
            lines.append(f"f {vid(i, j)} {vid(i + 1, j + 1)} {vid(i, j + 1)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def helicoid_tables_to_csv(path, model) -> Path:
    return write_csv(path, "u,psi,G",
                     [model.u_table, model.psi_table, model.g_table])


def curve_to_csv(path, curve) -> Path:
    return write_csv(path, "t,x,y,theta,curvature",
                     [curve.t, curve.x, curve.y, curve.theta, curve.curvature])


def frame_data_to_csv(path, data, H: float | None = None) -> Path:
    """Per-curve table with partner quantities and the cumulative twist."""
    if H is None:
        H = data.params.tau
    ktilde = -data.t_tor + H
    ttilde = data.k
    rate = data.t_tor + H
    twist = np.concatenate([[0.0], np.cumsum(
        0.5 * (rate[1:] + rate[:-1]) * np.diff(data.t))])
    return write_csv(path, "t,k,t_tor,ktilde,ttilde,twist_cum",
                     [data.t, data.k, data.t_tor, ktilde, ttilde, twist])


def trace_to_csv(path, trace) -> Path:
    return write_csv(path, "s,eta_xi", [trace.s, trace.eta_xi])


def lifted_loop_to_csv(path, lifted) -> Path:
    return write_csv(path, "x,y,z",
                     [lifted[:, 0], lifted[:, 1], lifted[:, 2]])


def mirror_profile_to_csv(path, trace) -> Path:
    """Partner mirror curve of a horizontal boundary edge, in its plane.

    The vertical component of the partner tangent equals the conormal
    vertical component, so the planar profile integrates (horiz, vert)
    increments of (sqrt(1 - q^2), q)."""
    q = np.clip(trace.eta_xi, -1.0, 1.0)
    horiz = np.sqrt(1.0 - q * q)
    ds = np.diff(trace.s)
    x = np.concatenate([[0.0], np.cumsum(0.5 * (horiz[1:] + horiz[:-1]) * ds)])
    z = np.concatenate([[0.0], np.cumsum(0.5 * (q[1:] + q[:-1]) * ds)])
    return write_csv(path, "s,horiz,vert", [trace.s, x, z])
