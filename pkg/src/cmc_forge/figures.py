"""Static figure rendering for the CLI report path (PNG next to the data)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path):
    path = Path(path)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def helicoid_figure(path, model):
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    u = model.u_table
    axes[0].plot(u, model.psi_table, label="psi")
    axes[0].plot(u, model.g_table, label="G")
    axes[0].axvline(model.U, color="k", lw=0.6, ls="--")
    axes[0].set_xlabel("u")
    axes[0].legend(frameon=False)
    axes[0].set_title(f"pitch tables, U = {model.U:.6f}")
    vv = np.linspace(-1.5, 1.5, 61)
    for uu in np.linspace(-model.U, model.U, 13):
        pts = model.point(np.full(61, uu), vv)
        axes[1].plot(pts[:, 0], pts[:, 2], lw=0.7, color="tab:blue")
    axes[1].set_xlabel("x1")
    axes[1].set_ylabel("x3")
    axes[1].set_title("ruled profile")
    return _save(fig, path)


def field_figure(path, field, title=""):
    fig, ax = plt.subplots(figsize=(5, 4))
    dom = field.domain
    sc = ax.scatter(dom.node_base[:, 0], dom.node_base[:, 1], c=field.values,
                    s=4, cmap="viridis")
    fig.colorbar(sc, ax=ax, label="u")
    ax.set_aspect("equal")
    ax.set_title(title or "graph height")
    return _save(fig, path)


def scan_figure(path, bs, ps, root=None):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.axhline(0.0, color="k", lw=0.6)
    ax.plot(bs, ps, "o-", ms=3)
    if root is not None:
        ax.axvline(root, color="tab:red", lw=0.8, ls="--", label=f"root {root:.4f}")
        ax.legend(frameon=False)
    ax.set_xlabel("b")
    ax.set_ylabel("period")
    return _save(fig, path)


def profile_figure(path, profile, theta=None):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(profile.t, profile.alpha, label="twist")
    if theta is not None:
        ax.plot(profile.t, theta, label="frame angle")
    ax.set_xlabel("t")
    ax.legend(frameon=False)
    return _save(fig, path)


def mirror_curve_figure(path, curve, meeting_point=None):
    fig, ax = plt.subplots(figsize=(4.5, 4))
    ax.plot(curve.x, curve.y, lw=1.2)
    ax.plot([0, 0], [0, max(1.2, np.max(curve.y))], color="k", lw=0.6)
    if meeting_point is not None:
        ax.plot(*meeting_point, "r+", ms=10)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title("mirror curve and meeting point")
    return _save(fig, path)


def trace_figure(path, trace):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(trace.s, trace.eta_xi)
    ax.axhline(0.0, color="k", lw=0.6)
    ax.set_xlabel("s")
    ax.set_ylabel("vertical conormal component")
    return _save(fig, path)
