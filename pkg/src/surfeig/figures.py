"""Matplotlib renderings written next to the CSV outputs.

Every CLI command that emits a delimited file can also drop a PNG beside
it: eigenvalue-versus-mass curves, optimization traces, dispersion curves,
latitude profiles, and 3D surface maps of densities or level sets.
"""

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from mpl_toolkits.mplot3d.art3d import Poly3DCollection  # noqa: E402


def save_curves(path, masses, series, ylabel="eigenvalue", title=None):
    """Line plot of one or more curves over mass; ``series`` is {label: values}."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, values in series.items():
        ax.plot(masses, values, marker="o", markersize=3, label=label)
    ax.set_xlabel("mass m")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_trace(path, trace, title=None):
    """Objective / eigenvalue window / mass / step over iterations."""
    fig, axes = plt.subplots(2, 2, figsize=(9.0, 6.0))
    it = np.arange(trace.iterations)
    axes[0, 0].plot(it, trace.objective)
    axes[0, 0].set_title("objective")
    for j in range(trace.eigenvalues.shape[1]):
        axes[0, 1].plot(it, trace.eigenvalues[:, j], lw=0.8)
    axes[0, 1].set_title("eigenvalue window")
    axes[1, 0].plot(it, trace.mass)
    axes[1, 0].set_title("mass / area")
    axes[1, 1].semilogy(it, np.maximum(trace.step, 1e-16))
    axes[1, 1].set_title("step size")
    for ax in axes.flat:
        ax.grid(alpha=0.3)
        ax.set_xlabel("iteration")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_surface(path, mesh, values, title=None, cmap="coolwarm"):
    """3D rendering of a per-vertex field as flat-shaded triangles."""
    tri_vals = np.asarray(values)[mesh.triangles].mean(axis=1)
    polys = mesh.vertices[mesh.triangles]
    norm = plt.Normalize(vmin=float(np.min(values)), vmax=float(max(np.max(values), np.min(values) + 1e-12)))
    colors = plt.get_cmap(cmap)(norm(tri_vals))

    fig = plt.figure(figsize=(6.0, 6.0))
    ax = fig.add_subplot(111, projection="3d")
    coll = Poly3DCollection(polys, facecolors=colors, edgecolors="none")
    ax.add_collection3d(coll)
    lim = np.abs(mesh.vertices).max()
    for setter in (ax.set_xlim, ax.set_ylim, ax.set_zlim):
        setter(-lim, lim)
    ax.set_box_aspect((1, 1, 1))
    ax.set_axis_off()
    if title:
        ax.set_title(title)
    fig.colorbar(plt.cm.ScalarMappable(norm=norm, cmap=cmap), ax=ax, shrink=0.6)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_profile(path, grid, values, title=None):
    """Latitude profile of a 1D density."""
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    ax.plot(grid, values, drawstyle="steps-mid")
    ax.set_xlabel("latitude theta")
    ax.set_ylabel("density")
    ax.set_ylim(-0.05, 1.05)
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_dispersion(path, n_values, ratios_by_mass, title=None):
    """Dispersion ratio versus element count, one curve per mass."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for m, ratios in ratios_by_mass.items():
        ax.plot(n_values, ratios, marker="s", label=f"m={m}")
    ax.set_xlabel("elements N")
    ax.set_ylabel("dispersion ratio h(N)/h(100)")
    ax.set_xscale("log")
    ax.legend()
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
