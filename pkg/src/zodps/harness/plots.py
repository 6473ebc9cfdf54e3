"""Matplotlib figures written to SVG next to the CSV outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from ..core import Ensemble
from ..potentials import ToriDomain

# fixed hash salt and no date stamp keep SVG output reproducible
plt.rcParams["svg.hashsalt"] = "zodps"
_SVG_META = {"Date": None, "Creator": None}


def _figure(width=6.0, height=None):
    golden = (np.sqrt(5) - 1.0) / 2.0
    fig, ax = plt.subplots(figsize=(width, height or width * golden))
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    return fig, ax


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def plot_kl_curves(curves: dict, path, log_y: bool = True) -> None:
    """One line per series (mean KL) with a band of +/- one seed standard deviation."""
    fig, ax = _figure()
    for label, points in curves.items():
        pts = [p for p in points if p.kl_mean is not None]
        if not pts:
            continue
        it = np.array([p.iteration for p in pts])
        mean = np.array([p.kl_mean for p in pts])
        sd = np.sqrt(np.array([p.kl_variance or 0.0 for p in pts]))
        (line,) = ax.plot(it, mean, label=label, lw=1.5)
        lo = mean - sd
        if log_y:
            lo = np.maximum(lo, np.min(mean[mean > 0]) * 0.1 if np.any(mean > 0) else 1e-3)
        ax.fill_between(it, lo, mean + sd, color=line.get_color(), alpha=0.2, lw=0)
    if log_y and all(
        p.kl_mean is None or p.kl_mean > 0 for pts in curves.values() for p in pts
    ):
        ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("KL divergence (nats)")
    ax.legend(frameon=False)
    _save(fig, path)


def plot_occupancy(points, path, title: str = "") -> None:
    fig, ax = _figure()
    pts = [p for p in points if p.occ_t1_mean is not None]
    it = [p.iteration for p in pts]
    ax.plot(it, [p.occ_t1_mean for p in pts], label="$T_1$")
    ax.plot(it, [p.occ_t2_mean for p in pts], label="$T_2$")
    ax.plot(it, [p.occ_out_mean for p in pts], label="outside", ls="--")
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean particle count")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    _save(fig, path)


def plot_marginal(counts, reference_counts, value_range, path, coordinate: int = 2) -> None:
    """Normalized histogram of one coordinate, optionally over a reference histogram."""
    bins = len(counts)
    edges = np.linspace(value_range[0], value_range[1], bins + 1)
    width = edges[1] - edges[0]
    fig, ax = _figure()
    if reference_counts is not None and np.sum(reference_counts) > 0:
        ref = np.asarray(reference_counts) / (np.sum(reference_counts) * width)
        ax.bar(edges[:-1], ref, width=width, align="edge", color="0.8", label="reference")
    if np.sum(counts) > 0:
        dens = np.asarray(counts) / (np.sum(counts) * width)
        ax.step(edges, np.append(dens, dens[-1]), where="post", lw=1.5, label="samples")
    ax.set_xlabel(f"$x_{{{coordinate + 1}}}$")
    ax.set_ylabel("density")
    ax.legend(frameon=False)
    _save(fig, path)


def plot_projection(ensemble: Ensemble, path, domain: ToriDomain | None = None, title: str = "") -> None:
    """Particles projected along the third coordinate, colored by region."""
    domain = domain or ToriDomain()
    fig, ax = _figure(6.0, 3.5)
    x = ensemble.particles
    if x.shape[0]:
        region = domain.region(x)
        for r, (label, color) in enumerate([("$T_1$", "C0"), ("$T_2$", "C1"), ("outside", "0.5")]):
            sel = region == r
            ax.scatter(x[sel, 0], x[sel, 1], s=2, color=color, label=label)
    theta = np.linspace(0, 2 * np.pi, 200)
    for torus in (domain.t1, domain.t2):
        for radius in (torus.major - torus.minor, torus.major + torus.minor):
            ax.plot(torus.center[0] + radius * np.cos(theta), torus.center[1] + radius * np.sin(theta), lw=0.5, color="k")
    ax.set_aspect("equal")
    ax.set_xlabel("$x_1$")
    ax.set_ylabel("$x_2$")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, markerscale=4, fontsize="small")
    _save(fig, path)
