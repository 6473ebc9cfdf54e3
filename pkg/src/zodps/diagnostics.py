"""Sample-quality diagnostics: k-NN KL divergence, marginals and torus occupancy."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .core import Ensemble
from .potentials import ToriDomain

__all__ = [
    "KlEstimate",
    "DegenerateGeometryError",
    "kth_neighbor_distances",
    "knn_kl",
    "marginal_histogram",
    "torus_occupancy",
    "pool_particles",
]

DISTANCE_FLOOR = 1e-12


class DegenerateGeometryError(ValueError):
    def __init__(self, message: str, indices):
        super().__init__(f"{message}: indices {list(indices)[:10]}")
        self.indices = np.asarray(indices)


@dataclass(frozen=True)
class KlEstimate:
    value: float
    n: int
    m: int
    k: int
    floored: int = 0


def kth_neighbor_distances(points: np.ndarray, reference: np.ndarray, k: int, exclude_self: bool = False) -> np.ndarray:
    """Euclidean distance from each point to its k-th nearest neighbor in ``reference``.

    With ``exclude_self`` the two arrays are the same set and each point's own
    zero distance is skipped.
    """
    tree = cKDTree(reference)
    kk = k + 1 if exclude_self else k
    dist, _ = tree.query(points, k=kk)
    dist = dist.reshape(points.shape[0], -1)
    return dist[:, -1]


def knn_kl(samples_p: Ensemble, samples_q: Ensemble, k: int = 4, on_tie: str = "floor") -> KlEstimate:
    """Two-sample k-nearest-neighbor estimate of KL(p || q) in nats.

    (d/n) sum_i log(nu_k(i) / rho_k(i)) + log(m / (n - 1)), with rho the k-th
    neighbor distance inside ``samples_p`` and nu the one into ``samples_q``.
    Zero distances are raised to 1e-12 and counted in ``floored``; pass
    ``on_tie="raise"`` to get a DegenerateGeometryError instead.
    """
    p, q = samples_p.particles, samples_q.particles
    if p.shape[1] != q.shape[1]:
        raise ValueError("ensembles must share a dimension")
    n, m, d = p.shape[0], q.shape[0], p.shape[1]
    if k < 1 or n <= k or m < k:
        raise ValueError(f"need n > k and m >= k (n={n}, m={m}, k={k})")
    rho = kth_neighbor_distances(p, p, k, exclude_self=True)
    nu = kth_neighbor_distances(p, q, k)
    zero = (rho <= 0) | (nu <= 0)
    if np.any(zero):
        if on_tie == "raise":
            raise DegenerateGeometryError("zero neighbor distance", np.flatnonzero(zero))
        rho = np.maximum(rho, DISTANCE_FLOOR)
        nu = np.maximum(nu, DISTANCE_FLOOR)
    value = d * float(np.mean(np.log(nu / rho))) + math.log(m / (n - 1))
    return KlEstimate(value, n, m, k, int(zero.sum()))


def marginal_histogram(samples: Ensemble, coordinate: int, bins: int, range: tuple[float, float]) -> np.ndarray:
    """Counts of one coordinate in ``bins`` uniform bins over the closed ``range``."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if not 0 <= coordinate < samples.dim:
        raise ValueError(f"coordinate {coordinate} out of range for dim {samples.dim}")
    counts, _ = np.histogram(samples.particles[:, coordinate], bins=bins, range=range)
    return counts


def torus_occupancy(samples: Ensemble, domain: ToriDomain) -> tuple[int, int, int]:
    """(in T1, in T2, outside) counts."""
    if samples.dim != 3:
        raise ValueError("torus occupancy needs 3-dimensional samples")
    if samples.n == 0:
        return 0, 0, 0
    counts = np.bincount(domain.region(samples.particles), minlength=3)
    return int(counts[0]), int(counts[1]), int(counts[2])


def pool_particles(history: Sequence[Ensemble], window: int) -> tuple[Ensemble, bool]:
    """Concatenate the last ``window`` ensembles; the flag is True if fewer were available."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if not history:
        raise ValueError("empty history")
    recent = list(history[-window:])
    return Ensemble.concat(recent), len(recent) < window
