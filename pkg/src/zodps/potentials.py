"""Target potentials f(x), pi(x) ∝ exp(-f(x)), behind a batched zeroth-order oracle."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence, runtime_checkable

import numpy as np

from .core import Purpose, SeedSpec

__all__ = [
    "PotentialOracle",
    "FlatPotential",
    "QuadraticPotential",
    "FunctionPotential",
    "GaussianLassoTarget",
    "Torus",
    "ToriDomain",
    "ToriPotential",
    "make_orthogonal",
    "gaussian_lasso_log_density",
    "tori_membership",
    "tori_potential",
    "quadratic_potential",
]


@runtime_checkable
class PotentialOracle(Protocol):
    dim: int

    def evaluate_batch(self, x: np.ndarray) -> np.ndarray:
        """Map a (B, dim) batch to B potential values (finite or +inf)."""
        ...


def _as_batch(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {x.shape}")
    return x


def _check_values(f: np.ndarray) -> np.ndarray:
    if np.any(np.isnan(f)):
        raise FloatingPointError("potential produced NaN")
    return f


@dataclass(frozen=True)
class FlatPotential:
    dim: int

    def evaluate_batch(self, x):
        return np.zeros(_as_batch(x, self.dim).shape[0])


def quadratic_potential(x) -> np.ndarray | float:
    """||x||^2 / 2, the standard-normal potential."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * np.sum(x * x, axis=-1)


@dataclass(frozen=True)
class QuadraticPotential:
    dim: int

    def evaluate_batch(self, x):
        return quadratic_potential(_as_batch(x, self.dim))


@dataclass(frozen=True)
class FunctionPotential:
    """Adapts a vectorized callable ``fn((B, d)) -> (B,)`` to the oracle interface."""

    dim: int
    fn: Callable[[np.ndarray], np.ndarray]

    def evaluate_batch(self, x):
        x = _as_batch(x, self.dim)
        return _check_values(np.asarray(self.fn(x), dtype=np.float64).reshape(x.shape[0]))


def make_orthogonal(seed: SeedSpec, d: int) -> np.ndarray:
    """Seeded orthogonal matrix: QR of a Gaussian matrix, signs fixed by diag(R) > 0."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    g = seed.replace(purpose=Purpose.ORTHOGONAL).generator()
    q, r = np.linalg.qr(g.standard_normal((d, d)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


@dataclass(frozen=True, eq=False)
class GaussianLassoTarget:
    """Equal mixture of N(1, Q^{-1}) and a product Laplace(0, 1/4) law.

    Q = U diag(eigenvalues) U^T.  ``mean_shift`` is the all-ones vector and the
    Laplace rate is ``lasso_scale``.
    """

    eigenvalues: Sequence[float] = (14.0, 15.0, 16.0, 17.0, 18.0)
    U: np.ndarray | None = None
    lasso_scale: float = 4.0
    orthogonal_seed: int = 20240601
    Q: np.ndarray = field(init=False)

    def __post_init__(self):
        s = np.asarray(self.eigenvalues, dtype=np.float64)
        if np.any(s <= 0):
            raise ValueError("eigenvalues must be positive")
        d = s.size
        U = make_orthogonal(SeedSpec(self.orthogonal_seed), d) if self.U is None else np.asarray(self.U, float)
        Q = (U * s) @ U.T
        Q = 0.5 * (Q + Q.T)
        object.__setattr__(self, "eigenvalues", tuple(float(v) for v in s))
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "_chol", np.linalg.cholesky(Q))
        object.__setattr__(self, "_shift", np.ones(d))
        logdet = float(np.sum(np.log(s)))
        # each summand carries mass 1/2
        object.__setattr__(self, "_log_cg", 0.5 * logdet - np.log(2.0) - 0.5 * d * np.log(2 * np.pi))
        object.__setattr__(self, "_log_cl", d * np.log(self.lasso_scale / 2.0) - np.log(2.0))

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    def component_log_densities(self, x) -> np.ndarray:
        """(B, 2) array: log of the Gaussian and Laplace summands of the density."""
        x = _as_batch(x, self.dim)
        diff = x - self._shift
        w = diff @ self._chol
        gauss = self._log_cg - 0.5 * np.einsum("ij,ij->i", w, w)
        lasso = self._log_cl - self.lasso_scale * np.abs(x).sum(axis=1)
        return np.stack([gauss, lasso], axis=1)

    def log_density(self, x) -> np.ndarray:
        comps = self.component_log_densities(x)
        return np.logaddexp(comps[:, 0], comps[:, 1])

    def evaluate_batch(self, x):
        return -self.log_density(x)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Exact i.i.d. draws: pick a component with probability 1/2, then sample it."""
        d = self.dim
        pick = rng.random(n) < 0.5
        z = rng.standard_normal((n, d))
        gauss = self._shift + np.linalg.solve(self._chol.T, z.T).T
        lap = rng.laplace(0.0, 1.0 / self.lasso_scale, size=(n, d))
        return np.where(pick[:, None], gauss, lap)


def gaussian_lasso_log_density(x, target: GaussianLassoTarget):
    """Normalized log-density of the Gaussian Lasso mixture at one point or a batch."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    out = target.log_density(x)
    return float(out[0]) if x.ndim == 1 else out


@dataclass(frozen=True)
class Torus:
    """Solid torus: tube of radius ``minor`` around a ring of radius ``major``.

    The symmetry axis passes through ``center`` parallel to coordinate ``axis``.
    """

    center: tuple[float, float, float]
    major: float
    minor: float
    axis: int = 2

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = _as_batch(x, 3) - np.asarray(self.center, dtype=np.float64)
        plane = [a for a in range(3) if a != self.axis]
        radial = np.hypot(x[:, plane[0]], x[:, plane[1]])
        return (radial - self.major) ** 2 + x[:, self.axis] ** 2 <= self.minor**2


@dataclass(frozen=True)
class ToriDomain:
    t1: Torus = Torus((10.0, 0.0, 0.0), 10.0, 1.0)
    t2: Torus = Torus((-13.0, 0.0, 0.0), 3.0, 1.0)
    outside_penalty: float = 100.0

    @classmethod
    def with_axis(cls, axis: int, **kw) -> "ToriDomain":
        base = cls(**kw)
        return cls(
            Torus(base.t1.center, base.t1.major, base.t1.minor, axis),
            Torus(base.t2.center, base.t2.major, base.t2.minor, axis),
            base.outside_penalty,
        )

    def region(self, x) -> np.ndarray:
        """0 for T1, 1 for T2, 2 outside."""
        in1 = self.t1.contains(x)
        in2 = self.t2.contains(x)
        return np.where(in1, 0, np.where(in2, 1, 2))

    def contains(self, x) -> np.ndarray:
        return self.t1.contains(x) | self.t2.contains(x)


def tori_membership(x, domain: ToriDomain):
    x = np.asarray(x, dtype=np.float64)
    out = domain.contains(x)
    return bool(out[0]) if x.ndim == 1 else out


def tori_potential(x, domain: ToriDomain):
    x = np.asarray(x, dtype=np.float64)
    out = np.where(domain.contains(x), 0.0, float(domain.outside_penalty))
    return float(out[0]) if x.ndim == 1 else out


@dataclass(frozen=True)
class ToriPotential:
    domain: ToriDomain = ToriDomain()
    dim: int = 3

    def evaluate_batch(self, x):
        return tori_potential(_as_batch(x, 3), self.domain)
