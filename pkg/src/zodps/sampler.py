"""Zeroth-order diffusive proximal sampler.

One outer iteration perturbs the ensemble with Gaussian noise of variance ``h``
and then integrates a surrogate reverse heat flow from variance ``h`` down to
``sigma_min^2`` with Euler-Maruyama.  The reverse drift at a query point ``z``
is a self-normalized Monte Carlo average over draws from a Gaussian-mixture
posterior built from the perturbed particles, reweighted by exp(-f).

Arrays inside the engine carry a leading chain axis, shape (C, N, d): C
independent systems of N interacting particles.  The interacting sampler uses
C = 1; the ablation without interaction uses N = 1 and C chains.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (
    Ensemble,
    NoiseSchedule,
    Purpose,
    ScheduleError,
    SeedSpec,
    _inverse_cdf,
    per_particle,
)
from .potentials import PotentialOracle

__all__ = [
    "ZodpsConfig",
    "PosteriorMixture",
    "SamplerError",
    "IterationStats",
    "forward_step",
    "mixture_log_density",
    "posterior_params",
    "estimate_score",
    "reverse_step",
    "run",
]

_LOG_2PI = math.log(2.0 * math.pi)


class SamplerError(RuntimeError):
    """A sampler failure tagged with the outer iteration where it happened."""

    def __init__(self, iteration: int, cause: BaseException):
        super().__init__(f"iteration {iteration}: {cause}")
        self.iteration = iteration
        self.cause = cause


@dataclass(frozen=True)
class ZodpsConfig:
    h: float
    K: int
    T: int
    M: int
    N: int
    schedule: NoiseSchedule
    seed: SeedSpec
    chains: int = 1

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.K < 0 or self.T < 1 or self.M < 1 or self.N < 1 or self.chains < 1:
            raise ValueError("need K >= 0 and T, M, N, chains >= 1")
        if self.schedule.T != self.T:
            raise ScheduleError(f"schedule has {self.schedule.T} steps, config says T={self.T}")
        if not math.isclose(self.schedule.h, self.h, rel_tol=1e-12, abs_tol=0.0):
            raise ScheduleError("final schedule variance must equal h")

    @classmethod
    def linear(cls, h, K, T, M, N, seed, sigma_min2=0.0, chains=1) -> "ZodpsConfig":
        if isinstance(seed, int):
            seed = SeedSpec(seed)
        return cls(h, K, T, M, N, NoiseSchedule.linear(sigma_min2, h, T), seed, chains)


@dataclass(frozen=True, eq=False)
class PosteriorMixture:
    """Posterior over x_0 given z: sum_j w_j N(m_j, shared_variance I)."""

    shared_variance: float
    means: np.ndarray
    log_weights: np.ndarray


@dataclass
class IterationStats:
    """Counters for one outer iteration."""

    degenerate_events: int = 0
    substeps: int = 0
    evaluations: int = 0


def _lse(a: np.ndarray, axis: int = -1, keepdims: bool = False) -> np.ndarray:
    top = np.max(a, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    out = np.log(np.sum(np.exp(a - top), axis=axis, keepdims=True)) + top
    return out if keepdims else np.squeeze(out, axis=axis)


def _log_gauss(sq_dist, var, d):
    return -0.5 * sq_dist / var - 0.5 * d * (_LOG_2PI + math.log(var))


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared distances over the last axis: (..., n, d) x (..., m, d) -> (..., n, m)."""
    diff = a[..., :, None, :] - b[..., None, :, :]
    return np.einsum("...ijk,...ijk->...ij", diff, diff)


def _mixture_log_density(y: np.ndarray, X: np.ndarray, h: float) -> np.ndarray:
    """log (1/N) sum_i N(y; x_i, h I) for a (..., B, d) batch against (..., N, d) centers."""
    N, d = X.shape[-2], X.shape[-1]
    return _lse(_log_gauss(_sq_dists(y, X), h, d), axis=-1) - math.log(N)


def _posterior_log_weights(Z, Y, log_alpha, h, s2):
    """Normalized log w_ij for queries Z (C, B, d) and components Y (C, N, d)."""
    d = Z.shape[-1]
    lw = _log_gauss(_sq_dists(Z, Y), h + s2, d) + log_alpha[:, None, :]
    return lw - _lse(lw, axis=-1, keepdims=True)


def _batched_inverse_cdf(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise inverse CDF lookup; cdf (R, N) nondecreasing rows, u (R, M) in [0, 1)."""
    R, N = cdf.shape
    if R == 1:
        return _inverse_cdf(cdf[0], u[0])[None]
    # shift row r into [2r, 2r + 1] so a single sorted search serves every row
    offset = 2.0 * np.arange(R)[:, None]
    idx = np.searchsorted((cdf + offset).ravel(), (u * cdf[:, -1:] + offset).ravel(), side="right")
    return np.minimum(idx.reshape(R, -1) - N * np.arange(R)[:, None], N - 1)


def _stream_grid(seed: SeedSpec, chains, particles, k, t, purpose):
    return [
        seed.replace(chain=c, k=k, i=i, t=t, purpose=purpose)
        for c in chains
        for i in particles
    ]


def _score_batch(Z, Y, log_alpha, h, s2, M, oracle, seeds):
    """Monte Carlo surrogate drift for every query in Z.

    Z: (C, B, d) queries, Y: (C, N, d) perturbed particles, log_alpha: (C, N)
    inverse-density weights.  ``seeds`` lists one stream per (c, b) in C-major
    order.  Returns (drift (C, B, d), degenerate mask (C, B)).
    """
    C, B, d = Z.shape
    lw = _posterior_log_weights(Z, Y, log_alpha, h, s2)
    cdf = np.cumsum(np.exp(lw), axis=-1)
    var_bar = h * s2 / (h + s2)

    def draw(g):
        return np.concatenate([g.random(M), g.standard_normal(M * d)])

    raw = per_particle(seeds, draw).reshape(C, B, M * (d + 1))
    u = raw[..., :M]
    xi = raw[..., M:].reshape(C, B, M, d)

    comp = _batched_inverse_cdf(cdf.reshape(C * B, -1), u.reshape(C * B, M)).reshape(C, B, M)
    y_sel = Y[np.arange(C)[:, None, None], comp]
    # m_j = (s2 y_j + h z) / (h + s2), then add sqrt(var_bar) * xi
    samples = y_sel
    samples *= s2 / (h + s2)
    samples += (h / (h + s2)) * Z[:, :, None, :]
    xi *= math.sqrt(var_bar)
    samples += xi

    f = np.asarray(oracle.evaluate_batch(samples.reshape(-1, d)), dtype=np.float64)
    if np.any(np.isnan(f)):
        raise FloatingPointError("potential returned NaN")
    log_c = -f.reshape(C, B, M)
    top = np.max(log_c, axis=-1, keepdims=True)
    degenerate = np.isneginf(top[..., 0])
    top = np.where(np.isneginf(top), 0.0, top)
    c = np.exp(log_c - top)
    total = c.sum(axis=-1, keepdims=True)
    weights = np.divide(c, total, out=np.zeros_like(c), where=total > 0)
    # weights sum to one except on degenerate queries, whose drift is zero
    live = (~degenerate)[..., None]
    drift = (np.einsum("cbl,cbld->cbd", weights, samples) - live * Z) / s2
    return drift, degenerate


def forward_step(ensemble: Ensemble, h: float, stream: SeedSpec) -> tuple[Ensemble, Ensemble]:
    """Return (Y, Z_T): two independent Gaussian perturbations of variance h.

    ``stream`` fixes master seed, chain and iteration; particle and purpose
    coordinates are filled in here.
    """
    if not h >= 0:
        raise ValueError("h must be nonnegative")
    Y, Z = _forward(ensemble.particles[None], h, stream, [stream.chain], stream.k)
    return Ensemble(Y[0]), Ensemble(Z[0])


def _forward(X, h, seed, chains, k):
    C, N, d = X.shape
    sd = math.sqrt(h)

    def normals(purpose):
        seeds = _stream_grid(seed, chains, range(N), k, 0, purpose)
        return per_particle(seeds, lambda g: g.standard_normal(d)).reshape(C, N, d)

    return X + sd * normals(Purpose.FORWARD_Y), X + sd * normals(Purpose.FORWARD_Z)


def mixture_log_density(y, X: Ensemble, h: float):
    """log[(1/N) sum_i N(y; x_i, h I)] for one point y or a (B, d) batch."""
    if not h > 0:
        raise ValueError("h must be positive")
    y = np.asarray(y, dtype=np.float64)
    out = _mixture_log_density(np.atleast_2d(y), X.particles, h)
    return float(out[0]) if y.ndim == 1 else out


def posterior_params(z, Y: Ensemble, X: Ensemble, h: float, sigma2: float) -> PosteriorMixture:
    """Gaussian-mixture posterior of x_0 given the noisy query z at variance sigma2."""
    if not h > 0:
        raise ValueError("h must be positive")
    if not sigma2 > 0:
        raise ScheduleError("posterior needs a positive current variance")
    if Y.n != X.n or Y.dim != X.dim:
        raise ValueError("Y and X must have the same shape")
    z = np.asarray(z, dtype=np.float64)
    var_bar = 1.0 / (1.0 / h + 1.0 / sigma2)
    means = var_bar * (Y.particles / h + z / sigma2)
    if Y.n == 1:
        # a single component carries all the weight
        return PosteriorMixture(var_bar, means, np.zeros(1))
    log_alpha = -_mixture_log_density(Y.particles, X.particles, h)
    lw = _posterior_log_weights(z[None, None, :], Y.particles[None], log_alpha[None], h, sigma2)[0, 0]
    return PosteriorMixture(var_bar, means, lw)


def estimate_score(
    z,
    Y: Ensemble,
    X: Ensemble,
    h: float,
    sigma2: float,
    M: int,
    oracle: PotentialOracle,
    stream: SeedSpec,
    return_degenerate: bool = False,
):
    """Surrogate score at ``z``: sum_l c_l (z_l - z) / sigma2 over M posterior draws.

    Draws come from ``stream`` as given.  If every draw has infinite potential
    the drift is zero; pass ``return_degenerate=True`` to also get that flag.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if not sigma2 > 0:
        raise ScheduleError("score needs a positive current variance")
    z = np.asarray(z, dtype=np.float64)
    log_alpha = -_mixture_log_density(Y.particles, X.particles, h)
    drift, degen = _score_batch(
        z[None, None, :], Y.particles[None], log_alpha[None], h, sigma2, M, oracle, [stream]
    )
    if return_degenerate:
        return drift[0, 0], bool(degen[0, 0])
    return drift[0, 0]


def _reverse(Z, Y, X, schedule, M, oracle, seed, chains, k, stats):
    C, N, d = Z.shape
    h = schedule.h
    log_alpha = -_mixture_log_density(Y, X, h)
    var = schedule.variances
    Z = Z.copy()
    for t in range(schedule.T, 0, -1):
        dt = var[t] - var[t - 1]
        seeds = _stream_grid(seed, chains, range(N), k, t, Purpose.INTERIM)
        drift, degen = _score_batch(Z, Y, log_alpha, h, var[t], M, oracle, seeds)
        noise = per_particle(
            _stream_grid(seed, chains, range(N), k, t, Purpose.EULER),
            lambda g: g.standard_normal(d),
        ).reshape(C, N, d)
        Z = Z + dt * drift + math.sqrt(dt) * noise
        if not np.all(np.isfinite(Z)):
            raise FloatingPointError(f"non-finite particle at substep {t}")
        stats.degenerate_events += int(degen.sum())
        stats.substeps += 1
        stats.evaluations += C * N * M
    return Z


def reverse_step(
    Z: Ensemble,
    Y: Ensemble,
    X: Ensemble,
    schedule: NoiseSchedule,
    M: int,
    oracle: PotentialOracle,
    stream: SeedSpec,
    stats: Optional[IterationStats] = None,
) -> Ensemble:
    """Integrate the surrogate reverse dynamics from sigma_T^2 = h down to sigma_0^2."""
    if not (Z.n == Y.n == X.n and Z.dim == Y.dim == X.dim == oracle.dim):
        raise ValueError("Z, Y, X and oracle dimensions must agree")
    stats = IterationStats() if stats is None else stats
    out = _reverse(
        Z.particles[None], Y.particles[None], X.particles[None],
        schedule, M, oracle, stream, [stream.chain], stream.k, stats,
    )
    return Ensemble(out[0])


Observer = Callable[[int, Ensemble, IterationStats], None]


def run(
    config: ZodpsConfig,
    oracle: PotentialOracle,
    init: Ensemble,
    observer: Optional[Observer] = None,
) -> Ensemble:
    """Run K outer iterations starting from ``init``.

    ``init`` holds ``chains * N`` particles, chain-major.  The observer is called
    after every outer iteration with the 1-based iteration index, the full
    ensemble and that iteration's counters.  Chain c draws from streams keyed by
    ``config.seed.replace(chain=config.seed.chain + c)``.
    """
    C, N = config.chains, config.N
    if init.n != C * N:
        raise ValueError(f"init has {init.n} particles, expected chains*N = {C * N}")
    if init.dim != oracle.dim:
        raise ValueError("init dimension does not match the oracle")
    chains = [config.seed.chain + c for c in range(C)]
    X = init.particles.reshape(C, N, init.dim).copy()
    for k in range(config.K):
        stats = IterationStats()
        try:
            Y, Z = _forward(X, config.h, config.seed, chains, k)
            X = _reverse(Z, Y, X, config.schedule, config.M, oracle, config.seed, chains, k, stats)
        except Exception as exc:
            raise SamplerError(k + 1, exc) from exc
        if observer is not None:
            observer(k + 1, Ensemble(X.reshape(C * N, -1)), stats)
    return Ensemble(X.reshape(C * N, -1))
