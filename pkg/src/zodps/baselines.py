"""Comparison samplers: proximal sampler with a rejection-sampling RGO, and In-and-Out.

Both are batched over independent chains.  Chain c of a run uses streams
``seed.replace(k=update, i=c, ...)``, so a chain's trajectory does not depend on
how many other chains run beside it or on which of them have been removed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import Ensemble, Purpose, SeedSpec, per_particle
from .potentials import PotentialOracle, ToriDomain

__all__ = [
    "RgoConfig",
    "InOutConfig",
    "RgoStuck",
    "RgoStats",
    "InOutStats",
    "nelder_mead_batch",
    "rgo_step",
    "proximal_run",
    "in_and_out_step",
    "in_and_out_run",
]

_RGO_BLOCK = 8


class RgoStuck(RuntimeError):
    def __init__(self, rejections: int):
        super().__init__(f"RGO rejected {rejections} proposals in a row")
        self.rejections = rejections


@dataclass(frozen=True)
class RgoConfig:
    eta: float
    chains: int = 100
    thinning: int = 10
    max_rejections: int = 10_000
    optimizer_budget: int = 200
    # lowers the acceptance minorant: fewer clamp events, acceptance scaled by exp(-slack)
    slack: float = 0.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.chains < 1 or self.thinning < 1 or self.max_rejections < 1:
            raise ValueError("chains, thinning and max_rejections must be >= 1")
        if self.optimizer_budget < 1:
            raise ValueError("optimizer_budget must be >= 1")


@dataclass(frozen=True)
class InOutConfig:
    h: float
    R: int = 10_000
    chains: int = 1000

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.R < 1 or self.chains < 1:
            raise ValueError("R and chains must be >= 1")


@dataclass
class RgoStats:
    rejections: int = 0
    clamp_events: int = 0
    proposals: int = 0
    stuck_chains: int = 0
    evaluations: int = 0

    @property
    def acceptance_rate(self) -> float:
        return (self.proposals - self.rejections) / self.proposals if self.proposals else float("nan")


@dataclass
class InOutStats:
    proposals: int = 0
    discarded: int = 0
    survivors: int = 0


def nelder_mead_batch(
    fun: Callable[[np.ndarray, np.ndarray], np.ndarray],
    x0: np.ndarray,
    step: float,
    budget: int,
    xatol: float = 0.0,
    fatol: float = 0.0,
):
    """Minimize B independent problems with the Nelder-Mead simplex method.

    ``fun(points, rows)`` evaluates problem ``rows[m]`` at ``points[m]``.  Each
    problem stops once it has used ``budget`` evaluations or its simplex has
    collapsed below (xatol, fatol).  Returns (x_best, f_best, evaluations).
    Ties are broken in favour of the earlier vertex, and the start point is
    vertex 0, so a constant objective returns x0 exactly.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    B, d = x0.shape
    simplex = np.repeat(x0[:, None, :], d + 1, axis=1)
    simplex[:, 1:, :] += step * np.eye(d)
    rows_all = np.repeat(np.arange(B), d + 1)
    fs = fun(simplex.reshape(-1, d), rows_all).reshape(B, d + 1)
    nev = np.full(B, d + 1)
    active = nev < budget

    while np.any(active):
        a = np.flatnonzero(active)
        order = np.argsort(fs[a], axis=1, kind="stable")
        S = np.take_along_axis(simplex[a], order[..., None], axis=1)
        F = np.take_along_axis(fs[a], order, axis=1)
        centroid = S[:, :-1].mean(axis=1)
        worst, f_worst, f_best, f_second = S[:, -1], F[:, -1], F[:, 0], F[:, -2]

        xr = 2.0 * centroid - worst
        fr = fun(xr, a)
        nev[a] += 1
        new_x, new_f = xr.copy(), fr.copy()
        replace = (fr >= f_best) & (fr < f_second)

        exp_m = fr < f_best
        if np.any(exp_m):
            xe = 3.0 * centroid[exp_m] - 2.0 * worst[exp_m]
            fe = fun(xe, a[exp_m])
            nev[a[exp_m]] += 1
            better = fe < fr[exp_m]
            new_x[exp_m] = np.where(better[:, None], xe, xr[exp_m])
            new_f[exp_m] = np.where(better, fe, fr[exp_m])
            replace |= exp_m

        shrink = np.zeros(a.size, dtype=bool)
        con_m = fr >= f_second
        if np.any(con_m):
            outside = fr[con_m] < f_worst[con_m]
            target = np.where(outside[:, None], xr[con_m], worst[con_m])
            xc = centroid[con_m] + 0.5 * (target - centroid[con_m])
            fc = fun(xc, a[con_m])
            nev[a[con_m]] += 1
            ok = np.where(outside, fc <= fr[con_m], fc < f_worst[con_m])
            idx = np.flatnonzero(con_m)
            new_x[idx[ok]] = xc[ok]
            new_f[idx[ok]] = fc[ok]
            replace[idx[ok]] = True
            shrink[idx[~ok]] = True

        S[replace, -1] = new_x[replace]
        F[replace, -1] = new_f[replace]
        if np.any(shrink):
            S[shrink, 1:] = S[shrink, :1] + 0.5 * (S[shrink, 1:] - S[shrink, :1])
            pts = S[shrink, 1:].reshape(-1, d)
            F[shrink, 1:] = fun(pts, np.repeat(a[shrink], d)).reshape(-1, d)
            nev[a[shrink]] += d

        simplex[a], fs[a] = S, F
        spread_x = np.max(np.abs(S[:, 1:] - S[:, :1]), axis=(1, 2))
        spread_f = np.max(F, axis=1) - np.min(F, axis=1)
        done = (nev[a] >= budget) | ((spread_x <= xatol) & (spread_f <= fatol))
        active[a[done]] = False

    best = np.argmin(fs, axis=1)
    rows = np.arange(B)
    return simplex[rows, best], fs[rows, best], nev


def _rgo_batch(Y, eta, oracle, config: RgoConfig, seeds: list[SeedSpec], stats: RgoStats):
    """Exact-by-rejection draws from exp(-f(x) - |x - y_b|^2 / (2 eta)) for each row of Y.

    Proposal N(x*, eta I) around the minimizer x* of g_y = f + |. - y|^2/(2 eta).
    Since grad f(x*) = (y - x*)/eta at a stationary point, the acceptance
    exponent f(x) - f(x*) + <x - x*, x* - y>/eta is f minus its tangent plane;
    it is >= 0 for convex f.  Negative values are clamped and counted.
    Returns (X, stuck mask).
    """
    B, d = Y.shape
    inv2eta = 0.5 / eta

    def g(points, rows):
        diff = points - Y[rows]
        return oracle.evaluate_batch(points) + inv2eta * np.einsum("ij,ij->i", diff, diff)

    scale = math.sqrt(eta)
    x_star, _, nev = nelder_mead_batch(
        g, Y, scale, config.optimizer_budget, xatol=1e-3 * scale, fatol=1e-6
    )
    f_star = oracle.evaluate_batch(x_star)
    stats.evaluations += int(nev.sum()) + B
    slope = (x_star - Y) / eta

    out = np.empty_like(Y)
    stuck = np.zeros(B, dtype=bool)
    tried = np.zeros(B, dtype=np.int64)
    pending = np.arange(B)
    r = 0
    while pending.size:
        L = _RGO_BLOCK
        raw = per_particle(
            [seeds[b].replace(t=r, purpose=Purpose.RGO_PROPOSAL) for b in pending],
            lambda gen: np.concatenate([gen.standard_normal(L * d), gen.random(L)]),
        )
        xi = raw[:, : L * d].reshape(-1, L, d)
        u = raw[:, L * d :]
        cand = x_star[pending, None, :] + scale * xi
        f = oracle.evaluate_batch(cand.reshape(-1, d)).reshape(-1, L)
        stats.evaluations += f.size
        expo = f - f_star[pending, None] + np.einsum("bld,bd->bl", cand - x_star[pending, None, :], slope[pending]) + config.slack
        accept = u < np.exp(-np.maximum(expo, 0.0))
        # proposals past the rejection cap do not count
        cap = config.max_rejections - tried[pending]
        accept &= np.arange(L)[None, :] < cap[:, None]
        hit = accept.any(axis=1)
        first = np.where(hit, np.argmax(accept, axis=1), np.minimum(L, cap))
        used = np.arange(L)[None, :] < (first + hit)[:, None]
        stats.clamp_events += int(np.sum((expo < 0) & used))
        stats.proposals += int(np.sum(used))
        stats.rejections += int(np.sum(first))
        tried[pending] += first
        done_rows = pending[hit]
        out[done_rows] = cand[hit, first[hit]]
        exhausted = ~hit & (tried[pending] >= config.max_rejections)
        stuck[pending[exhausted]] = True
        pending = pending[~hit & ~exhausted]
        r += 1
    return out, stuck


def rgo_step(y, eta: float, oracle: PotentialOracle, config: RgoConfig, stream: SeedSpec, stats: Optional[RgoStats] = None):
    """One exact draw from pi(x | y) ∝ exp(-f(x) - |x - y|^2 / (2 eta)).

    Raises RgoStuck once ``config.max_rejections`` proposals have been rejected.
    """
    y = np.asarray(y, dtype=np.float64)
    stats = RgoStats() if stats is None else stats
    x, stuck = _rgo_batch(y[None, :], eta, oracle, config, [stream], stats)
    if stuck[0]:
        raise RgoStuck(config.max_rejections)
    return x[0]


Observer = Callable[[int, Ensemble, object], None]


def proximal_run(
    config: RgoConfig,
    oracle: PotentialOracle,
    init: Ensemble,
    iterations: int,
    observer: Optional[Observer] = None,
    seed: SeedSpec | int = 0,
    init_is_forward: bool = False,
) -> Ensemble:
    """Run ``iterations * config.thinning`` proximal updates on every chain.

    One update is y ~ N(x, eta I) followed by x = RGO(y).  With
    ``init_is_forward`` the initial points are taken as y and the first update
    skips its forward half.  The observer fires after every ``thinning``
    updates with the 1-based reported iteration.  Stuck chains are dropped.
    """
    if init.n != config.chains:
        raise ValueError(f"init has {init.n} particles, config.chains = {config.chains}")
    seed = SeedSpec(seed) if isinstance(seed, int) else seed
    eta = config.eta
    X = init.particles.copy()
    ids = np.arange(init.n)
    stats = RgoStats()
    for u in range(iterations * config.thinning):
        if X.shape[0]:
            if u == 0 and init_is_forward:
                Y = X
            else:
                xi = per_particle(
                    [seed.replace(k=u, i=int(c), purpose=Purpose.RGO_FORWARD) for c in ids],
                    lambda g: g.standard_normal(init.dim),
                )
                Y = X + math.sqrt(eta) * xi
            X, stuck = _rgo_batch(Y, eta, oracle, config, [seed.replace(k=u, i=int(c)) for c in ids], stats)
            if np.any(stuck):
                stats.stuck_chains += int(stuck.sum())
                X, ids = X[~stuck], ids[~stuck]
        if (u + 1) % config.thinning == 0 and observer is not None:
            observer((u + 1) // config.thinning, Ensemble(X.reshape(-1, init.dim)), stats)
            stats = RgoStats(stuck_chains=stats.stuck_chains)
    return Ensemble(X.reshape(-1, init.dim))


def _in_and_out_batch(X, h, R, membership, seeds: list[SeedSpec], stats: InOutStats):
    B, d = X.shape
    sd = math.sqrt(h)
    y = X + sd * per_particle(
        [s.replace(purpose=Purpose.INOUT_Y) for s in seeds], lambda g: g.standard_normal(d)
    ).reshape(B, d)
    out = np.empty_like(X)
    accepted = np.zeros(B, dtype=bool)
    tried = 0
    pending = np.arange(B)
    r = 0
    while pending.size and tried < R:
        L = min(16 << min(r, 6), R - tried)
        xi = per_particle(
            [seeds[b].replace(t=r, purpose=Purpose.INOUT_X) for b in pending],
            lambda g: g.standard_normal(L * d),
        ).reshape(-1, L, d)
        cand = y[pending, None, :] + sd * xi
        inside = np.asarray(membership(cand.reshape(-1, d))).reshape(-1, L)
        hit = inside.any(axis=1)
        first = np.argmax(inside, axis=1)
        stats.proposals += int(np.sum(np.where(hit, first + 1, L)))
        out[pending[hit]] = cand[hit, first[hit]]
        accepted[pending[hit]] = True
        pending = pending[~hit]
        tried += L
        r += 1
    return out, accepted


def in_and_out_step(x, config: InOutConfig, domain: ToriDomain, stream: SeedSpec, membership=None):
    """One In-and-Out transition; returns the new point, or None if discarded.

    ``membership`` overrides ``domain.contains``.
    """
    member = domain.contains if membership is None else membership
    x = np.asarray(x, dtype=np.float64)
    out, ok = _in_and_out_batch(x[None, :], config.h, config.R, member, [stream], InOutStats())
    return out[0] if ok[0] else None


def in_and_out_run(
    config: InOutConfig,
    domain: ToriDomain,
    init: Ensemble,
    iterations: int,
    observer: Optional[Observer] = None,
    seed: SeedSpec | int = 0,
    membership=None,
) -> Ensemble:
    """Iterate In-and-Out on every chain; discarded chains leave the ensemble."""
    if init.n != config.chains:
        raise ValueError(f"init has {init.n} particles, config.chains = {config.chains}")
    seed = SeedSpec(seed) if isinstance(seed, int) else seed
    member = domain.contains if membership is None else membership
    X = init.particles.copy()
    ids = np.arange(init.n)
    for k in range(iterations):
        stats = InOutStats()
        if X.shape[0]:
            X, ok = _in_and_out_batch(
                X, config.h, config.R, member, [seed.replace(k=k, i=int(c)) for c in ids], stats
            )
            stats.discarded = int(np.sum(~ok))
            X, ids = X[ok], ids[ok]
        stats.survivors = X.shape[0]
        if observer is not None:
            observer(k + 1, Ensemble(X.reshape(-1, init.dim)), stats)
        if X.shape[0] == 0:
            break
    return Ensemble(X.reshape(-1, init.dim))
