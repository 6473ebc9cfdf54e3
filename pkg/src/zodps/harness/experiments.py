"""Experiment orchestration: per-seed runs, evaluation, sweeps and reference generation."""
from __future__ import annotations

import dataclasses
import logging
import math
import os
import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..baselines import InOutConfig, RgoConfig, RgoStats, RgoStuck, in_and_out_run, proximal_run
from ..core import Ensemble, Purpose, SeedSpec
from ..diagnostics import knn_kl, marginal_histogram, pool_particles, torus_occupancy
from ..potentials import (
    FlatPotential,
    GaussianLassoTarget,
    QuadraticPotential,
    ToriDomain,
    ToriPotential,
)
from ..sampler import SamplerError, ZodpsConfig, run as zodps_run
from . import io as hio
from . import plots
from .config import ConfigError, ExperimentConfig, validate

log = logging.getLogger(__name__)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


@dataclass
class SeedResult:
    seed: int
    records: list
    final: Optional[Ensemble]
    error: Optional[str] = None


@dataclass
class ExperimentResult:
    status: int
    files: list = field(default_factory=list)
    per_seed: dict = field(default_factory=dict)
    aggregate: list = field(default_factory=list)


def build_target(cfg: ExperimentConfig):
    t = cfg.target
    if t.kind == "lasso":
        return GaussianLassoTarget(orthogonal_seed=t.orthogonal_seed)
    if t.kind == "tori":
        return ToriPotential(ToriDomain.with_axis(t.torus_axis, outside_penalty=t.outside_penalty))
    if t.kind == "flat":
        return FlatPotential(t.dim)
    return QuadraticPotential(t.dim)


def load_reference(cfg: ExperimentConfig, target) -> Optional[Ensemble]:
    e = cfg.eval
    if not e.kl:
        return None
    if e.reference == "exact":
        if not hasattr(target, "sample"):
            raise ConfigError(["the configured target has no exact sampler"])
        g = SeedSpec(e.reference_seed, purpose=Purpose.REFERENCE).generator()
        return Ensemble(target.sample(e.reference_size, g))
    ens, _ = hio.read_ensemble(e.reference)
    if ens.dim != cfg.target.dim:
        raise ConfigError([f"reference {e.reference} has dim {ens.dim}, target has {cfg.target.dim}"])
    return ens


def particles_per_iteration(cfg: ExperimentConfig) -> int:
    if cfg.sampler in ("zodps", "zodps-no-interaction"):
        return cfg.zodps.N * cfg.zodps.chains
    if cfg.sampler == "rgo":
        return cfg.rgo.chains
    return cfg.inout.chains


def pooling_window(cfg: ExperimentConfig) -> int:
    if cfg.eval.pool_size > 0:
        return max(1, math.ceil(cfg.eval.pool_size / particles_per_iteration(cfg)))
    return cfg.eval.window


def _initial(cfg: ExperimentConfig, seed: int) -> Ensemble:
    n = particles_per_iteration(cfg)
    g = SeedSpec(seed, purpose=Purpose.INIT).generator()
    return Ensemble(cfg.init.mean + cfg.init.std * g.standard_normal((n, cfg.target.dim)))


def _prefix(cfg: ExperimentConfig, seed: int) -> str:
    return f"{cfg.name}_seed{seed}"


def run_seed(cfg: ExperimentConfig, seed: int, out_dir: Optional[Path] = None, reference=None) -> SeedResult:
    """One full run for one master seed; records every iteration, evaluates on the cadence."""
    target = build_target(cfg)
    init = _initial(cfg, seed)
    window = pooling_window(cfg)
    history: deque = deque(maxlen=window)
    records: list[hio.RunRecord] = []
    domain = target.domain if isinstance(target, ToriPotential) else None
    start = time.perf_counter()

    def observe(k: int, ens: Ensemble, stats) -> None:
        history.append(ens)
        rec = hio.RunRecord(iteration=k, wall_time=time.perf_counter() - start)
        rec.degenerate_events = getattr(stats, "degenerate_events", 0)
        if isinstance(stats, RgoStats):
            rec.rgo_rejections = stats.rejections
        if k % cfg.eval.cadence == 0:
            if reference is not None and ens.n > 0:
                pooled, short = pool_particles(list(history), window)
                if pooled.n > cfg.eval.k:
                    rec.kl = knn_kl(pooled, reference, cfg.eval.k).value
                rec.short_window = short
            if cfg.eval.occupancy and domain is not None:
                rec.occupancy = torus_occupancy(ens, domain)
        if out_dir is not None and k in cfg.eval.snapshots:
            path = out_dir / f"{_prefix(cfg, seed)}_it{k}.csv"
            hio.write_ensemble(path, ens, {"seed": seed, "config_hash": cfg.digest(), "iteration": k})
            rec.snapshot = path.name
        records.append(rec)

    try:
        if cfg.sampler in ("zodps", "zodps-no-interaction"):
            z = cfg.zodps
            zc = ZodpsConfig.linear(z.h, cfg.iterations, z.T, z.M, z.N, SeedSpec(seed), z.sigma_min2, z.chains)
            final = zodps_run(zc, target, init, observe)
        elif cfg.sampler == "rgo":
            r = cfg.rgo
            rc = RgoConfig(r.eta, r.chains, r.thinning, r.max_rejections, r.optimizer_budget, r.slack)
            # chains start from y_{1/2} ~ N(0, I)
            final = proximal_run(rc, target, init, cfg.iterations, observe, SeedSpec(seed), init_is_forward=True)
        else:
            ic = InOutConfig(cfg.inout.h, cfg.inout.R, cfg.inout.chains)
            final = in_and_out_run(ic, target.domain, init, cfg.iterations, observe, SeedSpec(seed))
    except (SamplerError, RgoStuck, FloatingPointError) as exc:
        log.error("seed %d failed: %s", seed, exc)
        return SeedResult(seed, records, None, str(exc))
    return SeedResult(seed, records, final)


def _run_seed_job(args):
    cfg, seed, out_dir, reference = args
    return run_seed(cfg, seed, out_dir, reference)


def resolve_threads(threads: Optional[int]) -> int:
    env = os.environ.get("ZODPS_THREADS")
    if env:
        return max(1, int(env))
    return max(1, threads or 1)


def run_experiment(cfg: ExperimentConfig, threads: Optional[int] = None, plot: bool = True) -> ExperimentResult:
    """Run every seed, write per-seed CSVs, the cross-seed aggregate and figures."""
    validate(cfg)
    if cfg.experiment == "sweep-h":
        return sweep_step_size(cfg, cfg.sweep.h_values, threads, plot)
    if cfg.experiment == "sweep-mn":
        return sweep_mn(cfg, [tuple(p) for p in cfg.sweep.pairs], threads, plot)
    out_dir = Path(cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    target = build_target(cfg)
    reference = load_reference(cfg, target)

    jobs = [(cfg, s, out_dir, reference) for s in cfg.seeds]
    n_workers = min(resolve_threads(threads), len(jobs))
    if n_workers > 1:
        with ProcessPoolExecutor(n_workers) as pool:
            results = list(pool.map(_run_seed_job, jobs))
    else:
        results = [_run_seed_job(j) for j in jobs]

    result = ExperimentResult(EXIT_OK)
    meta = {"config_hash": cfg.digest(), "sampler": cfg.sampler}
    for res in results:
        prefix = _prefix(cfg, res.seed)
        path = out_dir / f"{prefix}.csv"
        hio.write_records(path, res.records, with_time=cfg.record_time)
        hio.write_timing(out_dir / f"{prefix}.timing.csv", res.records)
        result.files.append(path)
        if res.final is not None:
            fpath = out_dir / f"{prefix}_final.csv"
            hio.write_ensemble(fpath, res.final, {"seed": res.seed, **meta, "iteration": cfg.iterations})
            result.files.append(fpath)
        else:
            result.status = EXIT_RUNTIME
        result.per_seed[res.seed] = res.records

    result.aggregate = hio.aggregate(cfg.name, list(result.per_seed.values()))
    agg_path = out_dir / f"{cfg.name}_aggregate.csv"
    hio.write_aggregate(agg_path, result.aggregate)
    result.files.append(agg_path)
    if plot:
        result.files += _figures(cfg, out_dir, result, results, reference)
    return result


def _figures(cfg, out_dir: Path, result: ExperimentResult, results, reference) -> list[Path]:
    files = []
    if any(p.kl_mean is not None for p in result.aggregate):
        path = out_dir / f"{cfg.name}_kl.svg"
        plots.plot_kl_curves({cfg.name: result.aggregate}, path)
        files.append(path)
    if any(p.occ_t1_mean is not None for p in result.aggregate):
        path = out_dir / f"{cfg.name}_occupancy.svg"
        plots.plot_occupancy(result.aggregate, path, title=cfg.name)
        files.append(path)
    finals = [r.final for r in results if r.final is not None and r.final.n > 0]
    if finals and cfg.target.kind == "tori":
        path = out_dir / f"{cfg.name}_projection.svg"
        plots.plot_projection(finals[0], path, title=f"{cfg.name}, seed {results[0].seed}")
        files.append(path)
    elif finals:
        e = cfg.eval
        pooled = Ensemble.concat(finals)
        counts = marginal_histogram(pooled, e.hist_coordinate, e.hist_bins, tuple(e.hist_range))
        ref_counts = None
        if reference is not None:
            ref_counts = marginal_histogram(reference, e.hist_coordinate, e.hist_bins, tuple(e.hist_range))
        path = out_dir / f"{cfg.name}_marginal.svg"
        plots.plot_marginal(counts, ref_counts, tuple(e.hist_range), path, coordinate=e.hist_coordinate)
        files.append(path)
    return files


def _sweep(base: ExperimentConfig, variants: list[tuple[str, ExperimentConfig]], threads, plot) -> ExperimentResult:
    out_dir = Path(base.output)
    combined = ExperimentResult(EXIT_OK)
    curves = {}
    for label, cfg in variants:
        res = run_experiment(cfg, threads, plot)
        combined.status = max(combined.status, res.status)
        combined.files += res.files
        combined.per_seed[label] = res.per_seed
        pts = [dataclasses.replace(p, series=label) for p in res.aggregate]
        combined.aggregate += pts
        curves[label] = pts
    agg_path = out_dir / f"{base.name}_aggregate.csv"
    hio.write_aggregate(agg_path, combined.aggregate)
    combined.files.append(agg_path)
    if plot:
        path = out_dir / f"{base.name}_kl.svg"
        plots.plot_kl_curves(curves, path)
        combined.files.append(path)
    return combined


def step_size_variant(base: ExperimentConfig, h: float) -> ExperimentConfig:
    """``base`` with step size h; the linear schedule is rescaled so that sigma_T^2 = h."""
    z = dataclasses.replace(base.zodps, h=float(h), sigma_min2=base.zodps.sigma_min2 * h / base.zodps.h)
    label = f"h={h:g}"
    return base.copy(
        name=f"{base.name}_h{h:g}", experiment="lasso", zodps=z, output=str(Path(base.output) / label)
    )


def sweep_step_size(base: ExperimentConfig, h_values, threads=None, plot=True) -> ExperimentResult:
    if not h_values:
        raise ConfigError(["h_values must be nonempty"])
    variants = []
    for h in h_values:
        v = step_size_variant(base, h)
        validate(v)
        variants.append((f"h={h:g}", v))
    return _sweep(base, variants, threads, plot)


def mn_variant(base: ExperimentConfig, N: int, M: int) -> ExperimentConfig:
    z = dataclasses.replace(base.zodps, N=int(N), M=int(M))
    label = f"N={N},M={M}"
    return base.copy(
        name=f"{base.name}_N{N}_M{M}", experiment="lasso", zodps=z, output=str(Path(base.output) / f"N{N}_M{M}")
    )


def sweep_mn(base: ExperimentConfig, pairs, threads=None, plot=True) -> ExperimentResult:
    pairs = [tuple(int(v) for v in p) for p in pairs]
    if not pairs:
        raise ConfigError(["pairs must be nonempty"])
    products = {n * m for n, m in pairs}
    if len(products) != 1:
        raise ConfigError([f"pairs must share one product N*M, got {sorted(products)}"])
    variants = []
    for N, M in pairs:
        v = mn_variant(base, N, M)
        validate(v)
        variants.append((f"N={N},M={M}", v))
    return _sweep(base, variants, threads, plot)


def generate_reference(
    cfg: ExperimentConfig,
    path,
    seed: int = 0,
    size: int = 1000,
    burn_in: int = 200,
    collect: int = 800,
    method: str = "rgo",
) -> Ensemble:
    """Write a reference ensemble for KL evaluation; raises RgoStuck if any chain gets stuck.

    ``method="rgo"`` runs ``cfg.rgo.chains`` proximal-sampler chains for
    ``burn_in`` updates, keeps every chain state over the next ``collect``
    updates, and thins that pool uniformly to ``size`` points.
    ``method="exact"`` draws i.i.d. from targets that support it.
    """
    target = build_target(cfg)
    meta = {"seed": seed, "config_hash": cfg.digest(), "method": method, "size": size}
    if method == "exact":
        if not hasattr(target, "sample"):
            raise ConfigError(["the configured target has no exact sampler"])
        ens = Ensemble(target.sample(size, SeedSpec(seed, purpose=Purpose.REFERENCE).generator()))
    elif method == "rgo":
        r = cfg.rgo
        available = r.chains * collect
        if size > available:
            raise ConfigError([f"reference size {size} exceeds the {available} collected states"])
        if burn_in < 0 or collect < 1:
            raise ConfigError(["burn_in must be >= 0 and collect >= 1"])
        rc = RgoConfig(r.eta, r.chains, 1, r.max_rejections, r.optimizer_budget, r.slack)
        pool: list[np.ndarray] = []

        def keep(k, ens, stats):
            if stats.stuck_chains:
                raise RgoStuck(r.max_rejections)
            if k > burn_in:
                pool.append(ens.particles)

        init = _initial(cfg.copy(sampler="rgo"), seed)
        proximal_run(rc, target, init, burn_in + collect, keep, SeedSpec(seed), init_is_forward=True)
        states = np.concatenate(pool, axis=0)
        idx = np.linspace(0, states.shape[0] - 1, size).round().astype(int)
        ens = Ensemble(states[idx])
        meta.update({"eta": r.eta, "chains": r.chains, "burn_in": burn_in, "collect": collect})
    else:
        raise ConfigError([f"unknown reference method {method!r}"])
    hio.write_ensemble(path, ens, meta)
    return ens
