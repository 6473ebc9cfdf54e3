"""Experiment configuration: TOML files, validation and the built-in presets."""
from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXPERIMENTS = ("lasso", "tori", "sweep-h", "sweep-mn", "custom")
SAMPLERS = ("zodps", "rgo", "inout", "zodps-no-interaction")
TARGETS = ("lasso", "tori", "quadratic", "flat")


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every issue found."""

    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))
        self.problems = problems


@dataclass
class TargetSection:
    kind: str = "lasso"
    dim: int = 5
    orthogonal_seed: int = 20240601
    torus_axis: int = 2
    outside_penalty: float = 100.0


@dataclass
class ZodpsSection:
    h: float = 0.1
    T: int = 10
    M: int = 1000
    N: int = 100
    sigma_min2: float = 0.0
    chains: int = 1


@dataclass
class RgoSection:
    eta: float = 1.0 / 135.0
    chains: int = 100
    thinning: int = 10
    max_rejections: int = 10_000
    optimizer_budget: int = 200
    slack: float = 0.0


@dataclass
class InOutSection:
    h: float = 1.0
    R: int = 10_000
    chains: int = 1000


@dataclass
class InitSection:
    mean: float = 0.0
    std: float = 1.0


@dataclass
class EvalSection:
    # "exact" draws the reference from the target itself; anything else is a CSV path
    reference: str = "exact"
    reference_size: int = 1000
    reference_seed: int = 7
    kl: bool = True
    k: int = 4
    cadence: int = 10
    window: int = 10
    # when > 0, the pooling window becomes ceil(pool_size / particles per iteration)
    pool_size: int = 0
    occupancy: bool = False
    snapshots: list = field(default_factory=list)
    hist_coordinate: int = 2
    hist_bins: int = 40
    hist_range: list = field(default_factory=lambda: [-1.5, 2.5])


@dataclass
class SweepSection:
    h_values: list = field(default_factory=list)
    pairs: list = field(default_factory=list)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    experiment: str = "lasso"
    sampler: str = "zodps"
    seeds: list = field(default_factory=lambda: list(range(10)))
    iterations: int = 300
    output: str = "out"
    record_time: bool = False
    target: TargetSection = field(default_factory=TargetSection)
    zodps: ZodpsSection = field(default_factory=ZodpsSection)
    rgo: RgoSection = field(default_factory=RgoSection)
    inout: InOutSection = field(default_factory=InOutSection)
    init: InitSection = field(default_factory=InitSection)
    eval: EvalSection = field(default_factory=EvalSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Stable hash of the configuration, excluding seeds and output location."""
        d = self.to_dict()
        for key in ("seeds", "output", "name"):
            d.pop(key)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def copy(self, **changes) -> "ExperimentConfig":
        new = copy.deepcopy(self)
        for key, value in changes.items():
            setattr(new, key, value)
        return new


_SECTIONS = {
    "target": TargetSection,
    "zodps": ZodpsSection,
    "rgo": RgoSection,
    "inout": InOutSection,
    "init": InitSection,
    "eval": EvalSection,
    "sweep": SweepSection,
}


def from_dict(data: dict) -> ExperimentConfig:
    problems = []
    data = dict(data)
    top_names = {f.name for f in fields(ExperimentConfig)} - set(_SECTIONS)
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                problems.append(f"[{key}] must be a table")
                continue
            cls = _SECTIONS[key]
            known = {f.name for f in fields(cls)}
            unknown = set(value) - known
            if unknown:
                problems.append(f"[{key}] unknown keys: {sorted(unknown)}")
            kwargs[key] = cls(**{k: v for k, v in value.items() if k in known})
        elif key in top_names:
            kwargs[key] = value
        else:
            problems.append(f"unknown top-level key {key!r}")
    if problems:
        raise ConfigError(problems)
    cfg = ExperimentConfig(**kwargs)
    validate(cfg)
    return cfg


def load(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from exc
    return from_dict(data)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check every section against the sampler invariants; raise ConfigError listing all problems."""
    p = []
    if cfg.experiment not in EXPERIMENTS:
        p.append(f"experiment must be one of {EXPERIMENTS}")
    if cfg.sampler not in SAMPLERS:
        p.append(f"sampler must be one of {SAMPLERS}")
    if not cfg.seeds or not all(_is_int(s) and s >= 0 for s in cfg.seeds):
        p.append("seeds must be a nonempty list of nonnegative integers")
    if not _is_int(cfg.iterations) or cfg.iterations < 0:
        p.append("iterations must be a nonnegative integer")
    t = cfg.target
    if t.kind not in TARGETS:
        p.append(f"target.kind must be one of {TARGETS}")
    if t.kind == "lasso" and t.dim != 5:
        p.append("the lasso target is 5-dimensional")
    if t.kind == "tori" and t.dim != 3:
        p.append("the tori target is 3-dimensional")
    if t.torus_axis not in (0, 1, 2):
        p.append("target.torus_axis must be 0, 1 or 2")
    z = cfg.zodps
    if not z.h > 0:
        p.append("zodps.h must be positive")
    if not 0 <= z.sigma_min2 < z.h:
        p.append("zodps.sigma_min2 must lie in [0, h)")
    for name in ("T", "M", "N", "chains"):
        v = getattr(z, name)
        if not _is_int(v) or v < 1:
            p.append(f"zodps.{name} must be a positive integer")
    r = cfg.rgo
    if not r.eta > 0:
        p.append("rgo.eta must be positive")
    for name in ("chains", "thinning", "max_rejections", "optimizer_budget"):
        v = getattr(r, name)
        if not _is_int(v) or v < 1:
            p.append(f"rgo.{name} must be a positive integer")
    io_ = cfg.inout
    if not io_.h > 0:
        p.append("inout.h must be positive")
    if not _is_int(io_.R) or io_.R < 1 or not _is_int(io_.chains) or io_.chains < 1:
        p.append("inout.R and inout.chains must be positive integers")
    if cfg.sampler == "zodps-no-interaction" and z.N != 1:
        p.append("zodps-no-interaction runs independent chains with zodps.N = 1")
    if cfg.experiment in ("sweep-h", "sweep-mn") and cfg.sampler != "zodps":
        p.append("sweeps run the interacting zodps sampler")
    if cfg.sampler == "inout" and t.kind != "tori":
        p.append("the inout sampler needs the tori target")
    if not cfg.init.std >= 0:
        p.append("init.std must be nonnegative")
    e = cfg.eval
    if e.cadence < 1 or e.window < 1:
        p.append("eval.cadence and eval.window must be >= 1")
    if e.k < 1 or e.reference_size <= e.k:
        p.append("eval.k must be >= 1 and below eval.reference_size")
    if e.kl and e.reference == "exact" and t.kind != "lasso":
        p.append(f"no exact reference sampler for the {t.kind} target; give a CSV path or set eval.kl = false")
    if e.hist_bins < 1 or len(e.hist_range) != 2 or not e.hist_range[0] < e.hist_range[1]:
        p.append("eval.hist_bins must be >= 1 and eval.hist_range an increasing pair")
    if not 0 <= e.hist_coordinate < t.dim:
        p.append("eval.hist_coordinate out of range")
    if cfg.experiment == "sweep-h":
        if not cfg.sweep.h_values:
            p.append("sweep.h_values must be nonempty")
        elif not all(isinstance(h, (int, float)) and h > z.sigma_min2 for h in cfg.sweep.h_values):
            p.append("every sweep.h_values entry must exceed zodps.sigma_min2")
    if cfg.experiment == "sweep-mn":
        pairs = cfg.sweep.pairs
        if not pairs or not all(len(pr) == 2 and all(_is_int(v) and v >= 1 for v in pr) for pr in pairs):
            p.append("sweep.pairs must be a nonempty list of [N, M] positive integer pairs")
        elif len({pr[0] * pr[1] for pr in pairs}) != 1:
            p.append(f"sweep.pairs must share one product N*M, got {sorted({pr[0] * pr[1] for pr in pairs})}")
    if p:
        raise ConfigError(p)
    return cfg


def _lasso_base(**kw) -> ExperimentConfig:
    return ExperimentConfig(
        name="lasso",
        experiment="lasso",
        iterations=300,
        target=TargetSection(kind="lasso", dim=5),
        eval=EvalSection(kl=True, cadence=10, window=10),
        **kw,
    )


def presets(paper_scale: bool = False) -> dict[str, ExperimentConfig]:
    """Parameter sets of the Gaussian Lasso and two-tori experiments.

    Desk scale uses M = 1000 for the Lasso runs; ``paper_scale`` restores M = 4000.
    """
    M = 4000 if paper_scale else 1000
    lasso_z = ZodpsSection(h=0.1, T=10, M=M, N=100, sigma_min2=0.0)
    out = {
        "lasso-zodps": _lasso_base(sampler="zodps", zodps=lasso_z),
        "lasso-no-interaction": _lasso_base(
            sampler="zodps-no-interaction",
            zodps=ZodpsSection(h=0.1, T=10, M=M, N=1, sigma_min2=0.0, chains=100),
        ),
        "lasso-rgo": _lasso_base(
            sampler="rgo", rgo=RgoSection(eta=1.0 / 135.0, chains=100, thinning=10)
        ),
        "tori-zodps": ExperimentConfig(
            name="tori",
            experiment="tori",
            sampler="zodps",
            seeds=list(range(5)),
            iterations=200,
            target=TargetSection(kind="tori", dim=3),
            zodps=ZodpsSection(h=1.0, T=10, M=300, N=1000, sigma_min2=0.01),
            eval=EvalSection(kl=False, occupancy=True, cadence=1, snapshots=[3, 10, 200], hist_range=[-2.0, 2.0]),
        ),
        "tori-inout": ExperimentConfig(
            name="tori",
            experiment="tori",
            sampler="inout",
            seeds=list(range(5)),
            iterations=200,
            target=TargetSection(kind="tori", dim=3),
            inout=InOutSection(h=1.0, R=10_000, chains=1000),
            eval=EvalSection(kl=False, occupancy=True, cadence=1, snapshots=[3, 10, 200], hist_range=[-2.0, 2.0]),
        ),
        "sweep-h": _lasso_base(
            sampler="zodps", zodps=lasso_z, sweep=SweepSection(h_values=[1 / 20, 1 / 10, 1 / 5])
        ),
        "sweep-mn": _lasso_base(
            sampler="zodps",
            zodps=lasso_z,
            sweep=SweepSection(pairs=[[100, 4000], [200, 2000], [50, 8000]] if paper_scale else [[100, 1000], [200, 500], [50, 2000]]),
        ),
    }
    out["sweep-h"].experiment = "sweep-h"
    out["sweep-h"].iterations = 100
    out["sweep-mn"].experiment = "sweep-mn"
    out["sweep-mn"].iterations = 100
    for name, cfg in out.items():
        cfg.name = name
        validate(cfg)
    return out


def to_toml(cfg: ExperimentConfig) -> str:
    """Render a configuration as TOML (the format ``load`` reads)."""
    d = cfg.to_dict()
    lines = []
    for key, value in d.items():
        if key not in _SECTIONS:
            lines.append(f"{key} = {_toml_value(value)}")
    for key in _SECTIONS:
        lines.append("")
        lines.append(f"[{key}]")
        for k, v in d[key].items():
            lines.append(f"{k} = {_toml_value(v)}")
    return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return str(v)


SCHEMA = """\
name         string     label used in file names
experiment   string     lasso | tori | sweep-h | sweep-mn | custom
sampler      string     zodps | rgo | inout | zodps-no-interaction
seeds        [int]      master seeds, one run each
iterations   int        outer iterations (thinned iterations for rgo)
output       string     output directory
record_time  bool       write wall-clock times into the record CSV (breaks byte-determinism)
[target]     kind (lasso | tori | quadratic | flat), dim, orthogonal_seed, torus_axis, outside_penalty
[zodps]      h, T, M, N, sigma_min2, chains   (linear schedule sigma_min2 -> h)
[rgo]        eta, chains, thinning, max_rejections, optimizer_budget, slack
[inout]      h, R, chains
[init]       mean, std   (initial particles N(mean, std^2 I))
[eval]       reference ("exact" or CSV path), reference_size, reference_seed, kl, k,
             cadence, window, pool_size, occupancy, snapshots, hist_coordinate, hist_bins, hist_range
[sweep]      h_values (sweep-h), pairs = [[N, M], ...] with constant N*M (sweep-mn)
"""
