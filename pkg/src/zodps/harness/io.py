"""CSV formats for ensembles, run records and cross-seed aggregates.

Ensemble files start with ``# key: value`` metadata lines, then a header row
``x0,...,x{d-1}`` and one particle per row.  Floats are written with ``repr``
so that reading a file back gives bit-identical values.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ..core import Ensemble

RECORD_COLUMNS = (
    "iteration",
    "wall_time",
    "kl",
    "kl_variance",
    "occ_t1",
    "occ_t2",
    "occ_out",
    "degenerate_events",
    "rgo_rejections",
)

AGGREGATE_COLUMNS = (
    "series",
    "iteration",
    "n_seeds",
    "kl_mean",
    "kl_variance",
    "occ_t1_mean",
    "occ_t2_mean",
    "occ_out_mean",
)


@dataclass
class RunRecord:
    iteration: int
    wall_time: Optional[float] = None
    kl: Optional[float] = None
    kl_variance: Optional[float] = None
    occupancy: Optional[tuple[int, int, int]] = None
    degenerate_events: int = 0
    rgo_rejections: Optional[int] = None
    snapshot: Optional[str] = None
    short_window: bool = False

    def row(self, with_time: bool = True) -> list[str]:
        occ = self.occupancy or (None, None, None)
        values = [
            self.iteration,
            self.wall_time if with_time else None,
            self.kl,
            self.kl_variance,
            *occ,
            self.degenerate_events,
            self.rgo_rejections,
        ]
        return [_fmt(v) for v in values]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(int(v))


def _parse_float(s: str) -> Optional[float]:
    return None if s == "" else float(s)


def _parse_int(s: str) -> Optional[int]:
    return None if s == "" else int(s)


def write_ensemble(path, ensemble: Ensemble, metadata: Optional[dict] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    for key, value in (metadata or {}).items():
        buf.write(f"# {key}: {value}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{j}" for j in range(ensemble.dim)])
    for row in ensemble.particles:
        w.writerow([repr(float(v)) for v in row])
    path.write_text(buf.getvalue())


def read_ensemble(path) -> tuple[Ensemble, dict]:
    metadata: dict[str, str] = {}
    rows = []
    header = None
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(":")
                metadata[key.strip()] = value.strip()
            elif header is None:
                header = next(csv.reader([line]))
            elif line.strip():
                rows.append([float(v) for v in next(csv.reader([line]))])
    if header is None:
        raise ValueError(f"{path}: missing header row")
    arr = np.array(rows, dtype=np.float64).reshape(-1, len(header))
    return Ensemble(arr), metadata


def write_records(path, records: Sequence[RunRecord], with_time: bool = False) -> None:
    """Run-record CSV; ``wall_time`` is left blank unless ``with_time``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for rec in records:
        w.writerow(rec.row(with_time))
    path.write_text(buf.getvalue())


def read_records(path) -> list[RunRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RECORD_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        for r in reader:
            occ = tuple(_parse_int(r[c]) for c in ("occ_t1", "occ_t2", "occ_out"))
            out.append(
                RunRecord(
                    iteration=int(r["iteration"]),
                    wall_time=_parse_float(r["wall_time"]),
                    kl=_parse_float(r["kl"]),
                    kl_variance=_parse_float(r["kl_variance"]),
                    occupancy=None if occ[0] is None else occ,
                    degenerate_events=int(r["degenerate_events"]),
                    rgo_rejections=_parse_int(r["rgo_rejections"]),
                )
            )
    return out


def write_timing(path, records: Sequence[RunRecord]) -> None:
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("iteration", "wall_time"))
    for rec in records:
        w.writerow((rec.iteration, _fmt(rec.wall_time)))
    path.write_text(buf.getvalue())


@dataclass
class AggregatePoint:
    series: str
    iteration: int
    n_seeds: int
    kl_mean: Optional[float] = None
    kl_variance: Optional[float] = None
    occ_t1_mean: Optional[float] = None
    occ_t2_mean: Optional[float] = None
    occ_out_mean: Optional[float] = None


def aggregate(series: str, per_seed: Sequence[Sequence[RunRecord]]) -> list[AggregatePoint]:
    """Mean and sample variance (ddof=1) across seeds at every iteration present in all runs."""
    by_iter: dict[int, list[RunRecord]] = {}
    for recs in per_seed:
        for r in recs:
            by_iter.setdefault(r.iteration, []).append(r)
    points = []
    for it in sorted(by_iter):
        recs = by_iter[it]
        pt = AggregatePoint(series, it, len(recs))
        kls = [r.kl for r in recs if r.kl is not None]
        if kls:
            pt.kl_mean = float(np.mean(kls))
            pt.kl_variance = float(np.var(kls, ddof=1)) if len(kls) > 1 else 0.0
        occs = [r.occupancy for r in recs if r.occupancy is not None]
        if occs:
            arr = np.array(occs, dtype=np.float64)
            pt.occ_t1_mean, pt.occ_t2_mean, pt.occ_out_mean = (float(v) for v in arr.mean(axis=0))
        if kls or occs:
            points.append(pt)
    return points


def write_aggregate(path, points: Iterable[AggregatePoint]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_COLUMNS)
    for p in points:
        w.writerow([p.series] + [_fmt(getattr(p, c)) for c in AGGREGATE_COLUMNS[1:]])
    path.write_text(buf.getvalue())


def read_aggregate(path) -> list[AggregatePoint]:
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.append(
                AggregatePoint(
                    series=r["series"],
                    iteration=int(r["iteration"]),
                    n_seeds=int(r["n_seeds"]),
                    **{c: _parse_float(r[c]) for c in AGGREGATE_COLUMNS[3:]},
                )
            )
    return out
