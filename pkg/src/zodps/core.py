"""Shared numeric types, seeded random streams and stable primitives.

Every random draw in the package comes from a named stream.  A stream is a
Philox counter-based generator whose key is ``(master_seed, chain)`` and whose
counter encodes ``(iteration, particle, substep, purpose)``; the lowest counter
word is left free for consumption, so distinct stream ids never overlap.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import logsumexp as _sp_logsumexp

__all__ = [
    "Purpose",
    "SeedSpec",
    "Ensemble",
    "NoiseSchedule",
    "DegenerateWeightsError",
    "ScheduleError",
    "gaussian_draw",
    "logsumexp",
    "normalize_log_weights",
    "categorical_sample",
    "per_particle",
]

_MASK64 = (1 << 64) - 1


class DegenerateWeightsError(ValueError):
    """Raised when a set of log-weights cannot be normalized."""


class ScheduleError(ValueError):
    """Raised for an invalid noise schedule."""


class Purpose(IntEnum):
    """Tags separating the independent random streams of one run."""

    INIT = 1
    FORWARD_Y = 2
    FORWARD_Z = 3
    INTERIM = 4
    EULER = 5
    RGO_FORWARD = 6
    RGO_PROPOSAL = 7
    INOUT_Y = 8
    INOUT_X = 9
    ORTHOGONAL = 10
    REFERENCE = 11
    MISC = 12


@dataclass(frozen=True)
class SeedSpec:
    """A master seed plus the coordinates of one random stream.

    ``chain`` selects an independent system (it is mixed into the Philox key);
    ``k``, ``i``, ``t`` and ``purpose`` select the stream inside it.
    """

    master_seed: int
    k: int = 0
    i: int = 0
    t: int = 0
    purpose: int = 0
    chain: int = 0

    def __post_init__(self):
        for name in ("k", "i", "t", "purpose", "chain"):
            if getattr(self, name) < 0:
                raise ValueError(f"stream coordinate {name} must be nonnegative")
        if self.t >= 1 << 56 or self.purpose >= 256:
            raise ValueError("substep index or purpose tag out of range")

    def replace(self, **changes) -> "SeedSpec":
        return dataclasses.replace(self, **changes)

    def _key(self) -> np.ndarray:
        return np.array([self.master_seed & _MASK64, self.chain & _MASK64], dtype=np.uint64)

    def _counter(self) -> np.ndarray:
        return np.array(
            [0, self.i, self.k, (self.t << 8) | int(self.purpose)], dtype=np.uint64
        )

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(counter=self._counter(), key=self._key()))


def _philox_state(seed: SeedSpec) -> dict:
    return {
        "bit_generator": "Philox",
        "state": {"counter": seed._counter(), "key": seed._key()},
        "buffer": np.zeros(4, dtype=np.uint64),
        "buffer_pos": 4,
        "has_uint32": 0,
        "uinteger": 0,
    }


def per_particle(
    seeds: Iterable[SeedSpec], draw: Callable[[np.random.Generator], np.ndarray]
) -> np.ndarray:
    """Stack ``draw(gen)`` over a sequence of streams.

    Equivalent to ``np.stack([draw(s.generator()) for s in seeds])`` but reuses a
    single bit generator, resetting its state for each stream.
    """
    bitgen = np.random.Philox(0)
    gen = np.random.Generator(bitgen)
    out = []
    for s in seeds:
        bitgen.state = _philox_state(s)
        out.append(draw(gen))
    return np.stack(out) if out else np.empty((0,))


@dataclass(frozen=True, eq=False)
class Ensemble:
    """N particles in R^d stored as a read-only, C-contiguous (N, d) array."""

    particles: np.ndarray

    def __post_init__(self):
        arr = np.array(self.particles, dtype=np.float64, order="C", copy=True)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[1] < 1:
            raise ValueError(f"particles must be an (N, d) array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("ensemble contains non-finite coordinates")
        arr.setflags(write=False)
        object.__setattr__(self, "particles", arr)

    @property
    def n(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, Ensemble):
            return NotImplemented
        return self.particles.shape == other.particles.shape and bool(
            np.array_equal(self.particles, other.particles)
        )

    @classmethod
    def empty(cls, dim: int) -> "Ensemble":
        return cls(np.empty((0, dim)))

    @classmethod
    def concat(cls, ensembles: Sequence["Ensemble"]) -> "Ensemble":
        if not ensembles:
            raise ValueError("nothing to concatenate")
        return cls(np.concatenate([e.particles for e in ensembles], axis=0))


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Strictly increasing variances sigma_0^2 < ... < sigma_T^2 = h."""

    variances: np.ndarray

    def __post_init__(self):
        v = np.array(self.variances, dtype=np.float64)
        if v.ndim != 1 or v.size < 2:
            raise ScheduleError("a schedule needs at least two variances (T >= 1)")
        if not np.all(np.isfinite(v)) or v[0] < 0:
            raise ScheduleError("variances must be finite and nonnegative")
        if np.any(np.diff(v) <= 0):
            raise ScheduleError("variances must be strictly increasing")
        v.setflags(write=False)
        object.__setattr__(self, "variances", v)

    @classmethod
    def linear(cls, sigma_min2: float, h: float, T: int) -> "NoiseSchedule":
        if T < 1:
            raise ScheduleError("T must be >= 1")
        if not h > sigma_min2:
            raise ScheduleError("h must exceed the minimum variance")
        v = np.linspace(sigma_min2, h, T + 1)
        v[-1] = h
        return cls(v)

    @property
    def T(self) -> int:
        return self.variances.size - 1

    @property
    def h(self) -> float:
        return float(self.variances[-1])

    @property
    def increments(self) -> np.ndarray:
        """Delta_t = sigma_t^2 - sigma_{t-1}^2 for t = 1..T."""
        return np.diff(self.variances)

    def rescaled(self, h: float) -> "NoiseSchedule":
        """Same shape, final variance moved to ``h``."""
        return NoiseSchedule(self.variances * (h / self.h))

    def __eq__(self, other):
        if not isinstance(other, NoiseSchedule):
            return NotImplemented
        return bool(np.array_equal(self.variances, other.variances))


def gaussian_draw(mean, std: float, stream: SeedSpec) -> np.ndarray:
    """Return ``mean + std * xi`` with xi standard normal from ``stream``."""
    if not np.isfinite(std) or std < 0:
        raise ValueError(f"std must be finite and nonnegative, got {std}")
    mean = np.asarray(mean, dtype=np.float64)
    if not np.all(np.isfinite(mean)):
        raise ValueError("mean must be finite")
    return mean + std * stream.generator().standard_normal(mean.shape)


def logsumexp(values, axis=None):
    """Stable log(sum(exp(values))); raises if nothing is normalizable."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DegenerateWeightsError("logsumexp of an empty sequence")
    out = _sp_logsumexp(values, axis=axis)
    if np.any(np.isneginf(out)) or np.any(np.isnan(out)):
        raise DegenerateWeightsError("all log-weights are -inf")
    return out


def normalize_log_weights(log_weights, axis: int = -1) -> np.ndarray:
    lw = np.asarray(log_weights, dtype=np.float64)
    return lw - np.expand_dims(logsumexp(lw, axis=axis), axis)


def _inverse_cdf(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    # scaling u by the total keeps zero-weight trailing components unreachable
    return np.searchsorted(cdf, u * cdf[-1], side="right")


def categorical_sample(log_weights, count: int, stream: SeedSpec) -> np.ndarray:
    """Draw ``count`` indices with probabilities proportional to exp(log_weights)."""
    p = np.exp(normalize_log_weights(log_weights))
    u = stream.generator().random(count)
    return _inverse_cdf(np.cumsum(p), u)
