"""Core numeric types: 3-vector/3x3-matrix coercion, piecewise-constant
schedules, and the system description (fields per qubit, coupled pairs)."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np


def as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("vector components must be finite")
    return a


def as_mat3(m) -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    return a


@dataclass(frozen=True)
class Schedule:
    """Piecewise-constant time dependence: value of segment i applies on
    [times[i], times[i+1]), the last segment extends to infinity.

    Start times must be strictly increasing; lookups before the first
    start time are an error.
    """

    times: tuple[float, ...]
    values: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.times) == 0:
            raise ValueError("schedule needs at least one segment")
        if len(self.times) != len(self.values):
            raise ValueError("times and values must have equal length")
        ts = tuple(float(t) for t in self.times)
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("segment start times must be strictly increasing")
        object.__setattr__(self, "times", ts)

    @classmethod
    def constant(cls, value) -> "Schedule":
        return cls((0.0,), (np.asarray(value, dtype=float),))

    @classmethod
    def vec3(cls, segments) -> "Schedule":
        """Build from (t, 3-vector) pairs."""
        ts, vs = zip(*segments)
        return cls(tuple(ts), tuple(as_vec3(v) for v in vs))

    @classmethod
    def mat3(cls, segments) -> "Schedule":
        """Build from (t, 3x3 matrix) pairs."""
        ts, vs = zip(*segments)
        return cls(tuple(ts), tuple(as_mat3(v) for v in vs))

    def at(self, t: float) -> np.ndarray:
        """Value of the active segment at time t (left-closed intervals)."""
        if t < self.times[0]:
            raise ValueError(f"t={t} precedes first segment start {self.times[0]}")
        i = bisect.bisect_right(self.times, t) - 1
        return self.values[i]

    def boundaries_within(self, t0: float, t1: float) -> list[float]:
        """Interior segment starts in (t0, t1), for sub-stepping integrators."""
        return [t for t in self.times if t0 < t < t1]


def schedule_at(s: Schedule, t: float) -> np.ndarray:
    return s.at(t)


@dataclass(frozen=True)
class PairCoupling:
    """A coupled qubit pair (a < b) with its 3x3 coupling schedule."""

    a: int
    b: int
    coupling: Schedule

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("pair must couple two distinct qubits")
        if not self.a < self.b:
            raise ValueError(f"pair indices must satisfy a < b, got ({self.a}, {self.b})")


@dataclass(frozen=True)
class SystemSpec:
    """N qubits, a field schedule per qubit, and pairwise couplings.

    fields may be shorter than n_qubits when trailing qubits carry no
    field; missing entries mean B = 0.
    """

    n_qubits: int
    fields: tuple[Schedule, ...] = ()
    pairs: tuple[PairCoupling, ...] = ()

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be >= 1")
        object.__setattr__(self, "fields", tuple(self.fields))
        object.__setattr__(self, "pairs", tuple(self.pairs))
        if len(self.fields) > self.n_qubits:
            raise ValueError("more field schedules than qubits")
        seen = set()
        for p in self.pairs:
            if not (0 <= p.a < self.n_qubits and 0 <= p.b < self.n_qubits):
                raise ValueError(f"pair ({p.a}, {p.b}) references a qubit out of range")
            if (p.a, p.b) in seen:
                raise ValueError(f"duplicate pair ({p.a}, {p.b})")
            seen.add((p.a, p.b))

    def field_at(self, q: int, t: float) -> np.ndarray:
        if q < len(self.fields):
            return self.fields[q].at(t)
        return np.zeros(3)

    def fields_at(self, t: float) -> np.ndarray:
        """All per-qubit fields at time t, shape (n_qubits, 3)."""
        return np.array([self.field_at(q, t) for q in range(self.n_qubits)])

    def couplings_at(self, t: float) -> list[tuple[int, int, np.ndarray]]:
        """(a, b, J(t)) for every declared pair."""
        return [(p.a, p.b, p.coupling.at(t)) for p in self.pairs]

    def boundaries_within(self, t0: float, t1: float) -> list[float]:
        """Sorted union of all schedule starts interior to (t0, t1)."""
        pts: set[float] = set()
        for s in self.fields:
            pts.update(s.boundaries_within(t0, t1))
        for p in self.pairs:
            pts.update(p.coupling.boundaries_within(t0, t1))
        return sorted(pts)
