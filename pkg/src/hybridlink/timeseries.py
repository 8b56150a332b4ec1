"""Uniform-grid series types and the delay/affine algebra built on them.

Phases are stored unwrapped in radians. Every series carries a warm-up
prefix length: the first ``warmup`` samples are transient (produced by a
delay or a recursion start) and are excluded from all statistics.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

_GRID_RTOL = 1e-9


class GridError(ValueError):
    """Raised when series do not share a grid or a quantity is off-grid."""


@dataclass(frozen=True)
class SampleGrid:
    dt: float
    n: int
    t0: float = 0.0

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise GridError(f"dt must be positive and finite, got {self.dt!r}")
        if int(self.n) != self.n or self.n < 1:
            raise GridError(f"n must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t0", float(self.t0))

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n)

    @property
    def span(self) -> float:
        return (self.n - 1) * self.dt

    def samples(self, seconds: float, what: str = "duration") -> int:
        """Convert a duration to an integer sample count, rejecting off-grid values."""
        k = seconds / self.dt
        kr = round(k)
        if kr < 0 or abs(k - kr) > _GRID_RTOL * max(1.0, abs(k)):
            raise GridError(f"{what} {seconds!r} s is not a multiple of dt = {self.dt!r} s")
        return int(kr)

    def matches(self, other: "SampleGrid") -> bool:
        return (
            self.n == other.n
            and math.isclose(self.dt, other.dt, rel_tol=_GRID_RTOL)
            and math.isclose(self.t0, other.t0, rel_tol=_GRID_RTOL, abs_tol=_GRID_RTOL * self.dt)
        )

    def with_n(self, n: int, t0: float | None = None) -> "SampleGrid":
        return SampleGrid(self.dt, n, self.t0 if t0 is None else t0)


class FreqKind(str, Enum):
    PI = "Pi"
    LAMBDA = "Lambda"
    INSTANT = "Instant"


def _frozen_array(values, n: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1 or arr.size != n:
        raise GridError(f"{name}: expected {n} samples, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: values must be finite")
    arr.flags.writeable = False
    return arr


class _Series:
    grid: SampleGrid
    values: np.ndarray
    warmup: int

    def _check_warmup(self):
        if not 0 <= self.warmup <= self.grid.n:
            raise ValueError(f"warmup {self.warmup} outside [0, {self.grid.n}]")

    @property
    def mask(self) -> np.ndarray:
        """Boolean mask, True where the sample is usable for statistics."""
        m = np.ones(self.grid.n, dtype=bool)
        m[: self.warmup] = False
        return m

    @property
    def valid(self) -> np.ndarray:
        return self.values[self.warmup:]

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def __len__(self):
        return self.grid.n


@dataclass(frozen=True, eq=False)
class PhaseSeries(_Series):
    grid: SampleGrid
    values: np.ndarray
    carrier: float | None = None
    warmup: int = 0

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, self.grid.n, "PhaseSeries"))
        object.__setattr__(self, "warmup", int(self.warmup))
        self._check_warmup()

    def replace(self, values=None, warmup: int | None = None) -> "PhaseSeries":
        return PhaseSeries(
            self.grid,
            self.values if values is None else values,
            self.carrier,
            self.warmup if warmup is None else warmup,
        )


@dataclass(frozen=True, eq=False)
class FrequencySeries(_Series):
    """Beat frequency in Hz, or fractional frequency when ``fractional`` is set.

    For counter output the grid spacing is the gate and ``grid.t0`` is the
    start time of the first gate.
    """

    grid: SampleGrid
    values: np.ndarray
    kind: FreqKind
    fractional: bool = False
    warmup: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", FreqKind(self.kind))
        object.__setattr__(self, "values", _frozen_array(self.values, self.grid.n, "FrequencySeries"))
        object.__setattr__(self, "warmup", int(self.warmup))
        self._check_warmup()

    def to_fractional(self, carrier: float) -> "FrequencySeries":
        if self.fractional:
            return self
        if carrier <= 0:
            raise ValueError("carrier must be positive")
        return FrequencySeries(self.grid, self.values / carrier, self.kind, True, self.warmup)


@dataclass(frozen=True, eq=False)
class TemperatureSeries(_Series):
    grid: SampleGrid
    values: np.ndarray
    warmup: int = 0

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, self.grid.n, "TemperatureSeries"))
        object.__setattr__(self, "warmup", int(self.warmup))
        self._check_warmup()


def require_same_grid(*series) -> SampleGrid:
    grid = series[0].grid
    for s in series[1:]:
        if not grid.matches(s.grid):
            raise GridError(f"grid mismatch: {grid} vs {s.grid}")
    return grid


def delay(s: PhaseSeries, k: int) -> PhaseSeries:
    """Delay by ``k`` whole samples: ``out[i] = s[i - k]`` for ``i >= k``.

    The first ``k`` outputs hold ``s[0]`` and are added to the warm-up prefix.
    """
    if int(k) != k or not 0 <= k < s.grid.n:
        raise GridError(f"delay of {k!r} samples outside [0, {s.grid.n})")
    k = int(k)
    if k == 0:
        return s
    out = np.empty(s.grid.n)
    out[k:] = s.values[:-k]
    out[:k] = s.values[0]
    return PhaseSeries(s.grid, out, s.carrier, min(s.grid.n, s.warmup + k))


def affine(terms: Sequence[tuple[float, PhaseSeries]]) -> PhaseSeries:
    """Pointwise linear combination ``sum(c * s)``; warm-up is the union of the inputs'."""
    if not terms:
        raise ValueError("affine needs at least one term")
    grid = require_same_grid(*(s for _, s in terms))
    out = np.zeros(grid.n)
    for c, s in terms:
        out += c * s.values
    carrier = terms[0][1].carrier
    return PhaseSeries(grid, out, carrier, max(s.warmup for _, s in terms))


def integrate_freq(f: FrequencySeries) -> PhaseSeries:
    """Phase from instantaneous frequency: ``phi[i] = phi[i-1] + 2*pi*f[i]*dt``, ``phi[0] = 0``."""
    if f.kind is not FreqKind.INSTANT:
        raise ValueError(f"integrate_freq needs an Instant series, got {f.kind.value}")
    if f.fractional:
        raise ValueError("integrate_freq needs frequency in Hz, not fractional")
    phi = np.empty(f.grid.n)
    phi[0] = 0.0
    phi[1:] = np.cumsum(2 * np.pi * f.values[1:] * f.grid.dt)
    return PhaseSeries(f.grid, phi, warmup=f.warmup)


def instantaneous_frequency(s: PhaseSeries) -> FrequencySeries:
    """Backward-difference frequency, the inverse of :func:`integrate_freq`.

    Sample 0 has no predecessor; it repeats sample 1 and is marked warm-up.
    """
    f = np.empty(s.grid.n)
    if s.grid.n > 1:
        f[1:] = np.diff(s.values) / (2 * np.pi * s.grid.dt)
        f[0] = f[1]
    else:
        f[0] = 0.0
    return FrequencySeries(s.grid, f, FreqKind.INSTANT, warmup=min(s.grid.n, max(1, s.warmup + 1)))


def decimate(s, factor: int):
    """Block-average by ``factor``; each output is stamped at its block start.

    Blocks that overlap the warm-up prefix are marked warm-up.
    """
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return s
    m = s.grid.n // factor
    if m < 1:
        raise GridError(f"series of {s.grid.n} samples is shorter than one block of {factor}")
    vals = s.values[: m * factor].reshape(m, factor).mean(axis=1)
    grid = SampleGrid(s.grid.dt * factor, m, s.grid.t0)
    warm = -(-s.warmup // factor)
    if isinstance(s, PhaseSeries):
        return PhaseSeries(grid, vals, s.carrier, warm)
    if isinstance(s, TemperatureSeries):
        return TemperatureSeries(grid, vals, warm)
    raise TypeError(f"cannot decimate {type(s).__name__}")


def subsample(s, factor: int):
    """Keep every ``factor``-th sample (an instantaneous reading, as a sensor would)."""
    factor = int(factor)
    vals = s.values[::factor]
    grid = SampleGrid(s.grid.dt * factor, vals.size, s.grid.t0)
    warm = -(-s.warmup // factor)
    if isinstance(s, TemperatureSeries):
        return TemperatureSeries(grid, vals, warm)
    if isinstance(s, PhaseSeries):
        return PhaseSeries(grid, vals, s.carrier, warm)
    raise TypeError(f"cannot subsample {type(s).__name__}")


# -- CSV ---------------------------------------------------------------------

def fmt(x: float) -> str:
    """Shortest repr that round-trips a double."""
    return repr(float(x))


def write_series_csv(s, path: str | Path) -> None:
    """Write ``t,value`` rows with full double precision."""
    path = Path(path)
    t = s.grid.times
    with path.open("w", newline="") as fh:
        fh.write("t,value\n")
        fh.writelines(f"{fmt(ti)},{fmt(vi)}\n" for ti, vi in zip(t, s.values))


def _read_columns(path: Path) -> tuple[list[str], list[list[str]]]:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    return rows[0], rows[1:]


def grid_from_times(t: np.ndarray) -> SampleGrid:
    if t.size == 1:
        return SampleGrid(1.0, 1, float(t[0]))
    steps = np.diff(t)
    dt = float(np.median(steps))
    if np.max(np.abs(steps - dt)) > 1e-6 * dt:
        raise GridError("non-uniform time column")
    return SampleGrid(dt, t.size, float(t[0]))


def read_series_csv(path: str | Path, cls=PhaseSeries, **kwargs):
    path = Path(path)
    header, rows = _read_columns(path)
    if header[:2] != ["t", "value"]:
        raise ValueError(f"{path}: expected header 't,value', got {','.join(header)!r}")
    data = np.array([[float(r[0]), float(r[1])] for r in rows])
    if data.size == 0:
        raise ValueError(f"{path}: no samples")
    return cls(grid_from_times(data[:, 0]), data[:, 1], **kwargs)


def write_counter_csv(f: FrequencySeries, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write("gate_start,freq_hz,kind\n")
        kind = f.kind.value
        fh.writelines(f"{fmt(t)},{fmt(v)},{kind}\n" for t, v in zip(f.grid.times, f.values))


def read_counter_csv(path: str | Path) -> FrequencySeries:
    """Read externally recorded counter data (``gate_start,freq_hz,kind``)."""
    path = Path(path)
    header, rows = _read_columns(path)
    if header[:3] != ["gate_start", "freq_hz", "kind"]:
        raise ValueError(f"{path}: expected header 'gate_start,freq_hz,kind'")
    if not rows:
        raise ValueError(f"{path}: no gates")
    kinds = {r[2] for r in rows}
    if len(kinds) != 1:
        raise ValueError(f"{path}: mixed counter kinds {sorted(kinds)}")
    t = np.array([float(r[0]) for r in rows])
    v = np.array([float(r[1]) for r in rows])
    return FrequencySeries(grid_from_times(t), v, FreqKind(kinds.pop()))
