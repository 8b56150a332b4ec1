"""Dead-time-free Pi and Lambda frequency counters on simulated phase.

Both counters tile the record with contiguous gates of length ``T``
starting at the grid origin; gate ``k`` is stamped at ``t0 + k*T``.

The Lambda counter averages ``m = T/delta`` overlapping Pi readings whose
start times step by ``delta`` through the gate, which weights phase with a
triangle spanning ``2T``. For a linear frequency drift its reading equals
the Pi reading of a gate starting ``T/2 - delta/2`` later.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .timeseries import FreqKind, FrequencySeries, GridError, PhaseSeries, SampleGrid, require_same_grid


@dataclass(frozen=True)
class CounterConfig:
    gate: float = 1.0
    kind: FreqKind = FreqKind.PI
    lambda_resolution: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", FreqKind(self.kind))
        if self.kind is FreqKind.INSTANT:
            raise ValueError("a counter is Pi or Lambda")

    def steps(self, grid: SampleGrid) -> tuple[int, int]:
        """Gate length and Lambda step, both in samples."""
        if self.gate < grid.dt * (1 - 1e-9):
            raise GridError(f"gate {self.gate} s is shorter than dt = {grid.dt} s")
        gate = grid.samples(self.gate, "gate")
        res = grid.dt if self.lambda_resolution is None else self.lambda_resolution
        step = grid.samples(res, "lambda_resolution")
        if step < 1 or gate % step:
            raise GridError(f"lambda_resolution {res} s must divide the gate {self.gate} s")
        return gate, step


def _gate_warmup(phase_warm: int, gate: int, n_gates: int) -> int:
    # a gate is usable once its first phase sample is past the warm-up
    return min(n_gates, -(-phase_warm // gate))


def pi_counter(phase: PhaseSeries, cfg: CounterConfig | float = 1.0) -> FrequencySeries:
    """``f[k] = (phi(t_k + T) - phi(t_k)) / (2*pi*T)`` over contiguous gates."""
    if not isinstance(cfg, CounterConfig):
        cfg = CounterConfig(float(cfg))
    gate, _ = cfg.steps(phase.grid)
    v = phase.values
    n_gates = (v.size - 1) // gate
    if n_gates < 1:
        raise GridError("record shorter than one gate")
    edges = v[: n_gates * gate + 1 : gate]
    T = gate * phase.grid.dt
    f = np.diff(edges) / (2 * np.pi * T)
    grid = SampleGrid(T, n_gates, phase.grid.t0)
    return FrequencySeries(grid, f, FreqKind.PI, warmup=_gate_warmup(phase.warmup, gate, n_gates))


def lambda_counter(phase: PhaseSeries, cfg: CounterConfig | float = 1.0) -> FrequencySeries:
    """Mean of the ``m`` overlapping Pi readings started at ``t_k + i*delta``."""
    if not isinstance(cfg, CounterConfig):
        cfg = CounterConfig(float(cfg), FreqKind.LAMBDA)
    gate, step = cfg.steps(phase.grid)
    m = gate // step
    v = phase.values
    span = (m - 1) * step + gate          # samples from first start to last stop
    n_gates = (v.size - 1 - span) // gate + 1
    if n_gates < 1:
        raise GridError("record shorter than one Lambda window (2 gates)")
    width = (m - 1) * step + 1
    starts = sliding_window_view(v[: (n_gates - 1) * gate + width], width)[::gate, ::step]
    stops = sliding_window_view(v[gate : (n_gates - 1) * gate + gate + width], width)[::gate, ::step]
    T = gate * phase.grid.dt
    f = (stops.sum(axis=1) - starts.sum(axis=1)) / (m * 2 * np.pi * T)
    grid = SampleGrid(T, n_gates, phase.grid.t0)
    return FrequencySeries(grid, f, FreqKind.LAMBDA, warmup=_gate_warmup(phase.warmup, gate, n_gates))


def count(phase: PhaseSeries, gate: float, kind: FreqKind | str, lambda_resolution: float | None = None):
    cfg = CounterConfig(gate, FreqKind(kind), lambda_resolution)
    return pi_counter(phase, cfg) if cfg.kind is FreqKind.PI else lambda_counter(phase, cfg)


def _align(a: FrequencySeries, b: FrequencySeries) -> tuple[np.ndarray, np.ndarray, int]:
    """Common gates of two counter outputs with the same gate and origin."""
    if not (np.isclose(a.grid.dt, b.grid.dt) and np.isclose(a.grid.t0, b.grid.t0)):
        raise GridError("counter outputs do not share gate and origin")
    n = min(a.grid.n, b.grid.n)
    return np.asarray(a.values[:n]), np.asarray(b.values[:n]), max(a.warmup, b.warmup)


def detect_cycle_slips(pi: FrequencySeries, lam: FrequencySeries, threshold: float | None = None
                       ) -> list[tuple[int, float]]:
    """Flag gates hit by a cycle slip.

    A gate is a candidate when ``|pi - lambda|`` exceeds ``threshold`` or a
    point-to-point Pi increment does. A phase step shows up in Pi as a
    one-gate spike but disturbs two Lambda gates, so candidates within one
    gate of each other are merged into one event, reported at the gate whose
    Pi reading departs most from its neighbours. The magnitude is that
    departure (Hz), about ``cycles / T``.

    The default threshold is half a cycle per gate.
    """
    T = pi.grid.dt
    thr = 0.5 / T if threshold is None else float(threshold)
    p, q, warm = _align(pi, lam)
    n = p.size
    cand = np.zeros(n, dtype=bool)
    cand |= np.abs(p - q) > thr
    inc = np.abs(np.diff(p)) > thr
    cand[1:] |= inc
    cand[:-1] |= inc
    cand[:warm] = False
    if n < 2 or not cand.any():
        return []
    # spike relative to the neighbours' mean
    padded = np.concatenate(([p[0]], p, [p[-1]]))
    if warm < n:
        padded[: warm + 1] = p[warm]
    spike = p - 0.5 * (padded[:-2] + padded[2:])
    events = []
    idx = np.flatnonzero(cand)
    groups = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
    a = np.abs(spike)
    for g in groups:
        lo, hi = max(g[0] - 1, warm), min(g[-1] + 1, n - 1)
        # every local peak of the spike is one event, so nearby slips stay separate
        for k in range(lo, hi + 1):
            if (k > lo and a[k] < a[k - 1]) or (k < hi and a[k] <= a[k + 1]):
                continue
            left = p[k - 1] if k - 1 >= warm else p[min(k + 1, n - 1)]
            right = p[k + 1] if k + 1 < n else left
            mag = float(p[k] - 0.5 * (left + right))
            if abs(mag) > thr:
                events.append((k, mag))
    return events


@dataclass
class ConsistencyReport:
    max_deviation: float
    violations: list[int] = field(default_factory=list)
    tolerance: float = 0.0
    gates: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def consistency_check(ltw_local: FrequencySeries, ltw_remote: FrequencySeries, ctw: FrequencySeries,
                      tol: float) -> ConsistencyReport:
    """Check ``ctw == (ltw_local + ltw_remote)/2`` gate by gate."""
    require_same_grid(ltw_local, ltw_remote, ctw)
    warm = max(ltw_local.warmup, ltw_remote.warmup, ctw.warmup)
    dev = np.abs(np.asarray(ctw.values) - 0.5 * (np.asarray(ltw_local.values) + np.asarray(ltw_remote.values)))
    dev = dev[warm:]
    if dev.size == 0:
        return ConsistencyReport(0.0, [], tol, 0)
    bad = (np.flatnonzero(dev > tol) + warm).tolist()
    return ConsistencyReport(float(dev.max()), bad, tol, int(dev.size))
