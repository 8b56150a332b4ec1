"""Frequency-stability statistics: overlapping ADEV, MDEV, PSD, mean offset."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal

from .timeseries import FreqKind, FrequencySeries, GridError, PhaseSeries, fmt

NOMINAL_CARRIER_HZ = 194.4e12


class Estimator(str, Enum):
    OADEV = "OADEV"
    MDEV = "MDEV"


@dataclass
class StabilityCurve:
    """(tau, sigma, count) points. ``count`` is the number of terms in the
    estimator's outer sum. Curves computed from Lambda counter data are
    labelled with ``source_kind = Lambda`` and must not be read as true ADEV."""

    taus: np.ndarray
    sigmas: np.ndarray
    counts: np.ndarray
    estimator: Estimator
    source_kind: FreqKind
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.taus = np.asarray(self.taus, dtype=float)
        self.sigmas = np.asarray(self.sigmas, dtype=float)
        self.counts = np.asarray(self.counts, dtype=int)
        if self.taus.size > 1 and np.any(np.diff(self.taus) <= 0):
            raise ValueError("taus must be strictly increasing")
        if np.any(self.sigmas < 0) or np.any(self.counts < 1):
            raise ValueError("sigma must be >= 0 and counts >= 1")

    @property
    def label(self) -> str:
        return f"{self.estimator.value}({self.source_kind.value})"

    def at(self, tau: float) -> float:
        i = np.flatnonzero(np.isclose(self.taus, tau))
        if i.size == 0:
            raise KeyError(f"tau {tau} not in curve")
        return float(self.sigmas[i[0]])

    def error_bars(self) -> np.ndarray:
        """Simple ``sigma/sqrt(count)`` error bars."""
        return self.sigmas / np.sqrt(self.counts)

    def slope(self, tau_min: float, tau_max: float) -> float:
        """Least-squares log-log slope over ``tau_min <= tau <= tau_max``."""
        sel = (self.taus >= tau_min * (1 - 1e-9)) & (self.taus <= tau_max * (1 + 1e-9)) & (self.sigmas > 0)
        if sel.sum() < 2:
            raise ValueError("fewer than two points in the slope range")
        return float(np.polyfit(np.log10(self.taus[sel]), np.log10(self.sigmas[sel]), 1)[0])

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            fh.write("tau_s,sigma,count,estimator,source_kind\n")
            for t, s, c in zip(self.taus, self.sigmas, self.counts):
                fh.write(f"{fmt(t)},{fmt(s)},{int(c)},{self.estimator.value},{self.source_kind.value}\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "StabilityCurve":
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty curve")
        return cls([float(r["tau_s"]) for r in rows], [float(r["sigma"]) for r in rows],
                   [int(r["count"]) for r in rows], Estimator(rows[0]["estimator"]),
                   FreqKind(rows[0]["source_kind"]))


def tau_ladder(gate: float, span: float, max_fraction: float = 0.2) -> np.ndarray:
    """1-2-5 multiples of ``gate`` from ``gate`` up to ``max_fraction * span``."""
    out = []
    decade = 1
    top = max_fraction * span
    while decade * gate <= top:
        for m in (1, 2, 5):
            if m * decade * gate <= top * (1 + 1e-12):
                out.append(m * decade)
        decade *= 10
    return gate * np.array(out, dtype=float)


def _fractional(y: FrequencySeries, carrier: float | None) -> np.ndarray:
    if y.fractional:
        return np.asarray(y.valid, dtype=float)
    if carrier is None:
        carrier = NOMINAL_CARRIER_HZ
    return np.asarray(y.valid, dtype=float) / carrier


def _multipliers(y: FrequencySeries, taus) -> tuple[list[int], list[str]]:
    gate = y.grid.dt
    ms, notes = [], []
    for tau in np.atleast_1d(taus):
        m = tau / gate
        if m < 1 - 1e-9 or abs(m - round(m)) > 1e-9 * max(1, m):
            raise GridError(f"tau {tau} s is not a multiple of the gate {gate} s")
        ms.append(int(round(m)))
    return ms, notes


def _phase_from_freq(y: np.ndarray, gate: float) -> np.ndarray:
    # both deviations ignore a constant offset; removing it keeps precision
    x = np.empty(y.size + 1)
    x[0] = 0.0
    np.cumsum((y - y[0]) * gate if y.size else y, out=x[1:])
    return x


def oadev(y: FrequencySeries, taus: Sequence[float] | None = None, carrier: float | None = None
          ) -> StabilityCurve:
    """Overlapping Allan deviation of fractional-frequency data.

    Non-fractional input is divided by ``carrier`` (default 194.4 THz).
    Taus longer than half the span are omitted with a note.
    """
    data = _fractional(y, carrier)
    gate = y.grid.dt
    if taus is None:
        taus = tau_ladder(gate, data.size * gate)
    ms, notes = _multipliers(y, taus)
    x = _phase_from_freq(data, gate)
    N = x.size
    out_t, out_s, out_c = [], [], []
    for m in ms:
        if 2 * m > N - 1:
            notes.append(f"tau {m * gate:g} s omitted: exceeds half the span")
            continue
        d = x[2 * m:] - 2 * x[m:-m] + x[: N - 2 * m]
        out_t.append(m * gate)
        out_s.append(np.sqrt(np.mean(d * d) / 2) / (m * gate))
        out_c.append(N - 2 * m)
    return StabilityCurve(out_t, out_s, out_c, Estimator.OADEV, y.kind, notes)


def mdev(y: FrequencySeries, taus: Sequence[float] | None = None, carrier: float | None = None
         ) -> StabilityCurve:
    """Modified Allan deviation; taus longer than a third of the span are omitted."""
    data = _fractional(y, carrier)
    gate = y.grid.dt
    if taus is None:
        taus = tau_ladder(gate, data.size * gate)
    ms, notes = _multipliers(y, taus)
    x = _phase_from_freq(data, gate)
    N = x.size
    out_t, out_s, out_c = [], [], []
    for m in ms:
        terms = N - 3 * m + 1
        if terms < 1:
            notes.append(f"tau {m * gate:g} s omitted: exceeds a third of the span")
            continue
        d = x[2 * m:] - 2 * x[m:-m] + x[: N - 2 * m]
        c = np.concatenate(([0.0], np.cumsum(d)))
        inner = c[m: m + terms] - c[:terms]
        out_t.append(m * gate)
        out_s.append(np.sqrt(np.mean(inner * inner) / 2) / (m * m * gate))
        out_c.append(terms)
    return StabilityCurve(out_t, out_s, out_c, Estimator.MDEV, y.kind, notes)


def deviation(y: FrequencySeries, estimator: Estimator | str, taus=None, carrier=None) -> StabilityCurve:
    est = Estimator(estimator)
    return (oadev if est is Estimator.OADEV else mdev)(y, taus, carrier)


def psd(phase: PhaseSeries, segments: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """One-sided phase PSD (rad^2/Hz) by Welch averaging.

    ``segments`` Hann-windowed segments with 50 % overlap cover the valid part
    of the record; each segment is mean-removed. ``sum(psd) * df`` equals the
    windowed-average variance (Parseval).
    """
    if segments < 1:
        raise ValueError("segments must be >= 1")
    v = np.asarray(phase.valid, dtype=float)
    nper = (2 * v.size) // (segments + 1) if segments > 1 else v.size
    if nper < 4:
        raise ValueError(f"series of {v.size} samples is shorter than one of {segments} segments")
    f, p = signal.welch(v, fs=1.0 / phase.grid.dt, window="hann", nperseg=nper,
                        noverlap=nper // 2, detrend="constant", scaling="density")
    return f, p


@dataclass
class OffsetEstimate:
    mean: float
    uncertainty: float
    method: str
    tau: float | None = None
    notes: list[str] = field(default_factory=list)


def mean_offset(y: FrequencySeries, method: str = "LambdaLongTermADEV", carrier: float | None = None,
                min_intervals: int = 5, normalization: str = "L", tau: float | None = None
                ) -> OffsetEstimate:
    """Mean fractional frequency offset with its statistical uncertainty.

    ``LambdaLongTermADEV``
        uncertainty is the overlapping ADEV at ``tau``, by default the longest
        1-2-5 tau that still fits ``min_intervals`` times into the record.
    ``PiSegmentStd``
        uncertainty is ``std(y)/L`` with ``L`` the number of consecutive gates
        (white phase noise). ``normalization="sqrt"`` uses ``sqrt(L)``, the
        white-frequency-noise form.
    """
    data = _fractional(y, carrier)
    if data.size < 2:
        raise ValueError("need at least two gates")
    gate = y.grid.dt
    mean = float(np.mean(data))
    if method == "LambdaLongTermADEV":
        largest = gate * (data.size // min_intervals)
        if tau is None:
            feasible = tau_ladder(gate, data.size * gate, 1.0 / min_intervals)
            if feasible.size == 0:
                raise ValueError(f"record of {data.size} gates is shorter than {min_intervals} gates")
            tau = float(feasible[-1])
        elif data.size // max(1, int(round(tau / gate))) < min_intervals:
            raise ValueError(f"tau {tau:g} s fits fewer than {min_intervals} times into the record; "
                             f"largest feasible tau is {largest:g} s")
        frac = FrequencySeries(y.grid.with_n(data.size), data, y.kind, True)
        unc = oadev(frac, [tau]).sigmas[0]
        notes = [] if y.kind is FreqKind.LAMBDA else [f"{y.kind.value} data used with the Lambda method"]
        return OffsetEstimate(mean, float(unc), method, tau, notes)
    if method == "PiSegmentStd":
        L = data.size
        if normalization == "L":
            unc = np.std(data, ddof=1) / L
        elif normalization == "sqrt":
            unc = np.std(data, ddof=1) / np.sqrt(L)
        else:
            raise ValueError(f"normalization must be 'L' or 'sqrt', got {normalization!r}")
        return OffsetEstimate(mean, float(unc), method, None, [f"uncertainty normalised by {normalization}"])
    raise ValueError(f"unknown method {method!r}")

