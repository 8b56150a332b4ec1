"""Two-stage decomposition of the comparison phase error.

Stage one finds the heat-transfer lag of each interferometer by scanning
the cross-correlation between the phase and the sensor temperature. Stage
two regresses the phase on both lagged temperatures (plus an intercept)
and converts the coefficients into length mismatches.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .link import GAMMA_FS_PER_K_M
from .timeseries import (
    GridError,
    PhaseSeries,
    SampleGrid,
    TemperatureSeries,
    affine,
    decimate,
    fmt,
    write_series_csv,
)


class CollinearityError(ValueError):
    """The regression design matrix is rank deficient."""


def to_grid(phase: PhaseSeries, grid: SampleGrid) -> PhaseSeries:
    """Block-average ``phase`` onto the coarser ``grid`` (same origin)."""
    if not np.isclose(phase.grid.t0, grid.t0, atol=1e-9 * grid.dt):
        raise GridError("phase and temperature series start at different times")
    factor = grid.dt / phase.grid.dt
    if factor < 1 - 1e-9 or abs(factor - round(factor)) > 1e-9 * factor:
        raise GridError(f"temperature interval {grid.dt} s is not a multiple of dt = {phase.grid.dt} s")
    return decimate(phase, int(round(factor)))


@dataclass
class LagScan:
    lags: np.ndarray          # s
    correlation: np.ndarray
    threshold: float
    n: int

    @property
    def best(self) -> float | None:
        i = int(np.argmax(np.abs(self.correlation)))
        if abs(self.correlation[i]) < self.threshold:
            return None
        return float(self.lags[i])

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.correlation)))


def lag_scan(phase: PhaseSeries, temp: TemperatureSeries, max_lag: float, difference: bool = True,
             z: float = 5.0) -> LagScan:
    """Normalised cross-correlation of ``phase(t)`` with ``temp(t - lag)`` for
    ``0 <= lag <= max_lag``.

    With ``difference`` both series are first-differenced, which turns the
    broad peak of random-walk-like temperatures into a sharp one. The
    significance threshold is ``z / sqrt(n)``.
    """
    if phase.grid.dt != temp.grid.dt:
        phase = to_grid(phase, temp.grid)
    dt = temp.grid.dt
    K = temp.grid.samples(max_lag, "max_lag") if max_lag else 0
    start = max(phase.warmup, temp.warmup)
    n = min(phase.grid.n, temp.grid.n)
    p = np.asarray(phase.values[start:n], dtype=float)
    T = np.asarray(temp.values[start:n], dtype=float)
    if p.size < 4 * max(K, 1):
        raise ValueError(f"overlap of {p.size * dt:g} s is shorter than 4 * max_lag = {4 * max_lag:g} s")
    if np.ptp(T) == 0:
        raise ValueError("temperature is flat; no lag can be estimated")
    if difference:
        p, T = np.diff(p), np.diff(T)
    corr = np.empty(K + 1)
    for k in range(K + 1):
        a = p[k:]
        b = T[: T.size - k]
        a = a - a.mean()
        b = b - b.mean()
        den = np.sqrt(np.dot(a, a) * np.dot(b, b))
        corr[k] = np.dot(a, b) / den if den > 0 else 0.0
    return LagScan(dt * np.arange(K + 1), corr, z / np.sqrt(p.size), p.size)


def estimate_lag(phase: PhaseSeries, temp: TemperatureSeries, max_lag: float, **kwargs) -> float | None:
    """Lag (s) that maximises ``|corr|``, or None when no peak clears the threshold."""
    return lag_scan(phase, temp, max_lag, **kwargs).best


@dataclass
class DecompositionResult:
    lag_local: float
    lag_remote: float
    dL_local: float
    dL_remote: float
    coefficients: np.ndarray        # rad/K, rad/K, rad
    std_errors: np.ndarray
    residual: PhaseSeries
    r_squared: float
    local_term: PhaseSeries
    remote_term: PhaseSeries
    drift_term: PhaseSeries | None = None
    notes: list[str] = field(default_factory=list)
    m_per_rad_K: float = 1.0   # converts rad/K coefficients to metres

    @property
    def dL_std_errors(self) -> tuple[float, float]:
        return self.m_per_rad_K * self.std_errors[0], self.m_per_rad_K * self.std_errors[1]

    def report(self) -> dict:
        se_l, se_r = self.dL_std_errors
        v = self.residual.valid
        rep = {
            "lag_local_s": self.lag_local,
            "lag_remote_s": self.lag_remote,
            "dL_local_m": self.dL_local,
            "dL_remote_m": self.dL_remote,
            "dL_local_stderr_m": se_l,
            "dL_remote_stderr_m": se_r,
            "coef_local_rad_per_K": float(self.coefficients[0]),
            "coef_remote_rad_per_K": float(self.coefficients[1]),
            "intercept_rad": float(self.coefficients[2]),
            "r_squared": self.r_squared,
            "residual_rms_rad": float(np.sqrt(np.mean(v * v))) if v.size else 0.0,
            "points": int(v.size),
            "regression_interval_s": self.residual.grid.dt,
        }
        for i, note in enumerate(self.notes):
            rep[f"note_{i}"] = note
        return rep

    def save(self, directory: str | Path, prefix: str = "decomposition") -> None:
        d = Path(directory)
        lines = []
        for k, v in self.report().items():
            lines.append(f"{k} = {fmt(v) if isinstance(v, float) else v}")
        (d / f"{prefix}.txt").write_text("\n".join(lines) + "\n")
        write_series_csv(self.residual, d / f"{prefix}_residual.csv")


def fit_mismatch(ltw_minus_lm: PhaseSeries, temp_local: TemperatureSeries, temp_remote: TemperatureSeries,
                 lags: tuple[float, float], drift_term: PhaseSeries | None = None,
                 gamma: float = GAMMA_FS_PER_K_M, nu: float = 194.4e12,
                 max_condition: float = 1e8) -> DecompositionResult:
    """Least-squares fit ``phi = a*dT_loc(t - lag_l) + b*dT_rem(t - lag_r) + c``.

    The drift term is removed first, then the phase is block-averaged onto
    the temperature grid. Temperatures are referenced to the first usable
    sample. ``a`` and ``b`` convert to metres through ``2*pi*nu*gamma``.
    The residual is the phase minus the whole fitted model, intercept included.
    """
    if temp_local.grid.dt != temp_remote.grid.dt or temp_local.grid.t0 != temp_remote.grid.t0:
        raise GridError("local and remote temperatures must share a grid")
    phase = ltw_minus_lm
    if drift_term is not None:
        phase = affine([(1.0, ltw_minus_lm), (-1.0, drift_term)])
    tgrid = temp_local.grid
    y_s = to_grid(phase, tgrid) if phase.grid.dt != tgrid.dt else phase
    drift_s = None
    if drift_term is not None:
        drift_s = to_grid(drift_term, tgrid) if drift_term.grid.dt != tgrid.dt else drift_term
    kl = tgrid.samples(lags[0], "local lag")
    kr = tgrid.samples(lags[1], "remote lag")
    n = min(y_s.grid.n, temp_local.grid.n, temp_remote.grid.n)
    i0 = max(kl, kr, y_s.warmup, temp_local.warmup + kl, temp_remote.warmup + kr)
    if n - i0 < 4:
        raise ValueError("too few samples left after applying the lags")
    idx = np.arange(i0, n)
    Tl = np.asarray(temp_local.values)
    Tr = np.asarray(temp_remote.values)
    x1 = Tl[idx - kl] - Tl[i0 - kl]
    x2 = Tr[idx - kr] - Tr[i0 - kr]
    y = np.asarray(y_s.values[i0:n])
    X = np.column_stack([x1, x2, np.ones(idx.size)])

    sv = np.linalg.svd(X - np.r_[X[:, :2].mean(axis=0), 0.0], compute_uv=False)
    cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
    if not np.isfinite(cond) or cond > max_condition:
        cc = np.corrcoef(x1, x2)[0, 1] if np.ptp(x1) > 0 and np.ptp(x2) > 0 else float("nan")
        raise CollinearityError(
            f"design matrix is rank deficient (condition {cond:.3g}); "
            f"local/remote regressor correlation {cc:.6f}, "
            f"spread {np.ptp(x1):.3g} K / {np.ptp(x2):.3g} K")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    fit = X @ coef
    res = y - fit
    dof = max(idx.size - 3, 1)
    s2 = float(res @ res) / dof
    cov = s2 * np.linalg.inv(X.T @ X)
    se = np.sqrt(np.diag(cov))
    tss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(res @ res) / tss if tss > 0 else 1.0

    per_m = 1.0 / (2 * np.pi * nu * gamma * 1e-15)
    grid = SampleGrid(tgrid.dt, n, tgrid.t0)

    def padded(v: np.ndarray) -> np.ndarray:
        out = np.empty(n)
        out[i0:] = v
        out[:i0] = v[0]
        return out

    residual = PhaseSeries(grid, padded(res), ltw_minus_lm.carrier, i0)
    local_term = PhaseSeries(grid, padded(coef[0] * x1), ltw_minus_lm.carrier, i0)
    remote_term = PhaseSeries(grid, padded(coef[1] * x2), ltw_minus_lm.carrier, i0)
    if drift_s is not None:
        drift_s = PhaseSeries(grid, np.asarray(drift_s.values[:n]), drift_s.carrier, max(drift_s.warmup, i0))
    return DecompositionResult(
        lag_local=kl * tgrid.dt, lag_remote=kr * tgrid.dt,
        dL_local=float(coef[0] * per_m), dL_remote=float(coef[1] * per_m),
        coefficients=coef, std_errors=se, residual=residual, r_squared=r2,
        local_term=local_term, remote_term=remote_term, drift_term=drift_s,
        notes=["intercept included in the fit and removed from the residual"],
        m_per_rad_K=per_m,
    )
