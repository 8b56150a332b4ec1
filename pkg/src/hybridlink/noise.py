"""Seeded synthesis of laser, fiber and temperature disturbances.

Random numbers come from numpy's PCG64 bit generator seeded through
``SeedSequence``; Gaussian variates are produced by the Box-Muller
transform of PCG64 uniform doubles so that the whole chain is specified
by two documented algorithms and reproduces bit for bit.

Noise levels
------------
white_pm
    per-sample phase variance (rad^2).
white_fm
    one-sided PSD of the frequency fluctuation, S_nu(f) = h (Hz^2/Hz).
    Phase increments per sample have variance 2*pi^2*h*dt.
random_walk_fm
    frequency diffusion rate D (Hz^2/s): nu[i] = nu[i-1] + sqrt(D*dt)*g.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .timeseries import FreqKind, FrequencySeries, PhaseSeries, SampleGrid, TemperatureSeries

NOMINAL_CARRIER_HZ = 194.4e12


def make_rng(seed, *stream: int) -> np.random.Generator:
    """PCG64 generator for ``seed`` and an optional integer stream path."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


def gaussian(rng: np.random.Generator, n: int) -> np.ndarray:
    """Standard normal variates via Box-Muller on ``rng.random()`` doubles."""
    m = (n + 1) // 2
    u1 = rng.random(m)
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log1p(-u1))
    ang = 2.0 * np.pi * u2
    out = np.empty(2 * m)
    out[0::2] = r * np.cos(ang)
    out[1::2] = r * np.sin(ang)
    return out[:n]


@dataclass(frozen=True)
class NoiseSpec:
    white_pm: float = 0.0
    white_fm: float = 0.0
    random_walk_fm: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("white_pm", "white_fm", "random_walk_fm"):
            if getattr(self, name) < 0:
                raise ValueError(f"NoiseSpec.{name} must be >= 0")

    @property
    def is_zero(self) -> bool:
        return self.white_pm == 0 and self.white_fm == 0 and self.random_walk_fm == 0

    def reseeded(self, *stream: int) -> "NoiseSpec":
        """Copy whose seed is derived from this seed and a stream path."""
        ss = np.random.SeedSequence([int(self.seed), *map(int, stream)])
        return NoiseSpec(self.white_pm, self.white_fm, self.random_walk_fm,
                         int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1)))


def powerlaw_phase(spec: NoiseSpec, n: int, dt: float) -> np.ndarray:
    """Raw phase array (rad) for ``spec``; component streams are independent."""
    phi = np.zeros(n)
    if spec.white_pm > 0:
        phi += np.sqrt(spec.white_pm) * gaussian(make_rng(spec.seed, 0), n)
    if spec.white_fm > 0 and n > 1:
        step = np.sqrt(2 * np.pi**2 * spec.white_fm * dt)
        phi[1:] += np.cumsum(step * gaussian(make_rng(spec.seed, 1), n - 1))
    if spec.random_walk_fm > 0 and n > 1:
        nu = np.zeros(n)
        nu[1:] = np.cumsum(np.sqrt(spec.random_walk_fm * dt) * gaussian(make_rng(spec.seed, 2), n - 1))
        phi[1:] += np.cumsum(2 * np.pi * nu[1:] * dt)
    return phi


def gen_powerlaw(spec: NoiseSpec, grid: SampleGrid) -> PhaseSeries:
    """White-PM + white-FM + random-walk-FM phase noise on ``grid``."""
    return PhaseSeries(grid, powerlaw_phase(spec, grid.n, grid.dt))


@dataclass(frozen=True)
class LaserModel:
    nu0: float = NOMINAL_CARRIER_HZ
    drift: float = 0.0
    curvature: float = 0.0
    noise: NoiseSpec = NoiseSpec()

    def __post_init__(self):
        if not self.nu0 > 0:
            raise ValueError("LaserModel.nu0 must be positive")


def gen_laser(model: LaserModel, grid: SampleGrid) -> tuple[PhaseSeries, FrequencySeries]:
    """Laser phase relative to the carrier and its instantaneous frequency offset.

    The ``2*pi*nu0*t`` term is implicit. The frequency series is the exact
    derivative of the drift/curvature part plus the backward-difference
    noise frequency (first sample: zero noise contribution).
    """
    t = grid.times
    phase = 2 * np.pi * (model.drift * t**2 / 2 + model.curvature * t**3 / 6)
    freq = model.drift * t + model.curvature * t**2 / 2
    if not model.noise.is_zero:
        noise = powerlaw_phase(model.noise, grid.n, grid.dt)
        phase = phase + noise
        freq = freq.copy()
        freq[1:] += np.diff(noise) / (2 * np.pi * grid.dt)
    return (
        PhaseSeries(grid, phase, carrier=model.nu0),
        FrequencySeries(grid, freq, FreqKind.INSTANT),
    )


@dataclass(frozen=True)
class TemperatureProfile:
    """Temperature process: mean, sinusoids ``(amplitude_K, period_s, phase_rad)``,
    a random walk of diffusion ``random_walk`` (K^2/s), and the heat-transfer lag
    between the sensor reading and the temperature the fiber actually sees."""

    mean: float = 293.0
    sines: tuple[tuple[float, float, float], ...] = ()
    random_walk: float = 0.0
    heat_lag: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sines", tuple(tuple(map(float, s)) for s in self.sines))
        for amp, period, _ in self.sines:
            if not period > 0:
                raise ValueError("sine periods must be > 0")
        if self.heat_lag < 0:
            raise ValueError("heat_lag must be >= 0")
        if self.random_walk < 0:
            raise ValueError("random_walk level must be >= 0")


def gen_temperature(profile: TemperatureProfile, grid: SampleGrid) -> tuple[TemperatureSeries, TemperatureSeries]:
    """Return ``(measured, effective)`` with ``effective(t) = measured(t - heat_lag)``.

    The process is generated on a grid extended ``heat_lag`` into the past so
    that neither output has a warm-up prefix.
    """
    lag = grid.samples(profile.heat_lag, "heat_lag")
    n = grid.n + lag
    t = grid.t0 - lag * grid.dt + grid.dt * np.arange(n)
    base = np.full(n, float(profile.mean))
    for amp, period, ph in profile.sines:
        base += amp * np.sin(2 * np.pi * t / period + ph)
    if profile.random_walk > 0 and n > 1:
        steps = np.sqrt(profile.random_walk * grid.dt) * gaussian(make_rng(profile.seed, 3), n - 1)
        base[1:] += np.cumsum(steps)
    measured = TemperatureSeries(grid, base[lag:])
    effective = TemperatureSeries(grid, base[:grid.n])
    return measured, effective
