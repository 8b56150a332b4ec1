"""Phase-only simulator of the hybrid link.

Fiber-1 carries laser-1 light to the remote site under active noise
cancellation (ANC). At the remote site that light, through the remote
interferometer, is launched back into fiber-2, where a two-way setup
compares it with laser-2 at the local site. All phases are baseband:
AOM offsets are kept as metadata only.

Two time scales are supported:

``fast``
    every propagation delay is an integer number of samples and is applied
    exactly; the ANC recursion runs sample by sample.
``slow``
    ``dt`` is much longer than the propagation delays; a delayed signal is
    replaced by its first-order expansion ``x(t - d) = x(t) - d * dx/dt``,
    using the exact laser frequency where it is known and a backward
    difference otherwise.

Sign conventions for fiber noise (segment ``j`` at fractional position
``x_j`` from the local end, one-way delay ``tau``)::

    forward  (local -> remote, seen at remote at t):  sum n_j(t - (1 - x_j) tau)
    backward (remote -> local, seen at local at t):   sum n_j(t - x_j tau)

A non-reciprocal term is added to the forward direction only.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.signal import lfilter

from .noise import (
    LaserModel,
    NoiseSpec,
    TemperatureProfile,
    gen_laser,
    gen_temperature,
    powerlaw_phase,
)
from .timeseries import (
    FreqKind,
    FrequencySeries,
    GridError,
    PhaseSeries,
    SampleGrid,
    TemperatureSeries,
    instantaneous_frequency,
    read_series_csv,
    write_series_csv,
)

GAMMA_FS_PER_K_M = 37.0
DEFAULT_TAU_S = 2.1e-4

LOCAL_ARMS = ("L11", "L12", "L13", "L14", "L15", "L16")
REMOTE_ARMS = ("L21", "L22", "L23")


class ConfigError(ValueError):
    """Inconsistent link configuration."""


# -- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class InterferometerModel:
    """Michelson-like interferometer; ``gamma`` in fs/(K*m)."""

    site: str = "local"
    arm_lengths: Mapping[str, float] = field(default_factory=dict)
    gamma: float = GAMMA_FS_PER_K_M
    temperature: TemperatureProfile = TemperatureProfile()

    def __post_init__(self):
        if self.site not in ("local", "remote"):
            raise ConfigError(f"site must be 'local' or 'remote', got {self.site!r}")
        allowed = LOCAL_ARMS if self.site == "local" else REMOTE_ARMS
        arms = dict(self.arm_lengths)
        unknown = set(arms) - set(allowed)
        if unknown:
            raise ConfigError(f"{self.site} interferometer has no arms {sorted(unknown)}")
        if any(v < 0 for v in arms.values()):
            raise ConfigError("arm lengths must be >= 0")
        object.__setattr__(self, "arm_lengths", {k: float(arms.get(k, 0.0)) for k in allowed})

    def delta_L(self, partial_fm: bool = False) -> float:
        """Net uncompensated length (m) whose temperature leaks into the comparison."""
        L = self.arm_lengths
        if self.site == "local":
            return (L["L14"] + L["L16"] - L["L15"]) + (L["L11"] + L["L12"] - L["L13"])
        if partial_fm:
            return 0.0
        return L["L22"] - L["L21"] - L["L23"]


def local_arms_for(delta_L: float, base: float = 1.0) -> dict[str, float]:
    """Local arm lengths realising a given mismatch (put entirely in L11+L12-L13)."""
    return {"L11": base + max(delta_L, 0), "L12": base, "L13": 2 * base + max(-delta_L, 0),
            "L14": base, "L15": 2 * base, "L16": base}


def remote_arms_for(delta_L: float, base: float = 1.0) -> dict[str, float]:
    return {"L21": base + max(-delta_L, 0), "L22": 2 * base + max(delta_L, 0), "L23": base}


@dataclass(frozen=True)
class FiberModel:
    """Fiber with ``segments`` independent noise processes.

    ``noise`` is applied to every segment with a per-segment derived seed, so
    the one-way noise level grows with the segment count. ``positions`` are
    fractions of the length measured from the local end (default: midpoints).
    """

    length_km: float = 43.0
    tau: float = DEFAULT_TAU_S
    segments: int = 1
    noise: NoiseSpec = NoiseSpec()
    nonreciprocal: NoiseSpec | None = None
    positions: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.tau < 0:
            raise ConfigError("fiber tau must be >= 0")
        if int(self.segments) != self.segments or self.segments < 1:
            raise ConfigError("fiber needs at least one segment")
        if self.positions is not None:
            pos = tuple(float(p) for p in self.positions)
            if len(pos) != self.segments or any(not 0 <= p <= 1 for p in pos):
                raise ConfigError("positions must be one fraction in [0, 1] per segment")
            object.__setattr__(self, "positions", pos)

    @property
    def segment_positions(self) -> tuple[float, ...]:
        if self.positions is not None:
            return self.positions
        return tuple((j + 0.5) / self.segments for j in range(self.segments))


@dataclass(frozen=True)
class ANCMode:
    """``ideal``: exact null of the round-trip beat; ``loop``: integrator of gain
    ``gain`` (1/s) on the PD1 error; ``off``: no correction."""

    kind: str = "ideal"
    gain: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ideal", "loop", "off"):
            raise ConfigError(f"unknown ANC mode {self.kind!r}")
        if self.kind == "loop" and not self.gain > 0:
            raise ConfigError("loop ANC needs a positive gain")

    @property
    def bandwidth(self) -> float:
        """Approximate unity-gain frequency (Hz) of the loop; the correction enters twice."""
        return 2 * self.gain / (2 * np.pi)


@dataclass(frozen=True)
class LinkConfig:
    laser1: LaserModel = LaserModel()
    laser2: LaserModel = LaserModel()
    fiber1: FiberModel = FiberModel()
    fiber2: FiberModel = FiberModel()
    local_ifo: InterferometerModel = InterferometerModel("local")
    remote_ifo: InterferometerModel = InterferometerModel("remote")
    aom: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    anc: ANCMode = ANCMode()
    remote_mirror: str = "standard"
    same_laser: bool = False
    zero_delay: bool = False
    timescale: str = "fast"
    detection_noise: NoiseSpec = NoiseSpec()
    seed: int = 0

    def __post_init__(self):
        if self.remote_mirror not in ("standard", "partial_fm"):
            raise ConfigError(f"remote_mirror must be 'standard' or 'partial_fm', got {self.remote_mirror!r}")
        if self.timescale not in ("fast", "slow"):
            raise ConfigError(f"timescale must be 'fast' or 'slow', got {self.timescale!r}")
        if self.local_ifo.site != "local" or self.remote_ifo.site != "remote":
            raise ConfigError("local_ifo/remote_ifo have the wrong site")
        if len(self.aom) != 4:
            raise ConfigError("aom needs the four offsets f1..f4")
        if self.timescale == "slow" and self.anc.kind == "loop":
            raise ConfigError("loop ANC needs the fast timescale; use 'ideal' on the slow grid")

    @property
    def tau1(self) -> float:
        return 0.0 if self.zero_delay else self.fiber1.tau

    @property
    def tau2(self) -> float:
        return 0.0 if self.zero_delay else self.fiber2.tau

    @property
    def carrier(self) -> float:
        return self.laser1.nu0

    @property
    def delta_L_local(self) -> float:
        return self.local_ifo.delta_L()

    @property
    def delta_L_remote(self) -> float:
        return self.remote_ifo.delta_L(self.remote_mirror == "partial_fm")

    def mode_flags(self) -> dict:
        anc = {"kind": self.anc.kind}
        if self.anc.kind == "loop":
            anc["gain_per_s"] = self.anc.gain
        return {"anc": anc, "remote_mirror": self.remote_mirror, "same_laser": self.same_laser,
                "zero_delay": self.zero_delay, "timescale": self.timescale}


# -- signal arithmetic -------------------------------------------------------

@dataclass
class _Sig:
    """Raw samples with a warm-up prefix; ``rate`` (rad/s) is tracked on the slow grid."""

    v: np.ndarray
    warm: int = 0
    rate: np.ndarray | None = None

    def _combine(self, other, sign):
        if isinstance(other, (int, float)) and other == 0:
            return self
        rate = None
        if self.rate is not None and other.rate is not None:
            rate = self.rate + sign * other.rate
        return _Sig(self.v + sign * other.v, max(self.warm, other.warm), rate)

    def __add__(self, other):
        return self._combine(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __neg__(self):
        return _Sig(-self.v, self.warm, None if self.rate is None else -self.rate)

    def __mul__(self, c: float):
        return _Sig(c * self.v, self.warm, None if self.rate is None else c * self.rate)

    __rmul__ = __mul__


def _backward_rate(v: np.ndarray, dt: float) -> np.ndarray:
    r = np.empty_like(v)
    if v.size > 1:
        r[1:] = np.diff(v) / dt
        r[0] = r[1]
    else:
        r[0] = 0.0
    return r


class _Propagator:
    def __init__(self, grid: SampleGrid, timescale: str):
        self.grid = grid
        self.slow = timescale == "slow"

    def sig(self, v: np.ndarray, rate: np.ndarray | None = None, warm: int = 0) -> _Sig:
        if self.slow and rate is None:
            rate = _backward_rate(v, self.grid.dt)
        return _Sig(v, warm, rate if self.slow else None)

    def zero(self) -> _Sig:
        z = np.zeros(self.grid.n)
        return _Sig(z, 0, z.copy() if self.slow else None)

    def samples(self, seconds: float) -> int:
        if seconds == 0:
            return 0
        try:
            return self.grid.samples(seconds, "propagation delay")
        except GridError as exc:
            raise ConfigError(f"{exc}; choose dt so every delay falls on the grid, "
                              "or use the slow timescale") from None

    def shift(self, s: _Sig, seconds: float) -> _Sig:
        if seconds == 0:
            return s
        if self.slow:
            return _Sig(s.v - seconds * s.rate, s.warm, s.rate)
        k = self.samples(seconds)
        n = self.grid.n
        if k >= n:
            raise ConfigError(f"delay of {k} samples exceeds the record length {n}")
        out = np.empty(n)
        out[k:] = s.v[: n - k]
        out[:k] = s.v[0]
        return _Sig(out, min(n, s.warm + k))


# -- thermal -----------------------------------------------------------------

def thermal_phase(delta_L: float, temp: TemperatureSeries, gamma: float = GAMMA_FS_PER_K_M,
                  nu: float = 194.4e12) -> PhaseSeries:
    """``2*pi*nu*delta_L*gamma*(T(t) - T(t0))`` with ``gamma`` in fs/(K*m).

    ``t0`` is the first sample after the temperature series' warm-up.
    """
    ref = temp.values[min(temp.warmup, temp.grid.n - 1)]
    phi = 2 * np.pi * nu * delta_L * gamma * 1e-15 * (temp.values - ref)
    return PhaseSeries(temp.grid, phi, carrier=nu, warmup=temp.warmup)


# -- ANC ---------------------------------------------------------------------

def _anc_fast(open_error: np.ndarray, warm: int, k2: int, mode: ANCMode, dt: float) -> np.ndarray:
    """Correction phase for an open-loop round-trip error on the fast grid.

    ``k2`` is the round-trip delay in samples. The correction enters the
    round trip twice (launch and return), so the error seen by PD1 is
    ``open_error + C(t) + C(t - 2 tau)``.
    """
    if mode.kind == "off":
        return np.zeros_like(open_error)
    x = open_error.copy()
    x[:warm] = 0.0
    if mode.kind == "ideal":
        if k2 == 0:
            return -x / 2
        a = np.zeros(k2 + 1)
        a[0] = a[k2] = 1.0
        return lfilter([-1.0], a, x)
    g = mode.gain * dt
    a = np.zeros(k2 + 2)
    a[0] = 1.0
    a[1] = -1.0 + g
    a[k2 + 1] += g
    return lfilter([0.0, -g], a, x)


def check_loop_gain(mode: ANCMode, tau: float, dt: float) -> None:
    if mode.kind != "loop":
        return
    if mode.gain * max(2 * tau, 2 * dt) >= 1:
        raise ConfigError(f"loop gain {mode.gain} 1/s violates gain*2tau < 1 (2tau = {2 * tau} s)")


def anc_correction(laser_phase: PhaseSeries, fiber: FiberModel, mode: ANCMode | str = "ideal",
                   round_trip_noise: PhaseSeries | None = None, seed: int = 0) -> PhaseSeries:
    """ANC correction ``phi_C`` for one fiber on the fast grid.

    In ideal mode ``phi_C(t) = phi_L(t) - phi_L(t - 2tau) - N_rt(t) - phi_C(t - 2tau)``,
    run forward from ``phi_C = 0`` over the warm-up prefix. ``round_trip_noise``
    defaults to the round-trip noise generated from ``fiber``.
    """
    if isinstance(mode, str):
        mode = ANCMode(mode)
    grid = laser_phase.grid
    prop = _Propagator(grid, "fast")
    check_loop_gain(mode, fiber.tau, grid.dt)
    phi = prop.sig(np.asarray(laser_phase.values), warm=laser_phase.warmup)
    if round_trip_noise is None:
        paths = _fiber_paths(prop, fiber, fiber.tau, _fiber_noise(fiber, grid, seed, 20))
        rt = paths["rt"]
    else:
        rt = prop.sig(np.asarray(round_trip_noise.values), warm=round_trip_noise.warmup)
    x = prop.shift(phi, 2 * fiber.tau) + rt - phi
    k2 = prop.samples(2 * fiber.tau)
    c = _anc_fast(x.v, x.warm, k2, mode, grid.dt)
    return PhaseSeries(grid, c, laser_phase.carrier, x.warm)


# -- sources & propagation ---------------------------------------------------

@dataclass
class FiberNoise:
    segments: list[np.ndarray]
    nonreciprocal: np.ndarray | None = None


def _fiber_noise(fiber: FiberModel, grid: SampleGrid, seed: int, stream: int) -> FiberNoise:
    segs = []
    if not fiber.noise.is_zero:
        for j in range(fiber.segments):
            segs.append(powerlaw_phase(fiber.noise.reseeded(seed, stream, j), grid.n, grid.dt))
    nr = None
    if fiber.nonreciprocal is not None and not fiber.nonreciprocal.is_zero:
        nr = powerlaw_phase(fiber.nonreciprocal.reseeded(seed, stream + 1), grid.n, grid.dt)
    return FiberNoise(segs, nr)


def _fiber_paths(prop: _Propagator, fiber: FiberModel, tau: float, noise: FiberNoise) -> dict[str, _Sig]:
    """One-way and round-trip noise of a fiber.

    ``rt``  local -> remote -> local, seen at the local end.
    ``rtr`` remote -> local -> remote, seen at the remote end.
    """
    out = {k: prop.zero() for k in ("fwd", "bwd", "rt", "rtr")}
    for n_j, x_j in zip(noise.segments, fiber.segment_positions):
        s = prop.sig(n_j)
        near, far = x_j * tau, (1 - x_j) * tau
        bwd = prop.shift(s, near)
        fwd = prop.shift(s, far)
        out["fwd"] = out["fwd"] + fwd
        out["bwd"] = out["bwd"] + bwd
        out["rt"] = out["rt"] + bwd + prop.shift(s, tau + far)
        out["rtr"] = out["rtr"] + fwd + prop.shift(s, tau + near)
    if noise.nonreciprocal is not None:
        s = prop.sig(noise.nonreciprocal)
        out["fwd"] = out["fwd"] + s
        out["rt"] = out["rt"] + prop.shift(s, tau)
        out["rtr"] = out["rtr"] + s
    return out


@dataclass
class Sources:
    """Every independent input of a run, before propagation."""

    phi1: PhaseSeries
    nu1: FrequencySeries
    phi2: PhaseSeries
    nu2: FrequencySeries
    fiber1: FiberNoise
    fiber2: FiberNoise
    temp_local: TemperatureSeries
    temp_local_eff: TemperatureSeries
    temp_remote: TemperatureSeries
    temp_remote_eff: TemperatureSeries
    detection: dict[str, np.ndarray]


DETECTORS = ("pd3a", "pd3b", "pd4a", "pd4b", "lm", "e2e")


def generate_sources(config: LinkConfig, grid: SampleGrid, seed: int | None = None) -> Sources:
    """Draw all stochastic inputs; seeds derive from ``seed`` (default ``config.seed``)."""
    seed = config.seed if seed is None else int(seed)
    l1 = replace(config.laser1, noise=config.laser1.noise.reseeded(seed, 10))
    phi1, nu1 = gen_laser(l1, grid)
    if config.same_laser:
        phi2, nu2 = phi1, nu1
    else:
        l2 = replace(config.laser2, noise=config.laser2.noise.reseeded(seed, 11))
        phi2, nu2 = gen_laser(l2, grid)
    tl = config.local_ifo.temperature
    tr = config.remote_ifo.temperature
    tl = replace(tl, seed=int(np.random.SeedSequence([seed, 40, tl.seed]).generate_state(1)[0]))
    tr = replace(tr, seed=int(np.random.SeedSequence([seed, 41, tr.seed]).generate_state(1)[0]))
    t_loc, t_loc_eff = gen_temperature(tl, grid)
    t_rem, t_rem_eff = gen_temperature(tr, grid)
    det = {}
    if not config.detection_noise.is_zero:
        for i, name in enumerate(DETECTORS):
            det[name] = powerlaw_phase(config.detection_noise.reseeded(seed, 50, i), grid.n, grid.dt)
    return Sources(phi1, nu1, phi2, nu2,
                   _fiber_noise(config.fiber1, grid, seed, 20),
                   _fiber_noise(config.fiber2, grid, seed, 30),
                   t_loc, t_loc_eff, t_rem, t_rem_eff, det)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Oracle-only traces; never used by the measurement-side analyses."""

    phi_l1: PhaseSeries
    phi_l2: PhaseSeries
    phi_n1: PhaseSeries
    phi_n2: PhaseSeries
    phi_c: PhaseSeries
    phi_remote: PhaseSeries
    theta_local: PhaseSeries
    theta_remote: PhaseSeries
    nu1: FrequencySeries
    nu2: FrequencySeries
    nu_rem: FrequencySeries
    temp_local_eff: TemperatureSeries
    temp_remote_eff: TemperatureSeries


@dataclass(frozen=True, eq=False)
class BeatRecord:
    """Photodiode phases of one run.

    ``pd1`` is the in-loop ANC beat and ``anc_drive`` the round-trip phase
    written by AOM1, ``phi_C(t) + phi_C(t - 2 tau)``; their difference is the
    free-running fiber-1 round-trip beat. ``e2e`` is the end-to-end beat of
    fiber-1's output against laser-1 (available when fiber-1 is looped back).
    ``temp_local``/``temp_remote`` are the sensor readings.
    """

    grid: SampleGrid
    pd1: PhaseSeries
    anc_drive: PhaseSeries
    pd3a: PhaseSeries
    pd3b: PhaseSeries
    pd4a: PhaseSeries
    pd4b: PhaseSeries
    lm: PhaseSeries
    e2e: PhaseSeries
    temp_local: TemperatureSeries
    temp_remote: TemperatureSeries
    truth: GroundTruth | None = None
    tau1: float = DEFAULT_TAU_S
    tau2: float = DEFAULT_TAU_S
    carrier: float = 194.4e12
    meta: dict = field(default_factory=dict)

    PHASES = ("pd1", "anc_drive", "pd3a", "pd3b", "pd4a", "pd4b", "lm", "e2e")
    TEMPERATURES = ("temp_local", "temp_remote")

    @property
    def fiber1_round_trip(self) -> PhaseSeries:
        v = self.pd1.values - self.anc_drive.values
        return PhaseSeries(self.grid, v, self.carrier, max(self.pd1.warmup, self.anc_drive.warmup))

    def save(self, directory: str | Path, meta: dict | None = None) -> Path:
        """Write one CSV per measured series plus ``manifest.json``.

        Ground truth is saved under ``truth/`` when present.
        """
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        warm = {}
        for name in self.PHASES + self.TEMPERATURES:
            s = getattr(self, name)
            write_series_csv(s, d / f"{name}.csv")
            warm[name] = s.warmup
        if self.truth is not None:
            (d / "truth").mkdir(exist_ok=True)
            for f in fields(self.truth):
                s = getattr(self.truth, f.name)
                write_series_csv(s, d / "truth" / f"{f.name}.csv")
                warm[f"truth/{f.name}"] = s.warmup
        manifest = {
            "grid": {"dt_s": self.grid.dt, "n": self.grid.n, "t0_s": self.grid.t0},
            "tau1_s": self.tau1,
            "tau2_s": self.tau2,
            "carrier_hz": self.carrier,
            "warmup": warm,
            **self.meta,
            **(meta or {}),
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return d

    @classmethod
    def load(cls, directory: str | Path) -> "BeatRecord":
        """Read the measured series of a saved record (ground truth is not loaded)."""
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        warm = manifest.get("warmup", {})
        kw = {}
        for name in cls.PHASES:
            s = read_series_csv(d / f"{name}.csv", PhaseSeries, carrier=manifest["carrier_hz"])
            kw[name] = s.replace(warmup=warm.get(name, 0))
        for name in cls.TEMPERATURES:
            kw[name] = read_series_csv(d / f"{name}.csv", TemperatureSeries)
        g = manifest["grid"]
        meta = {k: v for k, v in manifest.items()
                if k not in ("grid", "tau1_s", "tau2_s", "carrier_hz", "warmup")}
        return cls(SampleGrid(g["dt_s"], g["n"], g["t0_s"]), truth=None, tau1=manifest["tau1_s"],
                   tau2=manifest["tau2_s"], carrier=manifest["carrier_hz"], meta=meta, **kw)


def propagate(config: LinkConfig, grid: SampleGrid, src: Sources) -> BeatRecord:
    """Assemble every photodiode phase from the sources."""
    prop = _Propagator(grid, config.timescale)
    tau1, tau2 = config.tau1, config.tau2
    check_loop_gain(config.anc, tau1, grid.dt)
    nu0 = config.carrier

    phi1 = prop.sig(np.asarray(src.phi1.values), rate=2 * np.pi * np.asarray(src.nu1.values))
    phi2 = phi1 if config.same_laser else prop.sig(np.asarray(src.phi2.values),
                                                   rate=2 * np.pi * np.asarray(src.nu2.values))
    f1 = _fiber_paths(prop, config.fiber1, tau1, src.fiber1)
    f2 = _fiber_paths(prop, config.fiber2, tau2, src.fiber2)

    # fiber-1 ANC
    open_err = prop.shift(phi1, 2 * tau1) + f1["rt"] - phi1
    if prop.slow:
        corr = {"ideal": -0.5 * open_err, "off": prop.zero()}[config.anc.kind]
    else:
        c = _anc_fast(open_err.v, open_err.warm, prop.samples(2 * tau1), config.anc, grid.dt)
        corr = _Sig(c, open_err.warm)
    drive = corr + prop.shift(corr, 2 * tau1)
    pd1 = open_err + drive
    remote = prop.shift(phi1 + corr, tau1) + f1["fwd"]

    temp_l = src.temp_local_eff
    temp_r = src.temp_remote_eff
    th_l = thermal_phase(config.delta_L_local, temp_l, config.local_ifo.gamma, nu0)
    th_r = thermal_phase(config.delta_L_remote, temp_r, config.remote_ifo.gamma, nu0)
    theta_l = prop.sig(np.asarray(th_l.values))
    theta_r = prop.sig(np.asarray(th_r.values))

    rho = remote + theta_r      # laser-1 copy as launched into fiber-2 at the remote site
    lam = phi2 - theta_l        # laser-2 as it meets the fiber-2 light at the local site

    pd4a = prop.shift(rho, tau2) + f2["bwd"] - lam
    pd4b = prop.shift(lam, 2 * tau2) + f2["rt"] - lam
    pd3a = rho - prop.shift(lam, tau2) - f2["fwd"]
    pd3b = prop.shift(rho, 2 * tau2) + f2["rtr"] - rho
    lm = phi1 - phi2
    e2e = remote - phi1

    def meas(name: str, s: _Sig) -> PhaseSeries:
        v = s.v + src.detection[name] if name in src.detection else s.v
        return PhaseSeries(grid, v, nu0, s.warm)

    def ps(s: _Sig) -> PhaseSeries:
        return PhaseSeries(grid, s.v, nu0, s.warm)

    truth = GroundTruth(
        phi_l1=ps(phi1), phi_l2=ps(phi2),
        phi_n1=ps(f1["fwd"]), phi_n2=ps(f2["bwd"]),
        phi_c=ps(corr), phi_remote=ps(remote),
        theta_local=th_l, theta_remote=th_r,
        nu1=src.nu1, nu2=src.nu2, nu_rem=instantaneous_frequency(ps(remote)),
        temp_local_eff=temp_l, temp_remote_eff=temp_r,
    )
    return BeatRecord(
        grid=grid, pd1=ps(pd1), anc_drive=ps(drive),
        pd3a=meas("pd3a", pd3a), pd3b=meas("pd3b", pd3b),
        pd4a=meas("pd4a", pd4a), pd4b=meas("pd4b", pd4b),
        lm=meas("lm", lm), e2e=meas("e2e", e2e),
        temp_local=src.temp_local, temp_remote=src.temp_remote,
        truth=truth, tau1=tau1, tau2=tau2, carrier=nu0,
        meta={"mode_flags": config.mode_flags(), "aom_hz": list(config.aom),
              "delta_L_local_m": config.delta_L_local, "delta_L_remote_m": config.delta_L_remote},
    )


def simulate(config: LinkConfig, grid: SampleGrid, seed: int | None = None) -> BeatRecord:
    """Generate sources and propagate them through the link."""
    if config.timescale == "fast":
        for name, tau in (("fiber1", config.tau1), ("fiber2", config.tau2)):
            fiber = getattr(config, name)
            _Propagator(grid, "fast").samples(2 * tau)
            if fiber.noise.is_zero:
                continue
            for x in fiber.segment_positions:
                for d in (x * tau, (1 - x) * tau):
                    try:
                        grid.samples(d)
                    except GridError:
                        raise ConfigError(f"{name} segment at position {x} has delay {d} s off the "
                                          f"grid (dt = {grid.dt} s)") from None
    return propagate(config, grid, generate_sources(config, grid, seed))
