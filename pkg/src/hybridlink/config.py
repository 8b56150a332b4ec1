"""Scenario files: JSON with unit-suffixed keys, validated against a schema.

A scenario holds the link, the sample grid, the seed and the analysis
pipeline settings. :func:`load_scenario` checks every on-grid constraint
before anything is simulated, so a bad delay or lag fails fast with a
message naming the offending key.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

from .link import (
    ANCMode,
    ConfigError,
    FiberModel,
    InterferometerModel,
    LinkConfig,
    check_loop_gain,
    local_arms_for,
    remote_arms_for,
)
from .noise import LaserModel, NoiseSpec, TemperatureProfile
from .timeseries import GridError, SampleGrid

TARGETS = ("ltw_local", "ltw_remote", "ctw", "e2e", "unidirectional", "lm")
BUNDLED = ("fig2_anc_loop", "fig3_independent_lasers", "fig3_same_laser", "fig4_partial_fm",
           "fig5_same_laser_pfm", "fig6_unidirectional")
ALIASES = {"fig3_independent": "fig3_independent_lasers"}


def schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("schema.json").read_text())


def bundled_names() -> list[str]:
    return sorted(BUNDLED)


def bundled_path(name: str):
    name = ALIASES.get(name, name)
    if name not in BUNDLED:
        raise ConfigError(f"unknown bundled scenario {name!r}; available: {', '.join(bundled_names())}")
    return resources.files(__package__).joinpath("scenarios", f"{name}.json")


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(raw: dict) -> str:
    return hashlib.sha256(canonical_json(raw).encode()).hexdigest()


# -- pipeline settings -------------------------------------------------------

@dataclass(frozen=True)
class DecompositionSettings:
    enabled: bool = False
    target: str = "ltw_local"
    temperature_interval: float = 5.0
    max_lag_local: float = 3000.0
    max_lag_remote: float = 500.0
    significance_z: float = 5.0
    subtract_drift: bool = True


@dataclass(frozen=True)
class PipelineSettings:
    gate: float = 1.0
    counters: tuple[str, ...] = ("Pi", "Lambda")
    lambda_resolution: float | None = None
    estimators: tuple[str, ...] = ("OADEV", "MDEV")
    targets: tuple[str, ...] = ("ltw_local", "ltw_remote", "ctw")
    psd_segments: int = 8
    write_counters: bool = True
    min_intervals: int = 5
    pi_normalization: str = "L"
    cycle_slip_threshold: float | None = None
    consistency_tol: float = 1e-3
    decomposition: DecompositionSettings = DecompositionSettings()


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    link: LinkConfig
    grid: SampleGrid
    seed: int
    pipeline: PipelineSettings
    raw: dict = field(repr=False, compare=False, default_factory=dict)
    description: str = ""
    output_dir: str | None = None

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


# -- parsing -----------------------------------------------------------------

def _noise(d: dict | None) -> NoiseSpec:
    d = d or {}
    return NoiseSpec(d.get("white_pm_rad2", 0.0), d.get("white_fm_hz2_per_hz", 0.0),
                     d.get("random_walk_fm_hz2_per_s", 0.0), d.get("seed", 0))


def _laser(d: dict | None) -> LaserModel:
    d = d or {}
    return LaserModel(d.get("nu0_hz", 194.4e12), d.get("drift_hz_per_s", 0.0),
                      d.get("curvature_hz_per_s2", 0.0), _noise(d.get("noise")))


def _fiber(d: dict | None) -> FiberModel:
    d = d or {}
    nr = d.get("nonreciprocal")
    pos = d.get("positions")
    return FiberModel(d.get("length_km", 43.0), d.get("tau_s", 2.1e-4), d.get("segments", 1),
                      _noise(d.get("noise")), None if nr is None else _noise(nr),
                      None if pos is None else tuple(pos))


def _temperature(d: dict | None) -> TemperatureProfile:
    d = d or {}
    sines = tuple((s["amplitude_K"], s["period_s"], s.get("phase_rad", 0.0)) for s in d.get("sines", ()))
    return TemperatureProfile(d.get("mean_K", 293.0), sines, d.get("random_walk_K2_per_s", 0.0),
                              d.get("heat_lag_s", 0.0), d.get("seed", 0))


def _ifo(d: dict | None, site: str) -> InterferometerModel:
    d = d or {}
    if "delta_L_m" in d:
        arms = (local_arms_for if site == "local" else remote_arms_for)(d["delta_L_m"])
    else:
        arms = d.get("arm_lengths_m", {})
    return InterferometerModel(site, arms, d.get("gamma_fs_per_K_m", 37.0), _temperature(d.get("temperature")))


def link_from_dict(d: dict, seed: int = 0) -> LinkConfig:
    anc = d.get("anc", {})
    return LinkConfig(
        laser1=_laser(d.get("laser1")), laser2=_laser(d.get("laser2")),
        fiber1=_fiber(d.get("fiber1")), fiber2=_fiber(d.get("fiber2")),
        local_ifo=_ifo(d.get("local_ifo"), "local"), remote_ifo=_ifo(d.get("remote_ifo"), "remote"),
        aom=tuple(d.get("aom_hz", (0.0, 0.0, 0.0, 0.0))),
        anc=ANCMode(anc.get("kind", "ideal"), anc.get("gain_per_s", 0.0)),
        remote_mirror=d.get("remote_mirror", "standard"),
        same_laser=d.get("same_laser", False), zero_delay=d.get("zero_delay", False),
        timescale=d.get("timescale", "fast"), detection_noise=_noise(d.get("detection_noise")),
        seed=seed,
    )


def grid_from_dict(d: dict) -> SampleGrid:
    dt = d["dt_s"]
    if "n" in d:
        n = d["n"]
    else:
        k = d["duration_s"] / dt
        if abs(k - round(k)) > 1e-9 * k:
            raise GridError(f"grid.duration_s {d['duration_s']} is not a multiple of grid.dt_s {dt}")
        n = int(round(k)) + 1
    return SampleGrid(dt, n, d.get("t0_s", 0.0))


def pipeline_from_dict(d: dict | None) -> PipelineSettings:
    d = d or {}
    off = d.get("offset", {})
    dec = d.get("decomposition", {})
    base = DecompositionSettings()
    decomp = DecompositionSettings(
        dec.get("enabled", base.enabled), dec.get("target", base.target),
        dec.get("temperature_interval_s", base.temperature_interval),
        dec.get("max_lag_local_s", base.max_lag_local), dec.get("max_lag_remote_s", base.max_lag_remote),
        dec.get("significance_z", base.significance_z), dec.get("subtract_drift", base.subtract_drift))
    p = PipelineSettings()
    return PipelineSettings(
        gate=d.get("gate_s", p.gate), counters=tuple(d.get("counters", p.counters)),
        lambda_resolution=d.get("lambda_resolution_s", p.lambda_resolution),
        estimators=tuple(d.get("estimators", p.estimators)), targets=tuple(d.get("targets", p.targets)),
        psd_segments=d.get("psd_segments", p.psd_segments),
        write_counters=d.get("write_counters", p.write_counters),
        min_intervals=off.get("min_intervals", p.min_intervals),
        pi_normalization=off.get("pi_normalization", p.pi_normalization),
        cycle_slip_threshold=d.get("cycle_slip_threshold_hz", p.cycle_slip_threshold),
        consistency_tol=d.get("consistency_tol_hz", p.consistency_tol),
        decomposition=decomp,
    )


def _on_grid(grid: SampleGrid, seconds: float, key: str) -> int:
    try:
        return grid.samples(seconds, key)
    except GridError as e:
        raise ConfigError(str(e)) from None


def validate(sc: ScenarioConfig) -> None:
    """Every on-grid and mode-combination check, before any computation."""
    link, grid, p = sc.link, sc.grid, sc.pipeline
    if link.timescale == "fast":
        for name, tau in (("fiber1", link.tau1), ("fiber2", link.tau2)):
            _on_grid(grid, 2 * tau, f"link.{name}.tau_s (round trip)")
            fiber = getattr(link, name)
            if fiber.noise.is_zero:
                continue
            for x in fiber.segment_positions:
                _on_grid(grid, x * tau, f"link.{name} segment delay at position {x:g}")
                _on_grid(grid, (1 - x) * tau, f"link.{name} segment delay at position {x:g}")
    else:
        longest = max(link.tau1, link.tau2)
        if longest > 0.1 * grid.dt:
            raise ConfigError(f"slow timescale needs dt >> tau; dt = {grid.dt} s but tau = {longest} s "
                              f"(use the fast timescale)")
    try:
        check_loop_gain(link.anc, link.tau1, grid.dt)
    except ConfigError as e:
        raise ConfigError(f"link.anc.gain_per_s: {e}") from None
    for site in ("local_ifo", "remote_ifo"):
        _on_grid(grid, getattr(link, site).temperature.heat_lag, f"link.{site}.temperature.heat_lag_s")
    gate = _on_grid(grid, p.gate, "pipeline.gate_s")
    if gate < 1:
        raise ConfigError("pipeline.gate_s must be at least one sample")
    if p.lambda_resolution is not None:
        step = _on_grid(grid, p.lambda_resolution, "pipeline.lambda_resolution_s")
        if step < 1 or gate % step:
            raise ConfigError("pipeline.lambda_resolution_s must divide pipeline.gate_s")
    if (grid.n - 1) // gate < 4:
        raise ConfigError(f"record of {grid.span:g} s holds too few {p.gate:g} s gates")
    d = p.decomposition
    if d.enabled:
        k = _on_grid(grid, d.temperature_interval, "pipeline.decomposition.temperature_interval_s")
        tgrid = SampleGrid(grid.dt * k, grid.n // k, grid.t0)
        for key in ("max_lag_local", "max_lag_remote"):
            _on_grid(tgrid, getattr(d, key), f"pipeline.decomposition.{key}_s")
        for site in ("local_ifo", "remote_ifo"):
            lag = getattr(link, site).temperature.heat_lag
            try:
                tgrid.samples(lag)
            except GridError:
                raise ConfigError(f"link.{site}.temperature.heat_lag_s = {lag} s is not a multiple of the "
                                  f"temperature interval {d.temperature_interval} s") from None
        if 4 * max(d.max_lag_local, d.max_lag_remote) > tgrid.span:
            raise ConfigError("record is shorter than 4 * the largest decomposition max lag")


def scenario_from_dict(raw: dict, name: str = "scenario") -> ScenarioConfig:
    try:
        jsonschema.validate(raw, schema())
    except jsonschema.ValidationError as e:
        where = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {e.message}") from None
    seed = int(raw.get("seed", 0))
    try:
        link = link_from_dict(raw["link"], seed)
        grid = grid_from_dict(raw["grid"])
        pipe = pipeline_from_dict(raw.get("pipeline"))
    except (GridError, ValueError) as e:
        raise ConfigError(str(e)) from None
    sc = ScenarioConfig(raw.get("name", name), link, grid, seed, pipe, raw,
                        raw.get("description", ""), raw.get("output_dir"))
    validate(sc)
    return sc


def apply_overrides(raw: dict, seed: int | None = None, sets: list[str] | None = None) -> dict:
    """Copy of ``raw`` with ``seed`` and ``key.path=json`` assignments applied."""
    out = copy.deepcopy(raw)
    if seed is not None:
        out["seed"] = int(seed)
    for item in sets or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key.path=value")
        path, value = item.split("=", 1)
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            pass
        node = out
        keys = path.split(".")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {path!r}: {k!r} is not an object")
        node[keys[-1]] = value
    return out


def read_raw(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return raw


def load_scenario(path: str | Path | None = None, scenario: str | None = None, seed: int | None = None,
                  sets: list[str] | None = None) -> ScenarioConfig:
    """Load a config file or a bundled scenario by name, then apply overrides."""
    if (path is None) == (scenario is None):
        raise ConfigError("give exactly one of a config path or a bundled scenario name")
    if scenario is not None:
        raw = json.loads(bundled_path(scenario).read_text())
        name = ALIASES.get(scenario, scenario)
    else:
        raw = read_raw(path)
        name = Path(path).stem
    return scenario_from_dict(apply_overrides(raw, seed, sets), name)
