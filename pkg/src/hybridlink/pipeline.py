"""Simulation-to-report pipeline.

A run simulates the link, forms the comparison targets (each combination
minus the local laser beat), counts them with Pi and Lambda counters,
computes stability curves, offsets, PSDs, cycle-slip and consistency
checks, optionally decomposes the phase error, and writes everything to a
bundle directory whose manifest checksums every file.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .combiners import ctw, ltw_local, ltw_remote, phi_drift, uni_directional_two_way
from .config import PipelineSettings, ScenarioConfig, canonical_json
from .counters import ConsistencyReport, CounterConfig, consistency_check, count, detect_cycle_slips
from .link import GAMMA_FS_PER_K_M, BeatRecord, LinkConfig, simulate
from .regression import DecompositionResult, LagScan, fit_mismatch, lag_scan, to_grid
from .stability import StabilityCurve, deviation, mean_offset, psd
from .timeseries import (
    FreqKind,
    FrequencySeries,
    PhaseSeries,
    affine,
    fmt,
    instantaneous_frequency,
    subsample,
    write_counter_csv,
    write_series_csv,
)

CONVENTIONS = (
    "Lambda counter: mean of overlapping Pi readings stepped by lambda_resolution (default dt)",
    "Lambda-sourced OADEV curves are labelled OADEV(Lambda) and are not true Allan deviations",
    "PiSegmentStd uncertainty is std/L by default; std/sqrt(L) behind pipeline.offset.pi_normalization",
    "decomposition regression includes an intercept, which is also removed from the residual",
    "PSD: Welch average, Hann window, 50 % overlap, one-sided density in rad^2/Hz",
)


# -- targets -----------------------------------------------------------------

def target_phase(record: BeatRecord, name: str) -> PhaseSeries:
    """Phase of one comparison target; two-way combinations are referenced to LM."""
    r = record
    if name == "ltw_local":
        return affine([(1.0, ltw_local(r.pd4a, r.pd4b)), (-1.0, r.lm)])
    if name == "ltw_remote":
        return affine([(1.0, ltw_remote(r.pd3a, r.pd3b)), (-1.0, r.lm)])
    if name == "ctw":
        return affine([(1.0, ctw(r.pd4a, r.pd3a)), (-1.0, r.lm)])
    if name == "e2e":
        return r.e2e
    if name == "unidirectional":
        return uni_directional_two_way(affine([(0.5, r.fiber1_round_trip)]), affine([(0.5, r.pd4b)]))
    if name == "lm":
        return r.lm
    raise ValueError(f"unknown target {name!r}")


def drift_term(record: BeatRecord) -> PhaseSeries:
    """Drift prediction from the LM beat frequency over the fiber-2 delay."""
    f_lm = instantaneous_frequency(record.lm)
    zero = FrequencySeries(f_lm.grid, np.zeros(f_lm.grid.n), FreqKind.INSTANT, warmup=f_lm.warmup)
    return phi_drift(f_lm, zero, record.tau2)


# -- analysis ----------------------------------------------------------------

@dataclass
class Analysis:
    counters: dict[tuple[str, str], FrequencySeries] = field(default_factory=dict)
    curves: dict[str, StabilityCurve] = field(default_factory=dict)
    offsets: list[dict] = field(default_factory=list)
    slips: dict[str, list[tuple[int, float]]] = field(default_factory=dict)
    consistency: ConsistencyReport | None = None
    psd: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


def curve_name(estimator: str, kind: str, target: str) -> str:
    return f"{estimator.lower()}_{kind.lower()}_{target}"


def analyze_counters(counters: dict[tuple[str, str], FrequencySeries], settings: PipelineSettings,
                     carrier: float, out: Analysis | None = None) -> Analysis:
    """Curves, offsets and slip detection from counter outputs keyed by ``(target, kind)``."""
    out = out or Analysis()
    out.counters.update(counters)
    for (target, kind), f in sorted(counters.items()):
        frac = f.to_fractional(carrier)
        for est in settings.estimators:
            out.curves[curve_name(est, kind, target)] = deviation(frac, est)
        method = "LambdaLongTermADEV" if f.kind is FreqKind.LAMBDA else "PiSegmentStd"
        try:
            est = mean_offset(frac, method, min_intervals=settings.min_intervals,
                              normalization=settings.pi_normalization)
        except ValueError as e:
            out.offsets.append({"target": target, "kind": kind, "method": method, "error": str(e)})
            continue
        out.offsets.append({"target": target, "kind": kind, "method": method, "mean": est.mean,
                            "uncertainty": est.uncertainty, "tau_s": est.tau,
                            "normalization": settings.pi_normalization if method == "PiSegmentStd" else ""})
    targets = sorted({t for t, _ in counters})
    for t in targets:
        if (t, "Pi") in counters and (t, "Lambda") in counters:
            out.slips[t] = detect_cycle_slips(counters[(t, "Pi")], counters[(t, "Lambda")],
                                              settings.cycle_slip_threshold)
    need = [(t, "Pi") for t in ("ltw_local", "ltw_remote", "ctw")]
    if all(k in counters for k in need):
        out.consistency = consistency_check(*(counters[k] for k in need), settings.consistency_tol)
    return out


def analyze_phases(phases: dict[str, PhaseSeries], settings: PipelineSettings, carrier: float) -> Analysis:
    out = Analysis()
    counters = {}
    for target, ph in phases.items():
        for kind in settings.counters:
            counters[(target, kind)] = count(ph, settings.gate, kind, settings.lambda_resolution)
        out.psd[target] = psd(ph, settings.psd_segments)
    return analyze_counters(counters, settings, carrier, out)


def low_decade_ratio(num: tuple[np.ndarray, np.ndarray], den: tuple[np.ndarray, np.ndarray]) -> float:
    """Ratio of PSD sums over the lowest usable decade (first nonzero bin to ten times it)."""
    f, p = num
    _, q = den
    f1 = f[1]
    sel = (f >= f1) & (f <= 10 * f1 * (1 + 1e-12))
    return float(p[sel].sum() / q[sel].sum()) if q[sel].sum() > 0 else float("nan")


# -- decomposition -----------------------------------------------------------

@dataclass
class Decomposition:
    result: DecompositionResult
    scans: dict[str, LagScan]
    total: PhaseSeries          # target phase on the temperature grid (drift included)
    notes: list[str] = field(default_factory=list)


def decompose_record(record: BeatRecord, settings: PipelineSettings,
                     gamma: float = GAMMA_FS_PER_K_M) -> Decomposition:
    """Lag scan on each temperature, then the two-temperature regression."""
    d = settings.decomposition
    target = target_phase(record, d.target)
    k = record.grid.samples(d.temperature_interval, "temperature_interval")
    t_loc = subsample(record.temp_local, k)
    t_rem = subsample(record.temp_remote, k)
    drift = drift_term(record) if d.subtract_drift else None
    phase = affine([(1.0, target), (-1.0, drift)]) if drift is not None else target
    notes = []
    scans, lags = {}, []
    for side, temp, max_lag in (("local", t_loc, d.max_lag_local), ("remote", t_rem, d.max_lag_remote)):
        scan = lag_scan(phase, temp, max_lag, z=d.significance_z)
        scans[side] = scan
        if scan.best is None:
            notes.append(f"no significant {side} lag (peak {scan.peak:.3g} < threshold "
                         f"{scan.threshold:.3g}); lag 0 used")
            lags.append(0.0)
        else:
            lags.append(scan.best)
    res = fit_mismatch(target, t_loc, t_rem, tuple(lags), drift, gamma, record.carrier)
    res.notes.extend(notes)
    total = to_grid(target, t_loc.grid) if k > 1 else target
    return Decomposition(res, scans, total, notes)


# -- identities ----------------------------------------------------------------

def identities(record: BeatRecord, settings: PipelineSettings, link: LinkConfig | None = None) -> list[tuple[str, float, bool]]:
    """Structural identities whose pass/fail does not depend on the seed."""
    rows = []

    def check(name, err, tol):
        rows.append((name, tol, bool(err <= tol)))

    def scale(*arrays):
        return max(1.0, *(float(np.max(np.abs(a))) for a in arrays))

    r = record
    l, rr, c = ltw_local(r.pd4a, r.pd4b), ltw_remote(r.pd3a, r.pd3b), ctw(r.pd4a, r.pd3a)
    expect = 0.25 * (r.pd4b.values - r.pd3b.values)
    err = np.max(np.abs(c.values - 0.5 * (l.values + rr.values) - expect))
    check("ctw_minus_mean_ltw_equals_quarter_round_trip_difference", err / scale(l.values, rr.values), 1e-12)

    target = target_phase(r, "ltw_local")
    cfg = CounterConfig(settings.gate)
    pi = count(target, settings.gate, "Pi")
    gate = cfg.steps(r.grid)[0]
    span = target.values[pi.grid.n * gate] - target.values[0]
    tele = float(np.sum(pi.values) * 2 * np.pi * pi.grid.dt)
    check("pi_counter_telescoping", abs(tele - span) / scale(target.values), 1e-9)

    a = count(ltw_local(r.pd4a, r.pd4b), settings.gate, "Pi").values
    b = count(r.lm, settings.gate, "Pi").values
    check("pi_counter_linearity", np.max(np.abs(pi.values - (a - b))) / scale(a, b), 1e-9)
    if link is not None and link.zero_delay:
        for name in ("ltw_local", "ltw_remote", "ctw"):
            check(f"zero_delay_{name}_equals_lm", float(np.max(np.abs(target_phase(r, name).values))), 1e-9)
    if link is not None and link.same_laser and r.truth is not None:
        # the LM beat itself still carries detection noise
        diff = r.truth.phi_l1.values - r.truth.phi_l2.values
        check("same_laser_laser_difference_zero", float(np.max(np.abs(diff))), 0.0)
    if link is not None and link.remote_mirror == "partial_fm" and r.truth is not None:
        check("partial_fm_remote_thermal_zero", float(np.max(np.abs(r.truth.theta_remote.values))), 0.0)
    return rows


# -- bundle writing -----------------------------------------------------------

def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class BundleWriter:
    """Tracks files written under ``root`` and finishes with a checksummed manifest."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        if rel not in self.files:
            self.files.append(rel)
        return p

    def text(self, rel: str, content: str) -> None:
        self.path(rel).write_text(content)

    def rows(self, rel: str, header: list[str], rows: list[list]) -> None:
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(fmt(v) if isinstance(v, float) else str(v) for v in row))
        self.text(rel, "\n".join(lines) + "\n")

    def finish(self, meta: dict) -> Path:
        files = {rel: sha256_file(self.root / rel) for rel in sorted(self.files)}
        manifest = {**meta, "files": files}
        path = self.root / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path


def versions() -> dict:
    return {"hybridlink": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def write_analysis(w: BundleWriter, a: Analysis, settings: PipelineSettings) -> None:
    if settings.write_counters:
        for (target, kind), f in sorted(a.counters.items()):
            write_counter_csv(f, w.path(f"counters/{target}_{kind.lower()}.csv"))
    for name, curve in sorted(a.curves.items()):
        curve.to_csv(w.path(f"curves/{name}.csv"))
    for target, (f, p) in sorted(a.psd.items()):
        w.rows(f"psd/{target}.csv", ["f_hz", "psd_rad2_per_hz"], [[float(x), float(y)] for x, y in zip(f, p)])
    cols = ["target", "kind", "method", "mean", "uncertainty", "tau_s", "normalization", "error"]
    w.rows("offsets.csv", cols, [[o.get(k, "") if o.get(k) is not None else "" for k in cols]
                                 for o in a.offsets])
    w.rows("cycle_slips.csv", ["target", "gate", "magnitude_hz"],
           [[t, k, m] for t, events in sorted(a.slips.items()) for k, m in events])
    if a.consistency is not None:
        c = a.consistency
        shown = " ".join(map(str, c.violations[:20])) + (" ..." if len(c.violations) > 20 else "")
        w.rows("consistency.csv", ["max_deviation_hz", "tolerance_hz", "gates", "violations", "first_violations"],
               [[c.max_deviation, c.tolerance, c.gates, len(c.violations), shown]])


def write_decomposition(w: BundleWriter, dec: Decomposition, settings: PipelineSettings) -> None:
    res = dec.result
    lines = [f"{k} = {fmt(v) if isinstance(v, float) else v}" for k, v in res.report().items()]
    w.text("decomposition/decomposition.txt", "\n".join(lines) + "\n")
    write_series_csv(res.residual, w.path("decomposition/residual.csv"))
    for side, scan in dec.scans.items():
        w.rows(f"decomposition/lag_scan_{side}.csv", ["lag_s", "correlation"],
               [[float(t), float(c)] for t, c in zip(scan.lags, scan.correlation)])
    terms = {"total": dec.total, "local": res.local_term, "remote": res.remote_term, "residual": res.residual}
    if res.drift_term is not None:
        terms["drift"] = res.drift_term
    gate = res.residual.grid.dt
    for name, ph in terms.items():
        ph = PhaseSeries(res.residual.grid, np.asarray(ph.values[: res.residual.grid.n]), ph.carrier,
                         max(ph.warmup, res.residual.warmup))
        f = count(ph, gate, "Pi").to_fractional(ph.carrier or 194.4e12)
        for est in settings.estimators:
            deviation(f, est).to_csv(w.path(f"decomposition/curves/{curve_name(est, 'Pi', name)}.csv"))


def summary(a: Analysis, dec: Decomposition | None, settings: PipelineSettings) -> dict:
    out: dict = {"targets": {}}
    for target in sorted({t for t, _ in a.counters}):
        entry = {}
        for kind in settings.counters:
            for est in settings.estimators:
                c = a.curves.get(curve_name(est, kind, target))
                if c is None or c.taus.size == 0:
                    continue
                entry[f"{est}_{kind}_first"] = float(c.sigmas[0])
                lo, hi = c.taus[0], min(100 * c.taus[0], c.taus[-1])
                if hi > lo:
                    entry[f"{est}_{kind}_slope_short"] = c.slope(lo, hi)
        entry["cycle_slips"] = len(a.slips.get(target, []))
        out["targets"][target] = entry
    if "ltw_local" in a.psd and "ctw" in a.psd:
        out["psd_ratio_ltw_local_over_ctw"] = low_decade_ratio(a.psd["ltw_local"], a.psd["ctw"])
    if a.consistency is not None:
        out["consistency_max_deviation_hz"] = a.consistency.max_deviation
    if dec is not None:
        out["decomposition"] = {k: v for k, v in dec.result.report().items()}
    return out


# -- entry points ----------------------------------------------------------------

@dataclass
class RunResult:
    record: BeatRecord
    analysis: Analysis
    decomposition: Decomposition | None
    identities: list[tuple[str, float, bool]]
    summary: dict


def run(sc: ScenarioConfig) -> RunResult:
    """Simulate and analyse a scenario in memory."""
    rec = simulate(sc.link, sc.grid, sc.seed)
    phases = {t: target_phase(rec, t) for t in sc.pipeline.targets}
    a = analyze_phases(phases, sc.pipeline, rec.carrier)
    dec = (decompose_record(rec, sc.pipeline, sc.link.local_ifo.gamma)
           if sc.pipeline.decomposition.enabled else None)
    ids = identities(rec, sc.pipeline, sc.link)
    return RunResult(rec, a, dec, ids, summary(a, dec, sc.pipeline))


def scenario_meta(sc: ScenarioConfig, stage: str) -> dict:
    return {
        "stage": stage,
        "scenario": sc.name,
        "config_sha256": sc.hash,
        "config": sc.raw,
        "seed": sc.seed,
        "grid": {"dt_s": sc.grid.dt, "n": sc.grid.n, "t0_s": sc.grid.t0},
        "timescale": sc.link.timescale,
        "mode_flags": sc.link.mode_flags(),
        "versions": versions(),
        "conventions": list(CONVENTIONS),
    }


def write_report(sc: ScenarioConfig, out: str | Path, result: RunResult | None = None) -> Path:
    """Full run written as a report bundle; returns the manifest path."""
    result = result or run(sc)
    w = BundleWriter(out)
    write_analysis(w, result.analysis, sc.pipeline)
    if result.decomposition is not None:
        write_decomposition(w, result.decomposition, sc.pipeline)
    w.rows("identities.csv", ["check", "tolerance", "passed"],
           [[n, float(t), str(p).lower()] for n, t, p in result.identities])
    w.text("summary.json", json.dumps(result.summary, indent=2, sort_keys=True) + "\n")
    w.text("config.json", canonical_json(sc.raw) + "\n")
    return w.finish(scenario_meta(sc, "report"))


def write_record(sc: ScenarioConfig, out: str | Path, truth: bool = False) -> Path:
    rec = simulate(sc.link, sc.grid, sc.seed)
    if not truth:
        rec = replace(rec, truth=None)
    meta = {k: v for k, v in scenario_meta(sc, "simulate").items() if k not in ("grid",)}
    return rec.save(out, meta) / "manifest.json"


def analyze_to(out: str | Path, settings: PipelineSettings, carrier: float, meta: dict,
               record: BeatRecord | None = None, counters: dict | None = None) -> Path:
    """Analysis-only bundle from a saved record or from ingested counter files."""
    if record is not None:
        phases = {t: target_phase(record, t) for t in settings.targets}
        a = analyze_phases(phases, settings, carrier)
    else:
        a = analyze_counters(counters or {}, settings, carrier)
    w = BundleWriter(out)
    write_analysis(w, a, settings)
    w.text("summary.json", json.dumps(summary(a, None, settings), indent=2, sort_keys=True) + "\n")
    return w.finish({**meta, "stage": "analyze", "versions": versions(), "conventions": list(CONVENTIONS)})


def decompose_to(out: str | Path, record: BeatRecord, settings: PipelineSettings, meta: dict,
                 gamma: float = GAMMA_FS_PER_K_M) -> Path:
    dec = decompose_record(record, settings, gamma)
    w = BundleWriter(out)
    write_decomposition(w, dec, settings)
    return w.finish({**meta, "stage": "decompose", "versions": versions()})


# -- comparison ------------------------------------------------------------------

@dataclass
class FileDiff:
    file: str
    max_deviation: float
    tolerance: float
    passed: bool
    detail: str = ""


@dataclass
class CompareReport:
    diffs: list[FileDiff]
    missing_in_a: list[str]
    missing_in_b: list[str]

    @property
    def passed(self) -> bool:
        return not self.missing_in_a and not self.missing_in_b and all(d.passed for d in self.diffs)

    @property
    def first_failure(self) -> str | None:
        if self.missing_in_a or self.missing_in_b:
            return (self.missing_in_a + self.missing_in_b)[0]
        for d in self.diffs:
            if not d.passed:
                return d.file
        return None

    def lines(self) -> list[str]:
        out = [f"missing in A: {f}" for f in self.missing_in_a]
        out += [f"missing in B: {f}" for f in self.missing_in_b]
        for d in self.diffs:
            status = "ok" if d.passed else "FAIL"
            extra = f" ({d.detail})" if d.detail else ""
            out.append(f"{status} {d.file} max_dev={d.max_deviation:.6g} tol={d.tolerance:g}{extra}")
        out.append("PASS" if self.passed else f"FAIL (first: {self.first_failure})")
        return out


def _cells(path: Path) -> list[list[str]]:
    text = path.read_text()
    if path.suffix == ".csv":
        return [line.split(",") for line in text.splitlines()]
    if path.suffix == ".txt":
        return [line.split(" = ", 1) for line in text.splitlines()]
    if path.suffix == ".json":
        flat = []

        def walk(prefix, v):
            if isinstance(v, dict):
                for k in sorted(v):
                    walk(f"{prefix}.{k}", v[k])
            elif isinstance(v, list):
                for i, x in enumerate(v):
                    walk(f"{prefix}[{i}]", x)
            else:
                flat.append([prefix, json.dumps(v)])
        walk("", json.loads(text))
        return flat
    return [[line] for line in text.splitlines()]


def _as_float(s: str) -> float | None:
    try:
        return float(s)
    except ValueError:
        return None


def diff_files(a: Path, b: Path) -> tuple[float, str]:
    """Max absolute numeric deviation between two files of the same layout."""
    ca, cb = _cells(a), _cells(b)
    if len(ca) != len(cb):
        return float("inf"), f"{len(ca)} vs {len(cb)} rows"
    worst = 0.0
    for i, (ra, rb) in enumerate(zip(ca, cb)):
        if len(ra) != len(rb):
            return float("inf"), f"row {i}: {len(ra)} vs {len(rb)} columns"
        for x, y in zip(ra, rb):
            if x == y:
                continue
            fx, fy = _as_float(x), _as_float(y)
            if fx is None or fy is None:
                return float("inf"), f"row {i}: {x!r} vs {y!r}"
            dev = abs(fx - fy)
            if not np.isfinite(dev):
                dev = 0.0 if (np.isnan(fx) and np.isnan(fy)) or fx == fy else float("inf")
            worst = max(worst, dev)
    return worst, ""


def _tolerance(rel: str, tolerances: dict[str, float] | float) -> float:
    if not isinstance(tolerances, dict):
        return float(tolerances)
    best, tol = -1, tolerances.get("default", 0.0)
    for prefix, t in tolerances.items():
        if prefix != "default" and rel.startswith(prefix) and len(prefix) > best:
            best, tol = len(prefix), t
    return float(tol)


def compare(bundle_a: str | Path, bundle_b: str | Path, tolerances: dict[str, float] | float = 0.0
            ) -> CompareReport:
    """Per-file max deviation of two bundles against tolerances.

    ``tolerances`` is one number or a map from path prefix to tolerance with
    an optional ``default``. Files are matched through the manifests; files
    with identical checksums have zero deviation.
    """
    a, b = Path(bundle_a), Path(bundle_b)
    ma, mb = (json.loads((d / "manifest.json").read_text())["files"] for d in (a, b))
    missing_in_b = sorted(set(ma) - set(mb))
    missing_in_a = sorted(set(mb) - set(ma))
    for d, files, missing in ((a, ma, missing_in_a), (b, mb, missing_in_b)):
        for rel in sorted(files):
            if not (d / rel).exists() and rel not in missing:
                missing.append(rel)
    diffs = []
    for rel in sorted(set(ma) & set(mb)):
        if rel in missing_in_a or rel in missing_in_b:
            continue
        tol = _tolerance(rel, tolerances)
        if ma[rel] == mb[rel] and sha256_file(a / rel) == sha256_file(b / rel):
            diffs.append(FileDiff(rel, 0.0, tol, True))
            continue
        dev, detail = diff_files(a / rel, b / rel)
        diffs.append(FileDiff(rel, dev, tol, dev <= tol, detail))
    return CompareReport(diffs, missing_in_a, missing_in_b)
