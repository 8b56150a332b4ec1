import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from hybridlink.cli import EXIT_COMPARE_FAIL, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from hybridlink.config import bundled_names
from hybridlink.noise import NoiseSpec, gen_powerlaw
from hybridlink.pipeline import compare
from hybridlink.stability import StabilityCurve
from hybridlink.counters import lambda_counter, pi_counter
from hybridlink.timeseries import SampleGrid, write_counter_csv

SHORT = ["--set", "grid.duration_s=20000"]


def _report(tmp_path, name, scenario="fig3_independent_lasers", *extra):
    out = tmp_path / name
    assert main(["report", "--scenario", scenario, "--out", str(out), *SHORT, *extra]) == EXIT_OK
    return out


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_list(capsys):
    assert main(["list"]) == EXIT_OK
    assert capsys.readouterr().out.split() == bundled_names()


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "hybridlink.cli", "list"], capture_output=True, text=True)
    assert r.returncode == 0 and "fig4_partial_fm" in r.stdout


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["report", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG
    assert "cannot read config" in capsys.readouterr().err
    assert main(["report", "--scenario", "fig3_same_laser", "--set", "link.fiber1.tau_s=-1"]) == EXIT_CONFIG
    assert main(["simulate", "--scenario", "fig3_same_laser", "--set", "pipeline.gate_s=0.3"]) == EXIT_CONFIG


def test_runtime_error_exit_code(tmp_path, capsys):
    rec = tmp_path / "rec"
    assert main(["simulate", "--scenario", "fig6_unidirectional", "--out", str(rec), *SHORT]) == EXIT_OK
    lines = (rec / "pd4a.csv").read_text().splitlines()
    lines[5] = lines[5].split(",")[0] + ",not-a-number"
    (rec / "pd4a.csv").write_text("\n".join(lines) + "\n")
    assert main(["analyze", "--record", str(rec), "--out", str(tmp_path / "o")]) == EXIT_RUNTIME
    assert "runtime error" in capsys.readouterr().err


def test_default_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("HYBRIDLINK_OUT", str(tmp_path / "root"))
    assert main(["simulate", "--scenario", "fig6_unidirectional", *SHORT]) == EXIT_OK
    assert (tmp_path / "root" / "fig6_unidirectional" / "simulate" / "pd4a.csv").exists()


def test_report_is_deterministic_and_manifest_covers_files(tmp_path):
    a = _report(tmp_path, "a")
    b = _report(tmp_path, "b")
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
    manifest = json.loads((a / "manifest.json").read_text())
    listed = set(manifest["files"])
    assert listed == {str(f) for f in files if str(f) != "manifest.json"}
    assert len(manifest["config_sha256"]) == 64
    assert manifest["seed"] == 1 and manifest["timescale"] == "slow"
    assert any("Lambda" in c for c in manifest["conventions"])


def test_compare_self_and_seed_change(tmp_path, capsys):
    a = _report(tmp_path, "a")
    rep = compare(a, a)
    assert rep.passed and all(d.max_deviation == 0 for d in rep.diffs)
    b = _report(tmp_path, "b", "fig3_independent_lasers", "--seed", "2")
    capsys.readouterr()
    assert main(["compare", str(a), str(b)]) == EXIT_COMPARE_FAIL
    out = capsys.readouterr().out
    rep = compare(a, b)
    assert not rep.passed
    assert rep.first_failure in out
    by_name = {d.file: d for d in rep.diffs}
    assert by_name["identities.csv"].max_deviation == 0
    assert by_name["curves/oadev_pi_ltw_local.csv"].max_deviation > 0


def test_compare_tolerance_file_and_missing_files(tmp_path, capsys):
    a = _report(tmp_path, "a")
    b = tmp_path / "b"
    subprocess.run(["cp", "-r", str(a), str(b)], check=True)
    (b / "offsets.csv").unlink()
    rep = compare(a, b, {"default": 1.0})
    assert not rep.passed and rep.missing_in_b == ["offsets.csv"]
    assert rep.first_failure == "offsets.csv"
    tol = tmp_path / "tol.json"
    tol.write_text(json.dumps({"curves/": 1.0}))
    assert main(["compare", str(a), str(a), "--tolerances", str(tol)]) == EXIT_OK
    assert main(["compare", str(a), str(tmp_path)]) == EXIT_CONFIG


@pytest.mark.slow
@pytest.mark.parametrize("scenario", ["fig2_anc_loop", "fig3_independent_lasers", "fig3_same_laser",
                                      "fig4_partial_fm", "fig5_same_laser_pfm", "fig6_unidirectional"])
def test_bundled_scenarios_run_end_to_end(tmp_path, scenario):
    out = tmp_path / scenario
    assert main(["report", "--scenario", scenario, "--out", str(out)]) == EXIT_OK
    rows = _rows(out / "identities.csv")
    assert rows and all(r["passed"] == "true" for r in rows)
    summary = json.loads((out / "summary.json").read_text())
    for t in summary["targets"].values():
        assert t["cycle_slips"] == 0


@pytest.fixture(scope="module")
def fig3(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig3") / "bundle"
    assert main(["report", "--scenario", "fig3_independent_lasers", "--out", str(out)]) == EXIT_OK
    return out


def test_fig3_curve_structure(fig3):
    pi = StabilityCurve.from_csv(fig3 / "curves/oadev_pi_ltw_local.csv")
    assert pi.slope(1, 100) == pytest.approx(-1.0, abs=0.1)
    lam = StabilityCurve.from_csv(fig3 / "curves/oadev_lambda_ltw_local.csv")
    assert lam.label == "OADEV(Lambda)"
    # remote temperature (2000 s period) lifts Lambda around a third of its period
    assert max(lam.at(500.0), lam.at(1000.0)) > 1.5 * lam.at(100.0)
    assert lam.at(2000.0) < lam.at(1000.0)
    # long-tau excess over the white-noise extrapolation
    assert pi.at(5000.0) > 5 * pi.at(1.0) / 5000


def test_fig3_decomposition(fig3):
    d = json.loads((fig3 / "summary.json").read_text())["decomposition"]
    assert d["lag_local_s"] == 2300.0 and d["lag_remote_s"] == 105.0
    assert d["dL_local_m"] == pytest.approx(0.15, rel=0.05)
    assert d["dL_remote_m"] == pytest.approx(0.35, rel=0.05)
    for part in ("total", "local", "remote", "residual", "drift"):
        assert (fig3 / f"decomposition/curves/oadev_pi_{part}.csv").exists()


def test_fig4_remote_mismatch_consistent_with_zero(tmp_path):
    out = tmp_path / "fig4"
    assert main(["decompose", "--scenario", "fig4_partial_fm", "--out", str(out)]) == EXIT_OK
    kv = dict(line.split(" = ", 1) for line in (out / "decomposition/decomposition.txt").read_text().splitlines())
    assert abs(float(kv["dL_remote_m"])) < 3 * float(kv["dL_remote_stderr_m"])
    assert float(kv["dL_local_m"]) == pytest.approx(0.15, rel=0.05)


def test_simulate_then_analyze_and_decompose_record(tmp_path):
    rec = tmp_path / "rec"
    assert main(["simulate", "--scenario", "fig3_same_laser", "--out", str(rec), *SHORT]) == EXIT_OK
    assert main(["analyze", "--record", str(rec), "--out", str(tmp_path / "an")]) == EXIT_OK
    assert (tmp_path / "an" / "curves" / "oadev_pi_ltw_local.csv").exists()
    assert main(["decompose", "--record", str(rec), "--out", str(tmp_path / "de")]) == EXIT_OK
    assert (tmp_path / "de" / "decomposition" / "decomposition.txt").exists()


def test_analyze_ingests_counter_csv(tmp_path):
    g = SampleGrid(0.1, 20_003)
    phi = gen_powerlaw(NoiseSpec(white_pm=1e-3, seed=1), g)
    v = np.array(phi.values)
    v[10_005:] += 2 * np.pi
    from hybridlink.timeseries import PhaseSeries
    phi = PhaseSeries(g, v)
    write_counter_csv(pi_counter(phi, 1.0), tmp_path / "site_pi.csv")
    write_counter_csv(lambda_counter(phi, 1.0), tmp_path / "site_lambda.csv")
    out = tmp_path / "out"
    args = ["analyze", "--counter-csv", str(tmp_path / "site_pi.csv"), str(tmp_path / "site_lambda.csv"),
            "--out", str(out)]
    assert main(args) == EXIT_OK
    slips = _rows(out / "cycle_slips.csv")
    assert [int(r["gate"]) for r in slips] == [1000]
    assert (out / "curves" / "oadev_pi_ingested.csv").exists()
    assert (out / "curves" / "oadev_lambda_ingested.csv").exists()
