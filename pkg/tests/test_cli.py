import json
import math
from pathlib import Path

import numpy as np
import pytest

from nvphoto import io as nvio
from nvphoto.cli import main
from nvphoto.odmr import NV_ORIENTATIONS
from nvphoto.phaseshift import effective_visible_lifetime
from nvphoto.ratemodel import RateConfig

DATA = Path(__file__).parent / "data"


def run(tmp_path, *argv, name="out.csv"):
    out = tmp_path / name
    code = main([*argv, "--out", str(out)])
    return code, (out.read_text() if out.exists() else None)


def test_square_pulse_ms_decay(tmp_path):
    code, text = run(tmp_path, "simulate-trace")
    assert code == 0
    trace = nvio.read_trace(text)
    cfg = RateConfig()
    late = trace.times > 2.0e-6 + 50e-9  # pulse ends at 2 us
    slope, _ = np.polyfit(trace.times[late], np.log(trace.level("MS")[late]), 1)
    assert -1 / slope == pytest.approx(1 / cfg.ms_total_rate, rel=0.01)


def test_trace_conserves_population(tmp_path):
    code, text = run(tmp_path, "simulate-trace", "--set", "trace.pump=constant",
                     "--set", "rates.pump_rate=1e8")
    assert code == 0
    pops = nvio.read_trace(text).populations
    assert np.max(np.abs(pops.sum(axis=1) - 1)) < 1e-9


def test_zero_duration_gives_header_only(tmp_path):
    code, text = run(tmp_path, "simulate-trace", "--set", "trace.t_end=0.0")
    assert code == 0
    assert text == ",".join(nvio.TRACE_HEADER) + "\n"


def test_negative_rate_is_rejected(tmp_path, capsys):
    code, _ = run(tmp_path, "simulate-trace", "--set", "rates.ms_total_rate=-5.0")
    assert code == 2
    assert "ms_total_rate" in capsys.readouterr().err


def test_unknown_key_is_rejected(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[rates]\npump_rat = 1.0\n")
    assert main(["simulate-trace", "--config", str(cfg)]) == 2
    assert "pump_rat" in capsys.readouterr().err


def test_config_file_and_override_precedence(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[trace]\nt_end = 1e-7\nn_samples = 5\n")
    code, text = run(tmp_path, "simulate-trace", "--config", str(cfg),
                     "--set", "trace.n_samples=3")
    assert code == 0
    trace = nvio.read_trace(text)
    np.testing.assert_allclose(trace.times, [0.0, 5e-8, 1e-7])


def test_visible_phase_scan_fit(tmp_path):
    code, text = run(tmp_path, "fit-phase", "--set", 'phase.channel="visible"',
                     "--dataset-out", str(tmp_path / "scan.csv"), name="fit.json")
    assert code == 0
    fit = nvio.fit_from_json(text)
    tau_eff = effective_visible_lifetime(RateConfig(pump_rate=1e5))
    assert fit.value("tau_s") == pytest.approx(tau_eff, rel=0.05)
    points = nvio.read_phase_points(tmp_path / "scan.csv")
    assert len(points) == 20


def test_ir_phase_scan_fit(tmp_path):
    code, text = run(tmp_path, "fit-phase", name="fit.json")
    assert code == 0
    fit = nvio.fit_from_json(text)
    assert fit.names == ["tau0_s"]
    assert abs(fit.value("tau0_s") - 0.9e-9) < 0.5e-9


def test_fit_phase_from_file(tmp_path):
    code, scan = run(tmp_path, "phase-scan", "--set", "phase.noise_rad=0.01", "--seed", "3")
    assert code == 0
    data = tmp_path / "out.csv"
    code, text = run(tmp_path, "fit-phase", "--data", str(data), name="fit.json")
    assert code == 0
    fit = nvio.fit_from_json(text)
    assert fit.value("tau0_s") == pytest.approx(0.9e-9, abs=0.5e-9)
    assert fit.error("tau0_s") > 0


def test_empty_frequency_list(tmp_path):
    code, _ = run(tmp_path, "phase-scan", "--set", "phase.frequencies=[]")
    assert code == 2
    code, _ = run(tmp_path, "fit-phase", "--set", "phase.n_freq=0")
    assert code == 2


def test_thermal_curve_anchor(tmp_path):
    code, text = run(tmp_path, "thermal-curve")
    assert code == 0
    rows = nvio.read_lifetimes(text)
    assert rows[0].T == pytest.approx(4.4)
    assert rows[0].tau == pytest.approx(462e-9, rel=1e-3)
    assert rows[-1].T == pytest.approx(450.0)


def test_fit_measured_lifetimes(tmp_path):
    code, text = run(tmp_path, "fit-thermal", "--data", str(DATA / "measured_lifetimes.csv"),
                     name="fit.json")
    assert code == 0
    fit = json.loads(text)
    eps = {p["name"]: p["value"] for p in fit["parameters"]}["eps1_eV"]
    assert 0.012 <= eps <= 0.018


def test_fit_thermal_fixed_structure(tmp_path):
    code, text = run(tmp_path, "fit-thermal", "--data", str(DATA / "measured_lifetimes.csv"),
                     "--set", 'thermal.structure="fixed"', name="fit.json")
    assert code == 0
    extra = json.loads(text)["extra"]
    assert len(extra["degeneracies"]) == 2
    assert len(extra["search"]) == 49


def test_fit_thermal_single_row(tmp_path):
    data = tmp_path / "one.csv"
    data.write_text("T_K,tau_s,sigma_tau_s\n295.0,2.19e-07,3e-09\n")
    code, _ = run(tmp_path, "fit-thermal", "--data", str(data), name="fit.json")
    assert code == 2


def test_fit_thermal_bad_header(tmp_path):
    data = tmp_path / "bad.csv"
    data.write_text("temp,tau\n295.0,2.19e-07\n")
    code, _ = run(tmp_path, "fit-thermal", "--data", str(data), name="fit.json")
    assert code == 2


def test_odmr_generic_field(tmp_path):
    B = (4e-3 * np.array([0.31, 0.52, 0.79]) / np.linalg.norm([0.31, 0.52, 0.79])).tolist()
    code, text = run(tmp_path, "odmr-spectrum", "--set", f"odmr.B={B!r}")
    assert code == 0
    sidecar = json.loads((tmp_path / "out.lines.json").read_text())
    assert len(sidecar["distinct_centers_hz"]) == 8
    spec = nvio.read_spectrum(text)
    assert np.all(spec[:, 1] <= 1.0) and np.all(spec[:, 2] >= 1.0)


def test_odmr_zero_field(tmp_path):
    code, text = run(tmp_path, "odmr-spectrum", "--format", "json", name="s.json")
    assert code == 0
    body = json.loads(text)
    assert body["distinct_centers_hz"] == [2.87e9]
    spec = np.array(body["rows"])
    i = np.argmin(spec[:, 1])
    assert spec[i, 0] == pytest.approx(2.87e9, abs=0.3e6)
    assert np.argmax(spec[:, 2]) == i


def test_polar_scan_along_beam(tmp_path):
    code, text = run(tmp_path, "polar-scan", "--set", 'polarization.geometry="along_beam"',
                     "--fit-out", str(tmp_path / "fit.json"))
    assert code == 0
    curve = nvio.read_curve(text)
    assert np.ptp(curve[:, 1]) < 1e-9
    fit = json.loads((tmp_path / "fit.json").read_text())
    assert fit["extra"]["preferred"] == "constant"


def test_polar_scan_in_plane_fit(tmp_path):
    code, _ = run(tmp_path, "polar-scan", "--set", "polarization.noise=0.02", "--seed", "1",
                  "--fit-out", str(tmp_path / "fit.json"))
    assert code == 0
    fit = nvio.fit_from_json((tmp_path / "fit.json").read_text())
    assert math.degrees(fit.value("phi_nv_rad")) == pytest.approx(90.0, abs=3.0)


def test_polar_scan_custom_geometry(tmp_path):
    z = [float(v) for v in NV_ORIENTATIONS[1]]
    code, text = run(tmp_path, "polar-scan", "--set", 'polarization.geometry="custom"',
                     "--set", f"polarization.z={z!r}")
    assert code == 0
    R = nvio.read_curve(text)[:, 1]
    assert R.min() >= 0.2 - 1e-12 and R.max() <= 1.0 + 1e-12


def test_selection_rules(tmp_path):
    code, text = run(tmp_path, "selection-rules", name="rules.json")
    assert code == 0
    table = json.loads(text)
    assert len(table) == 6
    rules = {frozenset((r["upper"], r["lower"])): r["allowed_axes"] for r in table}
    assert rules[frozenset(("A1", "E"))] == ["x", "y"]
    assert rules[frozenset(("A1",))] == ["z"]
    assert rules[frozenset(("A1", "A2"))] == []
    code, text = run(tmp_path, "selection-rules", "--format", "csv")
    assert text.splitlines()[0] == "upper,lower,allowed_axes"


@pytest.mark.parametrize("argv", [
    ["simulate-trace"],
    ["phase-scan", "--set", "phase.n_freq=3", "--set", "phase.noise_rad=0.02"],
    ["thermal-curve", "--format", "json"],
    ["odmr-spectrum", "--set", "odmr.B=[0.001, 0.002, 0.003]"],
    ["polar-scan", "--set", "polarization.noise=0.05"],
    ["selection-rules"],
])
def test_byte_identical_reruns(tmp_path, argv):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([*argv, "--seed", "7", "--out", str(a)]) == 0
    assert main([*argv, "--seed", "7", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_seed_changes_noise(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["polar-scan", "--set", "polarization.noise=0.05", "--seed", "1", "--out", str(a)])
    main(["polar-scan", "--set", "polarization.noise=0.05", "--seed", "2", "--out", str(b)])
    assert a.read_bytes() != b.read_bytes()


def test_csv_round_trips(tmp_path):
    code, text = run(tmp_path, "simulate-trace", "--set", "trace.n_samples=50")
    trace = nvio.read_trace(text)
    assert nvio.trace_to_str(trace) == text
    code, text = run(tmp_path, "thermal-curve")
    assert nvio.lifetimes_to_str(nvio.read_lifetimes(text)) == text
    code, text = run(tmp_path, "phase-scan", "--set", "phase.n_freq=3")
    assert nvio.phase_points_to_str(nvio.read_phase_points(text)) == text
    code, text = run(tmp_path, "odmr-spectrum", "--set", "odmr.n_points=11")
    spec = nvio.read_spectrum(text)
    assert nvio.table_to_str(nvio.SPECTRUM_HEADER, spec) == text
    code, text = run(tmp_path, "polar-scan")
    assert nvio.table_to_str(nvio.CURVE_HEADER, nvio.read_curve(text)) == text


def test_numeric_failure_exit_code(tmp_path, monkeypatch):
    from nvphoto import cli
    from nvphoto.ratemodel import IntegrationError

    def broken(*args, **kwargs):
        raise IntegrationError(1e-9, "step size too small")

    monkeypatch.setattr(cli, "evolve", broken)
    code, _ = run(tmp_path, "simulate-trace")
    assert code == 3


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for name in ("simulate-trace", "phase-scan", "fit-phase", "thermal-curve", "fit-thermal",
                 "odmr-spectrum", "polar-scan", "selection-rules"):
        assert name in out
