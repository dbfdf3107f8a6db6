"""Command-line front end.

Every subcommand reads the shared TOML config, writes CSV or JSON to
``--out`` (stdout by default) and exits with 0 on success, 2 on invalid
input and 3 on a numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as nvio
from .config import load_config
from .fitcore import FitResult, NonFiniteError
from .odmr import spectrum
from .phaseshift import (
    PhasePoint,
    extract_phase,
    fit_lifetimes,
    simulate_modulated_response,
)
from .polarization import (
    PolarizationGeometry,
    allowed_axes,
    contrast_curve,
    fit_polarization,
    selection_table,
)
from .ratemodel import (
    IntegrationError,
    evolve,
    pumped_provider,
    steady_state,
)
from .thermal import fit_thermal, lifetime_at

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


class NumericFailure(RuntimeError):
    pass


def _emit(args, text: str, path: str | None = None) -> None:
    target = path if path is not None else args.out
    if target is None or target == "-":
        sys.stdout.write(text)
    else:
        Path(target).write_text(text)


def _table(args, header, rows) -> str:
    rows = list(rows)
    if args.format == "json":
        return nvio.table_to_json(header, rows)
    return nvio.table_to_str(header, rows)


def _fit_text(args, result: FitResult) -> str:
    if args.format == "csv":
        return nvio.fit_to_csv(result)
    return nvio.fit_to_json(result)


def _check_fit(result: FitResult) -> None:
    if not result.converged:
        raise NumericFailure(f"fit did not converge: {result.message}")


# --- simulate-trace -------------------------------------------------------

def _pump_waveform(trace_cfg):
    kind = trace_cfg["pump"]
    start, end = float(trace_cfg["pulse_start"]), float(trace_cfg["pulse_end"])
    if kind == "constant":
        return (lambda t: 1.0), ()
    if kind == "off":
        return (lambda t: 0.0), ()
    if kind == "square":
        if end < start:
            raise ValueError("trace.pulse_end must not precede trace.pulse_start")
        return (lambda t: 1.0 if start <= t < end else 0.0), (start, end)
    raise ValueError(f"unknown trace.pump {kind!r}")


def cmd_simulate_trace(args, cfg) -> int:
    rates = cfg.rate_config()
    tc = cfg["trace"]
    t_end = float(tc["t_end"])
    n = int(tc["n_samples"])
    if t_end < 0 or n < 0:
        raise ValueError("trace.t_end and trace.n_samples must be >= 0")
    header = nvio.TRACE_HEADER
    if t_end == 0 or n == 0:
        _emit(args, _table(args, header, []))
        return EXIT_OK
    waveform, breaks = _pump_waveform(tc)
    initial = tc["initial"]
    if initial == "G0":
        p0 = np.eye(6)[0]
    elif initial == "thermal":
        p0 = np.array([1 / 3, 2 / 3, 0, 0, 0, 0])
    elif initial == "steady":
        p0 = steady_state(rates)
    else:
        raise ValueError(f"unknown trace.initial {initial!r}")
    t_eval = np.linspace(0.0, t_end, max(n, 2))
    trace = evolve(pumped_provider(rates, waveform), p0, t_end, config=rates,
                   t_eval=t_eval, breakpoints=breaks)
    _emit(args, _table(args, header, trace.rows()))
    return EXIT_OK


# --- phase-scan / fit-phase ------------------------------------------------

def _frequencies(pc) -> np.ndarray:
    if "frequencies" in pc:
        f = np.asarray(pc["frequencies"], dtype=float)
    else:
        if int(pc["n_freq"]) < 1:
            raise ValueError("phase.n_freq must be >= 1")
        f = np.logspace(np.log10(pc["f_min"]), np.log10(pc["f_max"]), int(pc["n_freq"]))
    if f.size == 0:
        raise ValueError("empty frequency list")
    if np.any(f <= 0):
        raise ValueError("modulation frequencies must be > 0")
    return f


def _phase_scan(cfg, seed) -> list[PhasePoint]:
    pc = cfg["phase"]
    channel = pc["channel"]
    if channel not in ("ir", "visible"):
        raise ValueError(f"unknown phase.channel {channel!r}")
    freqs = _frequencies(pc)
    rates = cfg.rate_config()
    if float(pc["pump_rate"]) > 0:
        rates = rates.replace(pump_rate=float(pc["pump_rate"]))
    rng = np.random.default_rng(seed)
    noise = float(pc["noise_rad"])
    points = []
    for f in freqs:
        resp = simulate_modulated_response(
            rates, float(f), float(pc["mod_depth"]), int(pc["n_periods"]),
            int(pc["samples_per_period"]),
        )
        sig = resp.ir if channel == "ir" else resp.visible
        p = extract_phase(resp.times, resp.pump, sig, float(f))
        if noise > 0:
            p = PhasePoint(p.f, p.phi + noise * rng.standard_normal(), noise)
        points.append(p)
    return points


def cmd_phase_scan(args, cfg) -> int:
    points = _phase_scan(cfg, cfg["run"]["seed"])
    _emit(args, _table(args, nvio.PHASE_HEADER, ((p.f, p.phi, p.sigma_phi) for p in points)))
    return EXIT_OK


def cmd_fit_phase(args, cfg) -> int:
    pc = cfg["phase"]
    if args.data:
        points = nvio.read_phase_points(args.data)
    else:
        points = _phase_scan(cfg, cfg["run"]["seed"])
        if args.dataset_out:
            Path(args.dataset_out).write_text(nvio.phase_points_to_str(points))
    if not points:
        raise ValueError("empty phase dataset")
    model = pc["model"]
    if model == "auto":
        model = "cascade" if pc["channel"] == "ir" else "single"
    tau1 = float(pc["tau1_fixed"]) if model == "cascade" and pc["tau1_fixed"] else None
    # Scans without injected noise only carry integrator-level scatter.
    absolute = bool(args.data) or float(pc["noise_rad"]) > 0
    result = fit_lifetimes(points, model, tau1=tau1, delay=float(pc["delay"]),
                           fit_delay=bool(pc["fit_delay"]), absolute_sigma=absolute)
    _emit(args, _fit_text(args, result))
    _check_fit(result)
    return EXIT_OK


# --- thermal-curve / fit-thermal -------------------------------------------

def cmd_thermal_curve(args, cfg) -> int:
    tc = cfg["thermal"]
    model = cfg.thermal_model()
    if "temperatures" in tc:
        T = np.asarray(tc["temperatures"], dtype=float)
    else:
        T = np.linspace(float(tc["t_min"]), float(tc["t_max"]), int(tc["n_points"]))
    if np.any(T < 0):
        raise ValueError("temperatures must be >= 0")
    tau = np.atleast_1d(lifetime_at(model, T))
    _emit(args, _table(args, nvio.LIFETIME_HEADER, zip(T, tau, np.zeros_like(tau))))
    return EXIT_OK


def cmd_fit_thermal(args, cfg) -> int:
    tc = cfg["thermal"]
    if not args.data:
        raise ValueError("fit-thermal needs --data PATH")
    points = nvio.read_lifetimes(args.data)
    result = fit_thermal(points, tc["structure"], int(tc["n_modes"]),
                         tuple(tc["energies"]), int(tc["cap"]))
    _emit(args, _fit_text(args, result))
    _check_fit(result)
    return EXIT_OK


# --- odmr-spectrum ------------------------------------------------------------

def cmd_odmr_spectrum(args, cfg) -> int:
    oc = cfg["odmr"]
    spin = cfg.spin_config()
    grid = np.linspace(float(oc["f_min"]), float(oc["f_max"]), int(oc["n_points"]))
    weights = oc["weights"] or None
    spec = spectrum(spin, grid, weights)
    lines = [{"center_hz": ln.center, "orientation": ln.orientation, "branch": ln.branch}
             for ln in spec.lines]
    centers = sorted({round(ln.center, 3) for ln in spec.lines})
    sidecar = {"lines": lines, "distinct_centers_hz": centers}
    rows = zip(spec.frequencies, spec.visible, spec.ir)
    if args.format == "json":
        body = json.loads(nvio.table_to_json(nvio.SPECTRUM_HEADER, rows))
        body.update(sidecar)
        _emit(args, json.dumps(body, indent=2) + "\n")
    else:
        _emit(args, nvio.table_to_str(nvio.SPECTRUM_HEADER, rows))
    lines_out = args.lines_out
    if lines_out is None and args.out not in (None, "-") and args.format != "json":
        lines_out = str(Path(args.out).with_suffix(".lines.json"))
    if lines_out is not None:
        Path(lines_out).write_text(json.dumps(sidecar, indent=2) + "\n")
    return EXIT_OK


# --- polar-scan / selection-rules ------------------------------------------

def _geometry(pc) -> PolarizationGeometry:
    kind = pc["geometry"]
    if kind == "in_plane":
        return PolarizationGeometry.in_plane(np.radians(float(pc["phi_nv_deg"])))
    if kind == "along_beam":
        return PolarizationGeometry.along_beam()
    if kind == "custom":
        unit = lambda v: tuple(np.asarray(v, float) / np.linalg.norm(v))
        return PolarizationGeometry(unit(pc["z"]), unit(pc["k"]), unit(pc["reference"]))
    raise ValueError(f"unknown polarization.geometry {kind!r}")


def cmd_polar_scan(args, cfg) -> int:
    pc = cfg["polarization"]
    axes = allowed_axes(pc["upper"], pc["lower"])
    geom = _geometry(pc)
    n = int(pc["n_theta"])
    if n < 1:
        raise ValueError("polarization.n_theta must be >= 1")
    theta = np.arange(n) * (2 * np.pi / n)
    curve = contrast_curve(axes, geom, theta, float(pc["floor"]))
    noise = float(pc["noise"])
    R = curve[:, 1].copy()
    if noise > 0:
        R = R + noise * np.random.default_rng(cfg["run"]["seed"]).standard_normal(n)
    sigma = np.full(n, noise)
    _emit(args, _table(args, nvio.CURVE_HEADER, zip(theta, R, sigma)))
    if args.fit_out:
        result = fit_polarization(theta, R, sigma if noise > 0 else None)
        Path(args.fit_out).write_text(nvio.fit_to_json(result))
    return EXIT_OK


def cmd_selection_rules(args, cfg) -> int:
    table = selection_table()
    if args.format == "csv":
        lines = ["upper,lower,allowed_axes"]
        lines += [f"{r['upper']},{r['lower']},{' '.join(r['allowed_axes'])}" for r in table]
        _emit(args, "\n".join(lines) + "\n")
    else:
        _emit(args, json.dumps(table, indent=2) + "\n")
    return EXIT_OK


COMMANDS = {
    "simulate-trace": (cmd_simulate_trace, "integrate the rate equations under a pump waveform"),
    "phase-scan": (cmd_phase_scan, "phase shift versus modulation frequency from the rate model"),
    "fit-phase": (cmd_fit_phase, "fit lifetimes to a phase scan (generated or --data)"),
    "thermal-curve": (cmd_thermal_curve, "metastable-singlet lifetime versus temperature"),
    "fit-thermal": (cmd_fit_thermal, "fit the phonon model to a lifetime dataset"),
    "odmr-spectrum": (cmd_odmr_spectrum, "visible and IR magnetic-resonance spectra"),
    "polar-scan": (cmd_polar_scan, "contrast versus light-polarization angle"),
    "selection-rules": (cmd_selection_rules, "C3v dipole selection rules for singlet pairs"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--seed", type=int, help="seed for all injected noise")
    common.add_argument("--format", choices=("csv", "json"), help="output format")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")

    parser = argparse.ArgumentParser(prog="nvphoto", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=helptext)
        if name in ("fit-phase", "fit-thermal"):
            p.add_argument("--data", help="input dataset CSV")
        if name == "fit-phase":
            p.add_argument("--dataset-out", help="also write the generated scan here")
        if name == "odmr-spectrum":
            p.add_argument("--lines-out", help="line-list JSON path")
        if name == "polar-scan":
            p.add_argument("--fit-out", help="write a sin^2 fit of the curve here")
    return parser


DEFAULT_FORMAT = {"fit-phase": "json", "fit-thermal": "json", "selection-rules": "json"}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.format is None:
        args.format = DEFAULT_FORMAT.get(args.command, "csv")
    func = COMMANDS[args.command][0]
    try:
        cfg = load_config(args.config, args.set)
        if args.seed is not None:
            cfg.set("run.seed", args.seed)
        return func(args, cfg)
    except (IntegrationError, NumericFailure, NonFiniteError, np.linalg.LinAlgError) as exc:
        print(f"nvphoto: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, TypeError, OSError) as exc:
        print(f"nvphoto: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
