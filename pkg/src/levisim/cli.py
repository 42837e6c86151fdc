"""Command-line entry point: ``levisim <subcommand> --config FILE [--seed N] [--reps N] [--out DIR]``.

Each run writes CSV series (units in the column names), a JSON summary that
validates against ``schemas/summary.schema.json``, a run manifest and, unless
``--no-plots`` is given, PNG figures.

Exit codes: 0 success, 1 usage, 2 configuration, 3 numerical failure,
4 particle lost in every repetition.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

import jsonschema
import numpy as np
from scipy.integrate import trapezoid

from . import __version__, analysis, analytics, protocols
from .analytics import NumericalError
from .config import ConfigError, ExperimentConfig, RunManifest, from_dict, load_config, load_schema
from .core import DomainError, TrapShape, zero_point_motion
from .dynamics import IDEAL_SWITCHING, IntegratorError, PulseSchedule, recompression_schedule, release_recapture, simulate

log = logging.getLogger("levisim")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_LOST = 0, 1, 2, 3, 4
SUBCOMMANDS = ("simulate", "scan", "calibrate-crosstalk", "compensate3d", "tau-scan", "recompress", "reheat",
               "nonlinearity", "charge", "predict", "analyze")


class UsageError(Exception):
    pass


class AllLost(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path: Path, header, rows) -> str:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path.name


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in np.asarray(x, dtype=object).tolist()] if isinstance(x, np.ndarray) \
            else [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x) if np.isfinite(x) else None
    if isinstance(x, complex):
        return [float(x.real), float(x.imag)]
    return x


def _timing(exp: ExperimentConfig, ideal: bool = False) -> dict:
    return dict(IDEAL_SWITCHING) if ideal else dict(exp.timing)


def _reps(exp: ExperimentConfig, section: dict, default: int) -> int:
    if exp.repetitions is not None:
        return int(exp.repetitions)
    return int(section.get("repetitions", default))


# --------------------------------------------------------------------- handlers


def run_simulate(exp, out, plots):
    p = exp.protocol.get("simulate", {})
    kind = p.get("kind", "release_recapture")
    V = p.get("voltages", [0.0, 0.0, 0.0])
    tm = _timing(exp)
    if kind == "hold":
        sched = PulseSchedule(total_duration=p.get("duration", 100e-6), initial_voltages=tuple(V), **tm)
    elif kind == "release_recapture":
        sched = release_recapture(p.get("tau", 100e-6), voltages=V, **tm)
    else:
        sched = recompression_schedule(p.get("tau", 5e-6), p.get("tp", 6.48e-6), voltages=V, **tm)
    tr = simulate(sched, exp.sim, exp.seed, p.get("rep", 0), keys=("cli-simulate",))
    n = int(np.count_nonzero(np.isfinite(tr.positions[:, 0])))
    header = ["time_s", "x_m", "y_m", "z_m", "px_kg_m_per_s", "py_kg_m_per_s", "pz_kg_m_per_s",
              "det_x_V", "det_y_V", "det_z_V", "envelope", "vfb_x_V", "vfb_y_V", "vfb_z_V"]
    rows = np.column_stack([tr.times, tr.positions, tr.momenta, tr.detector, tr.envelope, tr.feedback_voltage])[:n]
    files = [write_csv(out / "trajectory.csv", header, rows)]
    if plots:
        from . import plotting

        files.append(plotting.trajectory(tr, out / "trajectory.png"))
    res = {"kind": kind, "samples": n, "lost": tr.lost, "lost_time_s": tr.lost_time,
           "duration_s": sched.total_duration}
    if tr.lost:
        raise AllLost(res, files)
    return res, files


def run_scan(exp, out, plots):
    p = exp.protocol.get("scan", {})
    r = protocols.compensation_scan(p.get("axis", 2), p.get("v_range", [-0.5, 0.5]), p.get("n_points", 11),
                                    p.get("tau", 50e-6), _reps(exp, p, 5), exp.sim, exp.seed,
                                    base_voltages=p.get("base_voltages", (0.0, 0.0, 0.0)), raw=p.get("raw", False),
                                    window=p.get("window", 40e-6), timing=_timing(exp))
    rows = [(v, k, e, np.isnan(e)) for v, es in zip(r.voltages, r.energies) for k, e in enumerate(es)]
    files = [write_csv(out / "scan.csv", ["voltage_V", "rep", "energy_J", "lost"], rows),
             write_csv(out / "scan_mean.csv", ["voltage_V", "mean_energy_J", "excluded"],
                       zip(r.voltages, r.mean_energies, r.excluded))]
    if plots:
        from . import plotting

        files.append(plotting.scan(r, out / "scan.png", f"axis {'xyz'[r.axis]}, tau = {r.tau * 1e6:g} us"))
    res = {"axis": r.axis, "tau_s": r.tau, "v_opt_V": r.v_opt, "direction": r.direction,
           "excluded_points": int(np.count_nonzero(r.excluded))}
    if r.fit is not None:
        res.update(a_J_per_V2=r.fit.a, b_J=r.fit.b, v_opt_ci_V=r.fit.v_opt_ci, a_ci=r.fit.a_ci, fit_valid=r.fit.valid,
                   fit_message=r.fit.message)
    if r.excluded.all():
        raise AllLost(res, files)
    return res, files


def run_crosstalk(exp, out, plots):
    p = exp.protocol.get("calibrate_crosstalk", {})
    kw = {k: p[k] for k in ("reference_gain", "measure", "tol") if k in p}
    est = protocols.cross_cool_calibrate(exp.sim, seed=exp.seed, **kw)
    rows = [(i, j, est.normalized_inverse_hat[i, j], est.uncertainty[i, j], est.ratio_matrix[i, j],
             est.flipped[i, j]) for i in range(3) for j in range(3)]
    files = [write_csv(out / "crosstalk.csv", ["row", "col", "normalized_inverse", "uncertainty", "ratio_Cij_over_Cii",
                                               "sign_flipped"], rows)]
    from .core import normalized_inverse

    truth = normalized_inverse(exp.sim.electrodes.transduction_C)
    res = {"normalized_inverse": est.normalized_inverse_hat, "uncertainty": est.uncertainty,
           "ratio_matrix": est.ratio_matrix, "evaluations": est.evaluations, "configured_normalized_inverse": truth}
    return res, files


def run_compensate3d(exp, out, plots):
    p = exp.protocol.get("compensate3d", {})
    taus = p.get("tau_schedule", [10e-6, 20e-6, 50e-6, 100e-6])
    r = protocols.compensate_3d(exp.sim, taus, exp.seed, initial_span=p.get("initial_span", (60.0, 60.0, 2.0)),
                                n_points=p.get("n_points", 11), repetitions=_reps(exp, p, 5), raw=p.get("raw", False),
                                timing=_timing(exp))
    rows = []
    for k, (s, V) in enumerate(zip(r.scans, r.history[1:])):
        ci = s.fit.v_opt_ci if s.fit is not None else float("nan")
        rows.append((k, s.tau, s.axis, s.v_opt, ci, *V))
    files = [write_csv(out / "compensate3d.csv", ["step", "tau_s", "axis", "v_opt_V", "v_opt_ci_V", "Vx_V", "Vy_V",
                                                  "Vz_V"], rows)]
    sim = exp.sim
    F = sim.electrodes.transduction_C @ r.voltages + sim.environment.constant_force(sim.particle)
    res = {"voltages_V": r.voltages, "residual_force_N": F, "tau_schedule_s": taus}
    return res, files


def run_tau_scan(exp, out, plots):
    p = exp.protocol.get("tau_scan", {})
    taus = p.get("taus", [5e-6, 10e-6, 20e-6, 30e-6, 40e-6, 50e-6])
    axis = p.get("axis", 2)
    r = protocols.tau_scan(taus, p.get("v_range", [-20.0, 20.0]), exp.sim, exp.seed, axis=axis,
                           n_points=p.get("n_points", 11), repetitions=_reps(exp, p, 5), timing=_timing(exp))
    files = [write_csv(out / "tau_scan.csv", ["tau_s", "a_J_per_V2", "a_se_J_per_V2", "v_opt_V", "v_opt_se_V"],
                       zip(r.taus, r.scales, r.scale_errors, r.v_opts, r.v_opt_errors))]
    W = exp.sim.trap.omega[axis]
    if plots:
        from . import plotting

        tt = r.taus
        files.append(plotting.series(tt * 1e6, {"a(tau)": r.scales, "c2 tau^2 + c4 tau^4": r.c2 * tt**2 + r.c4 * tt**4},
                                     out / "tau_scan.png", "tau (us)", "parabola scale (J/V^2)",
                                     errors={"a(tau)": r.scale_errors}, logy=True,
                                     styles={"c2 tau^2 + c4 tau^4": {"fmt": "-"}}))
    res = {"c2": r.c2, "c4": r.c4, "c4_over_c2": r.c4 / r.c2, "expected_c4_over_c2": W**2 / 4,
           "v_opt_slope_V_per_s": r.slope, "v_opt_slope_ci": r.slope_ci, "v_opt_flat": r.flat}
    return res, files


def run_recompress(exp, out, plots):
    p = exp.protocol.get("recompress", {})
    tau = p.get("tau", 5e-6)
    W = exp.sim.trap.omega[2]
    tp0 = analytics.recompression_time(tau, W, 1)
    step = p.get("tp_step", exp.sim.dt)
    start = p.get("tp_start", tp0 - 8 * step)
    stop = p.get("tp_stop", tp0 + 8 * step)
    tps = np.round(np.arange(start, stop + 0.5 * step, step) / exp.sim.dt) * exp.sim.dt
    ideal = p.get("ideal_switching", True)
    r = protocols.recompression_experiment(tau, tps, exp.sim, exp.seed, repetitions=_reps(exp, p, 150),
                                           offset=p.get("offset", 0.0), timing=_timing(exp, ideal))
    files = [write_csv(out / "recompress.csv", ["tp_nominal_s", "tp_applied_s", "max_std_m", "max_std_sem_m"],
                       zip(r.tp_nominal, r.tp_applied, r.max_std, r.max_std_error))]
    if plots:
        from . import plotting

        files.append(plotting.series(r.tp_nominal * 1e6, {"ensemble": r.max_std * 1e12}, out / "recompress.png",
                                     "t_p nominal (us)", "max sigma_z (pm)", errors={"ensemble": r.max_std_error * 1e12}))
    res = {"tau_s": tau, "tp_min_nominal_s": r.tp_min_nominal, "tp_min_corrected_s": r.tp_min_corrected,
           "tp_predicted_s": r.predicted, "offset_s": r.offset}
    return res, files


def run_reheat(exp, out, plots):
    p = exp.protocol.get("reheat", {})
    biases = p.get("biases", [[0.0, 0.0, 0.0], [0.0, 0.0, 10.0], [0.0, 0.0, 100.0]])
    r = protocols.reheating_experiment(biases, p.get("duration", 2e-3), exp.sim, exp.seed,
                                       repetitions=_reps(exp, p, 500), window=p.get("window", 40e-6))
    files = [write_csv(out / "reheat_rates.csv", ["Vx_V", "Vy_V", "Vz_V", "rate_W", "rate_se_W"],
                       [(*b, q, e) for b, q, e in zip(r.biases, r.rates, r.rate_errors)]),
             write_csv(out / "reheat_curves.csv", ["time_s"] + [f"energy_bias{k}_J" for k in range(len(r.biases))],
                       np.column_stack([r.times, r.mean_energy.T]))]
    if plots:
        from . import plotting

        files.append(plotting.series(r.times * 1e3, {f"V = {tuple(b)}": e for b, e in zip(r.biases, r.mean_energy)},
                                     out / "reheat.png", "time (ms)", "mean energy (J)"))
    return {"rates_W": r.rates, "rate_se_W": r.rate_errors, "biases_V": r.biases}, files


def run_nonlinearity(exp, out, plots):
    p = exp.protocol.get("nonlinearity", {})
    shape = TrapShape(p.get("shape", "GAUSSIAN_BEAM"))
    r = protocols.nonlinearity_scan(p.get("v_range", [-150.0, 150.0]), p.get("tau", 15e-6), exp.sim, exp.seed,
                                    axis=p.get("axis", 2), n_points=p.get("n_points", 41),
                                    repetitions=_reps(exp, p, 5), inner_fraction=p.get("inner_fraction", 0.25),
                                    shape=shape, timing=_timing(exp))
    V = r.scan.voltages
    files = [write_csv(out / "nonlinearity.csv", ["voltage_V", "mean_energy_J", "parabola_J", "gaussian_J",
                                                  "deviation_sigma"],
                       zip(V, r.scan.mean_energies, r.parabola(V), r.gaussian(V), r.deviation_sigma))]
    if plots:
        from . import plotting

        files.append(plotting.series(V, {"data": r.scan.mean_energies, "inner parabola": r.parabola(V),
                                         "gaussian": r.gaussian(V)}, out / "nonlinearity.png", "voltage (V)",
                                     "energy (J)", styles={"data": {"fmt": "o"}}))
    res = {"onset_voltage_V": r.onset_voltage, "onset_displacement_m": r.onset_displacement,
           "transduction_N_per_V": r.transduction, "gaussian_center_V": r.gaussian.center,
           "gaussian_width_V": r.gaussian.width, "parabola_v_opt_V": r.parabola.v_opt, "shape": shape.value}
    return res, files


def run_charge(exp, out, plots):
    p = exp.protocol.get("charge", {})
    amp, f, dur = p.get("drive_amplitude", 1.0), p.get("drive_frequency", 120e3), p.get("duration", 2e-3)
    seq = p.get("charge_sequence")
    if seq:
        r = protocols.charge_steps(seq, amp, f, dur, exp.sim, exp.seed)
        steps = np.concatenate([[np.nan], r.steps])
        files = [write_csv(out / "charge.csv", ["charge_e", "amplitude_m", "step_m"], zip(r.charges, r.amplitudes, steps))]
        if plots:
            from . import plotting

            files.append(plotting.histogram(r.bin_edges / r.unit_response, r.histogram, out / "charge_steps.png",
                                            "step size (single-charge units)"))
        return {"unit_response_m": r.unit_response, "step_spacing_m": r.spacing,
                "spacing_over_unit": r.spacing / r.unit_response}, files
    m = protocols.charge_measure(amp, f, dur, exp.sim, exp.seed)
    files = [write_csv(out / "charge.csv", ["amplitude_m", "inferred_charge_e", "unit_response_m"],
                       [(m.amplitude, m.inferred_charge, m.unit_response)])]
    return {"amplitude_m": m.amplitude, "inferred_charge_e": m.inferred_charge, "unit_response_m": m.unit_response,
            "configured_charge_e": exp.sim.particle.charge_q}, files


def run_predict(exp, out, plots):
    p = exp.protocol.get("predict", {})
    sim = exp.sim
    axis = p.get("axis", 2)
    taus = np.asarray(p.get("taus", [100e-6]), dtype=float)
    nbar = p.get("nbar", sim.initial_nbar[axis])
    W = sim.trap.omega[axis]
    m = sim.mass
    F = p.get("force", 0.0)
    sz, sp = analytics.thermal_moments(nbar, W, m)
    rel = 1 + (W * taus) ** 2 / 2
    sig = np.sqrt(analytics.free_expansion_variance(nbar, W, m, taus))
    smax = np.array([np.sqrt(analytics.recapture_variance_max(sz, sp, t, W, m)) for t in taus])
    cnv = abs(protocols.effective_transduction(sim, axis))
    a = np.array([analytics.expected_scan_parabola(cnv, t, W, m).a for t in taus])
    E0 = analytics.mean_energy_after_release(sz * m * W**2, 0.0, 0.0, W, m)
    Ef = analytics.mean_energy_after_release(sz * m * W**2, F, taus, W, m)
    disp = F * taus**2 / (2 * m)
    tp = np.array([analytics.recompression_time(t, W, 1) for t in taus])
    files = [write_csv(out / "predict.csv", ["tau_s", "relative_energy", "sigma_free_m", "max_std_m",
                                             "scan_a_J_per_V2", "mean_energy_J", "force_displacement_m",
                                             "recompression_tp_s"],
                       zip(taus, rel, sig, smax, a, Ef, disp, tp))]
    one = taus.size == 1

    def pick(x):
        return x[0] if one else x

    res = {"tau_s": pick(taus), "relative_energy": pick(rel), "sigma_free_m": pick(sig), "max_std_m": pick(smax),
           "max_std": pick(smax), "sigma_z0_m": float(np.sqrt(sz)), "zero_point_m": zero_point_motion(m, W),
           "expansion_factor": pick(sig / np.sqrt(sz)), "scan_a_J_per_V2": pick(a), "initial_energy_J": E0,
           "mean_energy_J": pick(Ef), "force_displacement_m": pick(disp), "recompression_tp_s": pick(tp)}
    return res, files


def run_analyze(exp, out, plots, args):
    if not args.input:
        raise UsageError("analyze requires --input CSV")
    try:
        with open(args.input, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            data = np.array([[float(v) for v in row] for row in reader if row])
    except (OSError, StopIteration, ValueError) as exc:
        raise UsageError(f"cannot read {args.input}: {exc}") from exc
    cols = {h: data[:, k] for k, h in enumerate(header)}

    def col(name, default_idx):
        key = name or header[default_idx]
        if key not in cols:
            raise UsageError(f"column {key!r} not in {args.input}")
        return cols[key]

    x = col(args.x, 0)
    y = col(args.y, 1 if len(header) > 1 else 0)
    fit = args.fit
    files = []
    if fit == "sine":
        omega = args.omega if args.omega else exp.sim.trap.omega[2]
        r = analysis.fit_sine(x, y, omega)
        res = {"amplitude": r.amplitude, "phase": r.phase, "slope": r.slope, "offset": r.offset, "omega": r.omega,
               "residual_rms": r.residual_rms, "converged": r.converged}
    elif fit == "parabola":
        r = analysis.fit_parabola(x, y)
        res = {"a": r.a, "v_opt": r.v_opt, "b": r.b, "a_ci": r.a_ci, "v_opt_ci": r.v_opt_ci, "b_ci": r.b_ci,
               "valid": r.valid}
    elif fit == "gaussian":
        r = analysis.fit_gaussian(x, y)
        res = {"amplitude": r.amplitude, "center": r.center, "width": r.width, "offset": r.offset,
               "converged": r.converged}
    elif fit == "drift":
        r = analysis.fit_exponential_drift(x, y)
        res = {"V_f": r.V_f, "V_0": r.V_0, "RC": r.RC, "converged": r.converged}
    elif fit == "tau-scaling":
        c2, c4 = analysis.fit_tau_scaling(x, y)
        res = {"c2": c2, "c4": c4}
    else:
        fs = 1.0 / np.median(np.diff(x))
        seg = min(args.segment, y.size)
        f, pxx = analysis.psd_welch(y, fs, segment_length=seg)
        files.append(write_csv(out / "psd.csv", ["frequency_Hz", "psd_per_Hz"], zip(f, pxx)))
        res = {"sample_rate_Hz": fs, "segment_length": seg, "variance": float(np.var(y)),
               "integrated_psd": float(trapezoid(pxx, f))}
    res["fit"] = fit
    res["input"] = str(args.input)
    return res, files


HANDLERS = {
    "simulate": run_simulate, "scan": run_scan, "calibrate-crosstalk": run_crosstalk,
    "compensate3d": run_compensate3d, "tau-scan": run_tau_scan, "recompress": run_recompress,
    "reheat": run_reheat, "nonlinearity": run_nonlinearity, "charge": run_charge, "predict": run_predict,
}


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="levisim", description="Levitated-particle force-compensation simulator.")
    ap.add_argument("--version", action="version", version=f"levisim {__version__}")
    sub = ap.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON configuration file (defaults are used when omitted)")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--reps", type=int, help="override the repetition count")
        sp.add_argument("--out", default=None, help="output directory (default ./levisim-out/<subcommand>)")
        sp.add_argument("--no-plots", action="store_true", help="skip PNG figures")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "analyze":
            sp.add_argument("--input", help="CSV file with a header row")
            sp.add_argument("--fit", choices=["sine", "parabola", "gaussian", "drift", "tau-scaling", "psd"],
                            default="sine")
            sp.add_argument("--x", help="column used as abscissa (default: first)")
            sp.add_argument("--y", help="column used as ordinate (default: second)")
            sp.add_argument("--omega", type=float, help="angular frequency guess for sine fits (rad/s)")
            sp.add_argument("--segment", type=int, default=2**14, help="Welch segment length")
    return ap


def _summary(cmd, exp, status, results, outputs) -> dict:
    return _jsonable({"subcommand": cmd, "tool_version": __version__, "seed": exp.seed,
                      "config_hash": exp.config_hash, "status": status, "results": results, "outputs": outputs})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    cmd = args.subcommand
    if args.reps is not None and args.reps < 1:
        print("levisim: error: --reps must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        exp = load_config(args.config) if args.config else from_dict({})
        if args.seed is not None:
            if args.seed < 0:
                raise UsageError("--seed must be non-negative")
            exp.seed = args.seed
        if args.reps is not None:
            exp.repetitions = args.reps
    except ConfigError as exc:
        print(f"levisim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UsageError as exc:
        print(f"levisim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out) if args.out else Path("levisim-out") / cmd
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(exp.config_hash, exp.seed, __version__, cmd,
                           _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))
    status, code = "ok", EXIT_OK
    try:
        if cmd == "analyze":
            results, files = run_analyze(exp, out, not args.no_plots, args)
        else:
            results, files = HANDLERS[cmd](exp, out, not args.no_plots)
    except AllLost as exc:
        results, files = exc.args
        status, code = "lost", EXIT_LOST
        print("levisim: particle lost in every repetition", file=sys.stderr)
    except UsageError as exc:
        print(f"levisim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DomainError) as exc:
        print(f"levisim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegratorError, NumericalError, protocols.CalibrationError, analysis.AnalysisError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"levisim: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    summary = _summary(cmd, exp, status, results, list(files) + ["summary.json", "manifest.json"])
    jsonschema.validate(summary, load_schema("summary.schema.json"))
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    manifest.end_time = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    manifest.outputs = summary["outputs"]
    (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")
    print(out / "summary.json")
    return code


if __name__ == "__main__":
    sys.exit(main())
