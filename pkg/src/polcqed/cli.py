"""Command-line entry point.

Each subcommand runs one scenario and writes its data as CSV (or JSON) into
the output directory. Every CSV starts with ``#`` comment lines holding the
resolved configuration as TOML, so stripping the leading ``# `` from them
gives a config file that reproduces the run.

Exit codes: 0 success, 2 configuration or usage error, 3 solver or analysis
failure, 4 file I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__, fit, model, observables, solver, sweeps
from .config import ConfigError, RunConfig, load_config, load_preset
from .model import ParameterError, SystemParams

log = logging.getLogger("polcqed")

THREADS_ENV = "POLCQED_THREADS"

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

SUBCOMMANDS = {
    "transmission-map": "transmission_map",
    "g2-map": "g2_map",
    "g2-trace": "g2_trace_point",
    "photon-number": "pn_vs_theta",
    "kappa-sweep": "kappa_sweep",
    "ablation": "ablation_single_transition",
    "dephasing-study": "dephasing_study",
    "fit": "fit",
    "special-angles": "special_angles",
    "params-report": None,
}

_AXIS_COLUMNS = {"f_laser": "laser_detuning_ghz", "qd_common_offset": "qd_offset_ghz",
                 "theta_out": "theta_out_deg"}

_SOLVER_ERRORS = (solver.SolverSingular, solver.NoConvergence, fit.ForwardModelFailure,
                  sweeps.NotFound, observables.ZeroIntensity, np.linalg.LinAlgError)


# -- output ---------------------------------------------------------------------

def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return json.dumps(str(v))


def config_header(command: str, top: dict, params: SystemParams, axes: Sequence = (),
                  extra_tables: Optional[dict] = None) -> list[str]:
    """Resolved run configuration as TOML lines."""
    lines = [f"polcqed_version = {_toml_value(__version__)}", f"command = {_toml_value(command)}"]
    lines += [f"{k} = {_toml_value(v)}" for k, v in top.items() if v is not None]
    lines.append("[params]")
    lines += [f"{k} = {_toml_value(v)}" for k, v in params.to_config().items()]
    for name, table in (extra_tables or {}).items():
        lines.append(f"[{name}]")
        lines += [f"{k} = {_toml_value(v)}" for k, v in table.items()]
    for a in axes:
        lines += ["[[axes]]", f"name = {_toml_value(a.name)}", f"start = {_toml_value(a.start)}",
                  f"stop = {_toml_value(a.stop)}", f"n_points = {_toml_value(a.n_points)}"]
    return lines


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def write_table(path: Path, header: list[str], columns: Sequence[str], rows: Iterable[Sequence],
                fmt: str = "csv") -> Path:
    """Write one long-format table; ``fmt`` is ``'csv'`` or ``'json'``."""
    path = Path(path)
    path = path.parent / f"{path.name}.{fmt}"
    rows = [list(r) for r in rows]
    if fmt == "json":
        def js(v):
            if isinstance(v, str):
                return v
            v = float(v)
            return v if np.isfinite(v) else None
        doc = {"config": "\n".join(header), "columns": list(columns),
               "rows": [[js(v) for v in r] for r in rows]}
        path.write_text(json.dumps(doc, indent=1) + "\n")
        return path
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(v) for v in r])
    return path


def _map_rows(coords: dict, *fields: np.ndarray):
    names = list(coords)
    shape = tuple(len(coords[n]) for n in names)
    for idx in np.ndindex(*shape):
        yield [coords[n][i] for n, i in zip(names, idx)] + [f[idx] for f in fields]


def _map_columns(coords: dict) -> list[str]:
    return [_AXIS_COLUMNS.get(n, n) for n in coords]


# -- argument handling ------------------------------------------------------------

def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path, help="TOML run configuration")
    src.add_argument("--preset", choices=("qd_a", "qd_b"), help="bundled parameter set")
    common.add_argument("--out", type=Path, help="output directory (default: config output_dir or .)")
    common.add_argument("--n-fock", type=int, help="photon levels per mode")
    common.add_argument("--threads", type=int, default=_default_threads(),
                        help=f"worker threads (default: ${THREADS_ENV} or 1)")
    common.add_argument("--jitter", type=float, nargs="+", metavar="PS",
                        help="detector jitter FWHM values in ps")
    common.add_argument("--format", choices=("csv", "json"), help="output format")
    common.add_argument("--theta-out", type=float, help="output polarizer angle in degrees")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="polcqed", description="Two-polarization cavity QED simulator.")
    p.add_argument("--version", action="version", version=f"polcqed {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "transmission-map": "transmission vs laser detuning and polarizer angle",
        "g2-map": "g2(0) vs QD offset and polarizer angle",
        "g2-trace": "g2(tau) at one point, raw and detector-convolved",
        "photon-number": "photon-number distribution vs polarizer angle",
        "kappa-sweep": "maximal g2(0) vs cavity loss rate at constant drive",
        "ablation": "g2(0) map with one QD transition removed",
        "dephasing-study": "maximal g2(0) under single-parameter changes",
        "fit": "fit parameters to transmission traces",
        "special-angles": "locate the two transmission-extinction polarizer angles",
        "params-report": "print cooperativity and derived quantities",
    }
    for name, text in helps.items():
        sp_ = sub.add_parser(name, parents=[common], help=text, description=text)
        if name == "g2-trace":
            sp_.add_argument("--qd-offset", type=float, help="common QD frequency offset in GHz")
        if name == "ablation":
            sp_.add_argument("--disable", choices=("X", "Y"), default=None,
                             help="transition to remove when the config keeps both (default Y)")
        if name == "fit":
            sp_.add_argument("--data", type=Path, help="CSV with theta_out_deg, detuning_ghz, transmission")
            sp_.add_argument("--free", nargs="+", choices=fit.FREE_FIELDS, help="parameters to fit")
            sp_.add_argument("--seed", type=int, help="restart seed")
    return p


def _resolve(args) -> RunConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    else:
        cfg = load_preset(args.preset or "qd_a")
        cfg.output_dir = Path(".")
    if args.n_fock is not None:
        if args.n_fock < 2:
            raise ConfigError("--n-fock must be >= 2")
        cfg.n_fock = args.n_fock
    if args.out is not None:
        cfg.output_dir = args.out
    if args.jitter:
        if any(j <= 0 for j in args.jitter):
            raise ConfigError("--jitter values must be positive")
        cfg.jitter_ps = tuple(args.jitter)
    if args.format:
        cfg.format = args.format
    if args.theta_out is not None:
        cfg.theta_out = args.theta_out
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return cfg


def _outdir(cfg: RunConfig) -> Path:
    d = Path(cfg.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    if not os.access(d, os.W_OK):
        raise PermissionError(f"output directory {d} is not writable")
    return d


def _top(cfg: RunConfig, scenario: str, **extra) -> dict:
    top = {"scenario": scenario, "format": cfg.format, "n_fock": cfg.n_fock}
    if cfg.theta_out is not None:
        top["theta_out_deg"] = cfg.theta_out
    if cfg.jitter_ps:
        top["jitter_ps"] = list(cfg.jitter_ps)
    top.update(extra)
    return top


# -- subcommands --------------------------------------------------------------------

def _sweep_spec(cfg: RunConfig, scenario: str, base: SystemParams, threads: int) -> sweeps.SweepSpec:
    kw = dict(scenario=scenario, base=base, axes=cfg.axes, workers=threads,
              tau_max=cfg.tau_max, n_tau=cfg.n_tau, jitters_ps=cfg.jitter_ps)
    if cfg.theta_out is not None:
        kw["theta_out"] = cfg.theta_out
    if cfg.kappas:
        kw["kappas"] = cfg.kappas
    if cfg.target_nbar is not None:
        kw["target_nbar"] = cfg.target_nbar
    return sweeps.SweepSpec(**kw)


def _report_maximum(label: str, m: sweeps.MapMaximum) -> str:
    where = ", ".join(f"{k}={v:g}" for k, v in m.coords.items())
    return f"{label}: max g2(0) = {m.value:.4g} at {where} (n_fock+1: {m.value_next_fock:.4g})"


def cmd_params_report(cfg: RunConfig, args) -> int:
    p = cfg.resolved_params()
    try:
        c = model.cooperativity(p)
        c_line = f"C = {c:.2f}"
    except ZeroDivisionError:
        c, c_line = float("nan"), "C = undefined (gamma_par = gamma_star = 0)"
    rows = [
        ("cooperativity", c, "g^2 / (kappa (gamma_par/2 + gamma_star))"),
        ("g_over_kappa", p.g_x / p.kappa, ""),
        ("cavity_linewidth_ghz", p.kappa / model.TWO_PI, "kappa / 2pi, intensity decay"),
        ("qd_coherence_decay_per_ns", p.gamma_par / 2 + p.gamma_star / 4, "gamma_par/2 + gamma_star/4"),
        ("fine_structure_splitting_ghz", p.f_qd_y - p.f_qd_x, "f_qd_y - f_qd_x"),
        ("empty_cavity_photons", (p.eta / p.kappa) ** 2, "(eta/kappa)^2, resonant, both modes"),
        ("hilbert_dim", p.layout.dim, ""),
    ]
    print(c_line)
    for name, v, note in rows:
        print(f"{name} = {v:.6g}" + (f"    # {note}" if note else ""))
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args, command: str) -> int:
    scenario = SUBCOMMANDS[command]
    base = cfg.resolved_params()
    if scenario == "ablation_single_transition" and base.qd_x_enabled and base.qd_y_enabled:
        off = args.disable or "Y"
        base = base.replace(**{f"qd_{off.lower()}_enabled": False})
    spec = _sweep_spec(cfg, scenario, base, args.threads)
    res = sweeps.run_sweep(spec)
    out = _outdir(cfg)
    top = _top(cfg, scenario)
    fmt = cfg.format

    written = []
    if scenario == "transmission_map":
        written.append(write_table(out / "transmission_map", config_header(command, top, base, spec.axes),
                                   _map_columns(res.coords) + ["T_raw", "T_colnorm"],
                                   _map_rows(res.coords, res.t_raw, res.t_colnorm), fmt))
    elif scenario in ("g2_map", "ablation_single_transition"):
        stem = "g2_map" if scenario == "g2_map" else "ablation"
        written.append(write_table(out / stem, config_header(command, top, base, spec.axes),
                                   _map_columns(res.coords) + ["g2_zero"],
                                   _map_rows(res.coords, res.g2), fmt))
        for m in res.maxima:
            print(_report_maximum(stem, m))
    elif scenario == "pn_vs_theta":
        k = res.pn.shape[-1]
        rows = ([*r[:-1], *r[-1]] for r in _map_rows(res.coords, res.pn))
        written.append(write_table(out / "photon_number", config_header(command, top, base, spec.axes),
                                   _map_columns(res.coords) + [f"p{i}" for i in range(k)], rows, fmt))
    elif scenario in ("kappa_sweep", "dephasing_study"):
        label = "kappa_per_ns" if scenario == "kappa_sweep" else "variant"
        rows = []
        for key, child, m in zip(res.coords[list(res.coords)[0]], res.children, res.maxima):
            key_s = f"{key:g}" if scenario == "kappa_sweep" else str(key)
            written.append(write_table(out / f"g2_map_{label.split('_')[0]}_{key_s}",
                                       config_header(command, _top(cfg, "g2_map"), child.spec.base,
                                                     child.spec.axes),
                                       _map_columns(child.coords) + ["g2_zero"],
                                       _map_rows(child.coords, child.g2), fmt))
            c = [m.coords.get(n, np.nan) for n in child.coords]
            rows.append([key if scenario == "kappa_sweep" else str(key), child.spec.base.kappa,
                         child.spec.base.eta, m.value, m.value_next_fock, *c])
            print(_report_maximum(f"{label}={key_s}", m))
        cols = [label, "kappa_per_ns", "eta_per_ns", "g2_max", "g2_max_next_fock"]
        cols += [f"{c}_at_max" for c in _map_columns(res.children[0].coords)]
        if scenario == "kappa_sweep":
            cols, rows = cols[1:], [r[1:] for r in rows]
            top["target_nbar"] = spec.target_nbar
            top["kappas_per_ns"] = [float(k) for k in res.coords["kappa"]]
        written.insert(0, write_table(out / scenario, config_header(command, top, base, spec.axes),
                                      cols, rows, fmt))
    for w in written:
        print(f"wrote {w}")
    return EXIT_OK


def cmd_g2_trace(cfg: RunConfig, args) -> int:
    base = cfg.resolved_params()
    if cfg.theta_out is None:
        p, theta, m = sweeps.bunching_point(base, cfg.axes, args.threads)
        print(_report_maximum("operating point", m))
    else:
        p = base.replace(qd_common_offset=args.qd_offset) if args.qd_offset is not None else base
        theta = cfg.theta_out
    tr, conv = sweeps.correlation_at(p, theta, cfg.tau_max, cfg.n_tau, cfg.jitter_ps)
    top = _top(cfg, "g2_trace", theta_out_deg=theta, tau_max_ns=cfg.tau_max, n_tau=cfg.n_tau)
    cols = ["tau_ns", "g2_raw"] + [f"g2_conv_{c.convolved_with:g}ps" for c in conv]
    rows = zip(tr.tau, tr.g2, *[c.g2 for c in conv])
    path = write_table(_outdir(cfg) / "g2_trace", config_header("g2-trace", top, p), cols, rows, cfg.format)
    print(f"g2(0) raw = {tr.at_zero():.4g}" + "".join(
        f", {c.convolved_with:g} ps = {c.at_zero():.4g}" for c in conv))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_special_angles(cfg: RunConfig, args) -> int:
    base = cfg.resolved_params()
    pair = sweeps.find_special_angles(base, workers=args.threads)
    rows = [[a.transition, a.theta_out, a.f_laser, a.transmission] for a in pair]
    path = write_table(_outdir(cfg) / "special_angles",
                       config_header("special-angles", _top(cfg, "special_angles"), base),
                       ["transition", "theta_out_deg", "laser_detuning_ghz", "transmission"], rows, cfg.format)
    for a in pair:
        print(f"QD {a.transition}: theta_out = {a.theta_out:.2f} deg at laser {a.f_laser:+.3f} GHz "
              f"(T = {a.transmission:.3e})")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_fit(cfg: RunConfig, args) -> int:
    data_path = args.data or cfg.fit.get("data")
    if data_path is None:
        raise ConfigError("fit needs a dataset: --data FILE or data = ... in [fit]")
    free = args.free or cfg.fit.get("free") or list(fit.FREE_FIELDS)
    seed = args.seed if args.seed is not None else int(cfg.fit.get("seed", 0))
    restarts = int(cfg.fit.get("restarts", 3))
    unknown = sorted(set(cfg.fit) - {"data", "free", "seed", "restarts"})
    if unknown:
        raise ConfigError(f"[fit]: unknown key(s) {', '.join(unknown)}")
    data = fit.TransmissionDataset.from_csv(data_path)
    init = cfg.resolved_params()
    res = fit.fit_parameters(data, init, free, restarts=restarts, seed=seed)
    out = _outdir(cfg)
    (out / "fit_result.json").write_text(res.to_json() + "\n")
    models = fit.model_traces(res.params, data)
    rows = [[tr.theta_out, d, t, s * m_]
            for tr, m, s in zip(data.traces, models, res.per_trace_scales)
            for d, t, m_ in zip(tr.detuning, tr.transmission, m)]
    fit_table = {"data": str(data_path), "free": list(res.free), "seed": seed, "restarts": restarts}
    path = write_table(out / "fit_traces", config_header("fit", _top(cfg, "fit"), res.params,
                                                         extra_tables={"fit": fit_table}),
                       ["theta_out_deg", "detuning_ghz", "transmission", "model"], rows, cfg.format)
    q = res.params
    print(f"sse = {res.sse:.6g} after {res.n_evals} evaluations (converged: {res.converged})")
    print(f"kappa = {q.kappa:.4g}, g = {q.g_x:.4g}, gamma_par = {q.gamma_par:.4g}, "
          f"gamma_star = {q.gamma_star:.4g}, f_qd = ({q.f_qd_x:.4g}, {q.f_qd_y:.4g}) GHz")
    print(f"wrote {out / 'fit_result.json'}")
    print(f"wrote {path}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        if args.command == "params-report":
            return cmd_params_report(cfg, args)
        if args.command == "g2-trace":
            return cmd_g2_trace(cfg, args)
        if args.command == "special-angles":
            return cmd_special_angles(cfg, args)
        if args.command == "fit":
            return cmd_fit(cfg, args)
        return cmd_sweep(cfg, args, args.command)
    except _SOLVER_ERRORS as exc:
        print(f"polcqed: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"polcqed: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ParameterError, ValueError) as exc:
        print(f"polcqed: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
