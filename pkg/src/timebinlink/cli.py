"""Command-line surface: every operation behind reproducible batch commands.

Exit codes: 0 success, 2 configuration error, 3 data-format error.  Each run
echoes the resolved configuration and seed on stderr; artifacts are written
to --out (or stdout) with deterministic bytes for a given command, config
and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis, events, montecarlo, physics, planner
from .config import ConfigError, RunConfig, load_config, reference_config
from .types import DomainError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def _json_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write_out(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _write_bytes(data: bytes, out: str) -> None:
    Path(out).write_bytes(data)


def _echo_config(cfg: RunConfig) -> None:
    print(
        "resolved config: " + json.dumps(cfg.describe(), sort_keys=True),
        file=sys.stderr,
    )
    print(f"seed: {cfg.seed}", file=sys.stderr)


def _load_cfg(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = reference_config()
    if getattr(args, "seed", None) is not None:
        cfg = RunConfig(
            node_a=cfg.node_a,
            node_b=cfg.node_b,
            protocol=cfg.protocol,
            noise=cfg.noise,
            detuning_over_gamma=cfg.detuning_over_gamma,
            saturation=cfg.saturation,
            seed=args.seed,
            workers=cfg.workers,
        )
    _echo_config(cfg)
    return cfg


def _csv_or_json(rows: list[dict], args, float_fmt: str = "{!r}") -> str:
    if args.format == "json":
        return _json_dumps(rows)
    if not rows:
        return "\n"
    keys = list(rows[0].keys())
    lines = [",".join(keys)]
    for row in rows:
        lines.append(
            ",".join(
                float_fmt.format(row[k]) if isinstance(row[k], float) else str(row[k])
                for k in keys
            )
        )
    return "\n".join(lines) + "\n"


def _cmd_geometry(args) -> int:
    cfg = _load_cfg(args)
    rows = []
    for node in (cfg.node_a, cfg.node_b):
        angles = physics.derive_beam_angles(node.geometry)
        for axis in ("z", "x", "y"):
            pair = angles.pair(axis)
            rows.append(
                {
                    "ion": node.name,
                    "axis": axis,
                    "theta_deg": pair.theta_deg,
                    "psi_deg": pair.psi_deg,
                }
            )
    _write_out(_csv_or_json(rows, args), args.out)
    return EXIT_OK


def _cmd_recoil(args) -> int:
    cfg = _load_cfg(args)
    rows = []
    for node in (cfg.node_a, cfg.node_b):
        angles = physics.derive_beam_angles(node.geometry)
        for mode in node.modes:
            pair = angles.pair(mode.axis)
            cycles = mode.freq_hz * cfg.protocol.tau_s
            rows.append(
                {
                    "ion": mode.ion,
                    "axis": mode.axis,
                    "freq_khz": mode.freq_hz / 1e3,
                    "theta_deg": pair.theta_deg,
                    "psi_deg": pair.psi_deg,
                    "eta": mode.eta,
                    "zeta": mode.zeta,
                    "nbar": mode.nbar,
                    "cycles_per_bin": cycles,
                    "commensurability_residual": abs(cycles - round(cycles)),
                }
            )
    _write_out(_csv_or_json(rows, args), args.out)
    return EXIT_OK


def _cmd_rate(args) -> int:
    cfg = _load_cfg(args)
    em_a, em_b = cfg.node_a.emitter, cfg.node_b.emitter
    p_a = physics.collection_prob(em_a, cfg.node_a.chain)
    p_b = physics.collection_prob(em_b, cfg.node_b.chain)
    stats = physics.window_stats(cfg.protocol.delta_t_s, em_a.tau_r_s)
    p_e, rate = physics.success_prob_and_rate(
        p_a, p_b, stats.yield_y, cfg.protocol.rep_rate_hz, cfg.protocol.duty
    )
    payload = {
        "p_a": p_a,
        "p_b": p_b,
        "p_e": p_e,
        "w": stats.w,
        "big_w": stats.big_w,
        "yield_y": stats.yield_y,
        "rate_hz": rate,
        "double_emission_prob": physics.double_emission_prob(
            em_a.p_exc, em_a.branch_sigma, args.pulse_ps * 1e-12, em_a.tau_r_s
        ),
    }
    print(f"P_E = {p_e:.3g}, rate = {rate:.3g} 1/s (Y = {stats.yield_y:.3g})")
    _write_out(
        _json_dumps(payload) if args.format == "json" else _csv_or_json([payload], args),
        args.out,
    )
    return EXIT_OK


def _cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    result = montecarlo.run_attempts(
        cfg.node_a,
        cfg.node_b,
        cfg.protocol,
        cfg.noise,
        n_attempts=args.attempts,
        seed=cfg.seed,
        workers=args.workers if args.workers else cfg.workers,
        emit_records=bool(args.log),
        suppress_empty=args.suppress_empty,
    )
    if args.log:
        _write_bytes(events.encode_binary(result.records), args.log)
        print(f"event log: {args.log} ({result.records.size} records)", file=sys.stderr)
    _write_out(_json_dumps(result.tally.to_dict()), args.out)
    return EXIT_OK


def _parse_dt_list(text: str) -> list[float]:
    try:
        return [float(x) * 1e-9 for x in text.split(",") if x.strip()]
    except ValueError:
        raise DomainError(f"bad --dt list {text!r}; expected ns values like 2,10,50") from None


def _cmd_sweep_window(args) -> int:
    cfg = _load_cfg(args)
    dts = _parse_dt_list(args.dt)
    fid, yld = planner.sweep_window(
        cfg.node_a,
        cfg.node_b,
        dts,
        cfg.node_a.emitter.tau_r_s,
        angle_uncertainty_deg=args.angle_uncertainty,
    )
    rows = [
        {
            "delta_t_ns": round(x * 1e9, 6),
            "relative_fidelity": y,
            "band_lo": lo,
            "band_hi": hi,
            "yield_y": yy,
        }
        for (x, y), (lo, hi), yy in zip(fid.points, fid.band, yld.ys)
    ]
    _write_out(_csv_or_json(rows, args), args.out)
    return EXIT_OK


def _cmd_sweep_tau(args) -> int:
    cfg = _load_cfg(args)
    lo, hi = (float(x) * 1e-9 for x in args.tau_range.split(","))
    curves = planner.sweep_tau(cfg.modes, (lo, hi), n_points=args.points)
    rows = []
    for i in range(args.points):
        tau = curves["dopp_exp"].points[i][0]
        rows.append(
            {
                "tau_ns": tau * 1e9,
                "dopp_exp": curves["dopp_exp"].points[i][1],
                "dopp_opt": curves["dopp_opt"].points[i][1],
                "zero_point": curves["zero_point"].points[i][1],
            }
        )
    _write_out(_csv_or_json(rows, args), args.out)
    return EXIT_OK


def _cmd_tune_tau(args) -> int:
    cfg = _load_cfg(args)
    lo, hi = (float(x) * 1e-9 for x in args.tau_range.split(","))
    tau_opt, c_opt = planner.tune_tau(cfg.modes, (lo, hi), resolution_s=args.resolution_ns * 1e-9)
    _write_out(_json_dumps({"tau_opt_ns": tau_opt * 1e9, "timebin_contrast": c_opt}), args.out)
    return EXIT_OK


def _cmd_budget(args) -> int:
    table, total = planner.compose_error_budget(planner.REFERENCE_BUDGET)
    if args.format == "json":
        payload = {
            "entries": [
                {"label": l, "fidelity_error": e, "bound_kind": k} for l, e, k in table
            ],
            "total": total,
            "total_rounded": round(total, 2),
        }
        _write_out(_json_dumps(payload), args.out)
    else:
        _write_out(planner.budget_table_text(planner.REFERENCE_BUDGET) + "\n", args.out)
    return EXIT_OK


def _read_stream(path: str) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise events.StreamFormatError(f"input not found: {path}")
    if p.suffix == ".csv":
        return events.parse_stream(p.read_text())
    return events.parse_stream(p.read_bytes())


def _cmd_parse(args) -> int:
    records = _read_stream(args.input)
    _write_out(events.encode_csv(records), args.out)
    print(f"{records.size} records", file=sys.stderr)
    return EXIT_OK


def _cmd_classify(args) -> int:
    cfg = _load_cfg(args)
    records = _read_stream(args.input)
    framing = events.frame_attempts(records)
    for w in framing.warnings:
        print(f"warning: {w}", file=sys.stderr)
    offsets = None
    if args.channel_offsets_ps:
        vals = [int(x) for x in args.channel_offsets_ps.split(",")]
        if len(vals) != 2:
            raise DomainError("--channel-offsets-ps expects two values: apd0,apd1")
        offsets = {0: vals[0], 1: vals[1]}
    dts = _parse_dt_list(args.dt) if args.dt else [cfg.protocol.delta_t_s]
    sweep = events.yield_sweep(framing.frames, cfg.protocol, dts, channel_offsets_ps=offsets)
    payload = {
        "n_frames": len(framing.frames),
        "windows": [
            {
                "delta_t_ns": round(dt * 1e9, 6),
                "counts": summary.counts,
                "candidates": summary.n_candidates,
                "yield": summary.yield_fraction,
            }
            for dt, summary in sweep
        ],
    }
    _write_out(_json_dumps(payload), args.out)
    return EXIT_OK


def _cmd_fit_parity(args) -> int:
    try:
        points = analysis.load_parity_csv(Path(args.input).read_text())
        fit = analysis.fit_parity(points, fit_offset=not args.no_offset)
    except DomainError as exc:  # malformed or insufficient dataset
        raise events.StreamFormatError(str(exc)) from exc
    _write_out(_json_dumps(analysis.fringe_fit_report(fit)), args.out)
    return EXIT_OK


def _cmd_fit_ramsey(args) -> int:
    try:
        points = analysis.load_ramsey_csv(Path(args.input).read_text())
        fit = analysis.fit_ramsey(points, max_amplitude=args.max_amplitude)
    except DomainError as exc:
        raise events.StreamFormatError(str(exc)) from exc
    _write_out(
        _json_dumps(
            {
                "t2_star_s": fit.t2_star_s,
                "t2_star_err_s": fit.t2_star_err_s,
                "amplitude": fit.amplitude,
                "amplitude_err": fit.amplitude_err,
            }
        ),
        args.out,
    )
    return EXIT_OK


def _cmd_threshold(args) -> int:
    res = analysis.optimal_threshold(args.dark, args.bright)
    _write_out(
        _json_dumps(
            {
                "threshold": res.threshold,
                "error_rate": res.error_rate,
                "dark_error": res.dark_error,
                "bright_error": res.bright_error,
                "degenerate": res.degenerate,
            }
        ),
        args.out,
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="timebinlink",
        description="Simulator and analysis toolkit for time-bin heralded ion-ion entanglement.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, needs_config: bool = True) -> None:
        if needs_config:
            p.add_argument("--config", help="TOML config file (default: shipped reference)")
            p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="artifact path (default: stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="json")

    p = sub.add_parser("geometry", help="derived beam angles per node and axis")
    common(p)
    p.set_defaults(func=_cmd_geometry)

    p = sub.add_parser("recoil", help="per-mode recoil parameters and cooling limits")
    common(p)
    p.set_defaults(func=_cmd_recoil)

    p = sub.add_parser("rate", help="success probability and entanglement rate")
    common(p)
    p.add_argument("--pulse-ps", type=float, default=3.0, help="excitation pulse length [ps]")
    p.set_defaults(func=_cmd_rate)

    p = sub.add_parser("simulate", help="run the Monte Carlo attempt engine")
    common(p)
    p.add_argument("--attempts", type=int, required=True)
    p.add_argument("--workers", type=int, default=0, help="override config worker count")
    p.add_argument("--log", help="write the time-tag event log (binary) here")
    p.add_argument(
        "--suppress-empty", action="store_true", help="omit attempts with no detections from the log"
    )
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep-window", help="fidelity/yield versus detection window")
    common(p)
    p.add_argument("--dt", default="2,5,10,20,30,40,50", help="window list in ns")
    p.add_argument("--angle-uncertainty", type=float, default=3.0)
    p.set_defaults(func=_cmd_sweep_window)

    p = sub.add_parser("sweep-tau", help="time-bin contrast versus bin separation")
    common(p)
    p.add_argument("--tau-range", default="5998,6098", help="lo,hi in ns")
    p.add_argument("--points", type=int, default=501)
    p.set_defaults(func=_cmd_sweep_tau)

    p = sub.add_parser("tune-tau", help="find the contrast-optimal bin separation")
    common(p)
    p.add_argument("--tau-range", default="5000,7000", help="lo,hi in ns")
    p.add_argument("--resolution-ns", type=float, default=1.0)
    p.set_defaults(func=_cmd_tune_tau)

    p = sub.add_parser("budget", help="compose the fidelity error budget")
    common(p, needs_config=False)
    p.set_defaults(func=_cmd_budget)

    p = sub.add_parser("parse", help="decode a time-tag stream to CSV")
    common(p, needs_config=False)
    p.add_argument("--input", required=True, help="binary (.bin) or CSV (.csv) stream")
    p.set_defaults(func=_cmd_parse)

    p = sub.add_parser("classify", help="frame and classify a time-tag stream")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--dt", help="optional ns window list for a yield sweep")
    p.add_argument(
        "--channel-offsets-ps",
        help="per-channel path-length calibration in ps, e.g. 0,25000",
    )
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("fit-parity", help="fit a parity fringe CSV")
    common(p, needs_config=False)
    p.add_argument("--input", required=True, help="CSV: phase_rad,n_shots,n_odd")
    p.add_argument("--no-offset", action="store_true", help="fix the vertical offset to 0")
    p.set_defaults(func=_cmd_fit_parity)

    p = sub.add_parser("fit-ramsey", help="fit a Ramsey decay CSV")
    common(p, needs_config=False)
    p.add_argument("--input", required=True, help="CSV: delay_s,amplitude,err")
    p.add_argument("--max-amplitude", type=float, default=None)
    p.set_defaults(func=_cmd_fit_ramsey)

    p = sub.add_parser("threshold", help="optimal Poisson readout threshold")
    common(p, needs_config=False)
    p.add_argument("--dark", type=float, required=True)
    p.add_argument("--bright", type=float, required=True)
    p.set_defaults(func=_cmd_threshold)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except events.StreamFormatError as exc:
        print(f"data format error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data format error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DomainError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
