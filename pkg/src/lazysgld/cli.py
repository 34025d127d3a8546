"""Command-line front end.

Exit codes: 0 success; 1 a verification found a violated assumption;
2 configuration error (unknown key, malformed value, missing file, missing
--ack-budget); 3 the requested single trajectory diverged. Sweeps never exit
3: divergent cells are recorded in the summary and the sweep completes.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .assumptions import jacobian_lipschitz_bound
from .experiments import (ConfigError, KEY_SPECS, _output_weights,
                          atomic_write_text, dataset_csv_text,
                          dataset_from_settings, load_settings,
                          make_sgld_config, make_student, reproduce_section4,
                          run_alpha_sweep, run_exit_probability,
                          run_verification, section4_base,
                          section4_cost_estimate, settings_to_mapping,
                          trajectory_csv_text, write_json)
from .losses import SquaredLoss
from .sgld import DivergenceError, simulate

__all__ = ["main", "build_parser"]

_FIGURE_KINDS = ("loss", "distance", "lambda_min")


def _config_epilog() -> str:
    lines = ["configuration keys (config file or --set KEY=VALUE):"]
    for key, (_, default, help_text) in KEY_SPECS.items():
        if isinstance(default, tuple):
            default = ",".join(format(v, "g") for v in default)
        lines.append(f"  {key:<16} default {default!s:<12} {help_text}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lazysgld",
        description="Scaled SGLD trajectories, exit statistics, and bound checks.",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, epilog=_config_epilog(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="worker threads for sweeps")
        return p

    add("simulate", "run one trajectory and write its CSV")
    add("sweep", "one trajectory per (alpha, seed) cell plus aggregates")
    add("exit-prob", "Monte Carlo exit frequencies across the alpha grid")
    add("verify", "check the analytic regularity assumptions on this instance")
    add("gen-data", "write the teacher-student dataset as CSV")
    p4 = add("reproduce-section4", "full-scale experiment reproduction")
    p4.add_argument("--ack-budget", action="store_true",
                    help="acknowledge the multi-hour runtime estimate")
    return parser


def _maybe_render_figures(settings, out_dir: Path):
    """Best-effort figure rendering; missing package or failures never
    change the command's exit code."""
    if not settings.render_figures:
        return
    try:
        import lazysgld_figures
    except ImportError:
        print("figures package not installed; skipping figure rendering",
              file=sys.stderr)
        return
    summary_path = out_dir / "summary.json"
    for kind in _FIGURE_KINDS:
        try:
            lazysgld_figures.render(summary_path, kind,
                                    out_dir / f"fig_{kind}.svg",
                                    logy=(kind == "loss"))
        except Exception as exc:  # noqa: BLE001 - decorative output only
            print(f"figure rendering failed for {kind}: {exc}", file=sys.stderr)


def _cmd_simulate(settings, out_dir: Path, threads: int) -> int:
    loss = SquaredLoss()
    ds = dataset_from_settings(settings)
    model, params0 = make_student(settings, 0)
    lip = jacobian_lipschitz_bound(_output_weights(model), ds.inputs)
    cfg = make_sgld_config(settings, settings.alpha, 0)
    try:
        rec = simulate(model, params0, ds.inputs, ds.targets, loss, cfg,
                       exit_radius=settings.exit_radius, lip_dh=lip,
                       track_lambda=settings.track_lambda)
    except DivergenceError as exc:
        print(f"trajectory diverged at step {exc.step} (t = {exc.time:g})",
              file=sys.stderr)
        return 3
    atomic_write_text(out_dir / "trajectory.csv", trajectory_csv_text(rec))
    write_json(out_dir / "summary.json", {
        "config": settings_to_mapping(settings),
        "csv": "trajectory.csv",
        "exited": rec.exited,
        "tau": rec.tau,
        "final_gap": float(rec.gap[-1]),
        "final_dist": float(rec.dist[-1]),
        "final_martingale": float(rec.martingale_e[-1]),
        "gap0": float(rec.gap[0]),
        "lambda_sq_init": rec.lambda_sq_init,
        "theory_radius": rec.theory_radius,
        "lambda_floor_held": rec.lambda_floor_held,
    })
    return 0


def _cmd_sweep(settings, out_dir: Path, threads: int) -> int:
    run_alpha_sweep(settings, out_dir, threads=threads)
    _maybe_render_figures(settings, out_dir)
    return 0


def _cmd_exit_prob(settings, out_dir: Path, threads: int) -> int:
    result = run_exit_probability(settings, threads=threads)
    write_json(out_dir / "exit_probability.json", result)
    return 0


def _cmd_verify(settings, out_dir: Path, threads: int) -> int:
    result = run_verification(settings)
    write_json(out_dir / "assumption_report.json", result)
    all_hold = result["report"]["all_hold"]
    for entry in result["report"]["entries"]:
        status = "ok" if entry["holds"] else "VIOLATED"
        print(f"{entry['id']:<24} {status}")
    return 0 if all_hold else 1


def _cmd_gen_data(settings, out_dir: Path, threads: int) -> int:
    ds = dataset_from_settings(settings)
    atomic_write_text(out_dir / "dataset.csv", dataset_csv_text(ds))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    base = section4_base() if args.command == "reproduce-section4" else None
    try:
        settings = load_settings(args.config, args.set, base=base)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(args.out)

    if args.command == "reproduce-section4":
        if not args.ack_budget:
            print("refusing to start without --ack-budget:",
                  section4_cost_estimate(settings), file=sys.stderr)
            return 2
        reproduce_section4(settings, out_dir, threads=args.threads)
        _maybe_render_figures(settings, out_dir)
        return 0

    dispatch = {
        "simulate": _cmd_simulate,
        "sweep": _cmd_sweep,
        "exit-prob": _cmd_exit_prob,
        "verify": _cmd_verify,
        "gen-data": _cmd_gen_data,
    }
    return dispatch[args.command](settings, out_dir, args.threads)


if __name__ == "__main__":
    sys.exit(main())
