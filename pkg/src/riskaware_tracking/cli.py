"""Command-line interface.

Exit codes: 0 success, 2 configuration or usage error, 3 observability was
lost before the final step of a ``run``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .export import export_ablation, export_run, export_sweep
from .observability import ConfigurationError
from .simulation import run_ablation, run_delta_sweep, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_DEGRADED = 0, 2, 3

log = logging.getLogger("riskaware_tracking")


def seed_range(text: str) -> list:
    """Parse ``K..L`` (inclusive) into a list of seeds."""
    lo, sep, hi = text.partition("..")
    try:
        if not sep:
            return [int(text)]
        lo, hi = int(lo), int(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected K..L, got {text!r}") from None
    if hi < lo:
        raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
    return list(range(lo, hi + 1))


def float_list(text: str) -> list:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("no values given")
    return vals


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="riskaware-tracking",
                                 description="Risk-aware multi-robot target tracking simulator.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver details")
    sub = ap.add_subparsers(dest="command", required=True)

    def cfg_arg(p):
        p.add_argument("--config", required=True,
                       help="scenario JSON (a bundled name such as svA.json also works)")

    p = sub.add_parser("run", help="run one closed-loop simulation")
    cfg_arg(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--no-sog", action="store_true", help="drop the safety constraint")
    p.add_argument("--out", help="output directory (default: output.dir from the config)")

    p = sub.add_parser("ablation", help="paired runs with and without the safety constraint")
    cfg_arg(p)
    p.add_argument("--seeds", type=seed_range, required=True, help="inclusive range K..L")
    p.add_argument("--steps", type=int)
    p.add_argument("--out")

    p = sub.add_parser("sweep", help="controller response to imposed sensing margins")
    cfg_arg(p)
    p.add_argument("--deltas", type=float_list, help="comma-separated margins (default: run.sweep_deltas)")
    p.add_argument("--steps", type=int, help="controller steps per margin (default: run.sweep_steps)")
    p.add_argument("--out")

    p = sub.add_parser("validate", help="check a scenario file and report its key quantities")
    cfg_arg(p)
    return ap


def _out_dir(args, cfg) -> Path:
    return Path(args.out if args.out else cfg.output.dir)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.steps is not None and args.steps < 0:
        raise ConfigurationError("--steps must be >= 0")
    mode = "no_sog" if args.no_sog else ("risk_aware" if cfg.run.mode == "delta_sweep" else cfg.run.mode)
    runlog = run_scenario(cfg, seed=args.seed, steps=args.steps, mode=mode)
    csv_path, json_path = export_run(runlog, _out_dir(args, cfg))
    final = runlog.records[-1].margin if runlog.records else float("nan")
    print(f"{cfg.name} seed={runlog.seed} mode={runlog.mode} steps={len(runlog)} "
          f"final_margin={final:.4f} -> {csv_path}, {json_path}")
    if runlog.degraded:
        print("observability lost before the final step", file=sys.stderr)
        return EXIT_DEGRADED
    return EXIT_OK


def cmd_ablation(args) -> int:
    cfg = load_config(args.config)
    if len(args.seeds) < 2:
        raise ConfigurationError("--seeds: the ablation needs at least two seeds")
    summary = run_ablation(cfg, args.seeds, steps=args.steps)
    paths = export_ablation(summary, _out_dir(args, cfg), stem=f"{cfg.name}_ablation")
    for mode in summary.MODES:
        print(f"{mode}: final margin mean={summary.final_margin_mean(mode):.4f} "
              f"median steps to zero margin={summary.median_time_to_zero(mode):.1f}")
    print("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    deltas = args.deltas or cfg.run.sweep_deltas
    if not deltas:
        raise ConfigurationError("no margins given (use --deltas or run.sweep_deltas)")
    if any(d <= 0 for d in deltas):
        raise ConfigurationError("--deltas: values must be > 0")
    if args.steps is not None and args.steps < 1:
        raise ConfigurationError("--steps must be >= 1")
    rows = run_delta_sweep(cfg, deltas, steps=args.steps)
    for r in rows:
        print(f"delta={r.delta:g} tracking_quality={r.tracking_quality:.6g} "
              f"safety_metric={r.safety_metric:.6g} status={r.status}")
    paths = export_sweep(rows, _out_dir(args, cfg), stem=f"{cfg.name}_sweep")
    print("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_OK


def cmd_validate(args) -> int:
    from .config import build_runtime
    from .observability import sensing_margin

    cfg = load_config(args.config)
    rt = build_runtime(cfg)
    print(f"{cfg.name}: ok")
    print(f"  robots={rt.n_robots} targets={rt.n_targets} state_dim={rt.dim} sensor_types={rt.library.n_types}")
    print(f"  minimal sensors per target={rt.minimal_count} (norm {rt.minimal_norm:.6g})")
    print(f"  initial sensing margin={sensing_margin(rt.gamma, rt.minimal_norm):.6g}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "ablation": cmd_ablation, "sweep": cmd_sweep, "validate": cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
