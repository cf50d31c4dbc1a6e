"""Command-line entry point for the experiment harness."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import harness


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, help="config file (key = value lines)")
    parser.add_argument("--seed", type=int, help="override the base seed")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    parser.add_argument("--horizon", type=int)
    parser.add_argument("--i-nodes", type=int)
    parser.add_argument("--n", type=int)
    parser.add_argument("--k-psi", type=int)
    parser.add_argument("--k-x", type=int)
    parser.add_argument("--n-seeds", type=int)
    parser.add_argument("--grid", type=str, help="comma-separated sweep grid")
    parser.add_argument("--outage", type=str)
    parser.add_argument("--exact-fusion", action="store_true", default=None)
    parser.add_argument("--allow-divergence", action="store_true",
                        help="exit 0 even when a run diverges")


def _load_config(args) -> harness.ExperimentConfig:
    cfg = (harness.ExperimentConfig.from_file(args.config)
           if args.config else harness.ExperimentConfig())
    overrides = {}
    for attr, name in (("seed", "seed"), ("horizon", "horizon"), ("i_nodes", "i_nodes"),
                       ("n", "n"), ("k_psi", "k_psi"), ("k_x", "k_x"),
                       ("n_seeds", "n_seeds"), ("outage", "outage"),
                       ("exact_fusion", "exact_fusion")):
        value = getattr(args, attr)
        if value is not None:
            overrides[name] = value
    if args.grid:
        overrides["sweep_grid"] = tuple(float(v) for v in args.grid.split(","))
    return replace(cfg, **overrides) if overrides else cfg


def _finish(out_dir: Path, cfg, results, exit_on_divergence: bool) -> int:
    harness.write_config_echo(out_dir / "config.txt", cfg)
    diverged = [d for r in results for d in r.divergences]
    for line in diverged:
        print(f"divergence: {line}", file=sys.stderr)
    return 1 if diverged and exit_on_divergence else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="distkalman",
                                     description="distributed Kalman filtering experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("sweep-kpsi", "mismatch vs structural fusion iterations"),
                       ("sweep-kx", "mismatch vs signal fusion iterations"),
                       ("interrupt", "mismatch around a network interruption"),
                       ("ge", "mismatch under a sampled availability chain"),
                       ("sweep-p", "mismatch vs availability transition probability"),
                       ("bounds", "stability threshold and error-bound report")):
        _add_common(sub.add_parser(name, help=text))
    args = parser.parse_args(argv)
    cfg = _load_config(args)
    out_dir: Path = args.out
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.command == "sweep-kpsi":
        results = harness.run_fusion_sweep(cfg, "k_psi")
        harness.emit_sweep_csv(out_dir / "sweep_k_psi.csv", cfg, results, "k_psi")
        return _finish(out_dir, cfg, results, not args.allow_divergence)
    if args.command == "sweep-kx":
        results = harness.run_fusion_sweep(cfg, "k_x")
        harness.emit_sweep_csv(out_dir / "sweep_k_x.csv", cfg, results, "k_x")
        return _finish(out_dir, cfg, results, not args.allow_divergence)
    if args.command == "interrupt":
        if cfg.parse_outage()[0] != "interval":
            cfg = replace(cfg, outage="interval:20:25")
        results = harness.run_interruption(cfg)
        harness.emit_series_csv(out_dir / "interruption.csv", cfg, results)
        return _finish(out_dir, cfg, results, not args.allow_divergence)
    if args.command == "ge":
        if cfg.parse_outage()[0] != "ge":
            cfg = replace(cfg, outage="ge:0.05")
        results = harness.run_gilbert_elliott(cfg)
        harness.emit_series_csv(out_dir / "gilbert_elliott.csv", cfg, results)
        fracs = [r.availability_fraction for r in results]
        print(f"mean availability fraction = {sum(fracs) / len(fracs):.4f}")
        return _finish(out_dir, cfg, results, not args.allow_divergence)
    if args.command == "sweep-p":
        results = harness.run_p_sweep(cfg)
        harness.emit_sweep_csv(out_dir / "sweep_p.csv", cfg, results, "p")
        return _finish(out_dir, cfg, results, not args.allow_divergence)
    if args.command == "bounds":
        report = harness.compute_bound_report(cfg)
        harness.write_bound_report(out_dir / "bounds.txt", cfg, report)
        harness.write_config_echo(out_dir / "config.txt", cfg)
        print((out_dir / "bounds.txt").read_text(encoding="utf-8"), end="")
        return 0
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
