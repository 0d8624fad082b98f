"""Command-line entry point: ``ghap {compact,eval,synth,grid,info}``.

Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .evaluation import (DensityErrorSpec, SynthSpec, density_grid, grid_to_csv, grid_to_pgm,
                         integration_region, run_comparison, synth_mixture)
from .gsplat_io import (FormatError, NotPSDError, load_mixture, logit, save_mixture)
from .mixture import Appearance, DegenerateComponentError
from .pipeline import BlockReductionError, CompactionConfig, compact

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _threads(value: int) -> int:
    return value if value > 0 else (os.cpu_count() or 1)


def _write_bytes(path: str, data: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(data)


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def cmd_compact(args) -> int:
    if not 0 < args.rho <= 1:
        raise UsageError("--rho must be in (0, 1]")
    if args.block < 1:
        raise UsageError("--block must be >= 1")
    if args.max_iters < 1:
        raise UsageError("--max-iters must be >= 1")
    mixture = load_mixture(args.input)
    if len(mixture) == 0:
        raise FormatError(f"{args.input} contains no components")
    config = CompactionConfig(
        retention_ratio=args.rho, block_capacity=args.block, seed=args.seed,
        parallelism=_threads(args.threads),
        nn_mode="global-exact" if args.nn == "global" else "within-block",
        max_iterations=args.max_iters, axis_rule=args.axis,
    )
    t0 = time.perf_counter()
    reduced, report = compact(mixture, config)
    elapsed = time.perf_counter() - t0
    save_mixture(reduced, args.output)
    if args.report:
        _write_text(args.report, report.to_json(include_timing=False) + "\n")
    if args.timings:
        _write_text(args.timings, json.dumps(report.wall_time, indent=2, sort_keys=True) + "\n")
    unconverged = sum(not b.converged for b in report.blocks)
    note = f", {unconverged} blocks hit --max-iters" if unconverged else ""
    print(f"{report.input_count} -> {report.output_count} components, "
          f"total CTD {report.total_ctd:.6g}, {elapsed:.2f} s{note}")
    return EXIT_OK


def _load_eval_config(args) -> dict:
    cfg = {}
    if args.config:
        if not os.path.exists(args.config):
            raise UsageError(f"config file {args.config} not found")
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise UsageError(f"config file {args.config} is not valid JSON: {exc}")
    for key in ("rho", "block", "seeds"):
        value = getattr(args, key)
        if value is not None:
            cfg[key] = value
    return cfg


def cmd_eval(args) -> int:
    cfg = _load_eval_config(args)
    try:
        spec = SynthSpec(**cfg.get("synth", {}))
        error_spec = DensityErrorSpec(**cfg.get("error", {}))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad eval config: {exc}")
    seeds = cfg.get("seeds", 10)
    seeds = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    rho = float(cfg.get("rho", 0.05))
    block = int(cfg.get("block", 250))
    if not 0 < rho <= 1 or block < 1 or not seeds:
        raise UsageError("need 0 < rho <= 1, block >= 1 and at least one seed")
    depths = cfg.get("depths", [0, 1, 2, 3])
    report = run_comparison(spec, rho, block, seeds, error_spec, depths=depths,
                            parallelism=_threads(args.threads))
    if args.report:
        _write_text(args.report, report.to_json())
    if args.csv:
        _write_text(args.csv, report.to_csv())
    if args.timings:
        _write_text(args.timings, json.dumps(report.timings, indent=2, sort_keys=True) + "\n")
    wins = 0
    for seed in report.seeds():
        g = report.cell(seed, "ghap").l2
        wins += g < report.cell(seed, "prune").l2 and g < report.cell(seed, "random").l2
    print(f"ghap lowest density error on {wins}/{len(report.seeds())} seeds "
          f"(rho={rho}, block={block}, K={spec.components}, dim={spec.dim})")
    for p in report.depth_sweep:
        print(f"  depth {p.depth}: {p.blocks} blocks, {p.evaluations_per_iteration} costs/iteration, "
              f"l2 {p.l2:.4g}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.components < 1:
        raise UsageError("--components must be >= 1")
    spec = SynthSpec(dim=args.dim, components=args.components, cov_scale=args.cov_scale,
                     cov_anisotropy=args.anisotropy, weight_law=args.weight_law, seed=args.seed)
    mixture = synth_mixture(spec)
    if args.output.lower().endswith(".ply"):
        if mixture.dim != 3:
            raise UsageError("PLY output needs --dim 3")
        opacity = np.clip(mixture.weights, 1e-6, 1 - 1e-6)
        mixture = mixture.replace(appearance=Appearance.blank(logit(opacity)))
    save_mixture(mixture, args.output)
    print(f"wrote {len(mixture)} components (dim {mixture.dim}) to {args.output}")
    return EXIT_OK


def cmd_grid(args) -> int:
    mixture = load_mixture(args.input)
    if len(mixture) == 0:
        raise FormatError(f"{args.input} contains no components")
    if args.res < 2:
        raise UsageError("--res must be >= 2")
    if args.bbox:
        bbox = np.array(args.bbox, dtype=np.float64).reshape(2, 2)
    else:
        region = integration_region(mixture)
        free = [ax for ax in range(mixture.dim) if ax != args.slice_axis][:2]
        bbox = region[free]
    field = density_grid(mixture, bbox, args.res, slice_axis=args.slice_axis,
                         slice_value=args.slice_value)
    if args.output.lower().endswith(".pgm"):
        _write_bytes(args.output, grid_to_pgm(field))
    else:
        _write_text(args.output, grid_to_csv(field))
    print(f"wrote {field.shape[1]}x{field.shape[0]} density grid to {args.output}")
    return EXIT_OK


def _histogram(values: np.ndarray, bins: int = 8, log: bool = False) -> list[str]:
    if values.size == 0:
        return ["  (empty)"]
    data = np.log10(np.maximum(values, 1e-300)) if log else values
    counts, edges = np.histogram(data, bins=bins)
    width = max(1, counts.max())
    fmt = (lambda v: f"1e{v:+.2f}") if log else (lambda v: f"{v:.4g}")
    return [f"  [{fmt(lo)}, {fmt(hi)}) {c:>8d} {'#' * int(round(30 * c / width))}"
            for lo, hi, c in zip(edges[:-1], edges[1:], counts)]


def cmd_info(args) -> int:
    mixture = load_mixture(args.input)
    lines = [f"file: {args.input}", f"components: {len(mixture)}", f"dim: {mixture.dim}"]
    if len(mixture):
        lines.append(f"total mass: {mixture.total_mass():.9g}")
        lo, hi = mixture.means.min(axis=0), mixture.means.max(axis=0)
        lines.append("bbox: " + " ".join(f"[{a:.6g}, {b:.6g}]" for a, b in zip(lo, hi)))
        lines.append("weights:")
        lines += _histogram(mixture.weights)
        lines.append("covariance eigenvalues (log10):")
        lines += _histogram(np.linalg.eigvalsh(mixture.covariances).reshape(-1), log=True)
    print("\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ghap", description="Blockwise Gaussian mixture reduction for 3DGS scenes.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("compact", help="reduce a splat file or CSV mixture")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--rho", type=float, required=True, help="retention ratio in (0, 1]")
    p.add_argument("--block", type=int, default=1000, help="block capacity s")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=0, help="worker count, 0 = all cores")
    p.add_argument("--report", help="write the compaction report JSON here")
    p.add_argument("--timings", help="per-phase wall times JSON path")
    p.add_argument("--nn", choices=["block", "global"], default="block")
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--axis", choices=["spread", "cycle"], default="spread")
    p.set_defaults(func=cmd_compact)

    p = sub.add_parser("eval", help="compare against pruning baselines on synthetic mixtures")
    p.add_argument("--config", help="JSON file with synth/error/rho/block/seeds/depths keys")
    p.add_argument("--rho", type=float)
    p.add_argument("--block", type=int)
    p.add_argument("--seeds", type=int, help="number of seeds (0..N-1)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--csv", help="flat CSV table path")
    p.add_argument("--timings", help="wall-time JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic mixture")
    p.add_argument("--output", required=True, help=".ply (dim 3) or .csv")
    p.add_argument("--dim", type=int, choices=[2, 3], default=2)
    p.add_argument("--components", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cov-scale", type=float, default=2e-3)
    p.add_argument("--anisotropy", type=float, default=4.0)
    p.add_argument("--weight-law", choices=["uniform", "dirichlet-like"], default="dirichlet-like")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("grid", help="export a density grid as CSV or 16-bit PGM")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help=".csv or .pgm")
    p.add_argument("--bbox", type=float, nargs=4, metavar=("X0", "X1", "Y0", "Y1"))
    p.add_argument("--res", type=int, default=256)
    p.add_argument("--slice-axis", type=int, choices=[0, 1, 2], default=2)
    p.add_argument("--slice-value", type=float, default=0.0)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("info", help="summarize a mixture file")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ghap {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BlockReductionError as exc:
        print(f"ghap {args.command}: {exc}", file=sys.stderr)
        numeric = isinstance(exc.cause, (DegenerateComponentError, NotPSDError, FloatingPointError))
        return EXIT_NUMERIC if numeric else EXIT_DATA
    except (DegenerateComponentError, NotPSDError, FloatingPointError) as exc:
        print(f"ghap {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError, ValueError) as exc:
        print(f"ghap {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
