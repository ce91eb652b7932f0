"""``histloss`` command line: generate, train, eval, ablate, encode.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from pathlib import Path

from . import __version__
from .codec import EncodeConfig, encode_target, make_grid
from .config import ConfigError, load_run_config
from .experiment import (
    IgnoredSettingWarning,
    RunAborted,
    ablate,
    ablation_csv,
    evaluate,
    prepare_data,
    sigma_trend,
    train_run,
    variant_name,
)
from .model import load_checkpoint
from .toy import SamplingError, generate_dataset, read_dataset, write_dataset

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
OUT_ENV = "HISTLOSS_OUT_DIR"
MODE_NAMES = {"baseline": "baseline_mae", "hlgauss": "hl_gauss"}

log = logging.getLogger("histloss")


class UsageError(Exception):
    pass


def _out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="histloss",
        description="Histogram-loss (HL-Gauss) training on a synthetic Lennard-Jones potential.",
        epilog=f"Output directories default to ${OUT_ENV} (or ./runs when unset).",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr (default: off)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    g = sub.add_parser("generate", help="write a synthetic dataset file")
    g.add_argument("--seed", type=int, default=1, help="random seed (default: 1)")
    g.add_argument("--samples", type=int, default=5000, help="number of clusters (default: 5000)")
    g.add_argument("--atoms-min", type=int, default=2, help="smallest cluster size (default: 2)")
    g.add_argument("--atoms-max", type=int, default=8, help="largest cluster size (default: 8)")
    g.add_argument("--out", required=True, help="output file path (required)")

    t = sub.add_parser("train", help="train one model and write metrics + checkpoint")
    t.add_argument("--config", help="INI config file (default: built-in defaults)")
    t.add_argument("--dataset", help="dataset file (default: generate from the [dataset] settings)")
    t.add_argument("--mode", choices=sorted(MODE_NAMES), help="energy head (default: config run.mode, hlgauss)")
    t.add_argument("--bins", type=int, help="histogram bin count (default: config grid.bins, 128)")
    t.add_argument("--sigma-mult", type=float, help="Gaussian width in bin widths (default: config grid.sigma_mult, 0.75)")
    t.add_argument("--steps", type=int, help="optimizer steps (default: config optimizer.total_steps, 5000)")
    t.add_argument("--seed", type=int, help="model/batch seed (default: config run.seed, 0)")
    t.add_argument("--out-dir", help=f"run directory (default: ${OUT_ENV}/<variant>)")

    e = sub.add_parser("eval", help="report energy/force MAE of a checkpoint")
    e.add_argument("--checkpoint", required=True, help="checkpoint.npz written by train (required)")
    e.add_argument("--dataset", required=True, help="dataset file (required)")
    e.add_argument("--split", choices=("train", "val", "all"), default="val", help="which split to score (default: val)")
    e.add_argument("--records", help="per-sample CSV path (default: eval_<split>.csv next to the checkpoint)")

    a = sub.add_parser("ablate", help="baseline plus a bins x sigma grid of HL-Gauss runs")
    a.add_argument("--config", help="INI config file (default: built-in defaults)")
    a.add_argument("--dataset", help="dataset file (default: generate from the [dataset] settings)")
    a.add_argument("--bins", type=_int_list, default=[128, 256], help="comma-separated bin counts (default: 128,256)")
    a.add_argument(
        "--sigma-mults", type=_float_list, default=[0.25, 0.75, 2.0], help="comma-separated sigma multipliers (default: 0.25,0.75,2.0)"
    )
    a.add_argument("--steps", type=int, help="optimizer steps per cell (default: config optimizer.total_steps, 5000)")
    a.add_argument("--workers", type=int, help="parallel cells (default: available cores, capped by grid size)")
    a.add_argument("--out-dir", help=f"sweep directory (default: ${OUT_ENV}/ablation)")

    c = sub.add_parser("encode", help="print the target histogram of one energy as CSV")
    c.add_argument("--energy", type=float, required=True, help="energy to encode (required)")
    c.add_argument("--lo", type=float, required=True, help="lower grid edge (required)")
    c.add_argument("--hi", type=float, required=True, help="upper grid edge (required)")
    c.add_argument("--bins", type=int, default=128, help="bin count (default: 128)")
    c.add_argument("--sigma-mult", type=float, default=0.75, help="Gaussian width in bin widths (default: 0.75)")
    return parser


def _load_dataset_file(path) -> list:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"dataset file not found: {path} (create one with `histloss generate --out {path}`)")
    try:
        return read_dataset(path)
    except ValueError as exc:
        raise UsageError(f"cannot parse dataset {path}: {exc}") from exc


def cmd_generate(args) -> int:
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    if args.atoms_min < 2 or args.atoms_max < args.atoms_min:
        raise UsageError(f"need 2 <= --atoms-min <= --atoms-max, got {args.atoms_min} and {args.atoms_max}")
    samples = generate_dataset(args.seed, args.samples, (args.atoms_min, args.atoms_max))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(samples, out)
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


def _run_config(args, mode=None, bins=None, sigma_mult=None, seed=None):
    overrides = {
        "grid": {"bins": bins, "sigma_mult": sigma_mult},
        "optimizer": {"total_steps": args.steps},
        "run": {"mode": mode, "seed": seed},
    }
    return load_run_config(args.config, overrides)


def cmd_train(args) -> int:
    mode = MODE_NAMES[args.mode] if args.mode else None
    cfg, settings = _run_config(args, mode, args.bins, args.sigma_mult, args.seed)
    if cfg.mode == "baseline_mae":
        for flag, value in (("--bins", args.bins), ("--sigma-mult", args.sigma_mult)):
            if value is not None:
                print(f"warning: {flag} is ignored in baseline mode", file=sys.stderr)
    if args.dataset is not None:
        samples = _load_dataset_file(args.dataset)
        data = prepare_data(samples)
    elif cfg.dataset.path is not None:
        data = prepare_data(_load_dataset_file(cfg.dataset.path))
    else:
        data = None
    out_dir = args.out_dir or settings["run"]["out_dir"] or _out_root() / variant_name(cfg.mode, cfg.grid.bins, cfg.grid.sigma_mult)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IgnoredSettingWarning)
        result = train_run(cfg, data, out_dir)
    last = result.metrics[-1]
    print(f"trained {cfg.mode} for {cfg.optimizer.total_steps} steps -> {result.out_dir}")
    print(f"eval-batch energy MAE {last.energy_mae:.6g} eV/atom, force MAE {last.force_mae:.6g} eV/A")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    samples = _load_dataset_file(args.dataset)
    state, extra = load_checkpoint(ckpt)
    result = evaluate((state, extra), samples, args.split)
    records = Path(args.records) if args.records else ckpt.parent / f"eval_{args.split}.csv"
    records.write_text(result.records_csv())
    print(f"split={args.split} samples={len(result.records)} mode={state.config.mode}")
    print(f"energy_mae={result.energy_mae:.17g}")
    print(f"force_mae={result.force_mae:.17g}")
    print(f"records={records}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    if not args.bins or not args.sigma_mults:
        raise UsageError("--bins and --sigma-mults need at least one value each")
    if any(b < 2 for b in args.bins) or any(s <= 0 for s in args.sigma_mults):
        raise UsageError("bin counts must be >= 2 and sigma multipliers > 0")
    cfg, settings = _run_config(args)
    data = None
    path = args.dataset or cfg.dataset.path
    if path is not None:
        data = prepare_data(_load_dataset_file(path))
    out_dir = Path(args.out_dir or settings["run"]["out_dir"] or _out_root() / "ablation")
    n_cells = 1 + len({(b, s) for b in args.bins for s in args.sigma_mults})
    workers = args.workers or min(os.cpu_count() or 1, n_cells)
    rows = ablate(cfg, args.bins, args.sigma_mults, out_dir, workers=workers, data=data)
    sys.stdout.write(ablation_csv(rows))
    if 128 in args.bins and 0.75 in args.sigma_mults and len(args.sigma_mults) > 1:
        print(f"sigma trend (0.75 lowest at 128 bins): {sigma_trend(rows)}", file=sys.stderr)
    failed = [r.variant for r in rows if r.stratum == "failed"]
    if failed:
        print(f"failed cells: {', '.join(failed)}", file=sys.stderr)
    return EXIT_OK


def cmd_encode(args) -> int:
    try:
        grid = make_grid(args.lo, args.hi, args.bins)
        cfg = EncodeConfig.for_grid(grid, args.sigma_mult)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    try:
        probs = encode_target(args.energy, cfg, grid)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    lines = ["bin,center,prob"]
    lines += [f"{i},{c:.17g},{p:.17g}" for i, (c, p) in enumerate(zip(grid.centers, probs))]
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "encode": cmd_encode,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    warnings.simplefilter("default")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"histloss {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RunAborted, SamplingError, OSError, ValueError, FloatingPointError) as exc:
        print(f"histloss {args.command}: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
