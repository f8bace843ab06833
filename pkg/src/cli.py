# src/cli.py
"""
Command-line front end.

    dhff.py transform    --optical opt.ppm --sar sar.pgm --weights w.bin --out t2.ppm
    dhff.py detect       --pre opt.ppm --post t2.ppm --method otsu --out change.pgm
    dhff.py evaluate     --pred change.pgm --truth truth.pgm
    dhff.py synth        --seed 3 --size 64 --change-fraction 0.1 --out data/
    dhff.py init-weights --seed 0 --out w.bin
    dhff.py run          --out results/             (synthetic pair unless --optical/--sar given)
    dhff.py compare      --out results/ --appendix --sweep

Exit codes: 0 success, 1 runtime / data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Callable, List, Optional, TypeVar

import numpy as np

from src.analytics.detect import ChangeMap, detect_changes
from src.analytics.metrics import evaluate_maps, format_csv_line
from src.analytics.tables import write_trace_jsonl
from src.config import ConfigError, RunConfig, Settings, load_run_config, load_settings
from src.imaging.image import Image
from src.imaging.pnm import PnmError, load_pnm, save_pnm
from src.imaging.synthgen import gen_pair, write_pair
from src.network.vggnet import VggWeights, random_base_weights
from src.network.weights_io import WeightsFormatError, load_weights, save_weights
from src.transfer.iist import iist_run
from src.workflows.iist_constants import DETECTORS

T = TypeVar("T")


class CliError(RuntimeError):
    pass


# ---------- Input helpers ----------


def _load(path: str, what: str, loader: Callable[[str], T]) -> T:
    """Run a loader, turning any failure into a message naming the path."""
    try:
        return loader(path)
    except FileNotFoundError as exc:
        raise CliError(f"{what} file not found: {path}") from exc
    except (PnmError, WeightsFormatError) as exc:
        raise CliError(f"{what} file {path} is malformed: {exc}") from exc
    except OSError as exc:
        raise CliError(f"cannot read {what} file {path}: {exc}") from exc


def _read_image(path: str, what: str) -> Image:
    return _load(path, what, load_pnm)


def _read_map(path: str, what: str) -> ChangeMap:
    return ChangeMap.from_image(_read_image(path, what))


def _read_weights(path: str) -> VggWeights:
    return _load(path, "weights", load_weights)


def _read_config(path: Optional[str], verbose: bool) -> RunConfig:
    run_config = load_run_config(path)
    if verbose:
        run_config = RunConfig(iist=run_config.iist.with_overrides(verbose=True), detector=run_config.detector)
    return run_config


def _print_notes(notes: List[str], verbose: bool) -> None:
    if verbose:
        for note in notes:
            print(note)


def _is_verbose(args: argparse.Namespace, settings: Settings) -> bool:
    return bool(getattr(args, "verbose", False) or settings.verbose)


# ---------- Commands ----------


def cmd_transform(args: argparse.Namespace, settings: Settings) -> int:
    verbose = _is_verbose(args, settings)
    run_config = _read_config(args.config, verbose)
    optical = _read_image(args.optical, "optical image")
    sar = _read_image(args.sar, "SAR image")
    weights = _read_weights(args.weights)

    cfg = run_config.iist
    if args.snapshot_dir:
        cfg = cfg.with_overrides(snapshot_stages=frozenset(cfg.snapshot_stages) | {0, 5})

    t2, trace = iist_run(optical, sar, weights, cfg)
    _print_notes(trace.notes, verbose)

    save_pnm(t2, args.out)
    if args.trace:
        write_trace_jsonl(trace, args.trace)
    if args.snapshot_dir:
        out_dir = Path(args.snapshot_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for k, snapshot in sorted(trace.snapshots.items()):
            save_pnm(snapshot, out_dir / f"t2_k{k}.ppm")

    print(f"transform: {trace.stages} stage(s), stop_reason={trace.stop_reason}, wrote {args.out}")
    return 0


def cmd_detect(args: argparse.Namespace, settings: Settings) -> int:
    pre = _read_image(args.pre, "pre-event image")
    post = _read_image(args.post, "post-event image")

    train_mask: Optional[np.ndarray] = None
    if args.train_mask:
        train_mask = _read_map(args.train_mask, "training mask").bits

    run_config = _read_config(args.config, False)
    det = run_config.detector
    result = detect_changes(
        pre,
        post,
        args.method,
        nu=args.nu if args.nu is not None else det.nu,
        gamma=args.gamma if args.gamma is not None else det.gamma,
        radius=args.radius if args.radius is not None else det.radius,
        max_train_samples=det.max_train_samples,
        train_mask=train_mask,
        seed=run_config.iist.seed,
    )
    save_pnm(result.change_map.to_image(), args.out)
    if args.model and result.model is not None:
        Path(args.model).write_text(result.model.to_json(), encoding="utf-8")

    if _is_verbose(args, settings):
        print(
            f"detect: method={result.method} changed={result.change_map.change_count} "
            f"of {result.change_map.height * result.change_map.width} pixels"
        )
    return 0


def cmd_evaluate(args: argparse.Namespace, settings: Settings) -> int:
    pred = _read_map(args.pred, "predicted map")
    truth = _read_map(args.truth, "truth map")
    report = evaluate_maps(pred, truth)
    if args.json:
        print(report.to_json())
    else:
        print(format_csv_line(report))
    return 0


def cmd_synth(args: argparse.Namespace, settings: Settings) -> int:
    optical, sar, truth = gen_pair(args.seed, args.size, args.change_fraction)
    paths = write_pair(args.out, optical, sar, truth, sar_downscale=args.sar_downscale)
    if _is_verbose(args, settings):
        print(f"synth: wrote {', '.join(str(p) for p in paths)} ({truth.change_count} changed pixels)")
    return 0


def cmd_init_weights(args: argparse.Namespace, settings: Settings) -> int:
    save_weights(random_base_weights(args.seed), args.out)
    if _is_verbose(args, settings):
        print(f"init-weights: wrote {args.out}")
    return 0


def cmd_run(args: argparse.Namespace, settings: Settings) -> int:
    from src.workflows.dhff_workflow import run_dhff

    verbose = _is_verbose(args, settings)
    run_config = _read_config(args.config, verbose)

    inputs = {
        "run_config": run_config,
        "synth_seed": args.seed,
        "synth_size": args.size,
        "change_fraction": args.change_fraction,
        "out_dir": args.out,
        "plots_dir": args.plots_dir or settings.plots_dir,
        "make_plots": not args.no_plots,
    }
    if args.optical or args.sar:
        if not (args.optical and args.sar):
            raise CliError("--optical and --sar must be given together")
        inputs["opt_image"] = _read_image(args.optical, "optical image")
        inputs["sar_image"] = _read_image(args.sar, "SAR image")
        if args.truth:
            inputs["truth"] = _read_map(args.truth, "truth map")
    if args.weights:
        inputs["weights"] = _read_weights(args.weights)

    state = run_dhff(**inputs)
    _print_notes(state.get("notes", []), verbose)

    report = state.get("metrics")
    if report is not None:
        print(format_csv_line(report))
    else:
        print(f"run: wrote outputs to {args.out}")
    return 0


def cmd_compare(args: argparse.Namespace, settings: Settings) -> int:
    from src.workflows.comparison_workflow import run_comparison

    verbose = _is_verbose(args, settings)
    run_config = _read_config(args.config, verbose)

    weights = _read_weights(args.weights) if args.weights else None
    state = run_comparison(
        run_config=run_config,
        weights=weights,
        synth_seed=args.seed,
        synth_size=args.size,
        change_fraction=args.change_fraction,
        include_baselines=not args.no_baselines,
        include_appendix=args.appendix,
        include_sweep=args.sweep,
        out_dir=args.out,
        plots_dir=args.plots_dir or settings.plots_dir,
        make_plots=not args.no_plots,
    )
    _print_notes(state.get("notes", []), verbose)
    print(state["table"].to_string(index=False))
    return 0


# ---------- Parser ----------


def _positive_int(raw: str) -> int:
    value = int(raw)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {raw}")
    return value


def _add_synth_args(p: argparse.ArgumentParser, seed_default: int = 3) -> None:
    p.add_argument("--seed", type=int, default=seed_default, help="synthetic pair seed")
    p.add_argument("--size", type=int, default=64, help="synthetic pair side length")
    p.add_argument("--change-fraction", type=float, default=0.1, help="fraction of changed pixels")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dhff",
        description="Optical / SAR change detection through iterative feature transfer.",
    )
    parser.add_argument("--env-file", default=None, help="dotenv file with DHFF_* settings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transform", help="transform the SAR image into the optical feature space")
    p.add_argument("--optical", required=True)
    p.add_argument("--sar", required=True)
    p.add_argument("--weights", required=True, help="DHFFW1 weights file")
    p.add_argument("--config", default=None, help="key = value run config")
    p.add_argument("--out", required=True, help="output PPM for T2")
    p.add_argument("--trace", default=None, help="JSON lines trace output")
    p.add_argument("--snapshot-dir", default=None, help="write kept stage outputs as t2_k{k}.ppm")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("detect", help="binary change map from a pre / post pair")
    p.add_argument("--pre", required=True)
    p.add_argument("--post", required=True)
    p.add_argument("--method", required=True, choices=DETECTORS)
    p.add_argument("--train-mask", default=None, help="PGM of known-unchanged pixels (OCSVM)")
    p.add_argument("--nu", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--radius", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--model", default=None, help="write the trained OCSVM model as JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="print Ra,Rp,Rr,Ka for a change map")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--json", action="store_true", help="print the full report as JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="write a synthetic optical / SAR / truth triple")
    _add_synth_args(p)
    p.add_argument("--sar-downscale", type=_positive_int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("init-weights", help="write random base weights")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_init_weights)

    p = sub.add_parser("run", help="transform, detect, evaluate and plot in one graph run")
    p.add_argument("--optical", default=None)
    p.add_argument("--sar", default=None)
    p.add_argument("--truth", default=None)
    p.add_argument("--weights", default=None)
    p.add_argument("--config", default=None)
    _add_synth_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--plots-dir", default=None)
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="baseline / appendix / lambda sweep comparison table")
    p.add_argument("--weights", default=None)
    p.add_argument("--config", default=None)
    _add_synth_args(p)
    p.add_argument("--appendix", action="store_true", help="pooling x content layer grid")
    p.add_argument("--sweep", action="store_true", help="lambda_c sweep")
    p.add_argument("--no-baselines", action="store_true")
    p.add_argument("--out", required=True, help="output directory for comparison.csv")
    p.add_argument("--plots-dir", default=None)
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors

    try:
        settings = load_settings(args.env_file)
        return args.func(args, settings)
    except (CliError, ConfigError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
