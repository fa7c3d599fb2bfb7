"""``fpplab`` command line: simulate, train, unwrap, eval, ablate, plot.

Exit codes: 0 success, 2 usage or invalid argument, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, fpa
from .errors import DataError, FPPError, InvalidArgument, InvalidState, NumericFailure

log = logging.getLogger("fpplab")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
LOCK_NAME = ".fpplab.lock"


class UsageError(FPPError):
    pass


@contextlib.contextmanager
def output_lock(directory):
    """Exclusive lock file inside an output directory; refuses concurrent runs."""
    directory = fpa.ensure_dir(directory)
    lock = Path(directory) / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise DataError(f"{directory} is locked by another run (remove {lock} if stale)") from exc
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield directory
    finally:
        with contextlib.suppress(OSError):
            lock.unlink()


@contextlib.contextmanager
def thread_cap():
    """Honour FPPLAB_THREADS for BLAS/OpenMP pools."""
    raw = os.environ.get("FPPLAB_THREADS", "").strip()
    if not raw:
        yield
        return
    try:
        n = int(raw)
    except ValueError as exc:
        raise UsageError(f"FPPLAB_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise UsageError("FPPLAB_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def _config(args):
    from .config import RunConfig, load_config

    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _dataset_dir(args, cfg) -> Path:
    path = Path(getattr(args, "dataset", None) or cfg.paths.data)
    if not (path / "manifest.tsv").exists():
        raise DataError(f"no dataset manifest at {path / 'manifest.tsv'}")
    return path


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(args) -> int:
    from .config import build_dataset, save_config

    cfg = _config(args)
    out = Path(args.out or cfg.paths.data)
    with output_lock(out):
        manifest = build_dataset(cfg, out, export_pgm=True)
        save_config(cfg, out / "run.cfg")
    print(f"wrote {len(manifest.scene_ids())} scenes to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .config import save_config
    from .nn.train import train_two_stage

    cfg = _config(args)
    data = _dataset_dir(args, cfg)
    out = Path(args.out or cfg.paths.out)
    with output_lock(out):
        ckpt = out / "checkpoints"

        def progress(row):
            log.info("stage %s epoch %s loss %.6g val_acc %s", row["stage"], row["epoch"], row["loss"],
                     row["order_accuracy_on_val"])

        train_two_stage(data, cfg.geometry, cfg.network, cfg.schedule(), seed=cfg.seeds.train,
                        stage1_only=args.stage1_only, resume=args.resume,
                        log_path=out / "train_log.csv", checkpoint_dir=ckpt, progress=progress)
        save_config(cfg, out / "run.cfg")
    print(f"model written to {ckpt / 'final'}")
    return EXIT_OK


def _read_inputs(paths) -> list:
    return [fpa.read_fpa(p) for p in paths]


def cmd_unwrap(args) -> int:
    from .phasecore import AbsolutePhaseMap
    from .sim import phase_to_height
    from .tpu import FrequencySet, order_of, unwrap_hierarchical, unwrap_two_freq, unit_absolute

    cfg = _config(args)
    geom = cfg.geometry
    method = args.method
    if method == "selfsup" and not args.model:
        raise UsageError("--method selfsup requires --model")
    if not args.inputs:
        raise UsageError("--inputs needs at least one wrapped-phase file")
    periods = (tuple(int(p) for p in args.periods.split(",")) if args.periods
               else tuple(cfg.frequencies))
    if method == "dftpu" and len(args.inputs) != 2:
        raise UsageError(f"dftpu needs exactly 2 wrapped-phase inputs, got {len(args.inputs)}")
    if method == "dftpu" and not args.periods:
        periods = (1, geom.period_number)
    maps = _read_inputs(args.inputs)
    mask = fpa.read_fpa(args.mask) > 0.5 if args.mask else None

    if method == "mftpu":
        if len(maps) != len(periods):
            raise UsageError(f"{len(maps)} inputs for periods {periods}")
        phase = unwrap_hierarchical(FrequencySet(periods), maps)
        order = order_of(phase, maps[-1])
        period = periods[-1]
    elif method == "dftpu":
        FrequencySet(periods)
        if len(periods) != 2:
            raise UsageError("dftpu needs exactly 2 periods")
        k, phase = unwrap_two_freq(unit_absolute(maps[0]), maps[1], periods[1] // periods[0])
        order, period = k.values, periods[1]
        if k.out_of_range:
            log.warning("%d pixels had out-of-range orders and were clamped", k.out_of_range)
    else:
        from .nn.train import load_checkpoint, predict_order

        net = load_checkpoint(args.model)
        low = maps[0] if len(maps) > 1 else None
        k, _ = predict_order(net, maps[-1], geom, mask, low)
        order, period = k.values, geom.period_number
        phase = AbsolutePhaseMap(maps[-1] + 2.0 * np.pi * order, period)
    if period != geom.period_number:
        raise UsageError(f"highest period {period} differs from geometry period_number {geom.period_number}")
    depth = phase_to_height(AbsolutePhaseMap(phase.values, period), geom)
    out = Path(args.out)
    with output_lock(out):
        fpa.write_fpa(out / "phase.fpa", phase.values, dtype="f64")
        fpa.write_fpa(out / "order.fpa", order, dtype="f64")
        fpa.write_fpa(out / "depth.fpa", depth, dtype="f64")
    print(f"wrote phase, order and depth to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import depth_rmse, fringe_order_accuracy, write_metrics_csv

    cfg = _config(args)
    pred = fpa.read_fpa(args.pred)
    truth = fpa.read_fpa(args.truth)
    mask = fpa.read_fpa(args.mask) > 0.5 if args.mask else np.ones(truth.shape, dtype=bool)
    gross = 0.5 * cfg.geometry.depth_per_fringe()
    row = {"depth_rmse": depth_rmse(pred, truth, mask)}
    sel_ok = np.abs(pred - truth)[mask] <= gross
    row["depth_rmse_clipped"] = (depth_rmse(pred, truth, mask, gross_threshold=gross)
                                 if sel_ok.any() else float("nan"))
    if args.pred_order and args.truth_order:
        row["order_accuracy"] = fringe_order_accuracy(fpa.read_fpa(args.pred_order),
                                                      fpa.read_fpa(args.truth_order), mask)
    row["pixels"] = int(np.count_nonzero(mask))
    out = Path(args.out)
    if out.suffix.lower() != ".csv":
        out = fpa.ensure_dir(out) / "metrics.csv"
    write_metrics_csv(out, [row])
    print(",".join(f"{k}={v}" for k, v in row.items()))
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .evaluation import run_ablation
    from .plotting import ablation_figure
    from .sim import load_samples

    cfg = _config(args)
    data = _dataset_dir(args, cfg)
    train = load_samples(data, splits=("train",))
    test = load_samples(data, splits=("test",)) or load_samples(data, splits=("val",))
    out = Path(args.out or cfg.paths.out)
    with output_lock(out):
        rows = run_ablation(train, test, cfg.geometry, net_config=cfg.network, schedule=cfg.schedule(),
                            seed=cfg.seeds.train, out_csv=out / "ablation.csv",
                            progress=lambda r: log.info("%s rmse %.6g acc %.4f", r["ID"], r["depth_rmse"],
                                                        r["order_accuracy"]))
        ablation_figure(rows, out / "ablation.png")
    print(f"wrote {out / 'ablation.csv'}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from . import plotting

    out = Path(args.out)
    mask = fpa.read_fpa(args.mask) > 0.5 if args.mask else None
    with output_lock(out):
        for path in args.inputs or []:
            arr = fpa.read_fpa(path)
            if arr.ndim == 3:
                arr = arr[..., 0]
            stem = Path(path).stem
            fpa.write_pgm(out / f"{stem}.pgm", arr, mask=mask)
            values = arr[mask] if mask is not None else arr.ravel()
            plotting.write_histogram_csv(values, out / f"{stem}_hist.csv", bins=args.bins)
            plotting.array_figure(arr, out / f"{stem}.png", title=stem, mask=mask)
        if args.rmse_csv:
            with open(args.rmse_csv, newline="") as fh:
                rows = list(csv.DictReader(fh))
            col = args.rmse_column
            if not rows or col not in rows[0]:
                raise DataError(f"{args.rmse_csv} has no column {col!r}")
            vals = np.array([float(r[col]) for r in rows])
            plotting.write_histogram_csv(vals, out / "rmse_hist.csv", bins=args.bins)
            plotting.histogram_figure(vals, out / "rmse_hist.png", "depth RMSE (mm)",
                                      "distribution of depth RMSE", bins=args.bins)
        if args.log:
            with open(args.log, newline="") as fh:
                plotting.training_log_figure(list(csv.DictReader(fh)), out / "training_log.png")
    print(f"wrote figures to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fpplab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--config", help="run configuration file")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int, help="override data and training seeds")

    p = sub.add_parser("simulate", help="render a synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="two-stage self-supervised training")
    common(p)
    p.add_argument("--dataset", help="dataset directory (default: [paths] data)")
    p.add_argument("--stage1-only", action="store_true", help="stop after stage 1")
    p.add_argument("--resume", help="stage-1 checkpoint directory; runs stage 2 only")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("unwrap", help="absolute phase, order and depth from wrapped phases")
    common(p, out_required=True)
    p.add_argument("--method", required=True, choices=("mftpu", "dftpu", "selfsup"))
    p.add_argument("--inputs", nargs="+", help="wrapped-phase FPA files, lowest period first")
    p.add_argument("--periods", help="comma-separated period numbers of the inputs")
    p.add_argument("--model", help="checkpoint directory (selfsup)")
    p.add_argument("--mask", help="pixel mask FPA (selfsup input masking)")
    p.set_defaults(func=cmd_unwrap)

    p = sub.add_parser("eval", help="depth and order metrics to CSV")
    common(p, out_required=True)
    p.add_argument("--pred", required=True, help="predicted depth FPA")
    p.add_argument("--truth", required=True, help="true depth FPA")
    p.add_argument("--mask", help="pixel mask FPA")
    p.add_argument("--pred-order", help="predicted order FPA")
    p.add_argument("--truth-order", help="true order FPA")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score the six ablation configurations")
    common(p)
    p.add_argument("--dataset", help="dataset directory (default: [paths] data)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="PGM, CSV histogram and PNG exports")
    common(p, out_required=True)
    p.add_argument("--inputs", nargs="*", help="FPA arrays to export")
    p.add_argument("--mask", help="mask FPA applied to every input")
    p.add_argument("--rmse-csv", help="CSV with a per-scene RMSE column to histogram")
    p.add_argument("--rmse-column", default="depth_rmse")
    p.add_argument("--log", help="training log CSV to plot")
    p.add_argument("--bins", type=int, default=30)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        with thread_cap():
            return args.func(args)
    except (UsageError, InvalidArgument) as exc:
        print(f"fpplab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericFailure, InvalidState, FloatingPointError) as exc:
        print(f"fpplab {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FPPError, OSError) as exc:
        print(f"fpplab {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
