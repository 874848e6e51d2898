"""Command-line entry point.

stdout carries only ``key=value`` result lines; diagnostics go to stderr.
Exit status: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .graph import DatasetError, barbell_graph, load_dataset, normalize, save_dataset, sbm_dataset
from .model import ConfigError, ModelConfig
from .spectral import SpectralError, band_reconstruct, eigendecompose
from .train import (
    TrainingError,
    bench_wavelets,
    frequency_knockout,
    mean_std,
    run_seeds,
    sweep_csv,
    sweep_d,
    write_report,
)

log = logging.getLogger("spgat")

DEFAULT_FRACTIONS = "0.05,0.1,0.15,0.2,0.3,0.5,0.7,0.9"

# flag -> (ModelConfig field, type, help)
MODEL_FLAGS = {
    "--variant": ("variant", str, "wavelet construction: exact (eigendecomposition) or cheby (default: exact)"),
    "--d-frac": ("d_fraction", float, "fraction of spectrum in the low branch, exact variant (default: 0.05)"),
    "--agg": ("agg", str, "branch aggregation: max or mean (default: max)"),
    "--s": ("s", float, "heat kernel scale (default: 1.0 exact, 2.0 cheby)"),
    "--t": ("t", float, "sparsification threshold (default: 1e-4)"),
    "--cheby-order": ("cheby_order", int, "Chebyshev order M (default: 1)"),
    "--lambda-max": ("lambda_max", float, "spectrum upper bound for Chebyshev rescaling (default: 2.0)"),
    "--hidden": ("hidden", int, "hidden units (default: 64)"),
    "--layers": ("layers", int, "number of layers (default: 2)"),
    "--dropout": ("dropout", float, "dropout rate on layer inputs (default: 0.5)"),
    "--weight-decay": ("weight_decay", float, "L2 coefficient (default: 5e-4)"),
    "--decay-scope": ("decay_scope", str, "weights under L2: first, all or none (default: first)"),
    "--lr": ("learning_rate", float, "Adam learning rate (default: 0.01)"),
    "--epochs": ("epochs", int, "epoch cap (default: 500)"),
    "--patience": ("patience", int, "early-stopping window in epochs (default: 100)"),
}
RUN_KEYS = {"dataset", "out", "seeds", "jobs"}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    model: ModelConfig
    dataset: Path | None
    out: Path
    seeds: list
    jobs: int = 1


def _parse_int_list(text):
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _parse_float_list(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def resolve_run_config(args, default_seeds="0") -> RunConfig:
    """Merge ModelConfig defaults, the optional ``--config`` JSON, then explicit flags."""
    values = {}
    run = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise UsageError(f"cannot read config {path}: {err}") from None
        model_keys = {f.name for f in fields(ModelConfig)}
        for key, value in raw.items():
            if key in model_keys:
                values[key] = value
            elif key in RUN_KEYS:
                run[key] = value
            else:
                raise UsageError(f"{path}: unknown config key {key!r}")
    for flag, (name, _, _) in MODEL_FLAGS.items():
        dest = flag.lstrip("-").replace("-", "_")
        if hasattr(args, dest):
            values[name] = getattr(args, dest)
    if getattr(args, "no_row_normalize", False):
        values["row_normalize"] = False
    for key in ("dataset", "out", "jobs"):
        if getattr(args, key, None) is not None:
            run[key] = getattr(args, key)
    if getattr(args, "seed", None) is not None:
        run["seeds"] = args.seed
    seeds = run.get("seeds", default_seeds)
    seeds = seeds if isinstance(seeds, list) else _parse_int_list(seeds)
    if not seeds:
        raise UsageError("at least one seed is required")
    try:
        model = ModelConfig(**{**values, "seed": seeds[0]})
    except TypeError as err:
        raise UsageError(str(err)) from None
    jobs = int(run.get("jobs", 1))
    if jobs < 1:
        raise UsageError("--jobs must be >= 1")
    dataset = Path(run["dataset"]) if run.get("dataset") else None
    return RunConfig(model, dataset, Path(run.get("out", "runs")), seeds, jobs)


def _load(run: RunConfig):
    if run.dataset is None:
        raise UsageError("--dataset is required")
    if not run.dataset.is_dir():
        raise UsageError(f"dataset directory not found: {run.dataset}")
    try:
        return load_dataset(run.dataset)
    except DatasetError as err:
        raise UsageError(str(err)) from None


def _emit(**pairs):
    for k, v in pairs.items():
        print(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}")


def _write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    return buf.getvalue()


# --- commands -------------------------------------------------------------------


def cmd_train(args) -> int:
    run = resolve_run_config(args, "0")
    ds = _load(run)
    reports = run_seeds(run.model, ds, run.seeds, run.jobs)
    for r in reports:
        path = write_report(r, run.out)
        log.info("seed %d: test_acc %.4g (best epoch %d) -> %s", r.config["seed"], r.test_acc, r.best_epoch, path)
    mean, std = mean_std(r.test_acc for r in reports)
    _emit(test_acc=mean)
    if len(reports) > 1:
        _emit(test_acc_std=std)
    return 0


def cmd_sweep_d(args) -> int:
    run = resolve_run_config(args, "0,1,2,3,4")
    if run.model.variant != "exact":
        raise UsageError("sweep-d requires --variant exact")
    fractions = _parse_float_list(args.fractions)
    if not fractions or not all(0 < f < 1 for f in fractions):
        raise UsageError("--fractions must be numbers in (0, 1)")
    ds = _load(run)
    rows = sweep_d(run.model, ds, fractions, run.seeds, run.jobs)
    _write_text(run.out / f"{ds.name}_sweep_d.csv", sweep_csv(rows))
    for r in rows:
        log.info("fraction %.4g (d=%d): %.4g +/- %.4g", r.fraction, r.d, r.mean, r.std)
    best = max(rows, key=lambda r: r.mean)
    _emit(best_fraction=best.fraction, best_mean_acc=best.mean)
    return 0


def cmd_bench(args) -> int:
    run = resolve_run_config(args, "0")
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    ds = _load(run)
    result = bench_wavelets(ds.graph, run.model.with_(s=None), args.repeats)
    _write_text(run.out / f"{ds.name}_bench.csv", result.to_csv())
    _emit(eigen_median_s=result.eigen_median, cheby_median_s=result.cheby_median, speedup=result.speedup)
    return 0


def cmd_attention(args) -> int:
    run = resolve_run_config(args, "0,1,2,3,4")
    ds = _load(run)
    reports = run_seeds(run.model, ds, run.seeds, run.jobs)
    rows = [
        (r.config["seed"], i, a_low, a_high)
        for r in reports for i, (a_low, a_high) in enumerate(r.attention)
    ]
    _write_text(run.out / f"{ds.name}_{run.model.variant}_attention.csv",
                _csv(rows, ["seed", "layer", "alpha_low", "alpha_high"]))
    for i in range(run.model.layers):
        low = [row[2] for row in rows if row[1] == i]
        high = [row[3] for row in rows if row[1] == i]
        print(f"layer{i} alpha_low={mean_std(low)[0]!r} alpha_high={mean_std(high)[0]!r}")
    return 0


def cmd_knockout(args) -> int:
    run = resolve_run_config(args, "0,1,2,3,4")
    ds = _load(run)
    reports = run_seeds(run.model, ds, run.seeds, run.jobs)
    rows = []
    for r in reports:
        rn = run.model.row_normalize
        rows.append((
            r.config["seed"], r.test_acc,
            frequency_knockout(r.model, ds, "low", rn),
            frequency_knockout(r.model, ds, "high", rn),
        ))
    _write_text(run.out / f"{ds.name}_{run.model.variant}_knockout.csv",
                _csv(rows, ["seed", "full", "without_low", "without_high"]))
    _emit(
        full=mean_std(r[1] for r in rows)[0],
        without_low=mean_std(r[2] for r in rows)[0],
        without_high=mean_std(r[3] for r in rows)[0],
    )
    return 0


def barbell_rows(k: int, d: int):
    """Per-edge reconstructed weights of the normalized adjacency, by band."""
    g = barbell_graph(k)
    eig = eigendecompose(normalize(g))
    low = band_reconstruct(eig, d, "low", target="adjacency")
    high = band_reconstruct(eig, d, "high", target="adjacency")
    rows = []
    for u, v in g.edges:
        kind = "bridge" if (u, v) == (k - 1, k) else "intra"
        rows.append((int(u), int(v), kind, float(low[u, v]), float(high[u, v])))
    return rows


def cmd_demo_barbell(args) -> int:
    if args.k < 3:
        raise UsageError("--k must be >= 3")
    if not 1 <= args.d < 2 * args.k:
        raise UsageError(f"--d must satisfy 1 <= d < {2 * args.k}")
    rows = barbell_rows(args.k, args.d)
    out = Path(args.out) if args.out else Path("runs")
    _write_text(out / f"barbell_k{args.k}_d{args.d}.csv", _csv(rows, ["u", "v", "kind", "low", "high"]))
    summary = {}
    for band, col in (("low", 3), ("high", 4)):
        intra = [abs(r[col]) for r in rows if r[2] == "intra"]
        bridge = [abs(r[col]) for r in rows if r[2] == "bridge"]
        summary[f"{band}_intra_mean"] = float(np.mean(intra))
        summary[f"{band}_bridge"] = float(np.mean(bridge))
    _emit(**summary)
    return 0


def cmd_gen_sbm(args) -> int:
    sizes = _parse_int_list(args.sizes)
    if not args.out:
        raise UsageError("--out is required")
    try:
        ds = sbm_dataset(sizes, args.p_in, args.p_out, args.seed, name=Path(args.out).name, features=args.features)
    except ValueError as err:
        raise UsageError(str(err)) from None
    save_dataset(ds, args.out)
    _emit(n=ds.graph.n, edges=ds.graph.num_edges, features=ds.num_features, classes=ds.num_classes)
    return 0


# --- parser ---------------------------------------------------------------------


def _add_model_flags(p):
    for flag, (_, typ, helptext) in MODEL_FLAGS.items():
        p.add_argument(flag, type=typ, default=argparse.SUPPRESS, help=helptext)
    p.add_argument("--no-row-normalize", action="store_true", help="use raw features (default: row-normalize)")


def _add_run_flags(p, seeds_default):
    p.add_argument("--dataset", help="dataset directory (edges.csv, features.csv, labels.csv, split.json)")
    p.add_argument("--out", help="output directory (default: runs)")
    p.add_argument("--seed", help=f"comma-separated seeds (default: {seeds_default})")
    p.add_argument("--jobs", type=int, help="parallel seed workers (default: 1)")
    p.add_argument("--config", help="JSON file of defaults; explicit flags win")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spgat", description=__doc__, allow_abbrev=False,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, helptext, epilog, seeds_default="0", model=True):
        p = sub.add_parser(name, help=helptext, description=helptext, epilog=epilog, allow_abbrev=False)
        if model:
            _add_run_flags(p, seeds_default)
            _add_model_flags(p)
        p.set_defaults(func=func)
        return p

    add("train", cmd_train, "train SpGAT and write per-seed reports",
        "writes OUT/{dataset}_{variant}_{seed}.json (report), .csv (epoch,train_loss,val_loss,val_acc) "
        "and .timings.json; prints test_acc=<mean> (and test_acc_std when several seeds)")
    p = add("sweep-d", cmd_sweep_d, "test accuracy versus low-frequency fraction (exact variant)",
            "writes OUT/{dataset}_sweep_d.csv (fraction,d,mean_acc,std_acc,n_seeds); prints best_fraction",
            seeds_default="0,1,2,3,4")
    p.add_argument("--fractions", default=DEFAULT_FRACTIONS, help=f"comma-separated fractions (default: {DEFAULT_FRACTIONS})")
    p = add("bench", cmd_bench, "time eigendecomposition versus Chebyshev operator construction",
            "writes OUT/{dataset}_bench.csv (path,median_s,runs; rows eigen, cheby, ratio); "
            "--s is ignored, each path uses its default scale")
    p.add_argument("--repeats", type=int, default=5, help="timed runs per path (default: 5)")
    add("attention", cmd_attention, "train and report learned branch attention",
        "writes OUT/{dataset}_{variant}_attention.csv (seed,layer,alpha_low,alpha_high); "
        "prints one line per layer with seed-mean values", seeds_default="0,1,2,3,4")
    add("knockout", cmd_knockout, "test accuracy with one branch's attention zeroed",
        "writes OUT/{dataset}_{variant}_knockout.csv (seed,full,without_low,without_high); prints means",
        seeds_default="0,1,2,3,4")
    p = add("demo-barbell", cmd_demo_barbell, "band-limited reconstruction of a barbell graph",
            "writes OUT/barbell_k{k}_d{d}.csv (u,v,kind,low,high) with reconstructed normalized-adjacency "
            "edge weights; prints mean intra-clique and bridge magnitudes per band", model=False)
    p.add_argument("--k", type=int, default=5, help="clique size (default: 5)")
    p.add_argument("--d", type=int, default=3, help="low band size (default: 3)")
    p.add_argument("--out", help="output directory (default: runs)")
    p = add("gen-sbm", cmd_gen_sbm, "generate a stochastic block model dataset directory",
            "writes edges.csv, features.csv, labels.csv, split.json into OUT", model=False)
    p.add_argument("--sizes", default="50,50", help="comma-separated block sizes (default: 50,50)")
    p.add_argument("--p-in", type=float, default=0.2, help="within-block edge probability (default: 0.2)")
    p.add_argument("--p-out", type=float, default=0.01, help="between-block edge probability (default: 0.01)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--features", choices=("bow", "identity"), default="bow",
                   help="bag-of-words or one-hot node features (default: bow)")
    p.add_argument("--out", help="output dataset directory (required)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (TrainingError, SpectralError, OSError, ValueError, RuntimeError) as err:
        print(f"runtime failure: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
