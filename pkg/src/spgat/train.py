"""Training loop and experiment protocols."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import Dataset, Graph, normalize, row_normalize
from .model import AdamState, ModelConfig, SpGAT, adam_step, l2_penalty, masked_softmax_xent
from .spectral import (
    BranchOperators,
    chebyshev_branch_operators,
    eigendecompose,
    exact_branch_operators,
)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def prepare_features(dataset: Dataset, row_norm: bool = True) -> np.ndarray:
    return row_normalize(dataset.features) if row_norm else dataset.features.astype(np.float64)


def build_operators(config: ModelConfig, graph: Graph, eig=None):
    """Return ``(BranchOperators, seconds)`` for the configured variant."""
    start = time.perf_counter()
    ops = normalize(graph)
    if config.variant == "exact":
        eig = eigendecompose(ops) if eig is None else eig
        branch = exact_branch_operators(eig, config.scale, config.t, config.split_index(graph.n))
    else:
        branch = chebyshev_branch_operators(
            ops, config.scale, config.cheby_order, config.t, config.lambda_max
        )
    return branch, time.perf_counter() - start


def accuracy(logits, labels, nodes) -> float:
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("cannot evaluate accuracy on an empty node set")
    pred = np.argmax(logits[nodes], axis=1)
    return float(np.mean(pred == np.asarray(labels)[nodes]))


def evaluate(model: SpGAT, features, labels, nodes, alphas=None) -> float:
    """Fraction of ``nodes`` whose argmax prediction matches the label."""
    return accuracy(model.predict(features, alphas=alphas), labels, nodes)


@dataclass
class TrainState:
    adam: AdamState
    rng: np.random.Generator
    best_val_loss: float = math.inf
    best_state: dict | None = None
    best_epoch: int = 0
    patience_counter: int = 0
    epoch: int = 0


@dataclass
class ExperimentReport:
    dataset: str
    config: dict
    history: list
    best_epoch: int
    epochs_run: int
    val_loss: float
    val_acc: float
    test_acc: float
    attention: list
    timings: dict = field(default_factory=dict)
    model: SpGAT | None = field(default=None, repr=False, compare=False)

    @property
    def stem(self) -> str:
        return f"{self.dataset}_{self.config['variant']}_{self.config['seed']}"

    def to_dict(self, include_timings=False) -> dict:
        out = {
            "dataset": self.dataset,
            "config": self.config,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
            "val_loss": self.val_loss,
            "val_acc": self.val_acc,
            "test_acc": self.test_acc,
            "attention": [{"layer": i, "alpha_low": a, "alpha_high": b} for i, (a, b) in enumerate(self.attention)],
            "history": self.history,
        }
        if include_timings:
            out["timings"] = self.timings
        return out

    def history_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
        for row in self.history:
            writer.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_loss"]), repr(row["val_acc"])])
        return buf.getvalue()


def _param_norms(model):
    return {k: float(np.linalg.norm(v)) for k, v in model.parameters().items()}


def train(config: ModelConfig, dataset: Dataset, operators: BranchOperators | None = None) -> ExperimentReport:
    """Train one model; early stopping on validation loss restores the best epoch.

    The returned report carries the trained model in ``report.model``.
    """
    t_start = time.perf_counter()
    op_seconds = 0.0
    if operators is None:
        operators, op_seconds = build_operators(config, dataset.graph)
    if operators.n != dataset.graph.n:
        raise ValueError(f"operators are {operators.n}x{operators.n}, graph has {dataset.graph.n} nodes")
    features = prepare_features(dataset, config.row_normalize)
    labels = dataset.split.labels
    split = dataset.split
    model = SpGAT.build(config, dataset.num_features, dataset.num_classes, operators, seed=config.seed)
    state = TrainState(
        adam=AdamState(model.parameters(), decay_keys=model.decay_keys(config.decay_scope)),
        rng=np.random.default_rng([config.seed, 1]),
    )
    history = []
    epoch_times = []
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        loss, grads = model.loss_and_grads(features, labels, split.train, training=True, rng=state.rng)
        objective = loss + l2_penalty(model, config.weight_decay, config.decay_scope)
        if not math.isfinite(objective):
            raise TrainingError(f"non-finite training loss at epoch {epoch}; parameter norms {_param_norms(model)}")
        adam_step(state.adam, grads, config.learning_rate, weight_decay=config.weight_decay)
        logits = model.predict(features)
        val_loss, _ = masked_softmax_xent(logits, labels, split.val)
        val_acc = accuracy(logits, labels, split.val)
        epoch_times.append(time.perf_counter() - t0)
        history.append({"epoch": epoch, "train_loss": objective, "val_loss": val_loss, "val_acc": val_acc})
        state.epoch = epoch
        if val_loss < state.best_val_loss:
            state.best_val_loss = val_loss
            state.best_state = model.state_dict()
            state.best_epoch = epoch
            state.patience_counter = 0
        else:
            state.patience_counter += 1
            if state.patience_counter >= config.patience:
                log.info("early stop at epoch %d (best %d)", epoch, state.best_epoch)
                break
    if state.best_state is not None:
        model.load_state_dict(state.best_state)
    logits = model.predict(features)
    val_loss, _ = masked_softmax_xent(logits, labels, split.val)
    report = ExperimentReport(
        dataset=dataset.name,
        config=config.to_dict(),
        history=history,
        best_epoch=state.best_epoch,
        epochs_run=state.epoch,
        val_loss=val_loss,
        val_acc=accuracy(logits, labels, split.val),
        test_acc=accuracy(logits, labels, split.test),
        attention=[list(a) for a in model.attention_weights()],
        timings={
            "operators_s": op_seconds,
            "epoch_mean_s": statistics.fmean(epoch_times) if epoch_times else 0.0,
            "total_s": time.perf_counter() - t_start,
        },
        model=model,
    )
    return report


def run_seeds(config: ModelConfig, dataset: Dataset, seeds, jobs: int = 1, operators=None) -> list:
    """Train one model per seed, sharing the branch operators across runs."""
    seeds = list(seeds)
    if operators is None:
        operators, _ = build_operators(config, dataset.graph)
    configs = [config.with_(seed=int(s)) for s in seeds]
    if jobs <= 1 or len(configs) == 1:
        return [train(c, dataset, operators) for c in configs]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda c: train(c, dataset, operators), configs))


def mean_std(values):
    values = list(values)
    return statistics.fmean(values), (statistics.pstdev(values) if len(values) > 1 else 0.0)


# --- ablations ----------------------------------------------------------------


def report_attention(model: SpGAT) -> list:
    """Softmax-normalized ``(alpha_low, alpha_high)`` per layer."""
    return model.attention_weights()


def knockout_alphas(model: SpGAT, branch: str, layers=None) -> list:
    if branch not in ("low", "high", "both"):
        raise ValueError(f"branch must be 'low', 'high' or 'both', got {branch!r}")
    chosen = range(len(model.layers)) if layers is None else set(layers)
    out = []
    for i, (a_low, a_high) in enumerate(model.attention_weights()):
        if i in chosen:
            a_low = 0.0 if branch in ("low", "both") else a_low
            a_high = 0.0 if branch in ("high", "both") else a_high
        out.append((a_low, a_high))
    return out


def frequency_knockout(model: SpGAT, dataset: Dataset, branch: str, row_norm=True, layers=None, nodes=None) -> float:
    """Test accuracy with one branch's attention forced to zero.

    The other branch keeps its learned weight (no renormalization).
    """
    features = prepare_features(dataset, row_norm)
    nodes = dataset.split.test if nodes is None else nodes
    return evaluate(model, features, dataset.split.labels, nodes, alphas=knockout_alphas(model, branch, layers))


@dataclass
class SweepRow:
    fraction: float
    d: int
    accuracies: list

    @property
    def mean(self) -> float:
        return mean_std(self.accuracies)[0]

    @property
    def std(self) -> float:
        return mean_std(self.accuracies)[1]


def sweep_d(config: ModelConfig, dataset: Dataset, fractions, seeds=range(5), jobs=1) -> list:
    """Test accuracy versus low-frequency fraction; one eigendecomposition total."""
    if config.variant != "exact":
        raise ValueError("the d sweep applies to the exact variant only")
    eig = eigendecompose(normalize(dataset.graph))
    rows = []
    for frac in fractions:
        cfg = config.with_(d_fraction=float(frac))
        ops, _ = build_operators(cfg, dataset.graph, eig=eig)
        reports = run_seeds(cfg, dataset, seeds, jobs, operators=ops)
        rows.append(SweepRow(float(frac), ops.d, [r.test_acc for r in reports]))
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["fraction", "d", "mean_acc", "std_acc", "n_seeds"])
    for r in rows:
        writer.writerow([repr(r.fraction), r.d, repr(r.mean), repr(r.std), len(r.accuracies)])
    return buf.getvalue()


@dataclass
class BenchResult:
    eigen_runs: list
    cheby_runs: list

    @property
    def eigen_median(self) -> float:
        return statistics.median(self.eigen_runs)

    @property
    def cheby_median(self) -> float:
        return statistics.median(self.cheby_runs)

    @property
    def speedup(self) -> float:
        return self.eigen_median / self.cheby_median

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["path", "median_s", "runs"])
        writer.writerow(["eigen", repr(self.eigen_median), len(self.eigen_runs)])
        writer.writerow(["cheby", repr(self.cheby_median), len(self.cheby_runs)])
        writer.writerow(["ratio", repr(self.speedup), ""])
        return buf.getvalue()


def bench_wavelets(graph: Graph, config: ModelConfig, repeats: int = 5) -> BenchResult:
    """Wall-clock operator construction: eigendecomposition path versus Chebyshev path.

    Both timings cover normalization through the finished branch operators.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    exact_cfg = config.with_(variant="exact", s=config.s if config.variant == "exact" else None)
    cheby_cfg = config.with_(variant="cheby", s=config.s if config.variant == "cheby" else None)
    eigen_runs, cheby_runs = [], []
    for _ in range(repeats):
        eigen_runs.append(build_operators(exact_cfg, graph)[1])
        cheby_runs.append(build_operators(cheby_cfg, graph)[1])
    return BenchResult(eigen_runs, cheby_runs)


# --- artifacts ----------------------------------------------------------------


def write_report(report: ExperimentReport, out_dir) -> Path:
    """Write ``{stem}.json``, ``{stem}.csv`` and ``{stem}.timings.json``.

    Only the timings file varies between identical seeded runs.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{report.stem}.json"
    path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    (out_dir / f"{report.stem}.csv").write_text(report.history_csv(), encoding="utf-8")
    (out_dir / f"{report.stem}.timings.json").write_text(json.dumps(report.timings, indent=2) + "\n", encoding="utf-8")
    return path
