"""SpGAT layers with hand-written reverse-mode gradients.

One layer computes::

    X      = H Theta^T
    Z_low  = alpha_low  * (low_op  @ X)
    Z_high = alpha_high * (high_op @ X)
    H'     = act(AGG(Z_low, Z_high))

where ``(alpha_low, alpha_high) = softmax(logits)`` and AGG is an
elementwise MAX (ties go to the low branch) or MEAN. The feature transform
``Theta`` is shared by both branches, so a layer owns ``p*q + 2`` numbers.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .container import read_records, write_records

AGGREGATIONS = ("max", "mean")
VARIANTS = ("exact", "cheby")
DECAY_SCOPES = ("first", "all", "none")
DEFAULT_SCALE = {"exact": 1.0, "cheby": 2.0}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 64
    layers: int = 2
    variant: str = "exact"
    cheby_order: int = 1
    s: float | None = None
    t: float = 1e-4
    d_fraction: float = 0.05
    agg: str = "max"
    dropout: float = 0.5
    weight_decay: float = 5e-4
    decay_scope: str = "first"
    learning_rate: float = 0.01
    lambda_max: float = 2.0
    row_normalize: bool = True
    epochs: int = 500
    patience: int = 100
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def scale(self) -> float:
        return DEFAULT_SCALE[self.variant] if self.s is None else float(self.s)

    def validate(self):
        def need(ok, msg):
            if not ok:
                raise ConfigError(msg)

        need(self.variant in VARIANTS, f"variant must be one of {VARIANTS}, got {self.variant!r}")
        need(self.agg in AGGREGATIONS, f"agg must be one of {AGGREGATIONS}, got {self.agg!r}")
        need(self.decay_scope in DECAY_SCOPES, f"decay_scope must be one of {DECAY_SCOPES}")
        need(isinstance(self.hidden, int) and self.hidden >= 1, "hidden must be an integer >= 1")
        need(isinstance(self.layers, int) and self.layers >= 1, "layers must be an integer >= 1")
        need(isinstance(self.cheby_order, int) and self.cheby_order >= 1, "cheby_order must be >= 1")
        need(self.s is None or 0 < self.s <= 50, "s must lie in (0, 50]")
        need(self.t >= 0, "t must be >= 0")
        if self.variant == "exact":
            need(0 < self.d_fraction < 1, "d_fraction must lie in (0, 1) for the exact variant")
        need(0 <= self.dropout < 1, "dropout must lie in [0, 1)")
        need(self.weight_decay >= 0, "weight_decay must be >= 0")
        need(self.learning_rate > 0, "learning_rate must be > 0")
        need(self.lambda_max > 0, "lambda_max must be > 0")
        need(isinstance(self.epochs, int) and self.epochs >= 0, "epochs must be an integer >= 0")
        need(isinstance(self.patience, int) and self.patience >= 1, "patience must be an integer >= 1")
        need(isinstance(self.seed, int), "seed must be an integer")

    def split_index(self, n: int) -> int:
        """Number of low-frequency components: ``round(d_fraction * n)`` clipped to ``[1, n-1]``."""
        return int(min(max(round(self.d_fraction * n), 1), n - 1))

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


# --- building blocks ----------------------------------------------------------


def glorot_init(rows: int, cols: int, seed=0) -> np.ndarray:
    """Uniform Glorot initialization on ``[-a, a]``, ``a = sqrt(6 / (rows + cols))``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    a = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-a, a, size=(rows, cols))


def attention(a_low: float, a_high: float) -> tuple[float, float]:
    m = max(a_low, a_high)
    e_low = math.exp(a_low - m)
    e_high = math.exp(a_high - m)
    total = e_low + e_high
    return e_low / total, e_high / total


@dataclass
class LayerGrads:
    theta: np.ndarray
    logits: np.ndarray

    @property
    def d_a_low(self) -> float:
        return float(self.logits[0])

    @property
    def d_a_high(self) -> float:
        return float(self.logits[1])


@dataclass
class Tape:
    h: np.ndarray
    dropout_mask: np.ndarray | None
    x: np.ndarray
    y_low: np.ndarray
    y_high: np.ndarray
    pre: np.ndarray
    select_low: np.ndarray | None
    alphas: tuple
    alphas_fixed: bool


class SpGATLayer:
    def __init__(self, theta, low_op, high_op, agg="max", activation="relu", dropout=0.0, logits=None):
        if agg not in AGGREGATIONS:
            raise ValueError(f"agg must be one of {AGGREGATIONS}, got {agg!r}")
        if activation not in ("relu", None):
            raise ValueError(f"activation must be 'relu' or None, got {activation!r}")
        if low_op.shape != high_op.shape or low_op.shape[0] != low_op.shape[1]:
            raise ValueError("branch operators must be square and of equal shape")
        self.theta = np.asarray(theta, dtype=np.float64)
        self.logits = np.zeros(2) if logits is None else np.asarray(logits, dtype=np.float64)
        self.low_op = low_op
        self.high_op = high_op
        self.agg = agg
        self.activation = activation
        self.dropout = float(dropout)

    @property
    def in_features(self) -> int:
        return self.theta.shape[1]

    @property
    def out_features(self) -> int:
        return self.theta.shape[0]

    @property
    def alphas(self) -> tuple[float, float]:
        return attention(float(self.logits[0]), float(self.logits[1]))

    def num_parameters(self) -> int:
        return self.theta.size + self.logits.size

    def forward(self, h, training=False, rng=None, alphas=None):
        """Return ``(h_out, tape)``; ``alphas`` overrides the learned attention."""
        h = np.asarray(h, dtype=np.float64)
        n = self.low_op.shape[0]
        if h.ndim != 2 or h.shape != (n, self.in_features):
            raise ValueError(f"input has shape {h.shape}, layer expects ({n}, {self.in_features})")
        mask = None
        if training and self.dropout > 0:
            if rng is None:
                raise ValueError("training-mode dropout needs an rng")
            keep = 1.0 - self.dropout
            mask = (rng.random(h.shape) < keep) / keep
            h = h * mask
        fixed = alphas is not None
        a_low, a_high = self.alphas if alphas is None else alphas
        x = h @ self.theta.T
        y_low = np.asarray(self.low_op @ x)
        y_high = np.asarray(self.high_op @ x)
        z_low = a_low * y_low
        z_high = a_high * y_high
        if self.agg == "mean":
            pre = 0.5 * (z_low + z_high)
            select = None
        else:
            select = z_low >= z_high
            pre = np.where(select, z_low, z_high)
        out = np.maximum(pre, 0.0) if self.activation == "relu" else pre
        tape = Tape(h, mask, x, y_low, y_high, pre, select, (a_low, a_high), fixed)
        return out, tape

    def backward(self, tape: Tape, d_out):
        """Return ``(LayerGrads, d_in)`` for upstream gradient ``d_out``."""
        d_out = np.asarray(d_out, dtype=np.float64)
        if d_out.shape != tape.pre.shape:
            raise ValueError(f"upstream gradient has shape {d_out.shape}, expected {tape.pre.shape}")
        g = d_out * (tape.pre > 0) if self.activation == "relu" else d_out
        if self.agg == "mean":
            g_low = g_high = 0.5 * g
        else:
            g_low = np.where(tape.select_low, g, 0.0)
            g_high = g - g_low
        a_low, a_high = tape.alphas
        d_logits = np.zeros(2)
        if not tape.alphas_fixed:
            d_alpha = float(np.sum(g_low * tape.y_low)) - float(np.sum(g_high * tape.y_high))
            d_logits[0] = a_low * a_high * d_alpha
            d_logits[1] = -d_logits[0]
        dx = np.asarray(self.low_op.T @ (a_low * g_low)) + np.asarray(self.high_op.T @ (a_high * g_high))
        d_theta = dx.T @ tape.h
        d_in = dx @ self.theta
        if tape.dropout_mask is not None:
            d_in = d_in * tape.dropout_mask
        return LayerGrads(theta=d_theta, logits=d_logits), d_in


# --- loss ---------------------------------------------------------------------


def masked_softmax_xent(logits, labels, mask):
    """Mean cross-entropy over the nodes in ``mask``; gradient is zero elsewhere."""
    idx = np.asarray(mask, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ValueError("loss mask is empty")
    z = logits[idx]
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    y = np.asarray(labels)[idx]
    rows = np.arange(len(idx))
    loss = float(np.mean(log_norm - z[rows, y]))
    probs = np.exp(z - log_norm[:, None])
    probs[rows, y] -= 1.0
    d_logits = np.zeros_like(logits, dtype=np.float64)
    np.add.at(d_logits, idx, probs / len(idx))
    return loss, d_logits


# --- full model ---------------------------------------------------------------


class SpGAT:
    """Stack of SpGAT layers sharing one pair of branch operators."""

    def __init__(self, layers):
        self.layers = list(layers)

    @classmethod
    def build(cls, config: ModelConfig, in_features, n_classes, operators, seed=None):
        rng = np.random.default_rng(config.seed if seed is None else seed)
        dims = [in_features] + [config.hidden] * (config.layers - 1) + [n_classes]
        layers = []
        for i in range(config.layers):
            last = i == config.layers - 1
            layers.append(SpGATLayer(
                glorot_init(dims[i + 1], dims[i], rng),
                operators.low, operators.high,
                agg=config.agg,
                activation=None if last else "relu",
                dropout=config.dropout,
            ))
        return cls(layers)

    def parameters(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"layer{i}.theta"] = layer.theta
            out[f"layer{i}.logits"] = layer.logits
        return out

    def decay_keys(self, scope="first") -> frozenset:
        if scope == "none":
            return frozenset()
        n = 1 if scope == "first" else len(self.layers)
        return frozenset(f"layer{i}.theta" for i in range(n))

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def attention_weights(self) -> list:
        return [layer.alphas for layer in self.layers]

    def forward(self, h, training=False, rng=None, alphas=None):
        """``alphas`` is an optional per-layer list of forced (low, high) pairs."""
        tapes = []
        for i, layer in enumerate(self.layers):
            forced = None if alphas is None else alphas[i]
            h, tape = layer.forward(h, training, rng, forced)
            tapes.append(tape)
        return h, tapes

    def backward(self, tapes, d_logits) -> dict:
        grads = {}
        g = d_logits
        for i in reversed(range(len(self.layers))):
            layer_grads, g = self.layers[i].backward(tapes[i], g)
            grads[f"layer{i}.theta"] = layer_grads.theta
            grads[f"layer{i}.logits"] = layer_grads.logits
        return grads

    def loss_and_grads(self, h, labels, mask, training=False, rng=None):
        logits, tapes = self.forward(h, training, rng)
        loss, d_logits = masked_softmax_xent(logits, labels, mask)
        return loss, self.backward(tapes, d_logits)

    def predict(self, h, alphas=None) -> np.ndarray:
        logits, _ = self.forward(h, training=False, alphas=alphas)
        return logits

    def state_dict(self) -> dict:
        return {k: v.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict):
        params = self.parameters()
        if set(state) != set(params):
            raise ValueError("state dict keys do not match the model")
        for k, v in state.items():
            if params[k].shape != v.shape:
                raise ValueError(f"{k}: shape {v.shape} does not match {params[k].shape}")
            params[k][...] = v


def l2_penalty(model: SpGAT, weight_decay: float, scope="first") -> float:
    params = model.parameters()
    return 0.5 * weight_decay * sum(float(np.sum(params[k] ** 2)) for k in model.decay_keys(scope))


def count_parameters(config: ModelConfig, in_features: int, n_classes: int):
    """Return ``(per_layer, total)``; each layer owns ``p*q + 2`` parameters."""
    dims = [in_features] + [config.hidden] * (config.layers - 1) + [n_classes]
    per_layer = [dims[i] * dims[i + 1] + 2 for i in range(config.layers)]
    return per_layer, sum(per_layer)


# --- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    params: dict
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    decay_keys: frozenset = frozenset()

    def __post_init__(self):
        for k, p in self.params.items():
            self.m.setdefault(k, np.zeros_like(p))
            self.v.setdefault(k, np.zeros_like(p))


def adam_step(state: AdamState, grads: dict, lr: float, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
    """One bias-corrected Adam update, in place on ``state.params``.

    L2 regularization enters as the extra gradient ``weight_decay * p`` for
    keys in ``state.decay_keys`` only.
    """
    if set(grads) != set(state.params):
        raise ValueError("gradient keys do not match optimizer parameters")
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, p in state.params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"{k}: gradient shape {g.shape} does not match parameter {p.shape}")
        if weight_decay and k in state.decay_keys:
            g = g + weight_decay * p
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# --- checkpoints --------------------------------------------------------------


def save_checkpoint(model: SpGAT, config: ModelConfig, stem, epoch: int, metrics: dict) -> Path:
    """Write ``<stem>.json`` (manifest) and ``<stem>.spgw`` (parameter arrays)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    params = model.parameters()
    arrays = stem.with_suffix(".spgw")
    write_records(arrays, [p.reshape(1, -1) if p.ndim == 1 else p for p in params.values()])
    manifest = {
        "config": config.to_dict(),
        "epoch": int(epoch),
        "metrics": metrics,
        "arrays": arrays.name,
        "parameters": [{"name": k, "shape": list(p.shape)} for k, p in params.items()],
    }
    path = stem.with_suffix(".json")
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path, operators):
    """Rebuild ``(model, config, manifest)`` from a checkpoint manifest."""
    path = Path(path)
    manifest = json.loads(path.read_text(encoding="utf-8"))
    config = ModelConfig(**manifest["config"])
    records = read_records(path.parent / manifest["arrays"])
    entries = manifest["parameters"]
    if len(records) != len(entries):
        raise ValueError(f"{path}: {len(entries)} parameters listed, {len(records)} arrays stored")
    state = {entry["name"]: rec.toarray().reshape(entry["shape"]) for entry, rec in zip(entries, records)}
    thetas = [state[f"layer{i}.theta"] for i in range(config.layers)]
    model = SpGAT.build(config, thetas[0].shape[1], thetas[-1].shape[0], operators)
    model.load_state_dict(state)
    return model, config, manifest
