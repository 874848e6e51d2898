"""Graphs, node-classification datasets and the normalized spectral operators.

A dataset lives in a plain-text directory::

    edges.csv      two integer columns, one undirected edge per line
    features.csv   n rows of p comma-separated reals
    labels.csv     n integers, one class index per line
    split.json     {"train": [...], "val": [...], "test": [...]}

No header rows, UTF-8, LF line endings.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from pathlib import Path

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

EDGES_FILE = "edges.csv"
FEATURES_FILE = "features.csv"
LABELS_FILE = "labels.csv"
SPLIT_FILE = "split.json"


class DatasetError(ValueError):
    """Malformed dataset directory or inconsistent graph data."""


def _canonical_edges(n, pairs):
    edges = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise DatasetError(f"edge endpoint outside [0, {n})")
    edges = edges[edges[:, 0] != edges[:, 1]]
    edges = np.sort(edges, axis=1)
    return np.unique(edges, axis=0) if len(edges) else edges


@dataclass(frozen=True)
class Graph:
    """Undirected, unweighted graph on nodes ``0..n-1``.

    ``edges`` is kept canonical: each pair has ``i < j``, rows are unique and
    lexicographically sorted, and there are no self-loops.
    """

    n: int
    edges: np.ndarray = field(repr=False)

    @classmethod
    def from_edges(cls, n: int, pairs) -> "Graph":
        if n < 1:
            raise DatasetError("a graph needs at least one node")
        return cls(n=int(n), edges=_canonical_edges(n, pairs))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(i))
        a = sp.coo_matrix(
            (data, (np.concatenate([i, j]), np.concatenate([j, i]))),
            shape=(self.n, self.n),
        )
        return a.tocsr()

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    def canonical_bytes(self) -> bytes:
        return np.int64(self.n).tobytes() + self.edges.astype("<i8").tobytes()

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()


def from_edge_list(pairs):
    """Build a graph from edges over arbitrary hashable node IDs.

    Returns ``(graph, mapping)`` where ``mapping[original_id]`` is the dense
    index. IDs are numbered in order of first appearance.
    """
    mapping = {}
    dense = []
    for u, v in pairs:
        for node in (u, v):
            if node not in mapping:
                mapping[node] = len(mapping)
        dense.append((mapping[u], mapping[v]))
    return Graph.from_edges(len(mapping), dense), mapping


@dataclass(frozen=True)
class LabeledSplit:
    labels: np.ndarray
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        n = len(self.labels)
        if self.labels.size and self.labels.min() < 0:
            raise DatasetError("labels must be non-negative class indices")
        seen = set()
        for name in ("train", "val", "test"):
            idx = getattr(self, name)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise DatasetError(f"{name} split has node index outside [0, {n})")
            ids = set(idx.tolist())
            if len(ids) != len(idx):
                raise DatasetError(f"{name} split contains repeated nodes")
            if seen & ids:
                raise DatasetError(f"{name} split overlaps an earlier split")
            seen |= ids

    @classmethod
    def create(cls, labels, train, val, test) -> "LabeledSplit":
        as_idx = lambda x: np.asarray(x, dtype=np.int64).ravel()
        return cls(as_idx(labels), as_idx(train), as_idx(val), as_idx(test))

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0


@dataclass(frozen=True)
class Dataset:
    name: str
    graph: Graph
    features: np.ndarray = field(repr=False)
    split: LabeledSplit = field(repr=False)

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.graph.n:
            raise DatasetError(
                f"feature matrix has shape {self.features.shape}, expected ({self.graph.n}, p)"
            )
        if not np.all(np.isfinite(self.features)):
            raise DatasetError("feature matrix has non-finite entries")
        if len(self.split.labels) != self.graph.n:
            raise DatasetError(
                f"{len(self.split.labels)} labels for a graph with {self.graph.n} nodes"
            )

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return self.split.num_classes


@dataclass(frozen=True)
class NormalizedOperators:
    """Self-loop normalized adjacency ``a_hat`` and Laplacian ``I - a_hat``."""

    a_hat: sp.csr_matrix
    laplacian: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.a_hat.shape[0]


def normalize(g: Graph) -> NormalizedOperators:
    a = g.adjacency + sp.identity(g.n, format="csr")
    d_inv_sqrt = 1.0 / np.sqrt(g.degrees + 1.0)
    scale = sp.diags(d_inv_sqrt)
    a_hat = (scale @ a @ scale).tocsr()
    # exact symmetry: the two triangles are computed with different rounding
    a_hat = ((a_hat + a_hat.T) * 0.5).tocsr()
    a_hat.sort_indices()
    laplacian = (sp.identity(g.n, format="csr") - a_hat).tocsr()
    laplacian.sort_indices()
    return NormalizedOperators(a_hat=a_hat, laplacian=laplacian)


def row_normalize(features: np.ndarray) -> np.ndarray:
    """Scale each row to unit sum; all-zero rows are left untouched."""
    sums = features.sum(axis=1, keepdims=True)
    sums[sums == 0] = 1.0
    return features / sums


# --- synthetic graphs -------------------------------------------------------


def barbell_graph(k: int) -> Graph:
    """Two ``k``-cliques joined by one bridge edge ``(k-1, k)``."""
    if k < 3:
        raise ValueError(f"barbell cluster size must be >= 3, got {k}")
    pairs = list(combinations(range(k), 2))
    pairs += list(combinations(range(k, 2 * k), 2))
    pairs.append((k - 1, k))
    return Graph.from_edges(2 * k, pairs)


def _balanced_split(labels, rng, train_per_class=20):
    train, val, test = [], [], []
    for c in range(labels.max() + 1):
        members = rng.permutation(np.flatnonzero(labels == c))
        n_train = min(train_per_class, len(members) // 2)
        rest = members[n_train:]
        n_val = len(rest) // 2
        train.append(members[:n_train])
        val.append(rest[:n_val])
        test.append(rest[n_val:])
    return LabeledSplit.create(
        labels, *(np.sort(np.concatenate(s)) for s in (train, val, test))
    )


def sbm_graph(sizes, p_in: float, p_out: float, seed: int, train_per_class: int = 20):
    """Sample a stochastic block model; the block index is the node label.

    Each block contributes ``min(train_per_class, size // 2)`` training nodes;
    its remaining nodes are halved into validation and test.
    """
    sizes = [int(s) for s in sizes]
    if not sizes or min(sizes) < 1:
        raise ValueError("block sizes must be positive")
    if not 0.0 <= p_out < p_in <= 1.0:
        raise ValueError(f"need 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    n = len(labels)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(len(iu)) < prob
    graph = Graph.from_edges(n, np.column_stack([iu[keep], ju[keep]]))
    return graph, _balanced_split(labels, rng, train_per_class)


def bag_of_words(labels, seed, words_per_class=128, words_per_node=16.0, ratio=2.0) -> np.ndarray:
    """Sparse binary citation-style features.

    The vocabulary is split evenly among classes. A node includes each word of
    its own class with probability ``ratio`` times that of any other word,
    scaled so it carries ``words_per_node`` words on average.
    """
    labels = np.asarray(labels)
    n_classes = int(labels.max()) + 1
    vocab = np.repeat(np.arange(n_classes), words_per_class)
    q_out = words_per_node / (words_per_class * (ratio + n_classes - 1))
    q_in = ratio * q_out
    if q_in > 1:
        raise ValueError("words_per_node too large for the vocabulary")
    prob = np.where(vocab[None, :] == labels[:, None], q_in, q_out)
    rng = np.random.default_rng([seed, 2])
    return (rng.random(prob.shape) < prob).astype(np.float64)


def sbm_dataset(sizes, p_in, p_out, seed, name="sbm", features="bow", train_per_class=20) -> Dataset:
    """SBM graph plus node features, ``"bow"`` (see ``bag_of_words``) or ``"identity"``."""
    graph, split = sbm_graph(sizes, p_in, p_out, seed, train_per_class)
    if features == "bow":
        x = bag_of_words(split.labels, seed)
    elif features == "identity":
        x = np.eye(graph.n)
    else:
        raise ValueError(f"features must be 'bow' or 'identity', got {features!r}")
    return Dataset(name, graph, x, split)


# --- dataset directory I/O ----------------------------------------------------


def _read_lines(path: Path):
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if line:
                yield lineno, line


def _read_edges(path: Path, n: int):
    pairs = []
    for lineno, line in _read_lines(path):
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise DatasetError(f"{path}:{lineno}: expected two node indices, got {line!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: non-integer node index in {line!r}") from None
        for node in (u, v):
            if not 0 <= node < n:
                raise DatasetError(f"{path}:{lineno}: node index {node} outside [0, {n})")
        if u == v:
            log.warning("%s:%d: dropping self-loop on node %d", path, lineno, u)
            continue
        pairs.append((u, v))
    return pairs


def _read_features(path: Path):
    rows = []
    width = None
    for lineno, line in _read_lines(path):
        try:
            row = [float(x) for x in line.split(",")]
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: non-numeric feature value") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DatasetError(f"{path}:{lineno}: ragged row with {len(row)} values, expected {width}")
        if not all(np.isfinite(row)):
            raise DatasetError(f"{path}:{lineno}: non-finite feature value")
        rows.append(row)
    if not rows:
        raise DatasetError(f"{path}: no feature rows")
    return np.array(rows, dtype=np.float64)


def _read_labels(path: Path):
    labels = []
    for lineno, line in _read_lines(path):
        try:
            value = int(line)
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: label {line!r} is not an integer") from None
        if value < 0:
            raise DatasetError(f"{path}:{lineno}: negative label {value}")
        labels.append(value)
    return np.array(labels, dtype=np.int64)


def _read_split(path: Path, n: int):
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise DatasetError(f"{path}:{err.lineno}: invalid JSON ({err.msg})") from None
    out = {}
    for name in ("train", "val", "test"):
        if name not in raw:
            raise DatasetError(f"{path}: missing key {name!r}")
        idx = raw[name]
        bad = [i for i in idx if not isinstance(i, int) or not 0 <= i < n]
        if bad:
            raise DatasetError(f"{path}: {name} index {bad[0]!r} outside [0, {n})")
        out[name] = idx
    for a, b in combinations(("train", "val", "test"), 2):
        shared = set(out[a]) & set(out[b])
        if shared:
            raise DatasetError(f"{path}: {a} and {b} share node {min(shared)}")
    return out


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"dataset directory not found: {directory}")
    features = _read_features(directory / FEATURES_FILE)
    n = features.shape[0]
    labels = _read_labels(directory / LABELS_FILE)
    if len(labels) != n:
        raise DatasetError(
            f"{directory / LABELS_FILE}: {len(labels)} labels but {n} feature rows"
        )
    graph = Graph.from_edges(n, _read_edges(directory / EDGES_FILE, n))
    split = _read_split(directory / SPLIT_FILE, n)
    return Dataset(
        name=directory.name,
        graph=graph,
        features=features,
        split=LabeledSplit.create(labels, split["train"], split["val"], split["test"]),
    )


def save_dataset(ds: Dataset, directory) -> Path:
    """Write ``ds`` in canonical form (sorted edges, ``%.17g`` reals)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / EDGES_FILE).open("w", encoding="utf-8", newline="\n") as fh:
        for u, v in ds.graph.edges:
            fh.write(f"{u},{v}\n")
    with (directory / FEATURES_FILE).open("w", encoding="utf-8", newline="\n") as fh:
        np.savetxt(fh, ds.features, fmt="%.17g", delimiter=",")
    with (directory / LABELS_FILE).open("w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{int(c)}\n" for c in ds.split.labels)
    split = {name: getattr(ds.split, name).tolist() for name in ("train", "val", "test")}
    (directory / SPLIT_FILE).write_text(json.dumps(split) + "\n", encoding="utf-8")
    return directory
