import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from spgat.graph import Graph, sbm_dataset  # noqa: E402

ROOT = Path(__file__).resolve().parent.parent


def random_graph(n, p, seed):
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, 1)
    keep = rng.random(len(iu[0])) < p
    return Graph.from_edges(n, np.column_stack([iu[0][keep], iu[1][keep]]))


def data_dir(name):
    """Directory of a public dataset, from SPGAT_DATA or ./data, or None."""
    base = Path(os.environ.get("SPGAT_DATA", ROOT / "data"))
    path = base / name
    return path if (path / "edges.csv").is_file() else None


@pytest.fixture(scope="session")
def sbm():
    return sbm_dataset([50, 50], 0.2, 0.01, seed=7)


@pytest.fixture
def tiny_dir(tmp_path):
    d = tmp_path / "tiny"
    d.mkdir()
    (d / "edges.csv").write_text("0,1\n1,2\n")
    (d / "features.csv").write_text("1,0\n0,1\n1,1\n")
    (d / "labels.csv").write_text("0\n1\n0\n")
    (d / "split.json").write_text('{"train": [0], "val": [1], "test": [2]}\n')
    return d


ACCEPTANCE_LINES = []


def record_criterion(number, name, ok, detail):
    status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    ACCEPTANCE_LINES.append(f"[{status}] criterion {number:>2} {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
