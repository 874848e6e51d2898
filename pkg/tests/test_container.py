import struct

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import random_graph
from spgat.container import ContainerError, WaveletCache, cache_key, read_records, write_records
from spgat.graph import normalize
from spgat.spectral import eigendecompose, heat_wavelets


def test_roundtrip_square_and_rectangular(tmp_path):
    rng = np.random.default_rng(0)
    a = sp.random(6, 6, density=0.4, random_state=1, format="csr")
    b = rng.normal(size=(2, 5))
    recs = read_records(write_records(tmp_path / "x.spgw", [a, b]))
    np.testing.assert_allclose(recs[0].toarray(), a.toarray().astype(np.float32))
    np.testing.assert_allclose(recs[1].toarray(), b.astype(np.float32))
    assert recs[1].shape == (2, 5)


def test_header_layout(tmp_path):
    path = write_records(tmp_path / "x.spgw", [sp.identity(3, format="csr")])
    raw = path.read_bytes()
    assert struct.unpack_from("<4sIII", raw) == (b"SPGW", 1, 3, 3)
    assert len(raw) == 16 + 8 + 8 * 4 + 8 * 3 + 4 * 3


def test_bad_magic_and_truncation(tmp_path):
    path = write_records(tmp_path / "x.spgw", [np.eye(2)])
    raw = path.read_bytes()
    (tmp_path / "bad.spgw").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(ContainerError, match="magic"):
        read_records(tmp_path / "bad.spgw")
    (tmp_path / "short.spgw").write_bytes(raw[:-3])
    with pytest.raises(ContainerError, match="truncated"):
        read_records(tmp_path / "short.spgw")


def test_cache_key_sensitivity():
    g = random_graph(10, 0.3, seed=1)
    h = random_graph(10, 0.3, seed=2)
    base = cache_key(g, 1.0, 1e-4, "exact")
    assert base == cache_key(g, 1.0, 1e-4, "exact")
    assert len({base, cache_key(h, 1.0, 1e-4, "exact"), cache_key(g, 2.0, 1e-4, "exact"),
                cache_key(g, 1.0, 1e-3, "exact"), cache_key(g, 1.0, 1e-4, "chebyshev", 3)}) == 5


def test_wavelet_cache_store_and_load(tmp_path):
    g = random_graph(12, 0.3, seed=3)
    basis = heat_wavelets(eigendecompose(normalize(g)), 1.0, 1e-4)
    cache = WaveletCache(tmp_path / "cache")
    assert cache.load(g, 1.0, 1e-4, "exact") is None
    cache.store(g, basis)
    psi, psi_inv = cache.load(g, 1.0, 1e-4, "exact")
    np.testing.assert_allclose(psi.toarray(), basis.psi, rtol=1e-6, atol=1e-7)
    np.testing.assert_allclose(psi_inv.toarray(), basis.psi_inv, rtol=1e-6, atol=1e-6)
