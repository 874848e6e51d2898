"""Spectral machinery: eigensystems, heat-kernel graph wavelets and their
Chebyshev approximation.

Two routes produce the low/high frequency branch operators used by the model:

* exact: diagonalize ``L``, build ``psi = U exp(-s L) U^T`` and its inverse
  ``U exp(+s L) U^T``, then split the wavelet basis along the ascending
  spectrum at index ``d``;
* chebyshev: evaluate the complementary kernels ``exp(-s lam)`` (low pass)
  and ``exp(-s (lam_max - lam))`` (high pass) as order-``M`` Chebyshev
  polynomials in ``L`` whose coefficients come from modified Bessel values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp

from .graph import NormalizedOperators

MAX_SCALE = 50.0
BESSEL_MAX_ORDER = 128
BESSEL_MAX_ARG = 64.0
_SERIES_RTOL = 1e-16
_SERIES_MAX_TERMS = 2000


class SpectralError(RuntimeError):
    pass


class ProductCounter:
    """Counts sparse matrix products issued by the Chebyshev recurrence."""

    def __init__(self):
        self.products = 0

    def __call__(self, a, b):
        self.products += 1
        return a @ b


def _matmul(a, b, probe):
    return probe(a, b) if probe is not None else a @ b


# --- eigensystem --------------------------------------------------------------


@dataclass(frozen=True)
class EigenSystem:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.eigenvalues)


def eigendecompose(ops: NormalizedOperators) -> EigenSystem:
    """Full symmetric eigendecomposition of the normalized Laplacian.

    Eigenvalues come back ascending. Each eigenvector is flipped so that its
    largest-magnitude entry (first one on ties) is positive.
    """
    lap = ops.laplacian
    dense = lap.toarray() if sp.issparse(lap) else np.array(lap, dtype=np.float64)
    n = dense.shape[0]
    try:
        lam, vecs = np.linalg.eigh(dense)
    except np.linalg.LinAlgError as err:
        raise SpectralError(
            f"symmetric eigensolver (LAPACK syevd) did not converge on a {n}x{n} Laplacian: {err}"
        ) from err
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(n)])
    signs[signs == 0] = 1.0
    vecs *= signs
    return EigenSystem(eigenvalues=lam, eigenvectors=vecs)


# --- wavelet bases ------------------------------------------------------------


@dataclass(frozen=True)
class WaveletBasis:
    """Wavelet matrix ``psi`` and its inverse at one scale.

    ``provenance`` is ``"exact"`` or ``"chebyshev"``; ``order`` is the
    Chebyshev degree (``None`` for exact). Exact bases keep a reference to the
    eigensystem they were built from so they can be split by frequency.
    """

    psi: object = field(repr=False)
    psi_inv: object = field(repr=False)
    scale: float
    threshold: float
    provenance: str
    order: int | None = None
    eig: EigenSystem | None = field(default=None, repr=False)

    @property
    def label(self) -> str:
        return "exact" if self.provenance == "exact" else f"chebyshev({self.order})"


def sparsify(matrix, t: float):
    """Zero every entry with magnitude below ``t``."""
    if t < 0:
        raise ValueError(f"threshold must be >= 0, got {t}")
    if sp.issparse(matrix):
        out = matrix.tocsr(copy=True)
        if t > 0:
            out.data[np.abs(out.data) < t] = 0.0
        out.eliminate_zeros()
        return out
    out = np.array(matrix, dtype=np.float64, copy=True)
    if t > 0:
        out[np.abs(out) < t] = 0.0
    return out


def _check_scale(s):
    if not s > 0:
        raise ValueError(f"wavelet scale must be > 0, got {s}")
    if s > MAX_SCALE:
        raise ValueError(f"wavelet scale {s} > {MAX_SCALE} overflows the inverse kernel")


def _spectral_matrix(eig: EigenSystem, kernel_values):
    u = eig.eigenvectors
    m = (u * kernel_values) @ u.T
    return 0.5 * (m + m.T)


def heat_wavelets(eig: EigenSystem, s: float, t: float = 0.0) -> WaveletBasis:
    _check_scale(s)
    lam = eig.eigenvalues
    psi = sparsify(_spectral_matrix(eig, np.exp(-s * lam)), t)
    psi_inv = sparsify(_spectral_matrix(eig, np.exp(s * lam)), t)
    return WaveletBasis(psi, psi_inv, scale=float(s), threshold=float(t), provenance="exact", eig=eig)


# --- modified Bessel functions --------------------------------------------------


def bessel_i(order: int, x: float) -> float:
    """Modified Bessel function of the first kind ``I_order(x)``.

    Power series ``sum_m (x/2)^(2m+k) / (m! (m+k)!)``, summed until a term
    drops below ``1e-16`` of the running total once terms are decreasing.
    Supported box: ``0 <= order <= 128``, ``|x| <= 64``.
    """
    if int(order) != order or not 0 <= order <= BESSEL_MAX_ORDER:
        raise ValueError(f"Bessel order must be an integer in [0, {BESSEL_MAX_ORDER}], got {order}")
    if not abs(x) <= BESSEL_MAX_ARG:
        raise ValueError(f"Bessel argument must satisfy |x| <= {BESSEL_MAX_ARG}, got {x}")
    order = int(order)
    if x == 0:
        return 1.0 if order == 0 else 0.0
    half = 0.5 * x
    term = 1.0
    for j in range(1, order + 1):
        term *= half / j
    total = term
    q = half * half
    for m in range(1, _SERIES_MAX_TERMS):
        denom = m * (m + order)
        term *= q / denom
        total += term
        if abs(term) <= _SERIES_RTOL * abs(total) and q < denom:
            return total
    raise SpectralError(f"Bessel series for I_{order}({x}) did not converge")


@lru_cache(maxsize=256)
def _table(x: float, max_order: int) -> tuple:
    return tuple(bessel_i(k, x) for k in range(max_order + 1))


def bessel_table(s: float, max_order: int) -> np.ndarray:
    """Look-up table ``[I_0(s), ..., I_max_order(s)]``; memoized per argument."""
    return np.array(_table(float(s), int(max_order)))


# --- Chebyshev approximation --------------------------------------------------

KERNELS = ("forward", "inverse", "high")


@dataclass(frozen=True)
class ChebyshevCoeffs:
    """Coefficients ``c_0..c_M``; the polynomial is ``c_0/2 + sum_i c_i T_i``."""

    order: int
    coeffs: np.ndarray
    scale: float
    lambda_max: float
    kernel: str = "forward"

    def evaluate(self, lam):
        """Scalar reference evaluation on eigenvalues ``lam``."""
        x = 2.0 * np.asarray(lam, dtype=np.float64) / self.lambda_max - 1.0
        c = self.coeffs.copy()
        c[0] *= 0.5
        return np.polynomial.chebyshev.chebval(x, c)


def chebyshev_coefficients(s, order, kernel="forward", lambda_max=2.0, table=None) -> ChebyshevCoeffs:
    """Chebyshev coefficients of a heat-type kernel on ``[0, lambda_max]``.

    With ``z = s * lambda_max / 2`` and the generating function
    ``exp(z cos th) = I_0(z) + 2 sum_k I_k(z) cos(k th)``:

    * ``forward``  ``exp(-s lam)``:              ``c_k = 2 exp(-z) (-1)^k I_k(z)``
    * ``inverse``  ``exp(+s lam)``:              ``c_k = 2 exp(+z) I_k(z)``
    * ``high``     ``exp(-s (lambda_max - lam))``: ``c_k = 2 exp(-z) I_k(z)``

    ``table`` may be a precomputed ``bessel_table(z, order)``; otherwise the
    memoized table is used.
    """
    if int(order) != order or order < 1:
        raise ValueError(f"Chebyshev order must be an integer >= 1, got {order}")
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")
    if s < 0:
        raise ValueError(f"scale must be >= 0, got {s}")
    if not lambda_max > 0:
        raise ValueError(f"lambda_max must be > 0, got {lambda_max}")
    order = int(order)
    z = s * lambda_max / 2.0
    if order > BESSEL_MAX_ORDER or z > BESSEL_MAX_ARG:
        raise ValueError(
            f"order {order} / argument {z} outside the Bessel table box "
            f"(order <= {BESSEL_MAX_ORDER}, s*lambda_max/2 <= {BESSEL_MAX_ARG})"
        )
    vals = bessel_table(z, order) if table is None else np.asarray(table, dtype=np.float64)
    if len(vals) < order + 1:
        raise ValueError(f"Bessel table has {len(vals)} entries, need {order + 1}")
    vals = vals[: order + 1]
    k = np.arange(order + 1)
    if kernel == "forward":
        c = 2.0 * math.exp(-z) * np.where(k % 2, -1.0, 1.0) * vals
    elif kernel == "inverse":
        c = 2.0 * math.exp(z) * vals
    else:
        c = 2.0 * math.exp(-z) * vals
    return ChebyshevCoeffs(order, c, float(s), float(lambda_max), kernel)


def _rescaled(laplacian, lambda_max):
    n = laplacian.shape[0]
    return (sp.csr_matrix(laplacian) * (2.0 / lambda_max) - sp.identity(n, format="csr")).tocsr()


def chebyshev_matrix(laplacian, coeffs: ChebyshevCoeffs, probe=None) -> sp.csr_matrix:
    """Matrix polynomial ``c_0/2 I + sum_i c_i T_i(L~)`` by the three-term recurrence."""
    n = laplacian.shape[0]
    lt = _rescaled(laplacian, coeffs.lambda_max)
    c = coeffs.coeffs
    t_prev = sp.identity(n, format="csr")
    t_cur = lt
    result = t_prev * (0.5 * c[0]) + t_cur * c[1]
    for i in range(2, coeffs.order + 1):
        t_next = (_matmul(lt, t_cur, probe) * 2.0 - t_prev).tocsr()
        result = result + t_next * c[i]
        t_prev, t_cur = t_cur, t_next
    return sp.csr_matrix(result)


def chebyshev_apply(laplacian, coeffs: ChebyshevCoeffs, x, probe=None) -> np.ndarray:
    """Apply the polynomial filter to a signal ``x`` without forming the matrix.

    Costs ``M`` products of the sparse rescaled Laplacian with ``x``.
    """
    lt = _rescaled(laplacian, coeffs.lambda_max)
    c = coeffs.coeffs
    x = np.asarray(x, dtype=np.float64)
    t_prev = x
    t_cur = _matmul(lt, x, probe)
    out = 0.5 * c[0] * t_prev + c[1] * t_cur
    for i in range(2, coeffs.order + 1):
        t_next = 2.0 * _matmul(lt, t_cur, probe) - t_prev
        out = out + c[i] * t_next
        t_prev, t_cur = t_cur, t_next
    return out


def _symmetric_csr(m):
    m = sp.csr_matrix(0.5 * (m + m.T))
    m.sort_indices()
    return m


def chebyshev_wavelets(
    ops: NormalizedOperators, s: float, order: int, t: float = 0.0,
    sign: str = "both", lambda_max: float = 2.0, probe=None,
) -> WaveletBasis:
    """Chebyshev approximation of the heat wavelets, no eigendecomposition.

    ``sign`` selects which kernels to evaluate: ``"forward"`` fills ``psi``
    (``exp(-s lam)``), ``"inverse"`` fills ``psi_inv`` (``exp(+s lam)``),
    ``"both"`` fills both. Unrequested fields are ``None``.
    """
    if sign not in ("forward", "inverse", "both"):
        raise ValueError(f"sign must be 'forward', 'inverse' or 'both', got {sign!r}")
    psi = psi_inv = None
    if sign in ("forward", "both"):
        c = chebyshev_coefficients(s, order, "forward", lambda_max)
        psi = sparsify(_symmetric_csr(chebyshev_matrix(ops.laplacian, c, probe)), t)
    if sign in ("inverse", "both"):
        c = chebyshev_coefficients(s, order, "inverse", lambda_max)
        psi_inv = sparsify(_symmetric_csr(chebyshev_matrix(ops.laplacian, c, probe)), t)
    return WaveletBasis(psi, psi_inv, scale=float(s), threshold=float(t), provenance="chebyshev", order=int(order))


# --- frequency split ------------------------------------------------------------


class FrequencySplit:
    """Wavelet basis split along the ascending spectrum at index ``d``.

    In spectral coordinates the wavelet ``psi`` acts on eigenvector ``u_i``
    as ``psi u_i``; its columns are naturally ordered by eigenvalue. The low
    block keeps the first ``d`` of those columns (``psi U_L``, shape n x d)
    and the matching rows of the inverse (``U_L^T psi_inv``, shape d x n).
    At ``t = 0`` this makes ``psi_low @ psi_inv_low = U_L U_L^T``.
    """

    def __init__(self, basis: WaveletBasis, d: int):
        self.basis = basis
        self.d = d
        u = basis.eig.eigenvectors
        self._u_low = u[:, :d]
        self._u_high = u[:, d:]

    @property
    def n(self) -> int:
        return self.basis.eig.n

    @cached_property
    def psi_low(self) -> np.ndarray:
        return np.asarray(self.basis.psi @ self._u_low)

    @cached_property
    def psi_inv_low(self) -> np.ndarray:
        return np.asarray((self.basis.psi_inv.T @ self._u_low).T)

    @cached_property
    def psi_high(self) -> np.ndarray:
        return np.asarray(self.basis.psi @ self._u_high)

    @cached_property
    def psi_inv_high(self) -> np.ndarray:
        return np.asarray((self.basis.psi_inv.T @ self._u_high).T)

    def low_operator(self) -> np.ndarray:
        return self.psi_low @ self.psi_inv_low

    def high_operator(self, low=None) -> np.ndarray:
        # psi P_H psi^-1 = psi psi^-1 - psi P_L psi^-1; avoids the n x (n-d) blocks
        low = self.low_operator() if low is None else low
        full = self.basis.psi @ self.basis.psi_inv
        full = full.toarray() if sp.issparse(full) else np.asarray(full)
        return full - low


def split_frequencies(basis: WaveletBasis, d: int) -> FrequencySplit:
    if basis.provenance != "exact" or basis.eig is None:
        raise ValueError(
            "frequency splitting needs an exact (eigendecomposed) basis; "
            "use chebyshev_branch_operators for the Chebyshev path"
        )
    n = basis.eig.n
    if int(d) != d or not 1 <= d < n:
        raise ValueError(f"split index d must satisfy 1 <= d < {n}, got {d}")
    return FrequencySplit(basis, int(d))


def spectral_convolution(basis, kernel, x, inverse=None):
    """``basis diag(kernel) basis^-1 x``; ``inverse`` defaults to ``basis.T``."""
    inverse = basis.T if inverse is None else inverse
    return basis @ (np.asarray(kernel)[:, None] * (inverse @ x))


def split_convolution(basis, kernel, x, d, agg="sum", inverse=None):
    """Two-branch version of ``spectral_convolution`` split at column ``d``."""
    inverse = basis.T if inverse is None else inverse
    kernel = np.asarray(kernel)
    low = spectral_convolution(basis[:, :d], kernel[:d], x, inverse[:d])
    high = spectral_convolution(basis[:, d:], kernel[d:], x, inverse[d:])
    if agg == "sum":
        return low + high
    if agg == "mean":
        return 0.5 * (low + high)
    if agg == "max":
        return np.maximum(low, high)
    raise ValueError(f"unknown aggregation {agg!r}")


# --- branch operators -------------------------------------------------------------


@dataclass(frozen=True)
class BranchOperators:
    """Precomputed low/high operators fed to every model layer."""

    low: object = field(repr=False)
    high: object = field(repr=False)
    provenance: str
    d: int | None = None

    @property
    def n(self) -> int:
        return self.low.shape[0]


def exact_branch_operators(eig: EigenSystem, s: float, t: float, d: int) -> BranchOperators:
    split = split_frequencies(heat_wavelets(eig, s, t), d)
    low = split.low_operator()
    return BranchOperators(low=low, high=split.high_operator(low), provenance="exact", d=split.d)


def chebyshev_branch_operators(
    ops: NormalizedOperators, s: float, order: int, t: float = 0.0, lambda_max: float = 2.0, probe=None,
) -> BranchOperators:
    """Complementary Chebyshev kernels: low ``exp(-s lam)``, high ``exp(-s (lam_max - lam))``."""
    low_c = chebyshev_coefficients(s, order, "forward", lambda_max)
    high_c = chebyshev_coefficients(s, order, "high", lambda_max)
    low = sparsify(_symmetric_csr(chebyshev_matrix(ops.laplacian, low_c, probe)), t)
    high = sparsify(_symmetric_csr(chebyshev_matrix(ops.laplacian, high_c, probe)), t)
    return BranchOperators(low, high, provenance=f"chebyshev({order})")


# --- band reconstruction ------------------------------------------------------


def band_reconstruct(eig: EigenSystem, d: int, mode: str, target: str = "laplacian") -> np.ndarray:
    """Rebuild a matrix from one frequency band of the spectrum.

    ``mode="low"`` keeps eigenpairs ``0..d-1``, ``"high"`` keeps ``d..n-1``.
    ``target="laplacian"`` gives ``U_B diag(lam_B) U_B^T`` (bands sum to L);
    ``target="adjacency"`` gives ``U_B diag(1 - lam_B) U_B^T`` (bands sum to
    the normalized adjacency), whose off-diagonal entries are reconstructed
    edge weights.
    """
    n = eig.n
    if int(d) != d or not 1 <= d < n:
        raise ValueError(f"band split d must satisfy 1 <= d < {n}, got {d}")
    if mode == "low":
        band = slice(0, int(d))
    elif mode == "high":
        band = slice(int(d), n)
    else:
        raise ValueError(f"mode must be 'low' or 'high', got {mode!r}")
    if target == "laplacian":
        values = eig.eigenvalues[band]
    elif target == "adjacency":
        values = 1.0 - eig.eigenvalues[band]
    else:
        raise ValueError(f"target must be 'laplacian' or 'adjacency', got {target!r}")
    u = eig.eigenvectors[:, band]
    m = (u * values) @ u.T
    return 0.5 * (m + m.T)
