"""Independent reference implementations used only by the tests.

None of these share code with the library: the eigen oracle is cyclic
Jacobi, Bessel values come from mpmath, and Chebyshev coefficients come
from interpolation at Chebyshev nodes rather than the Bessel identity.
"""

import mpmath
import numpy as np


def jacobi_eigh(a, tol=1e-14, max_sweeps=100):
    """Cyclic Jacobi rotations; returns ascending eigenvalues and vectors."""
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    lam = np.diag(a)
    order = np.argsort(lam, kind="stable")
    return lam[order], v[:, order]


def bessel_i_mp(order, x, dps=40):
    with mpmath.workdps(dps):
        return float(mpmath.besseli(order, x))


def chebyshev_fit(func, order, lambda_max=2.0, nodes=256):
    """Coefficients ``c_k`` (with ``c_0`` doubled) of ``func`` on ``[0, lambda_max]``."""
    c = np.polynomial.chebyshev.chebinterpolate(
        lambda x: func((x + 1.0) * lambda_max / 2.0), nodes
    )
    c = c[: order + 1].copy()
    c[0] *= 2.0
    return c


def dense_heat(laplacian, s):
    lam, u = jacobi_eigh(laplacian)
    return (u * np.exp(-s * lam)) @ u.T, (u * np.exp(s * lam)) @ u.T


def central_difference(f, param, eps):
    """Numerical gradient of scalar ``f()`` with respect to array ``param`` (in place)."""
    grad = np.zeros_like(param)
    it = np.nditer(param, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = param[idx]
        param[idx] = old + eps
        up = f()
        param[idx] = old - eps
        down = f()
        param[idx] = old
        grad[idx] = (up - down) / (2.0 * eps)
    return grad


def relative_error(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def model_gradient_errors(model, h, labels, mask, eps=1e-6, dropout_seed=None):
    """Relative error per parameter array between analytic and central-difference gradients.

    With ``dropout_seed`` the model runs in training mode and every evaluation
    replays the same dropout masks.
    """
    from spgat.model import masked_softmax_xent

    def rng():
        return None if dropout_seed is None else np.random.default_rng(dropout_seed)

    training = dropout_seed is not None

    def loss():
        logits, _ = model.forward(h, training=training, rng=rng())
        return masked_softmax_xent(logits, labels, mask)[0]

    _, grads = model.loss_and_grads(h, labels, mask, training=training, rng=rng())
    return {
        k: relative_error(grads[k], central_difference(loss, p, eps))
        for k, p in model.parameters().items()
    }


def max_margin_violation(model, h):
    """Smallest distance of any MAX selection or ReLU input from its kink."""
    out = np.inf
    x = h
    for layer in model.layers:
        x, tape = layer.forward(x)
        a_low, a_high = tape.alphas
        gap = np.abs(a_low * tape.y_low - a_high * tape.y_high)
        out = min(out, gap.min() if layer.agg == "max" else np.inf)
        if layer.activation == "relu":
            out = min(out, np.abs(tape.pre).min())
    return out
