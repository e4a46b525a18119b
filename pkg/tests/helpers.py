"""Shared numerical oracles for the test suite."""
import numpy as np


def central_diff(f, x, eps=1e-5):
    """Central finite differences of a scalar function over a flat array.
    Mutates x transiently; restores every entry."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + eps
        fp = f()
        x.flat[i] = orig - eps
        fm = f()
        x.flat[i] = orig
        grad.flat[i] = (fp - fm) / (2.0 * eps)
    return grad


def rel_err(analytic, numeric, floor=1e-8):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def cosine(a, b):
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def random_soft_labels(rng, n, c):
    p = rng.random((n, c)) + 1e-3
    return p / p.sum(axis=1, keepdims=True)
