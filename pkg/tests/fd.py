"""Central finite-difference oracle shared by the gradient tests."""
import numpy as np

from lsf import autodiff as ad

H = 1e-5


def numeric_grad(f, x: np.ndarray, h: float = H) -> np.ndarray:
    """d f(x) / dx by central differences; f maps an array to a float."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def analytic_grad(build, x: np.ndarray) -> np.ndarray:
    """Gradient of the scalar tensor ``build(leaf)`` with respect to the leaf."""
    leaf = ad.tensor(x, requires_grad=True)
    ad.backward(build(leaf))
    return np.zeros_like(x) if leaf.grad is None else leaf.grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def check(build, x: np.ndarray, h: float = H) -> float:
    """Relative error between backward() and central differences of ``build``."""
    num = numeric_grad(lambda v: build(ad.constant(v)).item(), x, h)
    return rel_error(analytic_grad(build, x), num)
