"""Central finite-difference gradient checking."""
import numpy as np


def relative_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def numerical_gradient(fn, x, h=1e-5):
    """Central differences of scalar ``fn()`` w.r.t. every element of ``x``.

    ``x`` is perturbed in place and restored, so ``fn`` should read it by
    reference (closure over the array).
    """
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(fn())
        flat[i] = orig - h
        f_minus = float(fn())
        flat[i] = orig
        out[i] = (f_plus - f_minus) / (2 * h)
    return grad


def grad_check(fn, inputs, analytic, h=1e-5):
    """Max relative error between ``analytic`` gradients and central differences.

    Parameters
    ----------
    fn : callable
        Zero-argument closure returning a scalar; it must read the arrays in
        ``inputs`` by reference.
    inputs : sequence of ndarray
        Arrays to perturb.
    analytic : sequence of ndarray
        Analytic gradients, parallel to ``inputs``.
    """
    worst = 0.0
    for x, g in zip(inputs, analytic):
        num = numerical_gradient(fn, x, h)
        if num.size:
            worst = max(worst, float(relative_error(g, num).max()))
    return worst
