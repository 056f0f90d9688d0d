"""Small input-validation helpers in the spirit of ``sklearn.utils.validation``."""
import numpy as np

from .exceptions import ContractError

AXIS_NAMES = ("batch", "channels", "time")


def check_tensor(x, ndim=3, name="input", dtype=None):
    """Return ``x`` as a float ndarray with ``ndim`` axes or raise ContractError."""
    x = np.asarray(x)
    if x.ndim != ndim:
        raise ContractError(f"{name}: expected {ndim} axes, got shape {x.shape}")
    if dtype is not None:
        x = x.astype(dtype, copy=False)
    elif x.dtype.kind != "f":
        x = x.astype(np.float64)
    return x


def check_axis(actual, expected, axis, name="input"):
    if actual != expected:
        label = AXIS_NAMES[axis] if isinstance(axis, int) and axis < 3 else axis
        raise ContractError(f"{name}: {label} axis has extent {actual}, expected {expected}")


def check_finite(x, name="input"):
    if not np.all(np.isfinite(x)):
        raise ContractError(f"{name} contains non-finite values")
    return x


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_group_index(g, batch, n_groups):
    """Broadcast a scalar or per-sample group index to an int array of length ``batch``."""
    g = np.asarray(g, dtype=np.int64)
    if g.ndim == 0:
        g = np.full(batch, int(g), dtype=np.int64)
    if g.shape != (batch,):
        raise ContractError(f"group index must be a scalar or have length {batch}, got {g.shape}")
    if g.size and (g.min() < 0 or g.max() >= n_groups):
        raise ContractError(f"group index out of range [0, {n_groups}): {np.unique(g).tolist()}")
    return g
