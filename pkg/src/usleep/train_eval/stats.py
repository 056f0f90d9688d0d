"""Paired t-test with a self-contained Student t distribution."""
import math
from dataclasses import dataclass

import numpy as np

from ..exceptions import ContractError

_FPMIN = 1e-300


def _betacf(a, b, x, eps=1e-16, max_iter=500):
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _FPMIN else _FPMIN)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _FPMIN else _FPMIN)
        c = 1.0 + aa / c
        c = c if abs(c) > _FPMIN else _FPMIN
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _FPMIN else _FPMIN)
        c = 1.0 + aa / c
        c = c if abs(c) > _FPMIN else _FPMIN
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a, b, x):
    """Regularized incomplete beta ``I_x(a, b)``."""
    if not 0.0 <= x <= 1.0:
        raise ContractError(f"x must lie in [0, 1], got {x}")
    if x in (0.0, 1.0):
        return x
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    # the fraction converges fast for x below the mean; use the symmetry otherwise
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t, df):
    """Upper tail ``P(T > t)`` of Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + t * t))
    return tail if t > 0 else 1.0 - tail


@dataclass
class TTestResult:
    t: float
    p: float
    df: int
    mean_diff: float
    degenerate: bool = False


def paired_ttest(a, b, sides="two") -> TTestResult:
    """Paired t-test of ``a - b``.

    ``sides="one"`` tests the alternative ``mean(a - b) > 0``. Zero variance
    of the differences is flagged as degenerate (t = 0, p = 1 when all
    differences vanish, otherwise t = +-inf).
    """
    if sides not in ("one", "two"):
        raise ContractError(f"sides must be 'one' or 'two', got {sides!r}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError(f"paired samples must be equal-length vectors, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise ContractError(f"paired t-test needs n >= 2, got {n}")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, df, 0.0, degenerate=True)
        t = math.copysign(math.inf, mean)
        p = 0.0 if (sides == "two" or t > 0) else 1.0
        return TTestResult(t, p, df, mean, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    if sides == "one":
        return TTestResult(t, t_sf(t, df), df, mean)
    # 2 * P(T > |t|) straight from the incomplete beta keeps tiny p values exact
    return TTestResult(t, betainc(df / 2.0, 0.5, df / (df + t * t)), df, mean)
