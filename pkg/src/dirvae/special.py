"""Scalar special functions on the positive real line, vectorized over numpy arrays.

Every function accepts a float or an ndarray and returns the same kind.
Gamma-family functions reject non-positive or non-finite input with
:class:`DomainError`.
"""

import math

import numpy as np

EULER_GAMMA = 0.57721566490153286061
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# Lanczos approximation, g = 7, n = 9
_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)

# asymptotic series coefficients, valid once x >= _ASYMPTOTIC_MIN
_ASYMPTOTIC_MIN = 6.0
_DIGAMMA_SERIES = (
    1.0 / 12,
    -1.0 / 120,
    1.0 / 252,
    -1.0 / 240,
    1.0 / 132,
    -691.0 / 32760,
    1.0 / 12,
)
_DIGAMMA_TINY = 1e-4
_ZETA2 = math.pi**2 / 6
_ZETA3 = 1.2020569031595942854
_ZETA4 = math.pi**4 / 90
_TRIGAMMA_SERIES = (
    1.0 / 6,
    -1.0 / 30,
    1.0 / 42,
    -1.0 / 30,
    5.0 / 66,
    -691.0 / 2730,
    7.0 / 6,
)


class DomainError(ValueError):
    """Argument outside the domain of a special function."""

    category = "domain"


def _positive(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name}: non-finite argument")
    if np.any(arr <= 0.0):
        raise DomainError(f"{name}: argument must be > 0, got min {arr.min()!r}")
    return arr


def _finite(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name}: non-finite argument")
    return arr


def _out(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def _lanczos_ln_gamma(x):
    # valid for x >= 0.5
    z = x - 1.0
    acc = np.full_like(z, _LANCZOS_COEF[0])
    for i, c in enumerate(_LANCZOS_COEF[1:], start=1):
        acc += c / (z + i)
    t = z + _LANCZOS_G + 0.5
    return HALF_LOG_2PI + (z + 0.5) * np.log(t) - t + np.log(acc)


def ln_gamma(x):
    """Natural log of the Gamma function for x > 0."""
    arr = _positive(x, "ln_gamma")
    small = arr < 0.5
    shifted = np.where(small, arr + 1.0, arr)
    res = _lanczos_ln_gamma(shifted)
    # ln G(x) = ln G(x + 1) - ln x
    res = np.where(small, res - np.log(arr), res)
    # Gamma(1) = Gamma(2) = 1 exactly; the series leaves ~1e-15 there
    res = np.where((arr == 1.0) | (arr == 2.0), 0.0, res)
    return _out(res, x)


def digamma(x):
    """Logarithmic derivative of the Gamma function for x > 0."""
    arr = _positive(x, "digamma")
    shift = np.zeros_like(arr)
    y = arr.copy()
    while True:
        low = y < _ASYMPTOTIC_MIN
        if not low.any():
            break
        shift -= np.where(low, 1.0 / y, 0.0)
        y = np.where(low, y + 1.0, y)
    inv2 = 1.0 / (y * y)
    poly = np.zeros_like(y)
    for c in reversed(_DIGAMMA_SERIES):
        poly = poly * inv2 + c
    res = np.log(y) - 0.5 / y - inv2 * poly + shift
    # recurrence loses the last ulp near 0; Taylor series around 0 instead
    tiny = arr < _DIGAMMA_TINY
    if tiny.any():
        # extended precision keeps -1/x - gamma correctly rounded
        t = arr.astype(np.longdouble)
        series = -1.0 / t - np.longdouble(EULER_GAMMA) + t * (_ZETA2 - t * (_ZETA3 - t * _ZETA4))
        res = np.where(tiny, series.astype(np.float64), res)
    return _out(res, x)


def trigamma(x):
    """Derivative of :func:`digamma` for x > 0."""
    arr = _positive(x, "trigamma")
    shift = np.zeros_like(arr)
    y = arr.copy()
    while True:
        low = y < _ASYMPTOTIC_MIN
        if not low.any():
            break
        shift += np.where(low, 1.0 / (y * y), 0.0)
        y = np.where(low, y + 1.0, y)
    inv = 1.0 / y
    inv2 = inv * inv
    poly = np.zeros_like(y)
    for c in reversed(_TRIGAMMA_SERIES):
        poly = poly * inv2 + c
    res = inv + 0.5 * inv2 + inv * inv2 * poly + shift
    return _out(res, x)


def log_sum_exp(values, axis=None):
    """ln(sum(exp(values))) with the max-shift trick.

    With ``axis=None`` the whole array is reduced and a float is returned.
    """
    arr = _finite(values, "log_sum_exp")
    if arr.size == 0:
        raise ValueError("log_sum_exp: empty input")
    m = np.max(arr, axis=axis, keepdims=True)
    res = np.log(np.sum(np.exp(arr - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(res.reshape(()))
    return np.squeeze(res, axis=axis)


def softplus(x):
    arr = _finite(x, "softplus")
    res = np.maximum(arr, 0.0) + np.log1p(np.exp(-np.abs(arr)))
    return _out(res, x)


def stable_sigmoid(x):
    arr = _finite(x, "stable_sigmoid")
    e = np.exp(-np.abs(arr))
    res = np.where(arr >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _out(res, x)


def bce_with_logits(logit, target):
    """Bernoulli negative log-likelihood of ``target`` given a logit.

    Uses softplus(l) - t * l, which equals
    -[t log sigmoid(l) + (1 - t) log(1 - sigmoid(l))].
    """
    lg = _finite(logit, "bce_with_logits")
    t = _finite(target, "bce_with_logits")
    # subtract t*l before adding the small log1p term to avoid cancellation
    res = (np.maximum(lg, 0.0) - t * lg) + np.log1p(np.exp(-np.abs(lg)))
    if np.ndim(logit) == 0 and np.ndim(target) == 0:
        return float(res)
    return res
