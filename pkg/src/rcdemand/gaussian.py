"""Normal-distribution helpers: bivariate CDF and quadrature nodes."""

import functools

import numpy as np
from scipy.special import ndtr, owens_t

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def norm_pdf(x):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


def norm_cdf(x):
    return ndtr(x)


def bvn_cdf(h, k, rho):
    """P(X <= h, Y <= k) for a standard bivariate normal with correlation rho.

    Uses Owen's T function, which is accurate to roughly machine precision,
    and handles infinite limits and |rho| = 1 explicitly. Broadcasts over
    all three arguments.
    """
    h, k, rho = np.broadcast_arrays(
        np.asarray(h, dtype=float), np.asarray(k, dtype=float), np.asarray(rho, dtype=float)
    )
    out = np.empty(h.shape)
    if np.any(np.abs(rho) > 1):
        raise ValueError("correlation must lie in [-1, 1]")

    upper = rho >= 1
    lower = rho <= -1
    out[upper] = ndtr(np.minimum(h[upper], k[upper]))
    out[lower] = np.maximum(0.0, ndtr(h[lower]) - ndtr(-k[lower]))

    reg = ~(upper | lower)
    hh, kk, rr = h[reg], k[reg], rho[reg]
    res = np.empty(hh.shape)
    inf_h, inf_k = np.isinf(hh), np.isinf(kk)
    fin = ~(inf_h | inf_k)
    # infinite limits collapse to a univariate CDF
    res[inf_h] = np.where(hh[inf_h] > 0, ndtr(kk[inf_h]), 0.0)
    only_k = inf_k & ~inf_h
    res[only_k] = np.where(kk[only_k] > 0, ndtr(hh[only_k]), 0.0)

    a, b, r = hh[fin], kk[fin], rr[fin]
    # a zero limit is nudged so that the Owen's T arguments stay defined
    a = np.where(a == 0.0, 1e-300, a)
    b = np.where(b == 0.0, 1e-300, b)
    s = np.sqrt(1.0 - r * r)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        ta = owens_t(a, (b - r * a) / (a * s))
        tb = owens_t(b, (a - r * b) / (b * s))
    beta = np.where(np.signbit(a) != np.signbit(b), 0.5, 0.0)
    res[fin] = 0.5 * ndtr(a) + 0.5 * ndtr(b) - ta - tb - beta
    out[reg] = res
    return np.clip(out, 0.0, 1.0)


@functools.lru_cache(maxsize=None)
def _legendre(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    x.flags.writeable = w.flags.writeable = False
    return x, w


def gauss_legendre(n):
    """Nodes and weights on [0, 1]."""
    return _legendre(int(n))


def gauss_hermite_normal(n):
    """Nodes and weights integrating against the standard normal density."""
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / np.sqrt(2.0 * np.pi)
