"""Independent reference computations used to freeze expected values.

Nothing here imports the package's numerical kernels: choice shares are
counted from utilities written out by hand, normal probabilities come
from scipy.stats, and Radon integrals from adaptive quadrature.
"""

import numpy as np
from scipy import integrate, stats


def gumbel(rng, size):
    return -np.log(-np.log(rng.random(size)))


def logit_shares_by_simulation(v, n, seed=0):
    """Shares over (outside, goods) with Gumbel tastes on inside goods only."""
    rng = np.random.default_rng(seed)
    v = np.asarray(v, dtype=float)
    u = v + gumbel(rng, (n, v.size))
    best = u.max(axis=1)
    arg = u.argmax(axis=1)
    out = np.zeros(v.size + 1)
    out[0] = np.mean(best <= 0)
    for j in range(v.size):
        out[j + 1] = np.mean((best > 0) & (arg == j))
    return out


def bundle_shares_by_simulation(v1, v2, delta, n, seed=0, cov=None):
    """Shares of (0,0), (1,0), (0,1), (1,1) with normal tastes."""
    rng = np.random.default_rng(seed)
    cov = np.eye(2) if cov is None else np.asarray(cov)
    e = rng.multivariate_normal(np.zeros(2), cov, size=n)
    u1, u2 = v1 + e[:, 0], v2 + e[:, 1]
    util = np.stack([np.zeros(n), u1, u2, u1 + u2 + delta], axis=1)
    idx = util.argmax(axis=1)
    return np.bincount(idx, minlength=4) / n


def multiunit_shares_by_simulation(v1, v2, d11, d20, d21, n, seed=0):
    """Shares over (0,0), (1,0), (0,1), (1,1), (2,0), (2,1)."""
    rng = np.random.default_rng(seed)
    e = rng.standard_normal((n, 2))
    u1, u2 = v1 + e[:, 0], v2 + e[:, 1]
    util = np.stack([np.zeros(n), u1, u2, u1 + u2 + d11, 2 * u1 + d20, 2 * u1 + u2 + d21], 1)
    return np.bincount(util.argmax(axis=1), minlength=6) / n


def quadrant_probability(h1, h2, rho):
    """P(Z1 < h1, Z2 < h2) for standard normals with correlation rho."""
    return float(stats.multivariate_normal([0, 0], [[1, rho], [rho, 1]]).cdf([h1, h2]))


def bundle_nonnegative_branch(h2, h3):
    """P(e1 < h2, e1 + e2 < h3) by 1-d quadrature over e1."""
    f = lambda e1: stats.norm.pdf(e1) * stats.norm.cdf(h3 - e1)  # noqa: E731
    return integrate.quad(f, -np.inf, h2)[0]


def normal_projection(mean, cov, w, u):
    """Density and CDF of w'theta at u for theta ~ N(mean, cov)."""
    w = np.asarray(w, dtype=float)
    m = w @ np.asarray(mean, dtype=float)
    s = np.sqrt(w @ np.asarray(cov, dtype=float) @ w)
    return stats.norm.pdf(u, m, s), stats.norm.cdf(u, m, s)


def line_integral_2d(pdf, w, u, reach=12.0):
    """Integral of a 2-d density along the line {x : w'x = u}."""
    w = np.asarray(w, dtype=float)
    perp = np.array([-w[1], w[0]])
    f = lambda s: float(np.ravel(pdf(u * w + s * perp))[0])  # noqa: E731
    return integrate.quad(f, -reach, reach, limit=200)[0]


def normal_pdf_grid(mean, cov, axes):
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return stats.multivariate_normal(mean, cov).pdf(mesh)
