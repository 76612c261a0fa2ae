"""Aggregate demand: Monte Carlo shares and tastes-integrated closed forms.

Shares are arrays whose last axis follows ``ModelSpec.labels`` (outside
option or the (0, 0) bundle first). Raw Monte Carlo shares count individual
choices; smoothed shares integrate the tastes for products (or, in the
pure characteristics model, the price coefficient) analytically for every
coefficient draw, which makes them smooth in the vertical indices.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.special import logsumexp

from .densities import psd_cholesky
from .errors import DimensionError, SupportError
from .gaussian import bvn_cdf, gauss_legendre, norm_cdf, norm_pdf
from .model import (
    CoefficientDraws,
    ProductMenu,
    choose,
    combine_alternatives,
    index_values,
    sample_draws,
)

DEFAULT_DRAWS = 200_000


def conditional_logit_shares(v):
    """Shares when every good carries an i.i.d. Gumbel taste and the outside none.

    ``v`` holds the deterministic indices of the inside goods along the last
    axis; the result prepends the outside share. The outside option wins
    with probability exp(-sum_k e^{v_k}).
    """
    v = np.asarray(v, dtype=float)
    lse = logsumexp(v, axis=-1, keepdims=True)
    with np.errstate(over="ignore"):
        total = np.exp(lse)
    outside = np.exp(-total)
    inside = np.exp(v - lse) * (-np.expm1(-total))
    return np.concatenate([outside, inside], axis=-1)


def _cov_parts(cov):
    cov = np.eye(2) if cov is None else np.asarray(cov, dtype=float)
    if cov.shape != (2, 2):
        raise DimensionError("eps_cov", "expected a 2 x 2 covariance")
    if not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov).min() < -1e-12:
        raise ValueError("taste covariance is not positive semidefinite")
    s1, s2 = np.sqrt(cov[0, 0]), np.sqrt(cov[1, 1])
    if s1 == 0 or s2 == 0:
        raise ValueError("taste variances must be positive")
    return s1, s2, cov[0, 1] / (s1 * s2)


def bundle_pair_probability(h1, h2, h3, delta_sign, cov=None):
    """Two-constraint bundle probability with jointly normal tastes.

    For a negative bundle effect this is P(eps1 < h1, eps2 < h2); otherwise
    it is P(eps1 < h2, eps1 + eps2 < h3), evaluated through the bivariate
    normal CDF of the pair (eps1, eps1 + eps2).
    """
    s1, s2, rho = _cov_parts(cov)
    if delta_sign < 0:
        return bvn_cdf(np.asarray(h1, float) / s1, np.asarray(h2, float) / s2, rho)
    var_sum = s1 * s1 + 2 * rho * s1 * s2 + s2 * s2
    if var_sum <= 0:
        raise ValueError("eps1 + eps2 is degenerate")
    s_sum = np.sqrt(var_sum)
    corr = (s1 * s1 + rho * s1 * s2) / (s1 * s_sum)
    return bvn_cdf(np.asarray(h2, float) / s1, np.asarray(h3, float) / s_sum, corr)


def bundle_choice_probabilities(v1, v2, delta, cov=None, nodes=12):
    """Probabilities of (0,0), (1,0), (0,1), (1,1) given indices and bundle effect.

    With U_j = v_j + eps_j and eps ~ N(0, cov), the chosen bundle maximizes
    {0, U1, U2, U1 + U2 + delta}. Rectangles use the bivariate normal CDF;
    the two triangular pieces are integrated by Gauss-Legendre over U1.
    """
    s1, s2, rho = _cov_parts(cov)
    if abs(rho) >= 1:
        raise ValueError("tastes must not be perfectly correlated")
    v1, v2, delta = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (v1, v2, delta)))
    sc = s2 * np.sqrt(1 - rho * rho)

    def rect(a, b):
        if rho == 0:
            return norm_cdf((a - v1) / s1) * norm_cdf((b - v2) / s2)
        return bvn_cdf((a - v1) / s1, (b - v2) / s2, rho)

    def f1(a):
        return norm_cdf((a - v1) / s1)

    def f2(b):
        return norm_cdf((b - v2) / s2)

    gap = np.abs(delta)
    pos = delta >= 0
    x, w = gauss_legendre(nodes)
    lo = np.where(pos, -gap, 0.0)[..., None]
    u1 = lo + gap[..., None] * x
    upper = np.where(pos, 0.0, gap)[..., None]
    lower = np.where(pos[..., None], -gap[..., None] - u1, u1)
    dens = norm_pdf((u1 - v1[..., None]) / s1) / s1
    if rho == 0:
        # the fixed edge of the triangle gives a CDF term constant in U1
        fixed = np.where(pos, 0.0, gap)
        top = norm_cdf((fixed - v2) / s2)
        moving = np.where(pos[..., None], -gap[..., None] - u1, u1)
        tri = gap * (top * np.sum(w * dens, axis=-1)
                     - np.sum(w * dens * norm_cdf((moving - v2[..., None]) / s2), axis=-1))
    else:
        cmean = v2[..., None] + rho * s2 / s1 * (u1 - v1[..., None])
        inner = norm_cdf((upper - cmean) / sc) - norm_cdf((lower - cmean) / sc)
        tri = gap * np.sum(w * dens * inner, axis=-1)

    r00 = rect(0.0, 0.0)
    p00 = np.where(pos, r00 - tri, r00)
    p10 = np.where(pos, f2(-gap) - rect(0.0, -gap), f2(gap) - rect(0.0, gap) - tri)
    p01_pos = f1(-gap) - rect(-gap, 0.0)
    p11_neg = 1.0 - f1(gap) - f2(gap) + rect(gap, gap)
    p01 = np.where(pos, p01_pos, 1.0 - p00 - p10 - p11_neg)
    p11 = np.where(pos, 1.0 - p00 - p10 - p01_pos, p11_neg)
    out = np.clip(np.stack([p00, p10, p01, p11], axis=-1), 0.0, 1.0)
    return out / out.sum(axis=-1, keepdims=True)


def envelope_choice_probabilities(v1, v2, intercepts, cov=None):
    """Exact choice probabilities for menus of (y1, y2) with y2 in {0, 1}.

    The utility of alternative (y1, y2) is y1 U1 + y2 U2 + c_(y1,y2) with
    (U1, U2) ~ N((v1, v2), cov). ``intercepts`` has shape ``(..., Y + 1, 2)``
    indexed by [y1, y2]. Along U1 the best alternative within each y2
    class is piecewise constant, with breakpoints at pairwise line
    crossings; on each piece, class y2 = 1 wins iff U2 - k U1 exceeds a
    constant, a bivariate normal rectangle.

    Returns probabilities of shape ``(..., Y + 1, 2)``.
    """
    s1, s2, rho = _cov_parts(cov)
    c = np.asarray(intercepts, dtype=float)
    ny = c.shape[-2]
    v1, v2 = np.broadcast_arrays(np.asarray(v1, float), np.asarray(v2, float))
    c = np.broadcast_to(c, v1.shape + (ny, 2))
    slopes = np.arange(ny, dtype=float)

    crossings = []
    for cls in range(2):
        for a in range(ny):
            for b in range(a + 1, ny):
                crossings.append((c[..., a, cls] - c[..., b, cls]) / (b - a))
    brk = np.sort(np.stack(crossings, axis=-1), axis=-1)
    inf = np.full(v1.shape + (1,), np.inf)
    edges = np.concatenate([-inf, brk, inf], axis=-1)
    lo, hi = edges[..., :-1], edges[..., 1:]
    mid = np.where(np.isinf(lo), hi - 1.0, np.where(np.isinf(hi), lo + 1.0, 0.5 * (lo + hi)))

    # lines: (..., piece, y1, class)
    lines = slopes[None, :, None] * mid[..., :, None, None] + c[..., None, :, :]
    win = np.argmax(lines, axis=-2)
    best = np.take_along_axis(lines, win[..., None, :], axis=-2)[..., 0, :]
    k = np.take(slopes, win[..., 0]) - np.take(slopes, win[..., 1])
    # class 1 wins iff U2 - k U1 exceeds the difference of winning intercepts
    const = best[..., 0] - best[..., 1] - k * mid
    # W = U2 - k U1 ~ N(v2 - k v1, var_w), cov(U1, W) = rho s1 s2 - k s1^2
    var_w = s2 * s2 - 2 * k * rho * s1 * s2 + k * k * s1 * s1
    sw = np.sqrt(var_w)
    r = (rho * s1 * s2 - k * s1 * s1) / (s1 * sw)
    mw = v2[..., None] - k * v1[..., None]
    zc = (const - mw) / sw
    zhi = (hi - v1[..., None]) / s1
    zlo = (lo - v1[..., None]) / s1
    p_piece = norm_cdf(zhi) - norm_cdf(zlo)
    p0 = np.clip(bvn_cdf(zhi, zc, r) - bvn_cdf(zlo, zc, r), 0.0, None)
    p0 = np.minimum(p0, p_piece)
    p1 = p_piece - p0

    out = np.zeros(v1.shape + (ny, 2))
    onehot0 = win[..., 0, None] == np.arange(ny)
    onehot1 = win[..., 1, None] == np.arange(ny)
    out[..., :, 0] = np.sum(onehot0 * p0[..., None], axis=-2)
    out[..., :, 1] = np.sum(onehot1 * p1[..., None], axis=-2)
    return out


def multiunit_choice_probabilities(v1, v2, d11, d20, d21, cov=None):
    """Probabilities over (0,0), (1,0), (0,1), (1,1), (2,0), (2,1)."""
    v1, v2, d11, d20, d21 = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (v1, v2, d11, d20, d21))
    )
    zero = np.zeros_like(v1)
    c = np.stack([np.stack([zero, zero], -1), np.stack([zero, d11], -1),
                  np.stack([d20, d21], -1)], axis=-2)
    p = envelope_choice_probabilities(v1, v2, c, cov)
    return np.stack([p[..., 0, 0], p[..., 1, 0], p[..., 0, 1], p[..., 1, 1],
                     p[..., 2, 0], p[..., 2, 1]], axis=-1)


def pcm_choice_probabilities(base, p, alpha_mean, alpha_sd):
    """Pure characteristics shares with the price coefficient integrated out.

    ``base`` is x2.beta2 + delta per good, shape ``(..., J)``; the price
    coefficient is N(alpha_mean, alpha_sd^2) given the other coefficients
    (``alpha_sd`` may be zero). Good j wins on an interval of alpha values
    cut out by the half lines alpha (p_j - p_k) > base_k - base_j.
    """
    base = np.asarray(base, dtype=float)
    p = np.broadcast_to(np.asarray(p, dtype=float), base.shape)
    zeros = np.zeros(base.shape[:-1] + (1,))
    cb = np.concatenate([zeros, base], axis=-1)
    cp = np.concatenate([zeros, p], axis=-1)
    dp = p[..., :, None] - cp[..., None, :]
    rhs = cb[..., None, :] - base[..., :, None]
    j = np.arange(base.shape[-1])
    dp[..., j, j + 1] = 0.0
    rhs[..., j, j + 1] = -np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = rhs / dp
    lower = np.max(np.where(dp > 0, bound, -np.inf), axis=-1)
    upper = np.min(np.where(dp < 0, bound, np.inf), axis=-1)
    blocked = np.any((dp == 0) & (rhs >= 0), axis=-1)
    m = np.asarray(alpha_mean, dtype=float)[..., None]
    s = np.asarray(alpha_sd, dtype=float)[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        smooth = norm_cdf((upper - m) / s) - norm_cdf((lower - m) / s)
    sharp = ((m > lower) & (m < upper)).astype(float)
    inside = np.where(s > 0, smooth, sharp)
    inside = np.where(blocked | (upper <= lower), 0.0, np.clip(inside, 0.0, 1.0))
    outside = np.clip(1.0 - inside.sum(axis=-1, keepdims=True), 0.0, 1.0)
    return np.concatenate([outside, inside], axis=-1)


def _normalize(shares):
    return shares / shares.sum(axis=-1, keepdims=True)


class DemandOracle:
    """Aggregate demand with draws fixed at construction.

    Every call reuses the same coefficient draws, so evaluations at
    different menus share common random numbers.

    Parameters
    ----------
    spec : ModelSpec
    density : CoefficientDensity
        Law of ``[beta2, alpha, bundle effects]``.
    n_draws : int
    seed : int
    smooth : bool
        Integrate tastes (or the price coefficient when ``sigma_eps = 0``)
        analytically instead of counting simulated choices.
    qmc : bool
        Use scrambled Halton points for the coefficient draws.
    support : tuple of array_like, optional
        Lower and upper bounds on each good's ``[x2, p, delta]``; menus
        outside are rejected by :meth:`check_support`.
    threads : int
        Worker threads over market blocks; results do not depend on it.
    """

    def __init__(self, spec, density, n_draws=DEFAULT_DRAWS, seed=0, *, smooth=True,
                 qmc=False, support=None, threads=1, block=2 ** 25):
        if n_draws < 1:
            raise ValueError("n_draws must be at least 1")
        if density.dim != spec.n_coefficients:
            raise DimensionError("density", f"expected dimension {spec.n_coefficients}, "
                                 f"got {density.dim}")
        self.spec, self.density = spec, density
        self.n_draws, self.seed, self.smooth, self.qmc = n_draws, seed, smooth, qmc
        self.support = None if support is None else tuple(np.asarray(b, float) for b in support)
        self.threads, self.block = max(1, int(threads)), block
        self.kind = self._kind()
        if self.kind == "pcm":
            theta, self._alpha_mean, self._alpha_sd = density.conditional_draws(
                n_draws, seed, spec.alpha_index, qmc=qmc)
            self.draws = CoefficientDraws.from_matrix(spec, theta)
        elif self.kind == "mc":
            self.draws = sample_draws(spec, density, n_draws, seed, qmc=qmc)
        else:
            theta = density.sample(n_draws, seed, qmc=qmc)
            self.draws = CoefficientDraws.from_matrix(spec, theta)

    def _kind(self):
        spec = self.spec
        if not self.smooth:
            return "mc"
        if spec.menu == "multinomial":
            if spec.sigma_eps == 0:
                return "pcm"
            if spec.eps_family != "gumbel":
                raise ValueError("smoothed multinomial shares need Gumbel tastes")
            return "logit"
        if spec.sigma_eps == 0 or spec.eps_family != "normal":
            raise ValueError(f"smoothed {spec.menu} shares need normal tastes with sigma_eps = 1")
        return spec.menu

    def check_support(self, menu):
        """Boolean mask over markets of menus inside the declared support."""
        if self.support is None:
            return np.ones(menu.batch_shape, dtype=bool)
        stacked = np.concatenate([menu.x2, menu.p[..., None], menu.delta[..., None]], axis=-1)
        lo, hi = self.support
        return np.all((stacked >= lo) & (stacked <= hi), axis=(-1, -2))

    def __call__(self, menu):
        menu = menu.check(self.spec)
        batch = menu.batch_shape
        m = int(np.prod(batch))
        flat = ProductMenu(menu.x2.reshape((m,) + menu.x2.shape[-2:]),
                           menu.p.reshape(m, menu.n_goods), menu.delta.reshape(m, menu.n_goods))
        per_market = self.n_draws * self.spec.n_alternatives * max(1, self.spec.n_goods) * 8
        step = max(1, self.block // per_market)
        blocks = [slice(a, min(m, a + step)) for a in range(0, m, step)]
        run = lambda sl: self._evaluate(flat.take(sl))  # noqa: E731
        if self.threads > 1 and len(blocks) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                parts = list(pool.map(run, blocks))
        else:
            parts = [run(sl) for sl in blocks]
        out = np.concatenate(parts, axis=0) if parts else np.empty((0, self.spec.n_alternatives))
        return out.reshape(batch + (self.spec.n_alternatives,))

    def _evaluate(self, menu):
        spec, d = self.spec, self.draws
        if self.kind == "mc" and spec.menu == "multinomial":
            return _multinomial_counts(d, menu, self.n_draws)
        if self.kind == "mc":
            u = combine_alternatives(spec, index_values(d, menu) + (
                d.eps if spec.sigma_eps else 0.0), d.delta_bundle)
            idx = choose(u)
            counts = np.stack([np.sum(idx == a, axis=-1) for a in range(spec.n_alternatives)], -1)
            return counts / self.n_draws
        if self.kind == "pcm":
            base = np.einsum("mjk,nk->mnj", menu.x2, d.beta2) + menu.delta[:, None, :]
            probs = pcm_choice_probabilities(base, menu.p[:, None, :], self._alpha_mean,
                                             self._alpha_sd)
            return _normalize(probs.mean(axis=1))
        if self.kind == "logit":
            return _normalize(_mean_logit_shares(d, menu, self.n_draws))
        v = index_values(d, menu)
        if self.kind == "bundles":
            probs = bundle_choice_probabilities(v[..., 0], v[..., 1], d.delta_bundle[:, 0],
                                                spec.eps_cov)
        else:
            b = d.delta_bundle
            probs = multiunit_choice_probabilities(v[..., 0], v[..., 1], b[:, 0], b[:, 1],
                                                   b[:, 2], spec.eps_cov)
        return _normalize(probs.mean(axis=1))


def _draw_major_indices(draws, menu, n):
    """Deterministic indices laid out as (draw, good, market) via one matrix product."""
    m, J = menu.p.shape
    chars = np.concatenate([menu.x2, menu.p[..., None]], axis=-1)  # (m, J, d)
    coef = np.concatenate([draws.beta2, draws.alpha[:, None]], axis=1)
    v = coef @ chars.transpose(1, 0, 2).reshape(J * m, -1).T
    return v.reshape(n, J, m) + menu.delta.T[None]


def _mean_logit_shares(draws, menu, n):
    """Draw-averaged :func:`conditional_logit_shares`, shape (markets, J + 1)."""
    v = _draw_major_indices(draws, menu, n)
    top = v.max(axis=1, keepdims=True)
    ex = np.exp(v - top)
    tot = ex.sum(axis=1, keepdims=True)
    with np.errstate(over="ignore"):
        mass = np.exp(top + np.log(tot))
    inside = ex * (-np.expm1(-mass) / tot)
    out = np.empty((menu.p.shape[0], v.shape[1] + 1))
    out[:, 1:] = inside.mean(axis=0).T
    out[:, 0] = np.exp(-mass).mean(axis=0)[0]
    return out


def _multinomial_counts(draws, menu, n):
    """Simulated multinomial shares; one matrix product gives all indices."""
    m, J = menu.p.shape
    v = _draw_major_indices(draws, menu, n)
    if draws.eps is not None:
        v += draws.eps[:, :, None]
    best = v[:, 0].copy()
    idx = np.zeros((n, m), dtype=np.int8)
    for j in range(1, J):
        better = v[:, j] > best
        idx[better] = j
        np.maximum(best, v[:, j], out=best)
    inside = best > 0
    out = np.empty((m, J + 1))
    for j in range(J):
        out[:, j + 1] = np.count_nonzero(inside & (idx == j), axis=0)
    out[:, 0] = n - out[:, 1:].sum(axis=1)
    return out / n


def aggregate_shares_mc(spec, density, menu, n_draws=DEFAULT_DRAWS, seed=0, *, qmc=False):
    """Fraction of simulated individuals choosing each alternative."""
    return DemandOracle(spec, density, n_draws, seed, smooth=False, qmc=qmc)(menu)


def smoothed_shares(spec, density, menu, n_draws=DEFAULT_DRAWS, seed=0, *, qmc=False):
    """Shares with tastes (or the price coefficient) integrated analytically."""
    return DemandOracle(spec, density, n_draws, seed, smooth=True, qmc=qmc)(menu)


def simulated_bundle_shares(spec, density, menu, n_draws, seed, *, qmc=False):
    """Simulated bundle shares averaging exact choice probabilities over draws."""
    if spec.menu != "bundles":
        raise DimensionError("menu", "simulated_bundle_shares needs a bundles spec")
    return DemandOracle(spec, density, n_draws, seed, smooth=True, qmc=qmc)(menu)


def check_menu_support(oracle, menu):
    """Raise if any market lies outside the oracle's support."""
    ok = oracle.check_support(menu)
    if not np.all(ok):
        bad = np.argwhere(~ok)
        raise SupportError(f"{len(bad)} menus fall outside the demand oracle's support",
                           offending=bad)


__all__ = [
    "DemandOracle", "aggregate_shares_mc", "bundle_choice_probabilities",
    "bundle_pair_probability", "check_menu_support", "conditional_logit_shares",
    "envelope_choice_probabilities", "multiunit_choice_probabilities",
    "pcm_choice_probabilities", "simulated_bundle_shares", "smoothed_shares", "psd_cholesky",
]
