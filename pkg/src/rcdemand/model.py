"""Model structure, coefficient draws and individual choice.

A coefficient vector is laid out as ``[beta2 (d_x - 1), alpha, bundle
effects]``, where the bundle effects are Delta for two-good bundles and
(Delta_11, Delta_20, Delta_21) for the multi-unit menu. Tastes for products
(``eps``) are drawn separately from ``ModelSpec.eps_family``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _random
from .densities import CoefficientDensity, GridDensity, psd_cholesky
from .errors import DimensionError

MENUS = ("multinomial", "bundles", "multiunit")

BUNDLE_LABELS = ((0, 0), (1, 0), (0, 1), (1, 1))
MULTIUNIT_LABELS = ((0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (2, 1))


@dataclass(frozen=True)
class ModelSpec:
    """Menu structure and normalizations of a demand model.

    Parameters
    ----------
    menu : {"multinomial", "bundles", "multiunit"}
    n_goods : int
        Number of inside goods; must be 2 for bundles and multi-unit menus.
    sigma_eps : {0, 1}
        0 gives the pure characteristics model, 1 adds tastes for products.
    d_x : int
        Characteristics per product including the special one whose
        coefficient is normalized to one.
    eps_family : {"gumbel", "normal"}, optional
        Law of the tastes for products. Defaults to Gumbel for multinomial
        menus and normal for bundles and multi-unit menus.
    eps_cov : array_like, optional
        Covariance of normal tastes; identity by default.
    """

    menu: str = "multinomial"
    n_goods: int = 1
    sigma_eps: int = 1
    d_x: int = 1
    eps_family: str = None
    eps_cov: tuple = field(default=None, compare=False)

    def __post_init__(self):
        if self.menu not in MENUS:
            raise DimensionError("menu", f"must be one of {MENUS}")
        if self.n_goods < 1:
            raise DimensionError("n_goods", "at least one good is required")
        if self.menu != "multinomial" and self.n_goods != 2:
            raise DimensionError("n_goods", f"{self.menu} menus have exactly two goods")
        if self.sigma_eps not in (0, 1):
            raise DimensionError("sigma_eps", "must be 0 or 1")
        if self.d_x < 1:
            raise DimensionError("d_x", "must be at least 1")
        family = self.eps_family or ("gumbel" if self.menu == "multinomial" else "normal")
        if family not in ("gumbel", "normal"):
            raise DimensionError("eps_family", "must be 'gumbel' or 'normal'")
        object.__setattr__(self, "eps_family", family)
        cov = np.eye(self.n_goods) if self.eps_cov is None else np.asarray(self.eps_cov, float)
        if cov.shape != (self.n_goods, self.n_goods):
            raise DimensionError("eps_cov", f"expected shape {(self.n_goods,) * 2}")
        psd_cholesky(cov)
        object.__setattr__(self, "eps_cov", cov)

    @property
    def labels(self):
        if self.menu == "bundles":
            return BUNDLE_LABELS
        if self.menu == "multiunit":
            return MULTIUNIT_LABELS
        return tuple(range(self.n_goods + 1))

    @property
    def label_names(self):
        return [f"s_{lab}" if isinstance(lab, int) else "s_" + "".join(map(str, lab))
                for lab in self.labels]

    def label_index(self, label):
        return self.labels.index(tuple(label) if not isinstance(label, int) else label)

    @property
    def n_alternatives(self):
        return len(self.labels)

    @property
    def n_bundle_effects(self):
        return {"multinomial": 0, "bundles": 1, "multiunit": 3}[self.menu]

    @property
    def n_coefficients(self):
        return self.d_x + self.n_bundle_effects

    @property
    def alpha_index(self):
        return self.d_x - 1


@dataclass(frozen=True)
class CoefficientDraws:
    """Struct-of-arrays container of ``n`` individual coefficient draws."""

    beta2: np.ndarray
    alpha: np.ndarray
    eps: np.ndarray = None
    delta_bundle: np.ndarray = None

    @property
    def n(self):
        return self.alpha.shape[0]

    @classmethod
    def from_matrix(cls, spec, theta, eps=None):
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        if theta.shape[1] != spec.n_coefficients:
            raise DimensionError(
                "theta", f"expected {spec.n_coefficients} coefficient columns, got {theta.shape[1]}"
            )
        k = spec.d_x - 1
        bundle = theta[:, k + 1:] if spec.n_bundle_effects else None
        if eps is not None:
            eps = np.atleast_2d(np.asarray(eps, dtype=float))
            if eps.shape != (theta.shape[0], spec.n_goods):
                raise DimensionError("eps", f"expected shape {(theta.shape[0], spec.n_goods)}")
        return cls(theta[:, :k], theta[:, k], eps, bundle)


@dataclass(frozen=True)
class ProductMenu:
    """Characteristics of the inside goods, possibly for a batch of markets.

    ``x2`` has shape ``(..., J, d_x - 1)``; ``p`` and ``delta`` have shape
    ``(..., J)``. Leading axes index markets.
    """

    x2: np.ndarray
    p: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        delta = np.asarray(self.delta, dtype=float)
        x2 = np.asarray(self.x2, dtype=float)
        if x2.ndim == p.ndim:
            x2 = x2[..., None] if x2.size else x2.reshape(p.shape + (0,))
        for name, arr in (("x2", x2), ("p", p), ("delta", delta)):
            if not np.all(np.isfinite(arr)):
                raise DimensionError(name, "entries must be finite")
        if p.shape != delta.shape or x2.shape[:-1] != p.shape:
            raise DimensionError("menu", f"inconsistent shapes x2={x2.shape} p={p.shape} "
                                 f"delta={delta.shape}")
        object.__setattr__(self, "x2", x2)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "delta", delta)

    @property
    def n_goods(self):
        return self.p.shape[-1]

    @property
    def batch_shape(self):
        return self.p.shape[:-1]

    def check(self, spec):
        if self.n_goods != spec.n_goods:
            raise DimensionError("p", f"menu has {self.n_goods} goods, spec has {spec.n_goods}")
        if self.x2.shape[-1] != spec.d_x - 1:
            raise DimensionError("x2", f"expected {spec.d_x - 1} characteristics per good")
        return self

    def take(self, idx):
        """Sub-batch of markets."""
        return ProductMenu(self.x2[idx], self.p[idx], self.delta[idx])

    def with_delta(self, delta):
        return ProductMenu(self.x2, self.p, delta)


def index_values(draws, menu):
    """Deterministic part x2.beta2 + alpha p + delta, shape ``(..., n, J)``."""
    v = np.einsum("...jk,nk->...nj", menu.x2, draws.beta2)
    v = v + menu.p[..., None, :] * draws.alpha[:, None]
    return v + menu.delta[..., None, :]


def combine_alternatives(spec, v, bundle=None):
    """Map per-good indices ``(..., J)`` to utilities over the menu labels."""
    if spec.menu == "multinomial":
        zero = np.zeros(v.shape[:-1] + (1,))
        return np.concatenate([zero, v], axis=-1)
    v1, v2 = v[..., 0], v[..., 1]
    zero = np.zeros_like(v1)
    if spec.menu == "bundles":
        return np.stack([zero, v1, v2, v1 + v2 + bundle[..., 0]], axis=-1)
    d11, d20, d21 = bundle[..., 0], bundle[..., 1], bundle[..., 2]
    return np.stack(
        [zero, v1, v2, v1 + v2 + d11, 2 * v1 + d20, 2 * v1 + v2 + d21], axis=-1
    )


def utilities(spec, draws, menu):
    """Utilities of every alternative, outside option first.

    Returns an array of shape ``(..., n, n_alternatives)`` where the leading
    axes follow the menu batch.
    """
    menu.check(spec)
    if draws.beta2.shape[1] != spec.d_x - 1:
        raise DimensionError("beta2", f"expected {spec.d_x - 1} components")
    if spec.n_bundle_effects and (
        draws.delta_bundle is None or draws.delta_bundle.shape[1] != spec.n_bundle_effects
    ):
        raise DimensionError("delta_bundle", f"expected {spec.n_bundle_effects} bundle effects")
    v = index_values(draws, menu)
    if spec.sigma_eps:
        if draws.eps is None or draws.eps.shape[1] != spec.n_goods:
            raise DimensionError("eps", "tastes for products are required when sigma_eps = 1")
        v = v + draws.eps
    bundle = draws.delta_bundle
    return combine_alternatives(spec, v, bundle)


def _multiunit_neighbors():
    neigh = {}
    for i, (a, b) in enumerate(MULTIUNIT_LABELS):
        neigh[i] = [k for k, (c, d) in enumerate(MULTIUNIT_LABELS)
                    if abs(a - c) + abs(b - d) == 1]
    return neigh


_MU_NEIGHBORS = _multiunit_neighbors()


def choose(u, *, multiunit_check=False):
    """Index of the utility-maximizing alternative along the last axis.

    Ties go to the lowest index. With ``multiunit_check`` the choice is
    also verified against its neighbouring bundles, which must be weakly
    worse.
    """
    u = np.asarray(u, dtype=float)
    if u.shape[-1] == 0:
        raise DimensionError("utilities", "need at least one alternative")
    if np.isnan(u).any():
        raise ValueError("utilities contain NaN")
    idx = np.argmax(u, axis=-1)
    if multiunit_check:
        if u.shape[-1] != len(MULTIUNIT_LABELS):
            raise DimensionError("utilities", "multi-unit menus have six alternatives")
        best = np.take_along_axis(u, idx[..., None], axis=-1)[..., 0]
        for i, nbrs in _MU_NEIGHBORS.items():
            sel = idx == i
            assert np.all(u[sel][..., nbrs] <= best[sel][..., None]), "neighbor beats choice"
    return idx


def sample_coefficients(density, n, seed, *, qmc=False):
    """``(n, dim)`` array of seeded i.i.d. coefficient draws."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if isinstance(density, GridDensity):
        density.check_normalized()
    return density.sample(n, seed, qmc=qmc)


def sample_taste_shocks(spec, n, seed, *, qmc=False):
    """``(n, J)`` tastes for products from the spec's family."""
    if qmc:
        u = _random.halton(seed + 1, n, spec.n_goods)
    else:
        u = _random.uniform(seed, _random.TASTE_SHOCKS, n, spec.n_goods)
    if spec.eps_family == "gumbel":
        return _random.gumbel_from_uniform(u)
    from scipy.special import ndtri

    return ndtri(u) @ psd_cholesky(spec.eps_cov).T


def sample_draws(spec, density, n, seed, *, qmc=False):
    """Coefficient and taste draws bundled for ``utilities``."""
    if density.dim != spec.n_coefficients:
        raise DimensionError("density", f"expected dimension {spec.n_coefficients}, "
                             f"got {density.dim}")
    theta = sample_coefficients(density, n, seed, qmc=qmc)
    eps = sample_taste_shocks(spec, n, seed, qmc=qmc) if spec.sigma_eps else None
    return CoefficientDraws.from_matrix(spec, theta, eps)


def eval_density(density: CoefficientDensity, point):
    """Density value at a single point."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    if point.shape != (density.dim,):
        raise DimensionError("point", f"expected dimension {density.dim}, got {point.shape}")
    return float(density.pdf(point[None, :])[0])
