"""Radon-domain data and its inversion by filtered back projection.

Sinograms store the projection CDF Phi(w, u) = P(w . theta <= u) on a
hemisphere of directions times a uniform lattice of offsets, so that
dPhi/du is exactly the Radon transform of the coefficient density. The
demand-based constructions below (logit limits, pure characteristics
marginalization, bundle and multi-unit limits) all land in this
convention.
"""

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .densities import CoefficientDensity, GridDensity
from .errors import CoverageError, DimensionError, SupportError
from .model import ProductMenu

DEFAULT_TRUNCATION = 50.0


class TruncationWarning(UserWarning):
    """Finite truncation of an identification-at-infinity limit is not negligible."""


# ---------------------------------------------------------------- geometry


def _hemisphere_weights_2d(directions):
    """Arc length owned by each direction on the projective circle."""
    ang = np.mod(np.arctan2(directions[:, 1], directions[:, 0]), np.pi)
    order = np.argsort(ang)
    a = ang[order]
    gaps = np.diff(np.concatenate([a, [a[0] + np.pi]]))
    own = 0.5 * (gaps + np.roll(gaps, 1))
    w = np.empty_like(own)
    w[order] = own
    return w


@dataclass(frozen=True)
class SphereGrid:
    """Directions on the upper hemisphere and a uniform offset lattice.

    ``weights`` are surface-measure quadrature weights of the directions on
    the hemisphere (they sum to pi in 2-d and 2 pi in 3-d).
    """

    directions: np.ndarray
    offsets: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.directions, dtype=float))
        u = np.asarray(self.offsets, dtype=float)
        if np.any(np.abs(np.linalg.norm(w, axis=1) - 1.0) > 1e-12):
            raise DimensionError("directions", "directions must be unit vectors")
        if np.any(w[:, -1] < 0):
            raise DimensionError("directions", "last coordinate must be nonnegative")
        if u.ndim != 1 or u.size < 2 or np.any(np.diff(u) <= 0):
            raise DimensionError("offsets", "offsets must be strictly increasing")
        if not np.allclose(np.diff(u), u[1] - u[0], rtol=1e-9, atol=1e-12):
            raise DimensionError("offsets", "offsets must be uniformly spaced")
        weights = self.weights
        if weights is None:
            q = w.shape[1]
            if q == 2:
                weights = _hemisphere_weights_2d(w)
            else:
                area = 2 * np.pi if q == 3 else np.nan
                weights = np.full(len(w), area / len(w))
        object.__setattr__(self, "directions", w)
        object.__setattr__(self, "offsets", u)
        object.__setattr__(self, "weights", np.asarray(weights, dtype=float))

    @classmethod
    def hemisphere(cls, q, n_directions, u_min, u_max, n_offsets):
        """Uniform angles (2-d) or a Fibonacci lattice (3-d) on the upper half."""
        if q == 2:
            theta = np.pi * (np.arange(n_directions) + 0.5) / n_directions
            dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
            weights = np.full(n_directions, np.pi / n_directions)
        elif q == 3:
            total = 2 * n_directions
            i = np.arange(n_directions)
            z = 1.0 - (2 * i + 1) / total
            golden = np.pi * (3.0 - np.sqrt(5.0))
            rho = np.sqrt(1.0 - z * z)
            dirs = np.stack([rho * np.cos(golden * i), rho * np.sin(golden * i), z], axis=1)
            weights = np.full(n_directions, 2 * np.pi / n_directions)
        else:
            raise DimensionError("q", "hemisphere grids are built for q in {2, 3}")
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        return cls(dirs, np.linspace(u_min, u_max, n_offsets), weights)

    @property
    def q(self):
        return self.directions.shape[1]

    @property
    def du(self):
        return float(self.offsets[1] - self.offsets[0])

    @property
    def shape(self):
        return (len(self.directions), len(self.offsets))


@dataclass(frozen=True)
class Sinogram:
    """Projection CDF values, and optionally their offset derivative."""

    grid: SphereGrid
    phi: np.ndarray
    dphi: np.ndarray = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        if phi.shape != self.grid.shape:
            raise DimensionError("phi", f"expected shape {self.grid.shape}, got {phi.shape}")
        object.__setattr__(self, "phi", phi)
        if self.dphi is not None:
            dphi = np.asarray(self.dphi, dtype=float)
            if dphi.shape != self.grid.shape:
                raise DimensionError("dphi", f"expected shape {self.grid.shape}")
            object.__setattr__(self, "dphi", dphi)


@dataclass(frozen=True)
class DensityGrid:
    """Recovered density on a rectangular lattice (nodes along each axis)."""

    axes: tuple
    values: np.ndarray
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        values = np.asarray(self.values, dtype=float)
        if values.shape != tuple(a.size for a in axes):
            raise DimensionError("values", "value array does not match the axes")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "values", values)

    @classmethod
    def regular(cls, lower, upper, shape, values=None):
        axes = tuple(np.linspace(lo, hi, n) for lo, hi, n in zip(lower, upper, shape))
        if values is None:
            values = np.zeros(tuple(shape))
        return cls(axes, values)

    @property
    def dim(self):
        return len(self.axes)

    @property
    def shape(self):
        return self.values.shape

    def points(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def integrate(self, values=None):
        out = self.values if values is None else values
        for k in reversed(range(self.dim)):
            out = np.trapezoid(out, self.axes[k], axis=k)
        return float(out)

    @property
    def mass(self):
        return self.integrate()

    @property
    def negative_mass(self):
        return -self.integrate(np.minimum(self.values, 0.0))

    def clipped(self, renormalize=True):
        vals = np.maximum(self.values, 0.0)
        grid = DensityGrid(self.axes, vals, dict(self.diagnostics))
        if renormalize and grid.mass > 0:
            grid = DensityGrid(self.axes, vals / grid.mass, dict(self.diagnostics))
        return grid

    def to_density(self):
        """Clip, renormalize and wrap as a sampleable :class:`GridDensity`."""
        return GridDensity.normalized(self.axes, np.maximum(self.values, 0.0))

    def l1_distance(self, other_values):
        return self.integrate(np.abs(self.values - other_values))

    def l2_relative(self, other_values):
        return np.sqrt(self.integrate((self.values - other_values) ** 2)
                       / self.integrate(other_values ** 2))


# ------------------------------------------------------------ forward map


def radon_forward(density: CoefficientDensity, w, u):
    """Integral of ``density`` over the hyperplane {v : w . v = u}."""
    w = np.asarray(w, dtype=float)
    if w.shape != (density.dim,):
        raise DimensionError("w", f"expected a direction in R^{density.dim}")
    if abs(np.linalg.norm(w) - 1.0) > 1e-12:
        raise ValueError("w must be a unit vector")
    return density.radon(w, u)


def marginalization_map(j, flipped, menu: ProductMenu):
    """Reflect the goods in ``flipped`` through good ``j``.

    Each flipped good i gets characteristics 2 x_j - x_i (and likewise for
    price and delta), so its index difference with j changes sign while
    every other good is left alone. Goods are indexed from zero.
    """
    flipped = sorted(set(int(i) for i in flipped))
    if j in flipped:
        raise ValueError("the reference good cannot be in the flipped set")
    if any(i < 0 or i >= menu.n_goods for i in flipped):
        raise DimensionError("flipped", "good index out of range")
    x2, p, delta = menu.x2.copy(), menu.p.copy(), menu.delta.copy()
    for i in flipped:
        x2[..., i, :] = 2 * menu.x2[..., j, :] - menu.x2[..., i, :]
        p[..., i] = 2 * menu.p[..., j] - menu.p[..., i]
        delta[..., i] = 2 * menu.delta[..., j] - menu.delta[..., i]
    return ProductMenu(x2, p, delta)


@dataclass
class PhiResult:
    """Projection CDF values with the demand quantity they came from.

    ``demand`` is the (limit or marginalized) probability produced by the
    demand oracle, ``cdf`` its conversion to P(w . theta <= u), and
    ``truncation_gap`` the change in ``demand`` when the truncation point
    moves (``None`` where no truncation is involved).
    """

    cdf: np.ndarray
    demand: np.ndarray
    truncation_gap: np.ndarray = None
    budget_exceeded: bool = False


def _check_support(oracle, menus):
    ok = oracle.check_support(menus)
    if not np.all(ok):
        bad = np.argwhere(~ok)
        raise SupportError(
            f"{len(bad)} mapped menus fall outside the demand oracle's support; "
            f"first offending index {bad[0].tolist()}", offending=bad)


def build_phi_pcm(spec, oracle, j, menu):
    """Marginalized demand of good ``j`` in the pure characteristics model.

    Sums the demand for ``j`` over the menus where each subset of rival
    goods is reflected through ``j``. Exactly one subset orders the rivals
    correctly for any consumer, so the sum is P(x_j beta + alpha p_j +
    delta_j > 0); the CDF convention returns its complement.
    """
    if spec.menu != "multinomial" or spec.sigma_eps != 0:
        raise DimensionError("spec", "build_phi_pcm needs a pure characteristics multinomial spec")
    others = [i for i in range(menu.n_goods) if i != j]
    total = 0.0
    for size in range(len(others) + 1):
        for flipped in itertools.combinations(others, size):
            mapped = marginalization_map(j, flipped, menu)
            _check_support(oracle, mapped)
            total = total + oracle(mapped)[..., j + 1]
    total = np.asarray(total, dtype=float)
    return PhiResult(cdf=1.0 - total, demand=total)


def full_subset_sum(spec, oracle, j, menu):
    """Sum of good ``j``'s demand over all 2^J sign/reflection patterns.

    Reflections of rival subsets are applied both to the menu and to the
    menu with good ``j``'s characteristics negated; the two halves add up
    to P(v_j > 0) + P(v_j < 0) = 1.
    """
    negated = menu.x2.copy(), menu.p.copy(), menu.delta.copy()
    negated[0][..., j, :] *= -1
    negated[1][..., j] *= -1
    negated[2][..., j] *= -1
    mirror = ProductMenu(*negated)
    return build_phi_pcm(spec, oracle, j, menu).demand + build_phi_pcm(spec, oracle, j,
                                                                        mirror).demand


def _with_rival_delta(menu, j, value):
    delta = menu.delta.copy()
    rivals = [i for i in range(menu.n_goods) if i != j]
    delta[..., rivals] = value
    return menu.with_delta(delta)


def _truncated(oracle, menu, j, column, sign, truncation, check, budget):
    demand = oracle(_with_rival_delta(menu, j, sign * truncation))[..., column]
    gap = None
    exceeded = False
    if check is not None:
        alt = oracle(_with_rival_delta(menu, j, sign * check))[..., column]
        gap = np.abs(demand - alt)
        exceeded = bool(np.any(gap > budget))
        if exceeded:
            warnings.warn(f"truncation gap {gap.max():.3e} exceeds the budget {budget:g}",
                          TruncationWarning, stacklevel=3)
    return demand, gap, exceeded


def build_phi_blp(spec, oracle, j, menu, truncation=DEFAULT_TRUNCATION, *,
                  check_truncation=None, bias_budget=1e-3):
    """Binary demand of good ``j`` against the outside option.

    Every rival's delta is set to ``-truncation``; ``check_truncation``
    (default half the truncation) gives the second point of the bias
    diagnostic. The CDF convention returns 1 minus the demand.
    """
    if spec.menu != "multinomial" or spec.sigma_eps != 1:
        raise DimensionError("spec", "build_phi_blp needs a multinomial spec with tastes")
    check = 0.5 * truncation if check_truncation is None else check_truncation
    demand, gap, exceeded = _truncated(oracle, menu, j, j + 1, -1.0, truncation, check,
                                       bias_budget)
    return PhiResult(1.0 - demand, demand, gap, exceeded)


# label -> (sign of the rival's delta in the limit, CDF equals demand?)
_BUNDLE_LIMITS = {
    ("bundles", (0, 0)): (-1.0, True),
    ("bundles", (1, 1)): (1.0, False),
    ("multiunit", (0, 0)): (-1.0, True),
    ("multiunit", (0, 1)): (1.0, True),
    ("multiunit", (2, 0)): (-1.0, False),
    ("multiunit", (2, 1)): (1.0, False),
}


def bundle_limit_variable(spec, label):
    """Which sum of tastes the limit of ``label`` identifies, as a string."""
    names = {("bundles", (0, 0)): "eps", ("bundles", (1, 1)): "eps+delta",
             ("multiunit", (0, 0)): "eps", ("multiunit", (0, 1)): "eps+delta11",
             ("multiunit", (2, 0)): "eps+delta20",
             ("multiunit", (2, 1)): "eps+delta21-delta11"}
    return names[(spec.menu, tuple(label))]


def build_phi_bundle(spec, oracle, label, j, menu, truncation=DEFAULT_TRUNCATION, *,
                     check_truncation=None, bias_budget=1e-3):
    """Single-index limit of a bundle or multi-unit share.

    Pushes the rival good's delta to -truncation (for (0,0), (2,0)) or
    +truncation (for (1,1), (0,1), (2,1)). In the limit the share is the
    probability that w . theta exceeds (or falls below) u, where the taste
    coordinate of theta is eps_j, eps_j + Delta, eps_1 + Delta_(1,1),
    eps_1 + Delta_(2,0) or eps_1 + Delta_(2,1) - Delta_(1,1).
    """
    label = tuple(int(v) for v in label)
    key = (spec.menu, label)
    if key not in _BUNDLE_LIMITS:
        raise ValueError(f"no single-index limit for {label} in a {spec.menu} menu")
    if spec.menu == "multiunit" and j != 0:
        raise ValueError("multi-unit limits are taken for good 1 (index 0)")
    sign, same = _BUNDLE_LIMITS[key]
    check = 0.5 * truncation if check_truncation is None else check_truncation
    column = spec.label_index(label)
    demand, gap, exceeded = _truncated(oracle, menu, j, column, sign, truncation, check,
                                       bias_budget)
    cdf = demand if same else 1.0 - demand
    return PhiResult(cdf, demand, gap, exceeded)


# ------------------------------------------------------ sinogram assembly


def characteristic_points(W, U, *, taste_slot=True):
    """Map directions and offsets to (x2, p, delta) of the sweeping good.

    With ``taste_slot`` (logit, bundle and multi-unit limits) the last
    coordinate of w multiplies the taste shock, so w = (x2, p, 1)/n and
    delta = -u n. Otherwise (pure characteristics) x2 and p are the first
    coordinates of w and delta = -u.

    Returns arrays of shape (K, N, d_x - 1), (K, N), (K, N).
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    U = np.asarray(U, dtype=float)
    if taste_slot:
        if np.any(W[:, -1] <= 0):
            raise DimensionError("directions", "the taste coordinate must be positive")
        scale = 1.0 / W[:, -1]
        chars = W[:, :-1] * scale[:, None]
    else:
        scale = np.ones(len(W))
        chars = W
    x2 = np.broadcast_to(chars[:, None, :-1], (len(W), U.size, chars.shape[1] - 1))
    p = np.broadcast_to(chars[:, None, -1], (len(W), U.size))
    delta = -np.outer(scale, U)
    return x2, p, delta


def _two_good_menu(x2, p, delta, j, n_goods, rival_x2=None, rival_p=None, rival_delta=None):
    """Place the sweeping good at index j and fill the rivals."""
    shape = p.shape
    k = x2.shape[-1]
    X = np.zeros(shape + (n_goods, k))
    P = np.zeros(shape + (n_goods,))
    D = np.zeros(shape + (n_goods,))
    X[..., j, :], P[..., j], D[..., j] = x2, p, delta
    for i in range(n_goods):
        if i == j:
            continue
        if rival_x2 is not None:
            X[..., i, :] = rival_x2(x2, i)
            P[..., i] = rival_p(p, i)
            D[..., i] = rival_delta(delta, i)
    return ProductMenu(X, P, D)


class PhiEvaluator:
    """Callable ``(W, U) -> PhiResult`` used by :func:`assemble_sinogram`.

    Parameters
    ----------
    spec : ModelSpec
    oracle : DemandOracle
    strategy : {"blp", "pcm", "bundle"}
    j : int
        Sweeping good (zero based).
    label : tuple, optional
        Bundle or multi-unit alternative for the "bundle" strategy.
    truncation, check_truncation, bias_budget : float
        Identification-at-infinity settings.
    companion : array_like
        Offset of each rival's (x2, p, delta) from the sweeping good in the
        pure characteristics construction; any nonzero choice works.
    """

    def __init__(self, spec, oracle, strategy, j=0, *, label=None,
                 truncation=DEFAULT_TRUNCATION, check_truncation=None, bias_budget=1e-3,
                 companion=None):
        if strategy not in ("blp", "pcm", "bundle"):
            raise ValueError("strategy must be 'blp', 'pcm' or 'bundle'")
        self.spec, self.oracle, self.strategy, self.j = spec, oracle, strategy, j
        self.label, self.truncation = label, truncation
        self.check_truncation, self.bias_budget = check_truncation, bias_budget
        comp = np.full(spec.d_x + 1, 0.5) if companion is None else np.asarray(companion, float)
        comp = comp * np.linspace(1.0, 1.7, comp.size)
        self.companion = comp

    @property
    def q(self):
        return self.spec.d_x + (0 if self.strategy == "pcm" else 1)

    def menus(self, W, U):
        spec, j = self.spec, self.j
        x2, p, delta = characteristic_points(W, U, taste_slot=self.strategy != "pcm")
        if self.strategy == "pcm":
            c = self.companion
            return _two_good_menu(
                x2, p, delta, j, spec.n_goods,
                lambda x, i: x + c[:-2] * (i + 1), lambda pp, i: pp + c[-2] * (i + 1),
                lambda d, i: d + c[-1] * (i + 1))
        return _two_good_menu(x2, p, delta, j, spec.n_goods)

    def __call__(self, W, U):
        menu = self.menus(W, U)
        if self.strategy == "pcm":
            return build_phi_pcm(self.spec, self.oracle, self.j, menu)
        kw = dict(check_truncation=self.check_truncation, bias_budget=self.bias_budget)
        if self.strategy == "blp":
            return build_phi_blp(self.spec, self.oracle, self.j, menu, self.truncation, **kw)
        return build_phi_bundle(self.spec, self.oracle, self.label, self.j, menu,
                                self.truncation, **kw)


def assemble_sinogram(evaluator, grid: SphereGrid, *, block=64):
    """Evaluate the projection CDF on every (direction, offset) pair.

    ``evaluator`` maps ``(W, U)`` to a :class:`PhiResult` (for instance a
    :class:`PhiEvaluator`). Directions are processed in blocks; support
    violations from all blocks are collected into one report.
    """
    K = len(grid.directions)
    phi = np.empty(grid.shape)
    gap = np.zeros(grid.shape)
    offending = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        for a in range(0, K, block):
            sl = slice(a, min(K, a + block))
            try:
                res = evaluator(grid.directions[sl], grid.offsets)
            except SupportError as err:
                bad = np.asarray(err.offending)
                bad[:, 0] += a
                offending.append(bad)
                continue
            phi[sl] = res.cdf
            if res.truncation_gap is not None:
                gap[sl] = res.truncation_gap
    if offending:
        bad = np.concatenate(offending)
        raise SupportError(f"{len(bad)} lattice points fall outside the oracle's support",
                           offending=bad)
    budget = getattr(evaluator, "bias_budget", np.inf)
    if gap.max() > budget:
        warnings.warn(f"truncation gap {gap.max():.3e} exceeds the budget {budget:g}",
                      TruncationWarning, stacklevel=2)
    return Sinogram(grid, phi, meta={"max_truncation_gap": float(gap.max())})


def sinogram_from_density(density, grid):
    """Exact sinogram of a parametric density (projection CDF and its derivative)."""
    phi = np.stack([density.projection_cdf(w, grid.offsets) for w in grid.directions])
    dphi = np.stack([density.radon(w, grid.offsets) for w in grid.directions])
    return Sinogram(grid, phi, dphi)


def differentiate_offset(sino: Sinogram):
    """Offset derivative: central differences inside, one-sided at the ends."""
    if sino.grid.offsets.size < 3:
        raise DimensionError("offsets", "need at least three offsets")
    dphi = np.gradient(sino.phi, sino.grid.du, axis=1, edge_order=1)
    return Sinogram(sino.grid, sino.phi, np.maximum(dphi, -1e-8), dict(sino.meta))


# ------------------------------------------------------------ inversion


def omega_r(s, r):
    """Band-limited ramp kernel (cos(rs) - 1)/(4 pi^2 s^2), r^2/(8 pi^2) at 0."""
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = (np.cos(r * s) - 1.0) / (s * s)
    return np.where(s == 0, r * r / 2.0, val) / (4 * np.pi ** 2)


def fbp_filter_kernel(s, r, q):
    """Kernel whose Fourier transform is |sigma|^(q-1) cut at r, with constants.

    Includes the inversion constant (1/2)(2 pi)^(1-q) / (2 pi), so that the
    density is the sphere integral of the filtered projections. On the
    offset lattice with r = pi / du the 2-d kernel coincides with
    :func:`omega_r`.
    """
    s = np.asarray(s, dtype=float)
    x = r * s
    small = np.abs(x) < 1e-3
    xs = np.where(small, 1.0, x)
    if q == 2:
        full = (np.cos(xs) - 1.0) / xs ** 2 + np.sin(xs) / xs
        series = 0.5 - x * x / 8.0
        return r * r * np.where(small, series, full) / (4 * np.pi ** 2)
    if q == 3:
        full = np.sin(xs) / xs + 2 * np.cos(xs) / xs ** 2 - 2 * np.sin(xs) / xs ** 3
        series = 1.0 / 3.0 - x * x / 10.0
        return r ** 3 * np.where(small, series, full) / np.pi / (8 * np.pi ** 2)
    raise DimensionError("q", "filtered back projection supports q in {2, 3}")


def _check_coverage(grid, max_gap=None):
    dirs = grid.directions
    q = grid.q
    if q == 2:
        ang = np.sort(np.mod(np.arctan2(dirs[:, 1], dirs[:, 0]), np.pi))
        gaps = np.diff(np.concatenate([ang, [ang[0] + np.pi]]))
        limit = np.pi / 32 if max_gap is None else max_gap
        worst = gaps.max()
    else:
        probe = SphereGrid.hemisphere(3, 2000, 0.0, 1.0, 2).directions
        cos = np.abs(probe @ dirs.T).max(axis=1)
        worst = 2 * np.arccos(np.clip(cos.min(), -1, 1))
        limit = 0.25 if max_gap is None else max_gap
    if worst > limit * (1 + 1e-9):
        raise CoverageError(
            f"directions leave an angular gap of {worst:.3g} rad (limit {limit:.3g}); "
            "limited-angle data cannot be inverted")


def fbp_invert(sino: Sinogram, out, r=None, *, clip=False, max_gap=None, chunk=4096):
    """Filtered back projection of the offset derivative of a sinogram.

    Parameters
    ----------
    sino : Sinogram
        Must carry ``dphi`` (see :func:`differentiate_offset`).
    out : DensityGrid or sequence of axes
        Lattice on which to evaluate the density.
    r : float, optional
        Filter bandwidth; defaults to pi / du.
    clip : bool
        Clip negative values and renormalize to unit mass.
    max_gap : float, optional
        Largest tolerated angular gap between directions.

    Returns
    -------
    DensityGrid
        ``diagnostics["negative_mass"]`` reports the mass below zero
        before any clipping.
    """
    if sino.dphi is None:
        raise ValueError("sinogram has no offset derivative; call differentiate_offset first")
    grid = sino.grid
    q = grid.q
    if q not in (2, 3):
        raise DimensionError("q", "filtered back projection supports q in {2, 3}")
    _check_coverage(grid, max_gap)
    axes = out.axes if isinstance(out, DensityGrid) else tuple(np.asarray(a, float) for a in out)
    if len(axes) != q:
        raise DimensionError("out", f"output grid must have {q} axes")
    u, du = grid.offsets, grid.du
    r = np.pi / du if r is None else float(r)

    trap = np.full(u.size, du)
    trap[[0, -1]] *= 0.5
    kernel = fbp_filter_kernel(u[:, None] - u[None, :], r, q) * trap[None, :]
    filtered = sino.dphi @ kernel.T

    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, q)
    values = np.empty(len(mesh))
    weights = 2.0 * grid.weights  # mirrored half of the sphere
    n = u.size
    rows = np.arange(len(grid.directions))
    for a in range(0, len(mesh), chunk):
        pts = mesh[a:a + chunk]
        t = (pts @ grid.directions.T - u[0]) / du
        i0 = np.floor(t).astype(int)
        frac = t - i0
        inside = (i0 >= 0) & (i0 < n - 1)
        i0c = np.clip(i0, 0, n - 2)
        left = filtered[rows[None, :], i0c]
        right = filtered[rows[None, :], i0c + 1]
        val = np.where(inside, (1 - frac) * left + frac * right, 0.0)
        val = np.where(t == n - 1, filtered[rows[None, :], n - 1], val)
        values[a:a + chunk] = val @ weights
    result = DensityGrid(axes, values.reshape(tuple(len(ax) for ax in axes)))
    result.diagnostics.update(negative_mass=result.negative_mass, bandwidth=r)
    if clip:
        result = result.clipped(renormalize=True)
    return result
