"""Coefficient distributions.

Every density maps a point in R^d to a nonnegative value and can produce
seeded i.i.d. draws. Parametric families also expose closed forms used by
the Radon and deconvolution modules: projections onto a direction,
characteristic functions of one-dimensional members, and the conditional
law of a single component given the others.
"""

from abc import ABC, abstractmethod

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.special import gamma as gamma_fn
from scipy.special import ndtri

from . import _random
from .errors import DimensionError, NormalizationError
from .gaussian import norm_cdf, norm_pdf

EULER_GAMMA = 0.5772156649015329


def psd_cholesky(cov, tol=1e-12):
    """Lower-triangular factor of a PSD matrix, zeroing degenerate columns.

    Unlike an eigendecomposition, the factor varies continuously with the
    matrix, which keeps common random numbers smooth in the parameters.
    """
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[0]
    L = np.zeros_like(cov)
    scale = max(1.0, float(np.max(np.abs(np.diag(cov))))) if d else 1.0
    for j in range(d):
        pivot = cov[j, j] - L[j, :j] @ L[j, :j]
        if pivot < -tol * scale:
            raise ValueError("covariance is not positive semidefinite")
        if pivot <= tol * scale:
            continue
        L[j, j] = np.sqrt(pivot)
        L[j + 1:, j] = (cov[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def _validate_cov(cov, d):
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (d, d):
        raise DimensionError("cov", f"expected shape {(d, d)}, got {cov.shape}")
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ValueError("covariance must be symmetric")
    if d and np.linalg.eigvalsh(cov).min() < -1e-10 * max(1.0, np.abs(cov).max()):
        raise ValueError("covariance is not positive semidefinite")
    return cov


def _as_points(points, dim):
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :] if dim > 1 or pts.size == 1 else pts[:, None]
    if pts.shape[-1] != dim:
        raise DimensionError("point", f"expected dimension {dim}, got {pts.shape[-1]}")
    return pts


class CoefficientDensity(ABC):
    """Common interface of coefficient distributions."""

    dim: int

    @abstractmethod
    def pdf(self, points):
        """Density at an array of points with trailing axis ``dim``."""

    @abstractmethod
    def sample(self, n, seed, *, qmc=False, stream=_random.COEFFICIENTS):
        """``(n, dim)`` array of i.i.d. draws."""

    def radon(self, w, u):
        """Integral of the density over the hyperplane ``{v : w.v = u}``."""
        raise NotImplementedError(f"{type(self).__name__} has no Radon transform")

    def projection_cdf(self, w, u):
        """P(w.theta <= u)."""
        raise NotImplementedError(f"{type(self).__name__} has no projection CDF")

    def cf(self, t):
        """Characteristic function of a one-dimensional density."""
        raise NotImplementedError(f"{type(self).__name__} has no closed-form CF")

    def conditional_draws(self, n, seed, axis, *, qmc=False, stream=_random.COEFFICIENTS):
        """Draws of every component but ``axis``, with the conditional law of ``axis``.

        Returns ``(draws, cond_mean, cond_sd)``; the conditional law of the
        ``axis`` component given the others is normal with those moments (a
        zero sd means it is degenerate). Column ``axis`` of ``draws`` holds
        the conditional mean.
        """
        raise NotImplementedError(
            f"{type(self).__name__} does not support analytic conditioning"
        )

    def _check_direction(self, w):
        w = np.asarray(w, dtype=float)
        if w.shape != (self.dim,):
            raise DimensionError("w", f"expected shape {(self.dim,)}, got {w.shape}")
        return w


class PointMass(CoefficientDensity):
    """All mass at a single point."""

    def __init__(self, point):
        self.point = np.atleast_1d(np.asarray(point, dtype=float))
        self.dim = self.point.size

    def pdf(self, points):
        pts = _as_points(points, self.dim)
        hit = np.all(pts == self.point, axis=-1)
        return np.where(hit, np.inf, 0.0)

    def sample(self, n, seed, *, qmc=False, stream=_random.COEFFICIENTS):
        return np.tile(self.point, (n, 1))

    def projection_cdf(self, w, u):
        w = self._check_direction(w)
        return (np.asarray(u, dtype=float) >= w @ self.point).astype(float)

    def cf(self, t):
        if self.dim != 1:
            raise DimensionError("density", "characteristic function needs a 1-d density")
        return np.exp(1j * np.asarray(t, dtype=float) * self.point[0])

    def marginal(self, axes):
        return PointMass(self.point[list(axes)])

    def conditional_draws(self, n, seed, axis, *, qmc=False, stream=_random.COEFFICIENTS):
        draws = self.sample(n, seed)
        return draws, draws[:, axis].copy(), np.zeros(n)


class Normal(CoefficientDensity):
    """Multivariate normal with a possibly singular covariance."""

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.dim = self.mean.size
        self.cov = _validate_cov(cov, self.dim)
        self.chol = psd_cholesky(self.cov)

    @classmethod
    def standard(cls, dim):
        return cls(np.zeros(dim), np.eye(dim))

    def pdf(self, points):
        pts = _as_points(points, self.dim)
        diff = pts - self.mean
        sign, logdet = np.linalg.slogdet(self.cov)
        if sign <= 0:
            raise ValueError("pdf of a singular normal is undefined")
        sol = np.linalg.solve(self.cov, diff.reshape(-1, self.dim).T).T.reshape(diff.shape)
        quad = np.sum(diff * sol, axis=-1)
        return np.exp(-0.5 * (quad + logdet + self.dim * np.log(2 * np.pi)))

    def _standard(self, n, seed, qmc, stream):
        if qmc:
            return ndtri(_random.halton(seed, n, self.dim))
        return _random.standard_normal(seed, stream, n, self.dim)

    def sample(self, n, seed, *, qmc=False, stream=_random.COEFFICIENTS):
        return self.mean + self._standard(n, seed, qmc, stream) @ self.chol.T

    def _projection(self, w):
        w = self._check_direction(w)
        return w @ self.mean, np.sqrt(max(w @ self.cov @ w, 0.0))

    def radon(self, w, u):
        m, s = self._projection(w)
        if s == 0:
            raise ValueError("projection is degenerate; use a covariance with positive variance")
        return norm_pdf((np.asarray(u, dtype=float) - m) / s) / s

    def projection_cdf(self, w, u):
        m, s = self._projection(w)
        u = np.asarray(u, dtype=float)
        if s == 0:
            return (u >= m).astype(float)
        return norm_cdf((u - m) / s)

    def cf(self, t):
        if self.dim != 1:
            raise DimensionError("density", "characteristic function needs a 1-d density")
        t = np.asarray(t, dtype=float)
        return np.exp(1j * t * self.mean[0] - 0.5 * self.cov[0, 0] * t * t)

    def marginal(self, axes):
        axes = list(axes)
        return Normal(self.mean[axes], self.cov[np.ix_(axes, axes)])

    def _conditional_coefficients(self, axis):
        rest = [i for i in range(self.dim) if i != axis]
        s_rr = self.cov[np.ix_(rest, rest)]
        s_ar = self.cov[axis, rest]
        gain = np.linalg.pinv(s_rr) @ s_ar if rest else np.zeros(0)
        var = self.cov[axis, axis] - s_ar @ gain if rest else self.cov[axis, axis]
        return rest, gain, np.sqrt(max(var, 0.0))

    def conditional_draws(self, n, seed, axis, *, qmc=False, stream=_random.COEFFICIENTS):
        draws = self.sample(n, seed, qmc=qmc, stream=stream)
        rest, gain, sd = self._conditional_coefficients(axis)
        mean = self.mean[axis] + (draws[:, rest] - self.mean[rest]) @ gain
        draws[:, axis] = mean
        return draws, mean, np.full(n, sd)


class NormalMixture(CoefficientDensity):
    """Finite mixture of multivariate normals."""

    def __init__(self, weights, means, covs):
        self.weights = np.asarray(weights, dtype=float)
        if np.any(self.weights < 0) or not np.isclose(self.weights.sum(), 1.0, atol=1e-12):
            raise ValueError("mixture weights must be nonnegative and sum to one")
        means = np.atleast_2d(np.asarray(means, dtype=float))
        if means.shape[0] != self.weights.size:
            raise DimensionError("means", "one mean per mixture component is required")
        self.dim = means.shape[1]
        self.components = [Normal(m, c) for m, c in zip(means, covs)]

    @classmethod
    def independent(cls, weights, means, sds):
        """Mixture whose components have diagonal covariances."""
        sds = np.atleast_2d(np.asarray(sds, dtype=float))
        return cls(weights, means, [np.diag(s ** 2) for s in sds])

    def pdf(self, points):
        return sum(w * c.pdf(points) for w, c in zip(self.weights, self.components))

    def _base(self, n, seed, qmc, stream):
        """Component labels and standard normal draws.

        Quasi-random draws spend the first Halton coordinate on the label.
        """
        if qmc:
            pts = _random.halton(seed, n, self.dim + 1)
            u, z = pts[:, 0], ndtri(pts[:, 1:])
        else:
            u = _random.uniform(seed, stream + 1000, n, 1)[:, 0]
            z = _random.standard_normal(seed, stream, n, self.dim)
        labels = np.minimum(np.searchsorted(np.cumsum(self.weights), u, side="right"),
                            self.weights.size - 1)
        return labels, z

    def sample(self, n, seed, *, qmc=False, stream=_random.COEFFICIENTS):
        labels, z = self._base(n, seed, qmc, stream)
        out = np.empty((n, self.dim))
        for k, comp in enumerate(self.components):
            sel = labels == k
            out[sel] = comp.mean + z[sel] @ comp.chol.T
        return out

    def radon(self, w, u):
        return sum(wt * c.radon(w, u) for wt, c in zip(self.weights, self.components))

    def projection_cdf(self, w, u):
        return sum(wt * c.projection_cdf(w, u) for wt, c in zip(self.weights, self.components))

    def cf(self, t):
        return sum(wt * c.cf(t) for wt, c in zip(self.weights, self.components))

    def marginal(self, axes):
        comps = [c.marginal(axes) for c in self.components]
        return NormalMixture(self.weights, [c.mean for c in comps], [c.cov for c in comps])

    def conditional_draws(self, n, seed, axis, *, qmc=False, stream=_random.COEFFICIENTS):
        labels, _ = self._base(n, seed, qmc, stream)
        draws = self.sample(n, seed, qmc=qmc, stream=stream)
        mean, sd = np.empty(n), np.empty(n)
        for k, comp in enumerate(self.components):
            sel = labels == k
            rest, gain, s = comp._conditional_coefficients(axis)
            mean[sel] = comp.mean[axis] + (draws[sel][:, rest] - comp.mean[rest]) @ gain
            sd[sel] = s
        draws[:, axis] = mean
        return draws, mean, sd


class Gumbel(CoefficientDensity):
    """Standard type-I extreme value distribution (location 0, scale 1)."""

    dim = 1

    def pdf(self, points):
        x = _as_points(points, 1)[..., 0]
        with np.errstate(over="ignore"):
            return np.exp(-x - np.exp(-x))

    def cdf(self, x):
        with np.errstate(over="ignore"):
            return np.exp(-np.exp(-np.asarray(x, dtype=float)))

    def sample(self, n, seed, *, qmc=False, stream=_random.TASTE_SHOCKS):
        u = _random.halton(seed, n, 1) if qmc else _random.uniform(seed, stream, n, 1)
        return _random.gumbel_from_uniform(u)

    def projection_cdf(self, w, u):
        w = float(self._check_direction(w)[0])
        u = np.asarray(u, dtype=float)
        if w == 0:
            return (u >= 0).astype(float)
        return self.cdf(u / w) if w > 0 else 1.0 - self.cdf(u / w)

    def radon(self, w, u):
        w = float(self._check_direction(w)[0])
        if abs(abs(w) - 1.0) > 1e-12:
            raise ValueError("w must be a unit vector")
        return self.pdf(np.asarray(u, dtype=float)[..., None] / w)

    def cf(self, t):
        return gamma_fn(1.0 - 1j * np.asarray(t, dtype=float))


class ProductDensity(CoefficientDensity):
    """Independent blocks stacked into one coefficient vector."""

    def __init__(self, parts):
        self.parts = list(parts)
        self.dims = [p.dim for p in self.parts]
        self.offsets = np.concatenate([[0], np.cumsum(self.dims)])
        self.dim = int(self.offsets[-1])

    def _blocks(self, pts):
        return [pts[..., a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    def pdf(self, points):
        pts = _as_points(points, self.dim)
        out = np.ones(pts.shape[:-1])
        for part, block in zip(self.parts, self._blocks(pts)):
            out = out * part.pdf(block)
        return out

    # lattice for the numerical convolution of projected blocks
    SPAN, STEP = 40.0, 0.005

    def _projected(self, w):
        w = self._check_direction(w)
        out = []
        for part, wb in zip(self.parts, self._blocks(w)):
            c = np.linalg.norm(wb)
            if c > 0:
                out.append((c, wb / c, part))
        return out

    def _split(self, w):
        """Cell masses of all but the widest projected block, and that block.

        The leading blocks are discretized by CDF differences over lattice
        cells (exact even for blocks narrower than a cell) and convolved;
        the widest block is kept analytic.
        """
        active = self._projected(w)
        s = np.arange(-self.SPAN, self.SPAN + self.STEP / 2, self.STEP)
        edges = np.concatenate([s - self.STEP / 2, [s[-1] + self.STEP / 2]])
        cdfs = [part.projection_cdf(d, edges / c) for c, d, part in active]
        spread = [np.interp(0.75, F, edges) - np.interp(0.25, F, edges) for F in cdfs]
        last = int(np.argmax(spread))
        mass = None
        for k, F in enumerate(cdfs):
            if k == last:
                continue
            m = np.diff(F)
            mass = m if mass is None else np.convolve(mass, m, mode="same")
        return s, mass, active[last]

    def projection_cdf(self, w, u):
        u = np.asarray(u, dtype=float)
        s, mass, (c, direction, last) = self._split(w)
        if mass is None:
            return last.projection_cdf(direction, u / c)
        return last.projection_cdf(direction, (u[..., None] - s) / c) @ mass

    def radon(self, w, u):
        u = np.asarray(u, dtype=float)
        s, mass, (c, direction, last) = self._split(w)
        if mass is None:
            return last.radon(direction, u / c) / c
        return (last.radon(direction, (u[..., None] - s) / c) / c) @ mass

    def sample(self, n, seed, *, qmc=False, stream=_random.COEFFICIENTS):
        if qmc:
            raise ValueError("quasi-random draws are not supported for product densities")
        return np.concatenate(
            [p.sample(n, seed, stream=100 * stream + i) for i, p in enumerate(self.parts)], axis=1
        )

    def conditional_draws(self, n, seed, axis, *, qmc=False, stream=_random.COEFFICIENTS):
        if qmc:
            raise ValueError("quasi-random draws are not supported for product densities")
        blocks, mean, sd = [], None, None
        for i, (part, lo) in enumerate(zip(self.parts, self.offsets[:-1])):
            sub = 100 * stream + i
            if lo <= axis < lo + part.dim:
                d, mean, sd = part.conditional_draws(n, seed, axis - lo, stream=sub)
            else:
                d = part.sample(n, seed, stream=sub)
            blocks.append(d)
        return np.concatenate(blocks, axis=1), mean, sd


class GridDensity(CoefficientDensity):
    """Density tabulated at the nodes of a rectangular lattice.

    Values between nodes are multilinear interpolates and the density is
    zero outside the lattice. Mass is computed by the trapezoid rule.
    """

    def __init__(self, axes, values):
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        self.values = np.asarray(values, dtype=float)
        self.dim = len(self.axes)
        shape = tuple(a.size for a in self.axes)
        if self.values.shape != shape:
            raise DimensionError("values", f"expected shape {shape}, got {self.values.shape}")
        for a in self.axes:
            if a.size < 2 or np.any(np.diff(a) <= 0):
                raise DimensionError("axes", "each axis needs at least two increasing nodes")
        if np.any(self.values < 0):
            raise ValueError("grid density values must be nonnegative")
        self._interp = RegularGridInterpolator(
            self.axes, self.values, method="linear", bounds_error=False, fill_value=0.0
        )

    @classmethod
    def normalized(cls, axes, values):
        """Build a grid density after rescaling ``values`` to unit mass."""
        raw = cls(axes, values)
        mass = raw.mass
        if mass <= 0:
            raise NormalizationError("grid has no positive mass")
        return cls(axes, raw.values / mass)

    @property
    def lower(self):
        return np.array([a[0] for a in self.axes])

    @property
    def upper(self):
        return np.array([a[-1] for a in self.axes])

    def _node_weights(self):
        w = np.ones(self.values.shape)
        for k, a in enumerate(self.axes):
            wk = np.zeros(a.size)
            h = np.diff(a)
            wk[:-1] += h / 2
            wk[1:] += h / 2
            shape = [1] * self.dim
            shape[k] = a.size
            w = w * wk.reshape(shape)
        return w

    @property
    def mass(self):
        return float(np.sum(self.values * self._node_weights()))

    def check_normalized(self, tol=1e-6):
        mass = self.mass
        if abs(mass - 1.0) > tol:
            raise NormalizationError(f"grid mass {mass:.8g} differs from 1 by more than {tol}")

    def pdf(self, points):
        pts = _as_points(points, self.dim)
        return self._interp(pts.reshape(-1, self.dim)).reshape(pts.shape[:-1])

    def sample(self, n, seed, *, qmc=False, stream=_random.COEFFICIENTS):
        self.check_normalized()
        u = _random.halton(seed, n, self.dim + 1) if qmc else _random.uniform(
            seed, stream, n, self.dim + 1)
        prob = (self.values * self._node_weights()).ravel()
        cum = np.cumsum(prob)
        cum /= cum[-1]
        flat = np.minimum(np.searchsorted(cum, u[:, 0], side="right"), prob.size - 1)
        idx = np.unravel_index(flat, self.values.shape)
        out = np.empty((n, self.dim))
        for k, a in enumerate(self.axes):
            # each node owns the half cells on either side, clipped to the lattice
            i = idx[k]
            left = np.where(i > 0, 0.5 * (a[np.maximum(i - 1, 0)] + a[i]), a[0])
            right = np.where(i < a.size - 1, 0.5 * (a[np.minimum(i + 1, a.size - 1)] + a[i]), a[-1])
            out[:, k] = left + (right - left) * u[:, k + 1]
        return out

    def radon(self, w, u, *, step=None):
        """Hyperplane integral by trapezoid quadrature over interpolated values."""
        w = self._check_direction(w)
        if not np.isclose(np.linalg.norm(w), 1.0, atol=1e-12):
            raise ValueError("direction must be a unit vector")
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if step is None:
            step = 0.5 * min(float(np.min(np.diff(a))) for a in self.axes)
        center = 0.5 * (self.lower + self.upper)
        reach = 0.5 * np.linalg.norm(self.upper - self.lower) + 1e-9
        # orthonormal basis of the hyperplane through the origin
        basis = np.linalg.svd(w[None, :])[2][1:]
        m = int(np.ceil(2 * reach / step)) + 1
        s = np.linspace(-reach, reach, m)
        ds = s[1] - s[0]
        tw = np.full(m, ds)
        tw[[0, -1]] *= 0.5
        mesh = np.stack(np.meshgrid(*([s] * (self.dim - 1)), indexing="ij"), axis=-1)
        mesh = mesh.reshape(-1, self.dim - 1)
        weights = np.prod(np.meshgrid(*([tw] * (self.dim - 1)), indexing="ij"), axis=0).ravel()
        plane = mesh @ basis
        # shift the in-plane patch so it is centred on the box's projection
        center_in_plane = center - (center @ w) * w
        out = np.empty(u.shape)
        for i, ui in enumerate(u):
            pts = ui * w + center_in_plane + plane
            out[i] = np.sum(self._interp(pts) * weights)
        return out

    def cf(self, t):
        if self.dim != 1:
            raise DimensionError("density", "characteristic function needs a 1-d density")
        x = self.axes[0]
        t = np.asarray(t, dtype=float)
        return np.trapezoid(np.exp(1j * np.multiply.outer(t, x)) * self.values, x, axis=-1)
