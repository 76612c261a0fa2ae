"""Separating independent summands by characteristic-function division.

If Y = X + E with X and E independent, the characteristic function of X is
psi_Y / psi_E wherever psi_E does not vanish. Here E is a taste shock and
X a bundle effect; the recovered density is the inverse transform of the
ratio with frequencies of small |psi_E| discarded.
"""

import functools
from dataclasses import dataclass

import numpy as np

from .densities import CoefficientDensity, GridDensity
from .errors import DimensionError
from .radon import DensityGrid

T_MAX = 40.0
N_FREQ = 2 ** 12
DEFAULT_CUTOFF = 1e-3
MIN_CELL_MASS = 1e-6


def frequency_lattice(t_max=T_MAX, n=N_FREQ):
    """Uniform lattice on [-t_max, t_max) that contains t = 0."""
    if n < 2 or n % 2:
        raise ValueError("the number of frequencies must be even and at least 2")
    step = 2.0 * t_max / n
    return (np.arange(n) - n // 2) * step


@dataclass(frozen=True)
class CharacteristicFunction:
    """Values of E[exp(i t X)] on a uniform frequency lattice."""

    t: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.values, dtype=complex)
        if t.ndim != 1 or v.shape[-1] != t.size:
            raise DimensionError("values", "values must follow the frequency lattice")
        if t.size < 2 or not np.allclose(np.diff(t), t[1] - t[0]):
            raise DimensionError("t", "frequencies must be uniformly spaced")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", v)

    @property
    def step(self):
        return float(self.t[1] - self.t[0])

    def at_zero(self):
        k = int(np.argmin(np.abs(self.t)))
        return self.values[..., k]

    def negated(self):
        """Characteristic function of -X, the complex conjugate."""
        return CharacteristicFunction(self.t, np.conj(self.values))

    def compatible(self, other):
        return self.t.size == other.t.size and np.allclose(self.t, other.t)


def _trapezoid_weights(x):
    w = np.zeros(x.size)
    d = np.diff(x)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


def _fourier(x, f, t):
    """Trapezoid approximation of the integral of exp(i t x) f(x) dx."""
    w = _trapezoid_weights(x)
    phase = np.exp(1j * np.outer(x, t))
    return (np.asarray(f) * w) @ phase


def cf_from_density(density, t=None):
    """Characteristic function of a one-dimensional density.

    ``density`` may be a 1-d :class:`CoefficientDensity` with a closed form
    (normal, mixture, point mass, Gumbel), a 1-d :class:`GridDensity` or
    :class:`DensityGrid`, or a pair ``(x, f)`` of nodes and values. Grid
    input is transformed by the trapezoid rule and scaled to unit mass.
    """
    t = frequency_lattice() if t is None else np.asarray(t, dtype=float)
    if isinstance(density, CoefficientDensity) and not isinstance(density, GridDensity):
        if density.dim != 1:
            raise DimensionError("density", "characteristic functions are for 1-d densities")
        return CharacteristicFunction(t, density.cf(t))
    if isinstance(density, GridDensity):
        if density.dim != 1:
            raise DimensionError("density", "characteristic functions are for 1-d densities")
        x, f = density.axes[0], density.values
    elif isinstance(density, DensityGrid):
        if density.dim != 1:
            raise DimensionError("density", "characteristic functions are for 1-d densities")
        x, f = density.axes[0], density.values
    else:
        x, f = (np.asarray(a, dtype=float) for a in density)
    mass = np.trapezoid(f, x, axis=-1)
    if np.any(mass <= 0):
        raise ValueError("density has no mass")
    return CharacteristicFunction(t, _fourier(x, f, t) / np.asarray(mass)[..., None])


def inverse_cf(psi: CharacteristicFunction, x):
    """Density values at ``x`` from characteristic function values."""
    x = np.asarray(x, dtype=float)
    w = np.full(psi.t.size, psi.step)
    w[[0, -1]] *= 0.5
    kernel = np.exp(-1j * np.outer(psi.t, x)) * w[:, None]
    return np.real(psi.values @ kernel) / (2 * np.pi)


def _clip_normalize(x, f):
    neg = -np.trapezoid(np.minimum(f, 0.0), x, axis=-1)
    f = np.maximum(f, 0.0)
    mass = np.trapezoid(f, x, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(np.asarray(mass)[..., None] > 0, f / np.asarray(mass)[..., None], 0.0)
    return f, neg


def _ratio(psi_sum, psi_noise, cutoff):
    if not psi_sum.compatible(psi_noise):
        raise DimensionError("psi_noise", "characteristic functions use different lattices")
    scale = np.abs(psi_noise.at_zero())
    keep = np.abs(psi_noise.values) >= cutoff * np.asarray(scale)[..., None]
    zero = int(np.argmin(np.abs(psi_sum.t)))
    if not np.all(np.any(np.delete(keep, zero, axis=-1), axis=-1)):
        raise ValueError("the noise characteristic function is below the cutoff at every "
                         "nonzero frequency")
    num, den = np.broadcast_arrays(psi_sum.values, psi_noise.values)
    ratio = np.divide(num, den, out=np.zeros(num.shape, dtype=complex),
                      where=np.broadcast_to(keep, num.shape))
    return ratio, keep


def deconvolve(psi_sum, psi_noise, cutoff=DEFAULT_CUTOFF, x=None):
    """Density of X from the characteristic functions of X + E and of E.

    Frequencies where |psi_noise| falls below ``cutoff`` times |psi_noise(0)|
    are set to zero; the inverse transform is clipped at zero and scaled to
    unit mass on ``x`` (default: 801 points on [-10, 10]).

    Returns
    -------
    DensityGrid
        One-dimensional; ``diagnostics`` holds the clipped negative mass
        and the largest retained frequency.
    """
    x = np.linspace(-10, 10, 801) if x is None else np.asarray(x, dtype=float)
    ratio, keep = _ratio(psi_sum, psi_noise, cutoff)
    raw = inverse_cf(CharacteristicFunction(psi_sum.t, ratio), x)
    f, neg = _clip_normalize(x, raw)
    t_kept = float(np.max(np.abs(psi_sum.t[keep]))) if keep.ndim == 1 else None
    return DensityGrid((x,), f, {"negative_mass": float(neg), "max_frequency": t_kept})


def deconvolve_difference(psi_diff, psi_subtrahend, cutoff=DEFAULT_CUTOFF, x=None):
    """Density of A from D = A - B with B independent of A.

    psi_D = psi_A conj(psi_B), so this divides by the conjugate of psi_B
    (used to pass from Delta_(2,1) - Delta_(1,1) to Delta_(2,1)).
    """
    return deconvolve(psi_diff, psi_subtrahend.negated(), cutoff, x)


@dataclass
class ConditionalDeconvolution:
    """Per-cell deconvolved densities over a conditioning lattice.

    ``raw[i, ..., :]`` is the unclipped inverse transform on ``x`` given
    cell i of the conditioning axes and ``weights`` the conditioning mass
    of each cell (zero for skipped cells).
    """

    axes: tuple
    x: np.ndarray
    raw: np.ndarray
    weights: np.ndarray
    skipped: int

    @property
    def densities(self):
        """Per-cell densities clipped at zero with unit mass."""
        return _clip_normalize(self.x, self.raw)[0]

    def marginal(self):
        """Mixture of the cell densities weighted by the conditioning mass.

        Cells are averaged before clipping, so sampling noise of
        opposite signs in different cells can cancel.
        """
        w = self.weights / self.weights.sum()
        f = np.tensordot(w, self.raw, axes=w.ndim)
        f, neg = _clip_normalize(self.x, f)
        return DensityGrid((self.x,), f, {"negative_mass": float(neg)})


def _cell_weights(axes):
    """Trapezoid weights of a tensor lattice."""
    return functools.reduce(np.multiply.outer, [_trapezoid_weights(a) for a in axes])


def deconvolve_conditional(joint_sum: DensityGrid, joint_noise: DensityGrid,
                           cutoff=DEFAULT_CUTOFF, x=None, t=None, min_mass=MIN_CELL_MASS):
    """Deconvolve the last coordinate cell by cell over the leading axes.

    Both grids hold joint densities whose leading axes are the
    conditioning coefficients (for instance beta2 and alpha) and whose
    last axis carries the taste (``joint_noise``) or the taste plus the
    bundle effect (``joint_sum``). Each conditioning cell's slices are
    normalized to conditional densities and divided in the frequency
    domain. Cells whose conditioning mass under ``joint_noise`` is below
    ``min_mass`` are skipped.
    """
    if joint_sum.dim != joint_noise.dim or joint_sum.dim < 2:
        raise DimensionError("joint_sum", "need two joint grids of equal dimension >= 2")
    lead_s, lead_n = joint_sum.axes[:-1], joint_noise.axes[:-1]
    if any(a.shape != b.shape or not np.allclose(a, b) for a, b in zip(lead_s, lead_n)):
        raise DimensionError("joint_sum", "conditioning axes differ between the grids")
    t = frequency_lattice() if t is None else np.asarray(t, dtype=float)
    x = np.linspace(-10, 10, 801) if x is None else np.asarray(x, dtype=float)
    ys, yn = joint_sum.axes[-1], joint_noise.axes[-1]
    vs = np.maximum(joint_sum.values, 0.0)
    vn = np.maximum(joint_noise.values, 0.0)
    lead_shape = vs.shape[:-1]
    vs, vn = vs.reshape(-1, ys.size), vn.reshape(-1, yn.size)
    cell_mass = np.trapezoid(vn, yn, axis=-1) * _cell_weights(lead_n).reshape(-1)
    sum_mass = np.trapezoid(vs, ys, axis=-1)
    active = (cell_mass >= min_mass) & (sum_mass > 0)
    dens = np.zeros((vs.shape[0], x.size))
    if np.any(active):
        psi_s = cf_from_density((ys, vs[active]), t)
        psi_n = cf_from_density((yn, vn[active]), t)
        ratio, _ = _ratio(psi_s, psi_n, cutoff)
        dens[active] = inverse_cf(CharacteristicFunction(t, ratio), x)
    weights = np.where(active, cell_mass, 0.0)
    return ConditionalDeconvolution(lead_n, x, dens.reshape(lead_shape + (x.size,)),
                                    weights.reshape(lead_shape), int(np.sum(~active)))


def compose_joint(slices, marginal=None):
    """Product-form joint density from conditionally independent pieces.

    Parameters
    ----------
    slices : sequence of DensityGrid
        Each either one-dimensional (independent of everything else) or
        with leading axes equal to the axes of ``marginal`` and one extra
        trailing axis (a conditional density per conditioning cell).
    marginal : DensityGrid, optional
        Density of the conditioning coefficients.

    Returns
    -------
    GridDensity
        Joint density over (marginal axes, slice axes), renormalized.
    """
    if not slices:
        raise ValueError("need at least one slice")
    axes = list(marginal.axes) if marginal is not None else []
    m = len(axes)
    joint = np.maximum(marginal.values, 0.0) if marginal is not None else np.ones(())
    for sl in slices:
        v = np.maximum(sl.values, 0.0)
        if sl.dim == 1:
            cond = v / np.trapezoid(v, sl.axes[0])
            shape = (1,) * m + (1,) * (len(axes) - m) + (cond.size,)
            joint = joint[..., None] * cond.reshape(shape)
        else:
            if marginal is None or sl.dim != m + 1 or any(
                    a.shape != b.shape or not np.allclose(a, b)
                    for a, b in zip(sl.axes[:-1], marginal.axes)):
                raise DimensionError("slices", "conditional slice axes must match the marginal")
            mass = np.trapezoid(v, sl.axes[-1], axis=-1)[..., None]
            with np.errstate(invalid="ignore", divide="ignore"):
                cond = np.where(mass > 0, v / mass, 0.0)
            extra = len(axes) - m
            cond = cond.reshape(cond.shape[:-1] + (1,) * extra + cond.shape[-1:])
            joint = joint[..., None] * cond
        axes.append(sl.axes[-1])
    return GridDensity.normalized(axes, joint)
