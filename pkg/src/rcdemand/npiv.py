"""Tikhonov-regularized nonparametric instrumental variables.

The structural function psi solves E[psi(W) | Z, X] = x1, where W collects
the arguments of the inverse demand (characteristics, prices, shares).
psi is expanded in tensor-product cubic B-splines, the conditional
expectation is replaced by a series regression on a spline basis of the
instruments, and the resulting linear system is solved by penalized least
squares, optionally restricted to functions monotone in one argument.
"""

from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from scipy.interpolate import BSpline
from scipy.optimize import lsq_linear

from .errors import ConfigError, DimensionError, RcDemandError
from .gaussian import gauss_legendre

PENALTIES = ("norm", "monotone")


class IllPosedError(RcDemandError, np.linalg.LinAlgError):
    """The unregularized normal equations are singular; use alpha > 0."""


@dataclass(frozen=True)
class SplineBasis:
    """Tensor-product cubic B-splines on a box.

    Each axis gets ``n_knots`` equally spaced breakpoints including both
    ends, hence ``n_knots + 2`` cubic functions per axis. Points outside
    the box are evaluated by the polynomial pieces of the nearest
    interval.
    """

    lower: tuple
    upper: tuple
    n_knots: int = 5
    degree: int = 3

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi):
            raise DimensionError("upper", "must match the length of lower")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ConfigError("bounds", "every upper bound must exceed its lower bound")
        if self.n_knots < 2:
            raise ConfigError("n_knots", "need at least the two end points")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def covering(cls, points, n_knots=5, pad=1e-9):
        """Basis on the bounding box of ``points`` (n, d)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        span = np.maximum(hi - lo, 1e-12)
        return cls(tuple(lo - pad * span), tuple(hi + pad * span), n_knots)

    @property
    def dim(self):
        return len(self.lower)

    @property
    def per_axis(self):
        return self.n_knots + self.degree - 1

    @property
    def size(self):
        return self.per_axis ** self.dim

    @property
    def shape(self):
        return (self.per_axis,) * self.dim

    def knots(self, axis):
        inner = np.linspace(self.lower[axis], self.upper[axis], self.n_knots)
        k = self.degree
        return np.concatenate([np.full(k, inner[0]), inner, np.full(k, inner[-1])])

    def axis_matrix(self, axis, x):
        """Values of the axis functions at ``x``, shape (len(x), per_axis)."""
        x = np.asarray(x, dtype=float)
        t = self.knots(axis)
        inside = np.clip(x, self.lower[axis], self.upper[axis])
        out = BSpline.design_matrix(inside, t, self.degree, extrapolate=False).toarray()
        outside = x != inside
        if np.any(outside):
            eye = np.eye(self.per_axis)
            for k in range(self.per_axis):
                out[outside, k] = BSpline(t, eye[k], self.degree, extrapolate=True)(x[outside])
        return out

    def design(self, points):
        """Tensor design matrix (n, size) with the last axis varying fastest."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim:
            raise DimensionError("points", f"expected {self.dim} columns")
        mats = [self.axis_matrix(a, pts[:, a]) for a in range(self.dim)]
        return reduce(lambda acc, m: (acc[:, :, None] * m[:, None, :]).reshape(len(pts), -1),
                      mats[1:], mats[0])

    def gram(self):
        """L2 inner products of the basis functions over the box."""
        x, w = gauss_legendre(8)
        grams = []
        for a in range(self.dim):
            inner = np.linspace(self.lower[a], self.upper[a], self.n_knots)
            nodes = (inner[:-1, None] + np.diff(inner)[:, None] * x).ravel()
            weights = (np.diff(inner)[:, None] * w).ravel()
            B = self.axis_matrix(a, nodes)
            grams.append(B.T @ (weights[:, None] * B))
        return reduce(np.kron, grams)


@dataclass
class NpivProblem:
    """Discretized operator equation ``operator @ coef = response``.

    Parameters
    ----------
    operator : ndarray, shape (n, k)
        Estimated conditional expectation of the basis functions given
        the instruments, one row per observation.
    response : ndarray, shape (n,)
    alpha : float
        Regularization weight, nonnegative.
    penalty : {"norm", "monotone"}
        Squared norm, or squared norm plus the constraint that the fitted
        function is monotone along ``monotone_axis``.
    gram : ndarray, shape (k, k), optional
        Inner products defining the norm; identity when omitted.
    basis : SplineBasis, optional
        Needed for the monotone penalty and for evaluating the fit.
    monotone_axis : int
    increasing : bool
    """

    operator: np.ndarray
    response: np.ndarray
    alpha: float = 0.0
    penalty: str = "norm"
    gram: np.ndarray = None
    basis: SplineBasis = None
    monotone_axis: int = 0
    increasing: bool = True

    def __post_init__(self):
        self.operator = np.atleast_2d(np.asarray(self.operator, dtype=float))
        self.response = np.asarray(self.response, dtype=float).reshape(-1)
        n, k = self.operator.shape
        if self.response.size != n:
            raise DimensionError("response", f"expected {n} entries to match the operator")
        if not self.alpha >= 0:
            raise ConfigError("alpha", "must be nonnegative")
        if self.penalty not in PENALTIES:
            raise ConfigError("penalty", f"must be one of {PENALTIES}")
        if self.gram is not None:
            self.gram = np.asarray(self.gram, dtype=float)
            if self.gram.shape != (k, k):
                raise DimensionError("gram", f"expected shape {(k, k)}")
        if self.basis is not None and self.basis.size != k:
            raise DimensionError("basis", f"has {self.basis.size} functions, operator has {k}")
        if self.penalty == "monotone":
            if self.basis is None:
                raise ConfigError("basis", "the monotone penalty needs the spline basis")
            if not 0 <= self.monotone_axis < self.basis.dim:
                raise ConfigError("monotone_axis", "out of range")

    def objective(self, coef):
        """Mean squared residual plus alpha times the squared norm."""
        coef = np.asarray(coef, dtype=float)
        r = self.operator @ coef - self.response
        return float(r @ r / r.size + self.alpha * penalty_value(self, coef))


def penalty_value(problem, coef):
    G = problem.gram
    return float(coef @ coef) if G is None else float(coef @ G @ coef)


@dataclass
class NpivFit:
    """Fitted coefficients with the mean squared residual and the penalty."""

    coef: np.ndarray
    residual: float
    penalty: float
    alpha: float
    basis: SplineBasis = None
    info: dict = field(default_factory=dict)

    def __call__(self, points):
        if self.basis is None:
            raise ConfigError("basis", "the fit carries no basis to evaluate")
        return self.basis.design(points) @ self.coef


def _penalty_root(problem):
    """R with R'R equal to the Gram matrix."""
    k = problem.operator.shape[1]
    if problem.gram is None:
        return np.eye(k)
    vals, vecs = np.linalg.eigh(0.5 * (problem.gram + problem.gram.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))).T


def _cumulative_map(basis, axis, increasing):
    """Matrix L with coef = L theta, where theta holds first coefficients and
    increments along ``axis``; monotone splines have increments of one sign."""
    n = basis.per_axis
    steps = np.tril(np.ones((n, n)))
    if not increasing:
        steps[:, 1:] *= -1
    mats = [np.eye(n)] * basis.dim
    mats[axis] = steps
    return reduce(np.kron, mats)


def _bounds(basis, axis):
    """Lower bounds on theta: free first coefficients, nonnegative increments."""
    idx = np.indices(basis.shape).reshape(basis.dim, -1)[axis]
    lower = np.where(idx == 0, -np.inf, 0.0)
    return lower, np.full(lower.size, np.inf)


def npiv_fit(problem: NpivProblem, *, rcond=1e-12):
    """Minimize mean squared residual plus alpha times the squared norm.

    Raises
    ------
    IllPosedError
        If alpha is zero and the operator does not have full column rank.
    """
    A, y = problem.operator, problem.response
    n, k = A.shape
    scale = 1.0 / np.sqrt(n)
    R = _penalty_root(problem)
    if problem.alpha == 0:
        sv = np.linalg.svd(A, compute_uv=False)
        if sv.size < k or sv[-1] <= rcond * sv[0]:
            raise IllPosedError(
                "normal equations are singular at alpha=0; choose alpha > 0")
    stacked = np.vstack([scale * A, np.sqrt(problem.alpha) * R])
    rhs = np.concatenate([scale * y, np.zeros(R.shape[0])])
    info = {}
    if problem.penalty == "monotone":
        basis = problem.basis
        L = _cumulative_map(basis, problem.monotone_axis, problem.increasing)
        res = lsq_linear(stacked @ L, rhs, bounds=_bounds(basis, problem.monotone_axis),
                         method="bvls", tol=1e-12, lsq_solver="exact")
        coef = L @ res.x
        info = {"status": int(res.status), "active": int(np.sum(res.active_mask != 0))}
    else:
        coef = np.linalg.lstsq(stacked, rhs, rcond=None)[0]
    r = A @ coef - y
    return NpivFit(coef, float(r @ r / n), penalty_value(problem, coef), problem.alpha,
                   problem.basis, info)


def series_operator(basis_values, instrument_values, ridge=0.0):
    """Project the basis columns onto the span of the instrument columns.

    ``basis_values`` (n, k) holds the psi basis at the observations and
    ``instrument_values`` (n, m) the instrument basis; the result is the
    fitted conditional expectation of each basis function, (n, k).
    """
    B = np.asarray(basis_values, dtype=float)
    C = np.asarray(instrument_values, dtype=float)
    if B.shape[0] != C.shape[0]:
        raise DimensionError("instrument_values", "row count differs from the basis values")
    if ridge > 0:
        coef = np.linalg.solve(C.T @ C + ridge * np.eye(C.shape[1]), C.T @ B)
    else:
        coef = np.linalg.lstsq(C, B, rcond=None)[0]
    return C @ coef


def npiv_problem(arguments, instruments, response, *, alpha=0.0, penalty="norm",
                 n_knots=5, instrument_knots=None, monotone_axis=0, increasing=True,
                 basis=None):
    """Assemble an :class:`NpivProblem` from observations.

    Parameters
    ----------
    arguments : ndarray, shape (n, d)
        Arguments of psi per observation.
    instruments : ndarray, shape (n, m)
        Conditioning variables; expanded in a tensor spline basis with
        ``instrument_knots`` breakpoints per axis (default ``n_knots + 2``).
    response : ndarray, shape (n,)
    """
    W = np.atleast_2d(np.asarray(arguments, dtype=float))
    Z = np.atleast_2d(np.asarray(instruments, dtype=float))
    if W.shape[0] != Z.shape[0]:
        raise DimensionError("instruments", "row count differs from the arguments")
    basis = basis if basis is not None else SplineBasis.covering(W, n_knots)
    zbasis = SplineBasis.covering(Z, instrument_knots or n_knots + 2)
    T = series_operator(basis.design(W), zbasis.design(Z))
    return NpivProblem(T, response, alpha, penalty, basis.gram(), basis, monotone_axis,
                       increasing)


def panel_arguments(data, j=0, columns=("p", "share")):
    """Arguments, instruments and response of psi_j from a market panel.

    ``columns`` picks from "x2" (all goods), "p" (all goods) and "share"
    (the inside shares, that is every label but the first). Instruments
    are the non-constant entries of ``data.instruments``; they include
    x1 of good j, which is also the response, because the identifying
    restriction conditions on all characteristics.
    """
    T = data.n_markets
    parts = {"x2": data.x2.reshape(T, -1), "p": data.p, "share": data.shares[:, 1:]}
    unknown = set(columns) - set(parts)
    if unknown:
        raise ConfigError("columns", f"unknown argument groups {sorted(unknown)}")
    W = np.concatenate([parts[c] for c in columns], axis=1)
    Z = data.instruments(constant=False)
    return W, Z, data.x1[:, j]


__all__ = [
    "IllPosedError", "NpivFit", "NpivProblem", "PENALTIES", "SplineBasis", "npiv_fit",
    "npiv_problem", "panel_arguments", "penalty_value", "series_operator",
]
