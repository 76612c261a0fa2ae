"""Simulate, invert and match moments for parametric bundle models.

The price coefficient and the bundle effect are independent normals with
parameters gamma = (mean_alpha, sd_alpha, mean_delta, sd_delta); tastes for
products are normal and integrated analytically. For each candidate gamma
the observed shares of the bundle pairs {(0,0),(0,1)} and {(1,0),(1,1)}
are inverted market by market, and the implied unobserved qualities are
interacted with the instruments.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtri

from . import _random
from .demand import bundle_choice_probabilities
from .errors import ConfigError, ConvergenceError, RcDemandError, SignPatternError
from .gaussian import gauss_hermite_normal
from .inversion import SIGN_PATTERNS, batch_newton

PARAMETER_NAMES = ("mean_alpha", "sd_alpha", "mean_delta", "sd_delta")
PAIRS = (((0, 0), (0, 1)), ((1, 0), (1, 1)))


@dataclass(frozen=True)
class GmmSpec:
    """Settings of the simulated GMM criterion.

    Parameters
    ----------
    lower, upper : sequence of 4 floats
        Box for gamma = (mean_alpha, sd_alpha, mean_delta, sd_delta).
    weight : {"identity", "two-step"}
        Weight matrix; "two-step" re-estimates with the inverse moment
        covariance at the first-step estimate (ridge ``ridge``).
    n_sim : int
        Simulation nodes. With ``draws="hermite"`` the nodes form a tensor
        Gauss-Hermite rule with round(sqrt(n_sim)) points per coefficient.
    draws : {"hermite", "halton", "random"}
    seed : int
        Seed of the simulation draws (common across gamma) and of the
        multistart points.
    constant : bool
        Include a constant among the instruments.
    beta2 : sequence of float
        Fixed coefficients on the non-special characteristics.
    tol : float
        Share tolerance of the inversions.
    """

    lower: tuple = (-3.0, 0.0, -2.0, 0.0)
    upper: tuple = (1.0, 1.5, 2.0, 1.5)
    weight: str = "identity"
    n_sim: int = 25
    draws: str = "hermite"
    seed: int = 0
    constant: bool = True
    beta2: tuple = ()
    ridge: float = 1e-8
    tol: float = 1e-10

    def __post_init__(self):
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if lo.shape != (4,) or hi.shape != (4,):
            raise ConfigError("bounds", "gamma has four components")
        if np.any(lo > hi):
            raise ConfigError("bounds", "every lower bound must not exceed its upper bound")
        if lo[1] < 0 or lo[3] < 0:
            raise ConfigError("bounds", "standard deviations must have nonnegative bounds")
        if self.weight not in ("identity", "two-step"):
            raise ConfigError("weight", "must be 'identity' or 'two-step'")
        if self.draws not in ("hermite", "halton", "random"):
            raise ConfigError("draws", "must be 'hermite', 'halton' or 'random'")
        if self.n_sim < 1:
            raise ConfigError("n_sim", "must be at least 1")


def simulation_nodes(spec: GmmSpec):
    """Standard normal nodes (n, 2) for (alpha, Delta) and their weights."""
    if spec.draws == "hermite":
        k = max(1, int(round(np.sqrt(spec.n_sim))))
        x, w = gauss_hermite_normal(k)
        za, zd = np.meshgrid(x, x, indexing="ij")
        wt = np.outer(w, w).ravel()
        return np.stack([za.ravel(), zd.ravel()], axis=1), wt / wt.sum()
    if spec.draws == "halton":
        z = ndtri(_random.halton(spec.seed, spec.n_sim, 2))
    else:
        z = _random.standard_normal(spec.seed, _random.COEFFICIENTS, spec.n_sim, 2)
    return z, np.full(spec.n_sim, 1.0 / spec.n_sim)


class BundleShareSimulator:
    """Bundle shares as a function of gamma with nodes fixed once."""

    def __init__(self, model_spec, gmm_spec):
        if model_spec.menu != "bundles" or model_spec.sigma_eps != 1:
            raise ConfigError("menu", "the GMM pipeline is for bundle menus with tastes")
        beta2 = np.asarray(gmm_spec.beta2, dtype=float).reshape(-1)
        if beta2.size != model_spec.d_x - 1:
            raise ConfigError("beta2", f"expected {model_spec.d_x - 1} fixed coefficients")
        self.model_spec, self.beta2 = model_spec, beta2
        self.nodes, self.weights = simulation_nodes(gmm_spec)

    def __call__(self, gamma, x2, p, delta):
        """Shares over (0,0), (1,0), (0,1), (1,1) for markets (M, 2)."""
        ma, sa, md, sd = np.asarray(gamma, dtype=float)
        alpha = ma + sa * self.nodes[:, 0]
        bundle = md + sd * self.nodes[:, 1]
        base = delta + (x2 @ self.beta2 if self.beta2.size else 0.0)
        v = base[:, None, :] + alpha[None, :, None] * p[:, None, :]
        probs = bundle_choice_probabilities(v[..., 0], v[..., 1], bundle[None, :],
                                            self.model_spec.eps_cov)
        return np.einsum("mnk,n->mk", probs, self.weights)


def _starting_delta(data, gamma):
    """Indices that reproduce purchase rates when bundles carry no extra utility."""
    s = data.shares
    buy1 = s[:, data.spec.label_index((1, 0))] + s[:, data.spec.label_index((1, 1))]
    buy2 = s[:, data.spec.label_index((0, 1))] + s[:, data.spec.label_index((1, 1))]
    buy = np.clip(np.stack([buy1, buy2], axis=1), 1e-6, 1 - 1e-6)
    return ndtri(buy) - gamma[0] * data.p


@dataclass
class MomentState:
    """Last inverted indices and share Jacobians per subsystem.

    Both are reused by the next call: the indices as starting values and
    the Jacobians for chord iterations.
    """

    deltas: dict = field(default_factory=dict)
    jacobians: dict = field(default_factory=dict)

    def clear(self):
        self.deltas.clear()
        self.jacobians.clear()


def _jacobian(fn, x, base, step=1e-6):
    m, dim = x.shape
    jac = np.empty((m, dim, dim))
    everyone = np.arange(m)
    for k in range(dim):
        h = step * (1.0 + np.abs(x[:, k]))
        xp = x.copy()
        xp[:, k] += h
        jac[:, :, k] = (fn(xp, everyone) - base) / h[:, None]
    return jac


def _chord(fn, target, x0, jac, tol, max_iter=8):
    """Iterate x <- x - J^{-1} r with a fixed Jacobian; None unless converged."""
    everyone = np.arange(len(x0))
    x = x0.copy()
    prev = np.inf
    for _ in range(max_iter):
        res = fn(x, everyone) - target
        norm = np.max(np.abs(res))
        if norm <= tol:
            return x
        if not norm < 0.5 * prev:
            return None
        prev = norm
        step = np.linalg.solve(jac, -res[..., None])[..., 0]
        if np.max(np.abs(step)) > 1.0:
            return None
        x = x + step
    return None


def invert_pairs(gamma, simulator, data, *, tol=1e-10, state=None):
    """Indices implied by each bundle pair at gamma.

    Returns a dict mapping each pair in ``PAIRS`` to an (T, 2) array.
    Raises :class:`ConvergenceError` naming the first failing market.
    """
    gamma = np.asarray(gamma, dtype=float)
    out = {}
    for pair in PAIRS:
        cols = [data.spec.label_index(lab) for lab in pair]
        target = data.shares[:, cols]
        if np.any(target <= 0) or np.any(target >= 1):
            raise ConvergenceError("observed shares must lie strictly inside (0, 1)",
                                   best=None, residual=None, iterations=0)
        signs = SIGN_PATTERNS[("bundles", pair)]

        def fn(delta, idx, cols=cols):
            return simulator(gamma, data.x2[idx], data.p[idx], delta)[:, cols]

        start = None if state is None else state.deltas.get(pair)
        if start is None:
            start = _starting_delta(data, gamma)
        elif pair in state.jacobians:
            found = _chord(fn, target, start, state.jacobians[pair], tol)
            if found is not None:
                out[pair] = state.deltas[pair] = found
                continue
        try:
            res = batch_newton(fn, target, start, tol=tol, signs=signs,
                               det_sign=np.sign(np.linalg.det(signs)), polish=False)
        except ConvergenceError as err:
            bad = int(np.argmax(err.residual))
            raise ConvergenceError(
                f"inversion of {pair} failed at market {bad} for gamma={gamma.tolist()}",
                best=err.best, residual=err.residual, iterations=err.iterations) from err
        except SignPatternError as err:
            raise ConvergenceError(f"{err} for gamma={gamma.tolist()}", best=None,
                                   residual=None, iterations=0) from err
        out[pair] = res.delta
        if state is not None:
            state.deltas[pair] = res.delta
            base = fn(res.delta, np.arange(len(target)))
            jac = _jacobian(fn, res.delta, base)
            if np.all(np.abs(np.linalg.det(jac)) > 1e-12):
                state.jacobians[pair] = jac
    return out


def moment_contributions(gamma, simulator, data, *, constant=True, tol=1e-10, state=None):
    """Per-market moments (T, 3 * L): three residuals times the instruments.

    Residuals are psi_1 - x1_1 and psi_2 - x1_2 from the pair
    {(0,0),(0,1)} and psi_1 - x1_1 from {(1,0),(1,1)}; the fourth equation
    is redundant because shares sum to one.
    """
    deltas = invert_pairs(gamma, simulator, data, tol=tol, state=state)
    a, b = deltas[PAIRS[0]], deltas[PAIRS[1]]
    resid = np.stack([a[:, 0] - data.x1[:, 0], a[:, 1] - data.x1[:, 1],
                      b[:, 0] - data.x1[:, 0]], axis=1)
    inst = data.instruments(constant)
    return (resid[:, :, None] * inst[:, None, :]).reshape(data.n_markets, -1)


def weight_matrix(contributions, ridge=1e-8):
    """Inverse outer-product covariance of the moment contributions."""
    S = contributions.T @ contributions / contributions.shape[0]
    return np.linalg.inv(S + ridge * np.eye(S.shape[0]))


def gmm_criterion(gamma, spec: GmmSpec, data, *, weight=None, simulator=None, state=None):
    """Q_n(gamma) = g_n' W g_n with g_n the average moment contribution.

    ``weight`` defaults to the identity. Deterministic in (gamma,
    spec.seed) up to the inversion tolerance; passing a ``state`` warm
    starts the inversions from the previous call.
    """
    sim = simulator if simulator is not None else BundleShareSimulator(data.spec, spec)
    m = moment_contributions(gamma, sim, data, constant=spec.constant, tol=spec.tol,
                             state=state)
    g = m.mean(axis=0)
    W = np.eye(g.size) if weight is None else weight
    return float(g @ W @ g)


@dataclass
class GmmResult:
    """Estimate with diagnostics.

    ``on_boundary`` flags components within 1e-3 of the box relative to
    its width; ``starts`` holds one report per Nelder-Mead start.
    """

    gamma: np.ndarray
    q: float
    on_boundary: np.ndarray
    weight: np.ndarray
    starts: list
    trace: list


def start_points(spec: GmmSpec, n_starts):
    """Box center followed by seeded uniform points inside the box."""
    lo, hi = np.asarray(spec.lower, float), np.asarray(spec.upper, float)
    u = _random.uniform(spec.seed, _random.STARTS, max(n_starts - 1, 0), 4)
    pts = [0.5 * (lo + hi)] + [lo + (hi - lo) * row for row in u]
    return np.array(pts[:n_starts])


def _minimize(spec, data, simulator, weight, starts, maxfev, xatol, fatol, trace):
    lo, hi = np.asarray(spec.lower, float), np.asarray(spec.upper, float)
    reports = []
    for k, x0 in enumerate(starts):
        state = MomentState()

        def objective(gamma):
            g = np.clip(gamma, lo, hi)
            try:
                q = gmm_criterion(g, spec, data, weight=weight, simulator=simulator, state=state)
            except RcDemandError:
                state.clear()
                q = np.inf
            trace.append((k, g.copy(), q))
            return q

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(objective, x0, method="Nelder-Mead",
                           bounds=list(zip(lo, hi)),
                           options={"maxfev": maxfev, "xatol": xatol, "fatol": fatol})
        reports.append({"start": x0, "gamma": np.clip(res.x, lo, hi), "q": float(res.fun),
                        "evaluations": int(res.nfev), "message": str(res.message)})
    return reports


def gmm_estimate(spec: GmmSpec, data, *, n_starts=5, maxfev=400, xatol=1e-4, fatol=1e-12):
    """Multistart Nelder-Mead over the box with common simulation nodes.

    Raises
    ------
    ConvergenceError
        If the criterion is infinite at the end of every start.
    """
    if n_starts < 1:
        raise ConfigError("n_starts", "need at least one start")
    simulator = BundleShareSimulator(data.spec, spec)
    trace = []
    dim = 3 * data.instruments(spec.constant).shape[1]
    weight = np.eye(dim)
    reports = _minimize(spec, data, simulator, weight, start_points(spec, n_starts), maxfev,
                        xatol, fatol, trace)
    finite = [r for r in reports if np.isfinite(r["q"])]
    if not finite:
        raise ConvergenceError("every start failed: " + "; ".join(
            f"start {r['start'].tolist()}: {r['message']}" for r in reports),
            best=None, residual=None, iterations=0)
    best = min(finite, key=lambda r: r["q"])
    if spec.weight == "two-step":
        contrib = moment_contributions(best["gamma"], simulator, data, constant=spec.constant,
                                       tol=spec.tol)
        weight = weight_matrix(contrib, spec.ridge)
        second = _minimize(spec, data, simulator, weight, [best["gamma"]], maxfev, xatol,
                           fatol, trace)
        reports += second
        if np.isfinite(second[0]["q"]):
            best = second[0]
    gamma = best["gamma"]
    q = gmm_criterion(gamma, spec, data, weight=weight, simulator=simulator)
    lo, hi = np.asarray(spec.lower, float), np.asarray(spec.upper, float)
    margin = 1e-3 * np.maximum(hi - lo, 1e-12)
    on_boundary = (gamma - lo <= margin) | (hi - gamma <= margin)
    return GmmResult(gamma, q, on_boundary, weight, reports, trace)
