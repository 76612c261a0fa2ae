"""Inverting share maps for the vertical indices delta.

All solvers run on smoothed shares from a :class:`DemandOracle` and work on
a batch of markets at once: residuals, finite-difference Jacobians and the
damping line search are vectorized, and markets drop out of the active set
as they converge.
"""

from dataclasses import dataclass, field

import numpy as np

from .demand import DemandOracle
from .densities import CoefficientDensity
from .errors import ConvergenceError, DimensionError, SignPatternError
from .model import ProductMenu

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200
MAX_HALVINGS = 30
FD_STEP = 1e-5
DEFAULT_SMOOTH_DRAWS = 2000


@dataclass
class InversionResult:
    """Recovered indices with convergence diagnostics.

    For a batch of markets ``delta`` has shape ``(M, K)`` and
    ``residual_norm`` / ``iterations`` are per market.
    """

    delta: np.ndarray
    residual_norm: np.ndarray
    iterations: np.ndarray
    history: list = field(default_factory=list)
    jacobian_dets: list = field(default_factory=list)


# expected signs of d share / d delta for each two-alternative subsystem
SIGN_PATTERNS = {
    ("bundles", ((0, 0), (0, 1))): np.array([[-1, -1], [-1, 1]]),
    ("bundles", ((1, 0), (1, 1))): np.array([[1, -1], [1, 1]]),
    ("multiunit", ((0, 0), (0, 1))): np.array([[-1, -1], [-1, 1]]),
    ("multiunit", ((2, 0), (2, 1))): np.array([[1, -1], [1, 1]]),
}


def _as_oracle(spec, demand):
    if isinstance(demand, DemandOracle):
        if not demand.smooth:
            raise ValueError("inversion needs a smoothed demand oracle")
        return demand
    if isinstance(demand, CoefficientDensity):
        return DemandOracle(spec, demand, DEFAULT_SMOOTH_DRAWS, seed=0, smooth=True)
    raise TypeError("expected a DemandOracle or a CoefficientDensity")


def _batch_menu(spec, x2, p):
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    x2 = np.asarray(x2, dtype=float)
    k = spec.d_x - 1
    x2 = x2.reshape(p.shape + (k,))
    return x2, p, single


def batch_newton(fn, target, x0, *, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                 signs=None, det_sign=None, polish=True, raise_on_failure=True,
                 max_step=1.0):
    """Damped Newton on ``fn(x, idx) = target`` for a batch of square systems.

    Parameters
    ----------
    fn : callable
        ``fn(x, idx)`` returns the model values for markets ``idx`` at
        points ``x`` of shape ``(len(idx), K)``.
    target : ndarray, shape (M, K)
    x0 : ndarray, shape (M, K)
    signs, det_sign : optional
        Expected sign pattern of the Jacobian and of its determinant,
        checked at every accepted iterate.
    polish : bool
        Take one more Newton step after reaching ``tol`` when it reduces
        the residual.
    max_step : float
        Cap on the largest coordinate of a step. Share maps flatten out far
        from the data, and an uncapped step can land on a plateau where
        nothing moves.

    Returns
    -------
    InversionResult
    """
    x = np.array(x0, dtype=float)
    target = np.asarray(target, dtype=float)
    m, dim = x.shape
    everyone = np.arange(m)
    res = fn(x, everyone) - target
    norm = np.max(np.abs(res), axis=1)
    iters = np.zeros(m, dtype=int)
    failed = np.zeros(m, dtype=bool)
    polished = np.zeros(m, dtype=bool) if polish else np.ones(m, dtype=bool)
    dets = []

    def want(mask):
        return ~failed & ((norm > tol) | ~polished) & mask

    active = want(np.ones(m, dtype=bool))
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xa, base = x[idx], res[idx] + target[idx]
        jac = np.empty((idx.size, dim, dim))
        for k in range(dim):
            h = FD_STEP * (1.0 + np.abs(xa[:, k]))
            xp = xa.copy()
            xp[:, k] += h
            jac[:, :, k] = (fn(xp, idx) - base) / h[:, None]
        det = np.linalg.det(jac)
        # a vanishing Jacobian means the iterate sits on a plateau of the
        # share map (typically an infeasible target): a failure, not a sign error
        flat = np.abs(det) <= 1e-14
        if np.any(flat):
            failed[idx[flat]] = True
            keep = ~flat
            idx, xa, base, jac, det = idx[keep], xa[keep], base[keep], jac[keep], det[keep]
            if idx.size == 0:
                break
        if signs is not None:
            bad = np.any(jac * signs < -1e-10, axis=(1, 2)) | (det * det_sign < 0)
            if np.any(bad):
                first = idx[np.flatnonzero(bad)[0]]
                raise SignPatternError(
                    f"share Jacobian at market {first} violates the expected sign pattern "
                    f"(jacobian={jac[np.flatnonzero(bad)[0]].tolist()})"
                )
            dets.append(det)
        try:
            step = np.linalg.solve(jac, -res[idx][..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.stack([np.linalg.lstsq(j, -r, rcond=None)[0] for j, r in zip(jac, res[idx])])
        big = np.max(np.abs(step), axis=1, keepdims=True)
        step = step * np.minimum(1.0, max_step / np.maximum(big, 1e-300))
        # halve the step until the residual falls
        t = np.ones(idx.size)
        pending = np.ones(idx.size, dtype=bool)
        new_x, new_res = xa.copy(), res[idx].copy()
        for _ in range(MAX_HALVINGS + 1):
            sel = np.flatnonzero(pending)
            if sel.size == 0:
                break
            trial = xa[sel] + t[sel, None] * step[sel]
            r_trial = fn(trial, idx[sel]) - target[idx[sel]]
            ok = np.max(np.abs(r_trial), axis=1) < norm[idx[sel]]
            hit = sel[ok]
            new_x[hit], new_res[hit] = trial[ok], r_trial[ok]
            pending[hit] = False
            t[sel[~ok]] *= 0.5
        stalled = pending
        converged_before = norm[idx] <= tol
        # a stalled polish step is harmless; a stalled solve is a failure
        failed[idx[stalled & ~converged_before]] = True
        polished[idx[converged_before]] = True
        x[idx], res[idx] = new_x, new_res
        norm[idx] = np.max(np.abs(new_res), axis=1)
        iters[idx] += 1
        active = want(np.ones(m, dtype=bool))

    result = InversionResult(x, norm, iters, jacobian_dets=dets)
    bad = np.flatnonzero(norm > tol)
    if bad.size and raise_on_failure:
        raise ConvergenceError(
            f"inversion did not reach tol={tol:g} in {bad.size} market(s), first {bad[:10].tolist()}; "
            f"worst residual {norm.max():.3e}",
            best=x, residual=norm, iterations=iters,
        )
    return result


def _squeeze(result, single):
    if single:
        result.delta = result.delta[0]
        result.residual_norm = float(result.residual_norm[0])
        result.iterations = int(result.iterations[0])
        result.jacobian_dets = [float(d[0]) for d in result.jacobian_dets if d.size]
    return result


def invert_multinomial(spec, demand, x2, p, target_shares, tol=DEFAULT_TOL,
                       max_iter=DEFAULT_MAX_ITER, *, delta0=None, switch_tol=1e-3,
                       max_contraction=30, rescue_rounds=10):
    """Recover delta from inside-good shares of a multinomial menu.

    With tastes for products the logit contraction
    ``delta <- delta + log s* - log s(delta)`` runs until its residual drops
    below ``switch_tol`` and Newton finishes the job. In the pure
    characteristics model damped Newton runs from the start; markets where
    it stalls (typically because some share is locally flat) restart from
    :func:`monotone_sweeps`.

    ``target_shares`` may hold the inside shares ``(..., J)`` or the full
    share vector ``(..., J + 1)`` with the outside share first.
    """
    if spec.menu != "multinomial":
        raise DimensionError("menu", "invert_multinomial needs a multinomial spec")
    oracle = _as_oracle(spec, demand)
    x2, p, single = _batch_menu(spec, x2, p)
    target = np.atleast_2d(np.asarray(target_shares, dtype=float))
    if target.shape[-1] == spec.n_goods + 1:
        target = target[..., 1:]
    if target.shape != p.shape:
        raise DimensionError("target_shares", f"expected shape {p.shape}, got {target.shape}")
    if np.any(target <= 0) or np.any(target >= 1) or np.any(target.sum(axis=1) >= 1):
        raise ValueError("target inside shares must lie in (0, 1) and sum to less than 1; "
                         "zero shares are outside the identified range")

    def fn(delta, idx):
        return oracle(ProductMenu(x2[idx], p[idx], delta))[..., 1:]

    delta = np.zeros_like(p) if delta0 is None else np.array(
        np.broadcast_to(delta0, p.shape), dtype=float)
    history = []
    everyone = np.arange(len(p))
    if spec.sigma_eps == 1:
        log_target = np.log(target)
        for _ in range(min(max_iter, max_contraction)):
            gap = log_target - np.log(fn(delta, everyone))
            dist = float(np.max(np.abs(gap)))
            history.append(dist)
            if dist <= switch_tol:
                break
            delta = delta + gap
        result = batch_newton(fn, target, delta, tol=tol, max_iter=max_iter)
    else:
        result = batch_newton(fn, target, delta, tol=tol, max_iter=max_iter,
                              raise_on_failure=False)
        for _ in range(rescue_rounds):
            bad = np.flatnonzero(result.residual_norm > tol)
            if bad.size == 0:
                break
            sub = lambda d, idx: fn(d, bad[idx])  # noqa: E731
            start = monotone_sweeps(sub, target[bad], result.delta[bad], sweeps=3)
            retry = batch_newton(sub, target[bad], start, tol=tol, max_iter=max_iter,
                                 raise_on_failure=False)
            better = retry.residual_norm < result.residual_norm[bad]
            for name in ("delta", "residual_norm"):
                getattr(result, name)[bad[better]] = getattr(retry, name)[better]
            result.iterations[bad] += retry.iterations
        bad = np.flatnonzero(result.residual_norm > tol)
        if bad.size:
            raise ConvergenceError(
                f"inversion did not reach tol={tol:g} in {bad.size} market(s), first "
                f"{bad[:10].tolist()}", best=result.delta, residual=result.residual_norm,
                iterations=result.iterations)
    result.history = history
    return _squeeze(result, single)


def _bisect(excess, lo, hi, xtol):
    """Vectorized root of increasing functions, expanding the bracket as needed."""
    e_lo, e_hi = excess(lo), excess(hi)
    for _ in range(60):
        low_bad, high_bad = e_lo > 0, e_hi < 0
        if not (low_bad.any() or high_bad.any()):
            break
        width = hi - lo
        lo, hi = np.where(low_bad, lo - width, lo), np.where(high_bad, hi + width, hi)
        e_lo, e_hi = excess(lo), excess(hi)
    while np.max(hi - lo) > xtol:
        mid = 0.5 * (lo + hi)
        below = excess(mid) < 0
        lo, hi = np.where(below, mid, lo), np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def monotone_sweeps(fn, target, delta, *, sweeps=30, tol=3e-3, xtol=1e-3):
    """Bisection sweeps that need only monotonicity of the share map.

    Each sweep first shifts all indices together until the total inside
    share matches its target, then visits the goods in turn and solves the
    own-share equation with the others held fixed. Both steps are well
    posed even on plateaus where the share map is flat and Newton has no
    slope to follow.
    """
    delta = np.array(delta, dtype=float)
    m, n_goods = delta.shape
    everyone = np.arange(m)
    total = target.sum(axis=1)
    for _ in range(sweeps):
        base = delta.copy()
        shift = _bisect(lambda c: fn(base + c[:, None], everyone).sum(axis=1) - total,
                        np.full(m, -1.0), np.full(m, 1.0), xtol)
        delta = base + shift[:, None]
        for j in range(n_goods):
            def excess(y):
                trial = delta.copy()
                trial[:, j] = y
                return fn(trial, everyone)[:, j] - target[:, j]

            delta[:, j] = _bisect(excess, delta[:, j] - 1.0, delta[:, j] + 1.0, xtol)
        if np.max(np.abs(fn(delta, everyone) - target)) <= tol:
            break
    return delta


def _invert_pair(spec, demand, x2, p, target_pair, which, tol, max_iter, delta0):
    oracle = _as_oracle(spec, demand)
    x2, p, single = _batch_menu(spec, x2, p)
    target = np.atleast_2d(np.asarray(target_pair, dtype=float))
    if target.shape != p.shape:
        raise DimensionError("target_pair", f"expected shape {p.shape}, got {target.shape}")
    if np.any(target <= 0) or np.any(target >= 1):
        raise ValueError("target shares must lie strictly between 0 and 1")
    cols = [spec.label_index(lab) for lab in which]
    signs = SIGN_PATTERNS[(spec.menu, which)]
    det_sign = np.sign(np.linalg.det(signs.astype(float)))

    def fn(delta, idx):
        return oracle(ProductMenu(x2[idx], p[idx], delta))[..., cols]

    delta = np.zeros_like(p) if delta0 is None else np.array(
        np.broadcast_to(delta0, p.shape), dtype=float)
    result = batch_newton(fn, target, delta, tol=tol, max_iter=max_iter, signs=signs,
                          det_sign=det_sign)
    return _squeeze(result, single)


def _normalize_which(which):
    return tuple(tuple(int(v) for v in lab) for lab in which)


def invert_bundles(spec, demand, x2, p, target_pair, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                   which=((0, 0), (0, 1)), *, delta0=None):
    """Solve a two-bundle subsystem of the bundle menu for (delta1, delta2).

    ``which`` selects the pair of observed bundles, either
    ((0,0), (0,1)) or ((1,0), (1,1)). The Jacobian sign pattern implied
    by the model is checked at every iterate; the determinant is negative
    for the first pair and positive for the second.
    """
    if spec.menu != "bundles":
        raise DimensionError("menu", "invert_bundles needs a bundles spec")
    which = _normalize_which(which)
    if which not in (((0, 0), (0, 1)), ((1, 0), (1, 1))):
        raise ValueError("which must be ((0,0),(0,1)) or ((1,0),(1,1))")
    return _invert_pair(spec, demand, x2, p, target_pair, which, tol, max_iter, delta0)


def invert_multiunit(spec, demand, x2, p, target_pair, tol=DEFAULT_TOL,
                     max_iter=DEFAULT_MAX_ITER, which=((2, 0), (2, 1)), *, delta0=None):
    """Solve a two-alternative subsystem of the multi-unit menu.

    Only ((2,0),(2,1)) and ((0,0),(0,1)) are monotone systems; shares of
    (1,0) and (1,1) move in both directions with delta1 and are rejected.
    """
    if spec.menu != "multiunit":
        raise DimensionError("menu", "invert_multiunit needs a multiunit spec")
    which = _normalize_which(which)
    if any(lab in ((1, 0), (1, 1)) for lab in which):
        raise ValueError(
            "alternatives (1,0) and (1,1) cannot be used: their shares are not monotone in "
            "delta1, because raising delta1 moves buyers both in from (0,y2) and out to (2,y2)"
        )
    if which not in (((2, 0), (2, 1)), ((0, 0), (0, 1))):
        raise ValueError("which must be ((2,0),(2,1)) or ((0,0),(0,1))")
    return _invert_pair(spec, demand, x2, p, target_pair, which, tol, max_iter, delta0)


def recover_xi(delta, x1):
    """Unobserved quality: delta minus the special characteristic."""
    return np.asarray(delta, dtype=float) - np.asarray(x1, dtype=float)
