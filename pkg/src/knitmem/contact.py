"""Pointwise non-frictional contact between deformed rod centrelines.

Each candidate pair tracks one closest-point site between two spline curves
(optionally translated copies, for periodic images). The gap closes when the
centreline distance drops below one yarn diameter; active pairs contribute a
Lagrange multiplier enforcing gap = 0. The contact Hessian includes the
closest-point sensitivity (Schur complement over the two curve parameters),
with parameters clamped at curve ends treated as insensitive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .splines import KnotVector, eval_basis


class ContactError(RuntimeError):
    pass


class SearchFailure(ContactError):
    """Closest-point Newton iteration diverged."""


def gap(d_min: float, r: float) -> float:
    """Signed clearance between two rod surfaces of common radius r."""
    if r <= 0.0:
        raise ValueError("rod radius must be positive")
    return d_min - 2.0 * r if d_min < 2.0 * r else 0.0


@dataclass
class _Curve:
    ctrl: np.ndarray
    kv: KnotVector
    shift: np.ndarray

    def at(self, t: float):
        be = eval_basis(self.kv, float(t))
        pts = self.ctrl[be.ctrl_indices()]
        return be.values @ pts + self.shift, be.d1 @ pts, be.d2 @ pts, be


def closest_points(curve_l: _Curve, curve_r: _Curve, seed, max_iter: int = 30, tol: float = 1e-12):
    """Local minimum of the centreline distance, Newton on the squared distance.

    Parameters are clamped to their knot domains; a boundary-stationary point
    (distance gradient pointing out of the box) is accepted. Raises
    SearchFailure on divergence so the caller can reseed from a coarse grid.
    """
    lo = np.array([curve_l.kv.start, curve_r.kv.start])
    hi = np.array([curve_l.kv.end, curve_r.kv.end])
    th = np.clip(np.asarray(seed, dtype=float), lo, hi)
    scale = None
    for _ in range(max_iter):
        xl, xl1, xl2, _ = curve_l.at(th[0])
        xr, xr1, xr2, _ = curve_r.at(th[1])
        dvec = xl - xr
        grad = np.array([dvec @ xl1, -(dvec @ xr1)])
        hess = np.array(
            [
                [xl1 @ xl1 + dvec @ xl2, -(xl1 @ xr1)],
                [-(xl1 @ xr1), xr1 @ xr1 - dvec @ xr2],
            ]
        )
        if scale is None:
            scale = max(xl1 @ xl1, xr1 @ xr1, 1e-30)
        free = ~(((th <= lo + 1e-14) & (grad > 0)) | ((th >= hi - 1e-14) & (grad < 0)))
        if not free.any() or np.linalg.norm(grad[free]) <= tol * scale:
            d = np.linalg.norm(dvec)
            return float(th[0]), float(th[1]), float(d)
        try:
            if free.all():
                step = np.linalg.solve(hess, -grad)
            else:
                step = np.zeros(2)
                if free.any():
                    i = int(np.flatnonzero(free)[0])
                    step[i] = -grad[i] / hess[i, i] if hess[i, i] > 0 else -grad[i] / scale
        except np.linalg.LinAlgError:
            step = -grad / scale
        if not np.all(np.isfinite(step)):
            raise SearchFailure("non-finite closest-point update")
        # fall back to gradient descent when the local quadratic is indefinite
        if step @ grad > 0:
            step = -grad / scale
        nrm = np.abs(step).max()
        if nrm > 0.25:
            step *= 0.25 / nrm
        th = np.clip(th + step, lo, hi)
    raise SearchFailure(f"closest-point Newton did not converge from seed {tuple(np.asarray(seed))}")


def grid_closest(curve_l: _Curve, curve_r: _Curve, n: int = 16):
    """Best (theta_l, theta_r) over an n x n parameter grid (Newton seed)."""
    tl = np.linspace(curve_l.kv.start, curve_l.kv.end, n)
    tr = np.linspace(curve_r.kv.start, curve_r.kv.end, n)
    pl = np.array([curve_l.at(t)[0] for t in tl])
    pr = np.array([curve_r.at(t)[0] for t in tr])
    d2 = ((pl[:, None, :] - pr[None, :, :]) ** 2).sum(axis=2)
    i, j = np.unravel_index(np.argmin(d2), d2.shape)
    return float(tl[i]), float(tr[j])


def robust_closest(curve_l: _Curve, curve_r: _Curve, seed, window: float = 0.08):
    """Closest point with fallbacks: Newton, local reseed, bounded quasi-Newton."""
    try:
        return closest_points(curve_l, curve_r, seed)
    except SearchFailure:
        pass
    # refine around the tracked location before giving up on the local site
    t0 = np.asarray(seed, dtype=float)
    tls = np.linspace(max(curve_l.kv.start, t0[0] - window), min(curve_l.kv.end, t0[0] + window), 12)
    trs = np.linspace(max(curve_r.kv.start, t0[1] - window), min(curve_r.kv.end, t0[1] + window), 12)
    pl = np.array([curve_l.at(t)[0] for t in tls])
    pr = np.array([curve_r.at(t)[0] for t in trs])
    d2 = ((pl[:, None, :] - pr[None, :, :]) ** 2).sum(axis=2)
    i, j = np.unravel_index(np.argmin(d2), d2.shape)
    try:
        return closest_points(curve_l, curve_r, (float(tls[i]), float(trs[j])))
    except SearchFailure:
        pass
    from scipy.optimize import minimize

    def fun(th):
        xl = curve_l.at(th[0])[0]
        xr = curve_r.at(th[1])[0]
        dvec = xl - xr
        gl = curve_l.at(th[0])[1]
        gr = curve_r.at(th[1])[1]
        return 0.5 * dvec @ dvec, np.array([dvec @ gl, -(dvec @ gr)])

    bounds = [(curve_l.kv.start, curve_l.kv.end), (curve_r.kv.start, curve_r.kv.end)]
    res = minimize(fun, (float(tls[i]), float(trs[j])), jac=True, bounds=bounds, method="L-BFGS-B")
    if not np.all(np.isfinite(res.x)):
        raise SearchFailure("bounded closest-point minimisation failed")
    th = res.x
    try:
        return closest_points(curve_l, curve_r, th)
    except SearchFailure:
        xl = curve_l.at(th[0])[0]
        xr = curve_r.at(th[1])[0]
        return float(th[0]), float(th[1]), float(np.linalg.norm(xl - xr))


def grid_local_minima(curve_l: _Curve, curve_r: _Curve, n: int = 16, d_max: float = np.inf):
    """Seeds at interior local minima of the grid distance field below d_max."""
    tl = np.linspace(curve_l.kv.start, curve_l.kv.end, n)
    tr = np.linspace(curve_r.kv.start, curve_r.kv.end, n)
    pl = np.array([curve_l.at(t)[0] for t in tl])
    pr = np.array([curve_r.at(t)[0] for t in tr])
    d = np.sqrt(((pl[:, None, :] - pr[None, :, :]) ** 2).sum(axis=2))
    seeds = []
    padded = np.pad(d, 1, constant_values=np.inf)
    for i in range(n):
        for j in range(n):
            window = padded[i : i + 3, j : j + 3]
            if d[i, j] <= d_max and d[i, j] == window.min():
                seeds.append((float(tl[i]), float(tr[j]), float(d[i, j])))
    return seeds


@dataclass
class ContactPair:
    """One tracked closest-point site between two rods (or periodic images)."""

    rod_l: int
    rod_r: int
    key: tuple
    shift_l: np.ndarray = field(default_factory=lambda: np.zeros(3))
    shift_r: np.ndarray = field(default_factory=lambda: np.zeros(3))
    theta_l: float = 0.5
    theta_r: float = 0.5
    d_min: float = np.inf
    gap: float = 0.0
    active: bool = False


class ContactManager:
    """Candidate-pair bookkeeping, closest-point tracking and linearisation."""

    def __init__(self, radius: float, pairs: list[ContactPair], activation_tol: float = 0.0):
        if radius <= 0.0:
            raise ValueError("rod radius must be positive")
        self.radius = radius
        self.pairs = pairs
        self.activation_tol = activation_tol
        self.history: list[frozenset] = []

    # shifts of periodic-image pairs depend on the applied macro stretch; the
    # owner updates them through this hook before each load step
    shift_update = None

    def set_load_factor(self, lam: float):
        if self.shift_update is not None:
            for pair in self.pairs:
                self.shift_update(pair, lam)

    def _curve(self, assembly, full, rod_i: int, shift: np.ndarray) -> _Curve:
        rod = assembly.rods[rod_i]
        return _Curve(ctrl=assembly.deformed_ctrl(full, rod_i), kv=rod.kv, shift=shift)

    def update_closest(self, assembly, full):
        for pair in self.pairs:
            cl = self._curve(assembly, full, pair.rod_l, pair.shift_l)
            cr = self._curve(assembly, full, pair.rod_r, pair.shift_r)
            tl, tr, d = robust_closest(cl, cr, (pair.theta_l, pair.theta_r))
            pair.theta_l, pair.theta_r, pair.d_min = tl, tr, d
            pair.gap = gap(d, self.radius)

    def active_pairs(self) -> list[ContactPair]:
        return [p for p in self.pairs if p.active]

    def update_active_set(self, assembly, full, taus: dict) -> bool:
        """Activate penetrating pairs, drop adhesive ones; True if the set changed.

        Small asymmetric thresholds keep grazing contacts (gap and multiplier
        both near zero) from chattering between states.
        """
        self.update_closest(assembly, full)
        tol_g = max(self.activation_tol, 1e-9 * 2.0 * self.radius)
        tau_scale = max([abs(t) for t in taus.values()], default=0.0)
        tol_tau = 1e-10 * max(tau_scale, 1.0)
        changed = False
        for pair in self.pairs:
            if not pair.active and pair.gap < -tol_g:
                pair.active = True
                changed = True
            elif pair.active and taus.get(pair.key, 0.0) < -tol_tau:
                pair.active = False
                changed = True
        state = frozenset(p.key for p in self.pairs if p.active)
        self.history.append(state)
        if len(self.history) > 64:
            self.history = self.history[-64:]
        return changed

    def kkt_satisfied(self, taus: dict, tol_g: float, tol_tau: float) -> bool:
        """Complementarity check on the current tracked state."""
        for pair in self.pairs:
            tau = taus.get(pair.key, 0.0) if pair.active else 0.0
            if pair.gap < -tol_g or tau < -tol_tau:
                return False
            if abs(tau * pair.gap) > tol_g * max(abs(tau), 1.0):
                return False
        return True

    def pair_linearisation(self, assembly, full, pair: ContactPair):
        """(gap, dof indices, gap gradient, gap Hessian) at the tracked site.

        First-order: stationarity of the distance removes the closest-point
        sensitivity. Second-order: Schur complement over the free parameters.
        """
        cl = self._curve(assembly, full, pair.rod_l, pair.shift_l)
        cr = self._curve(assembly, full, pair.rod_r, pair.shift_r)
        tl, tr, d = robust_closest(cl, cr, (pair.theta_l, pair.theta_r))
        pair.theta_l, pair.theta_r, pair.d_min = tl, tr, d
        pair.gap = gap(d, self.radius)
        if d <= 1e-12:
            raise ContactError("coincident centrelines in contact pair")

        xl, xl1, xl2, bel = cl.at(tl)
        xr, xr1, xr2, ber = cr.at(tr)
        dvec = xl - xr
        nhat = dvec / d
        m = (np.eye(3) - np.outer(nhat, nhat)) / d

        idx_l = [assembly.dof_index(pair.rod_l, c, comp) for c in bel.ctrl_indices() for comp in range(3)]
        idx_r = [assembly.dof_index(pair.rod_r, c, comp) for c in ber.ctrl_indices() for comp in range(3)]
        idx = np.array(idx_l + idx_r, dtype=int)
        nloc = idx.size
        sgn = np.concatenate([np.ones(12), -np.ones(12)])
        bas = np.concatenate([np.repeat(bel.values, 3), np.repeat(ber.values, 3)])
        bas1 = np.concatenate([np.repeat(bel.d1, 3), np.repeat(ber.d1, 3)])
        comp = np.tile(np.arange(3), 8)

        grad = sgn * bas * nhat[comp]

        # d_qq
        hess = (sgn[:, None] * sgn[None, :]) * (bas[:, None] * bas[None, :]) * m[comp[:, None], comp[None, :]]

        # parameter block and coupling, restricted to box-interior parameters
        lo_l, hi_l = cl.kv.start, cl.kv.end
        lo_r, hi_r = cr.kv.start, cr.kv.end
        free = [lo_l + 1e-12 < tl < hi_l - 1e-12, lo_r + 1e-12 < tr < hi_r - 1e-12]
        d_tt = np.array(
            [
                [(xl1 @ m @ xl1) + nhat @ xl2, -(xl1 @ m @ xr1)],
                [-(xl1 @ m @ xr1), (xr1 @ m @ xr1) - nhat @ xr2],
            ]
        )
        mxl1 = m @ xl1
        mxr1 = m @ xr1
        d_tq = np.zeros((2, nloc))
        d_tq[0, :12] = mxl1[comp[:12]] * bas[:12] + nhat[comp[:12]] * bas1[:12]
        d_tq[0, 12:] = -mxl1[comp[12:]] * bas[12:]
        d_tq[1, :12] = -mxr1[comp[:12]] * bas[:12]
        d_tq[1, 12:] = mxr1[comp[12:]] * bas[12:] - nhat[comp[12:]] * bas1[12:]
        fmask = np.array(free)
        if fmask.any():
            dtt_f = d_tt[np.ix_(fmask, fmask)]
            dtq_f = d_tq[fmask]
            try:
                hess -= dtq_f.T @ np.linalg.solve(dtt_f, dtq_f)
            except np.linalg.LinAlgError:
                pass  # degenerate parameter Hessian (parallel curves): drop sensitivity
        return pair.gap, idx, grad, hess
