"""Constrained Newton solver for assemblies of rods.

Constraints are affine: fixed DOFs and master/slave ties of the form
u_slave = u_master + offset, with prescribed values and offsets scaling
linearly with the load factor. Contact enters through Lagrange multipliers
appended to the reduced system (saddle-point structure, solved with a
pivoted direct factorisation that tolerates the indefinite block).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rod import ConvergenceError, FactorizationError, FrameSingularityError, RodError, RodModel


class Assembly:
    """Several rods sharing one global DOF vector (4 DOFs per control point)."""

    def __init__(self, rods: list[RodModel]):
        self.rods = rods
        self.offsets = np.concatenate([[0], np.cumsum([r.n_dof for r in rods])])
        self.n_dof = int(self.offsets[-1])

    def dof_index(self, rod_i: int, ctrl_i: int, comp: int) -> int:
        """comp 0..2 displacement, 3 twist."""
        return int(self.offsets[rod_i] + 4 * ctrl_i + comp)

    def rod_slice(self, rod_i: int) -> slice:
        return slice(int(self.offsets[rod_i]), int(self.offsets[rod_i + 1]))

    def rod_dofs(self, full: np.ndarray, rod_i: int) -> np.ndarray:
        return full[self.rod_slice(rod_i)]

    def deformed_ctrl(self, full: np.ndarray, rod_i: int) -> np.ndarray:
        return self.rods[rod_i].deformed_ctrl(self.rod_dofs(full, rod_i))

    def energy(self, full: np.ndarray) -> float:
        return sum(r.energy(self.rod_dofs(full, i)) for i, r in enumerate(self.rods))

    def internal_forces(self, full: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_dof)
        for i, r in enumerate(self.rods):
            out[self.rod_slice(i)] = r.internal_forces(self.rod_dofs(full, i))
        return out

    def stiffness(self, full: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n_dof, self.n_dof))
        for i, r in enumerate(self.rods):
            sl = self.rod_slice(i)
            out[sl, sl] = r.stiffness(self.rod_dofs(full, i))
        return out


class ConstraintSet:
    """Fixed DOFs and affine ties.

    Prescribed values and the linear tie offsets scale with the load factor;
    constant tie offsets (small geometric closure corrections) do not.
    """

    def __init__(self, n_dof: int):
        self.n_dof = n_dof
        self._fixed: dict[int, float] = {}
        self._ties: dict[int, tuple[int, float, float]] = {}
        self._built = False

    def fix(self, dof: int, value: float = 0.0):
        if dof in self._ties:
            raise RodError(f"dof {dof} already tied")
        self._fixed[dof] = float(value)
        self._built = False

    def tie(self, slave: int, master: int, offset_const: float = 0.0, offset_linear: float = 0.0):
        """u[slave] = u[master] + offset_const + load_factor * offset_linear."""
        if slave == master:
            raise RodError("cannot tie a dof to itself")
        if slave in self._fixed or slave in self._ties:
            raise RodError(f"dof {slave} already constrained")
        self._ties[slave] = (master, float(offset_const), float(offset_linear))
        self._built = False

    def _build(self):
        if self._built:
            return
        n = self.n_dof
        red_of = np.full(n, -1, dtype=int)
        g0 = np.zeros(n)
        g1 = np.zeros(n)

        def resolve(dof, seen=()):
            if dof in seen:
                raise RodError(f"cyclic tie chain through dof {dof}")
            if dof in self._fixed:
                return None, 0.0, self._fixed[dof]
            if dof in self._ties:
                m, off0, off1 = self._ties[dof]
                r, gc, gl = resolve(m, seen + (dof,))
                return r, gc + off0, gl + off1
            return dof, 0.0, 0.0

        free = [d for d in range(n) if d not in self._fixed and d not in self._ties]
        for j, d in enumerate(free):
            red_of[d] = j
        for d in list(self._fixed) + list(self._ties):
            r, gc, gl = resolve(d)
            g0[d] = gc
            g1[d] = gl
            red_of[d] = red_of[r] if r is not None else -1
        self.free = np.array(free, dtype=int)
        self.red_of = red_of
        self.g0 = g0
        self.g1 = g1
        self.n_red = len(free)
        self._built = True

    def expand(self, x_red: np.ndarray, lam: float) -> np.ndarray:
        self._build()
        full = self.g0 + lam * self.g1
        mask = self.red_of >= 0
        full[mask] += x_red[self.red_of[mask]]
        return full

    def reduce_vec(self, vec: np.ndarray) -> np.ndarray:
        self._build()
        out = np.zeros(self.n_red)
        mask = self.red_of >= 0
        np.add.at(out, self.red_of[mask], vec[mask])
        return out

    def reduce_mat(self, mat: np.ndarray) -> np.ndarray:
        self._build()
        mask = self.red_of >= 0
        idx = self.red_of[mask]
        tmp = np.zeros((self.n_red, self.n_dof))
        np.add.at(tmp, idx, mat[mask, :])
        out = np.zeros((self.n_red, self.n_red))
        np.add.at(out.T, idx, tmp[:, mask].T)
        return out

    def reduce_rows(self, mat: np.ndarray) -> np.ndarray:
        """Reduce the column space of a (k, n_dof) matrix."""
        self._build()
        mask = self.red_of >= 0
        out = np.zeros((mat.shape[0], self.n_red))
        np.add.at(out.T, self.red_of[mask], mat[:, mask].T)
        return out


@dataclass
class NewtonOptions:
    max_iter: int = 50
    tol_rel: float = 1e-8
    tol_abs_scale: float = 1e-9
    max_halvings: int = 6
    max_active_set_iter: int = 10


@dataclass
class StepResult:
    lam: float
    full: np.ndarray
    residuals: list
    n_iter: int
    multipliers: dict = field(default_factory=dict)
    active_set_iters: int = 0


def _newton_at_load(assembly, cons, lam, x0, f_ext1, contact, taus, opts) -> tuple[np.ndarray, dict, list]:
    """Newton iteration at fixed load factor and fixed contact active set."""
    x = x0.copy()
    active = contact.active_pairs() if contact is not None else []
    tau = np.array([taus.get(p.key, 0.0) for p in active])
    residuals = []
    ref_scale = max(lam * np.abs(f_ext1).max() if f_ext1 is not None else 0.0, 1e-12)
    for it in range(opts.max_iter):
        full = cons.expand(x, lam)
        r_full = assembly.internal_forces(full)
        k_full = assembly.stiffness(full)
        if f_ext1 is not None:
            r_full = r_full - lam * f_ext1
        # contact enters as a KKT system: repulsion means tau >= 0, and active
        # pairs enforce clearance c = d - 2r = 0
        gaps = np.zeros(len(active))
        g_rows_red = np.zeros((len(active), cons.n_red))
        if active:
            for kk, pair in enumerate(active):
                gap, idx, grad_loc, hess_loc = contact.pair_linearisation(assembly, full, pair)
                gaps[kk] = pair.d_min - 2.0 * contact.radius
                np.add.at(r_full, idx, -tau[kk] * grad_loc)
                k_full[np.ix_(idx, idx)] -= tau[kk] * hess_loc
                grow = np.zeros(assembly.n_dof)
                grow[idx] = grad_loc
                g_rows_red[kk] = cons.reduce_rows(grow[None, :])[0]
        r_red = cons.reduce_vec(r_full)
        ref_scale = max(ref_scale, np.abs(r_red).max() if it == 0 else ref_scale)
        res_norm = np.linalg.norm(np.concatenate([r_red, gaps * ref_scale])) if active else np.linalg.norm(r_red)
        residuals.append(float(res_norm))
        tol = max(opts.tol_abs_scale * ref_scale, opts.tol_rel * residuals[0])
        if res_norm <= tol:
            return x, {p.key: t for p, t in zip(active, tau)}, residuals
        k_red = cons.reduce_mat(k_full)
        if active:
            na = len(active)
            sys = np.zeros((cons.n_red + na, cons.n_red + na))
            sys[: cons.n_red, : cons.n_red] = k_red
            sys[: cons.n_red, cons.n_red :] = -g_rows_red.T
            sys[cons.n_red :, : cons.n_red] = -g_rows_red
            rhs = np.concatenate([-r_red, gaps])
        else:
            sys = k_red
            rhs = -r_red
        try:
            dz = np.linalg.solve(sys, rhs)
        except np.linalg.LinAlgError as exc:
            raise FactorizationError(f"singular tangent at load factor {lam}: {exc}") from exc
        if not np.all(np.isfinite(dz)):
            raise FactorizationError(f"non-finite Newton update at load factor {lam}")
        x = x + dz[: cons.n_red]
        if active:
            tau = tau + dz[cons.n_red :]
        # stagnation: with a consistent tangent a negligible update means the
        # residual sits at the floating-point noise floor (e.g. zero load)
        if np.linalg.norm(dz) <= 1e-12 * (1.0 + np.linalg.norm(x)):
            return x, {p.key: t for p, t in zip(active, tau)}, residuals
    raise ConvergenceError(
        f"Newton did not converge in {opts.max_iter} iterations at load factor {lam}",
        residual_history=residuals,
    )


def solve_step(assembly, cons, lam, x0, f_ext1=None, contact=None, taus=None, opts=None):
    """One load step: Newton solves inside an active-set fixed-point loop."""
    opts = opts or NewtonOptions()
    taus = dict(taus or {})
    if contact is not None and hasattr(contact, "set_load_factor"):
        contact.set_load_factor(lam)
    if contact is None:
        x, taus_out, residuals = _newton_at_load(assembly, cons, lam, x0, f_ext1, None, taus, opts)
        return StepResult(lam=lam, full=cons.expand(x, lam), residuals=residuals, n_iter=len(residuals), multipliers={})
    x = x0
    result = None
    for outer in range(opts.max_active_set_iter):
        x_new, taus_out, residuals = _newton_at_load(assembly, cons, lam, x0, f_ext1, contact, taus, opts)
        full = cons.expand(x_new, lam)
        changed = contact.update_active_set(assembly, full, taus_out)
        x = x_new
        taus = {k: v for k, v in taus_out.items() if v > 0.0 or k in {p.key for p in contact.active_pairs()}}
        result = StepResult(
            lam=lam,
            full=full,
            residuals=residuals,
            n_iter=len(residuals),
            multipliers=taus_out,
            active_set_iters=outer + 1,
        )
        if not changed:
            return result
    # the set oscillated: accept the last converged state if it satisfies the
    # contact KKT conditions to tight tolerance, else report cycling
    tol_g = 1e-8 * 2.0 * contact.radius
    if result is not None and contact.kkt_satisfied(result.multipliers, tol_g, tol_g):
        return result
    raise ConvergenceError(f"contact active set cycling at load factor {lam}")


def solve_newton(assembly, cons, schedule, f_ext1=None, contact=None, opts=None) -> list[StepResult]:
    """Load-stepped solve over the given schedule of load factors.

    On non-convergence the offending increment is bisected (up to
    ``opts.max_halvings`` times) before giving up. Returns one StepResult per
    scheduled load factor (intermediate bisection states are not reported).
    """
    opts = opts or NewtonOptions()
    cons._build()
    results: list[StepResult] = []
    lam = 0.0
    x = np.zeros(cons.n_red)
    taus: dict = {}
    step = None
    for lam_target in schedule:
        while lam < lam_target - 1e-14:
            dlam = lam_target - lam
            halved = 0
            while True:
                try:
                    step = solve_step(assembly, cons, lam + dlam, x, f_ext1, contact, taus, opts)
                    break
                except (ConvergenceError, FactorizationError, FrameSingularityError) as exc:
                    halved += 1
                    if halved > opts.max_halvings:
                        raise ConvergenceError(
                            f"load step {lam:.4g} -> {lam + dlam:.4g} failed after "
                            f"{opts.max_halvings} halvings: {exc}",
                            step_index=len(results),
                        ) from exc
                    dlam *= 0.5
            lam += dlam
            x = _reduced_from_full(cons, step.full, lam)
            taus = step.multipliers
        if step is None:  # zero load target: evaluate without stepping
            step = solve_step(assembly, cons, lam_target, x, f_ext1, contact, taus, opts)
        results.append(step)
    return results


def _reduced_from_full(cons: ConstraintSet, full: np.ndarray, lam: float) -> np.ndarray:
    cons._build()
    x = np.zeros(cons.n_red)
    x[cons.red_of[cons.free]] = full[cons.free] - cons.g0[cons.free] - lam * cons.g1[cons.free]
    return x
