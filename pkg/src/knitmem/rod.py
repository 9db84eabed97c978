"""Finite-deformation Euler-Bernoulli rod finite element on cubic B-splines.

Kinematics: the centreline carries 3 displacement coefficients plus one twist
coefficient per control point. Cross-section directors in the deformed state
are obtained by a Rodrigues twist about the reference unit tangent followed by
the smallest rotation taking the reference tangent onto the deformed tangent.
Strains are the axial measure alpha, two bending measures beta2/beta3 and the
torsional shear gamma; the section constitutive law is linear in these with
circular-section constants (implicitly zero Poisson coupling).

Internal forces are exact gradients of the stored energy and the stiffness is
the exact Hessian; both are assembled from closed-form derivatives of the two
rotation maps (verified against finite differences in the test suite).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .splines import KnotVector, eval_basis, make_clamped_knots, quadrature_points

# smallest-rotation map is singular when the deformed tangent opposes the
# reference tangent; reject configurations closer than this to the antipode
ANTIPODAL_TOL = 1e-8


class RodError(RuntimeError):
    pass


class FrameSingularityError(RodError):
    """Deformed tangent (nearly) antipodal to the reference tangent."""


class ConvergenceError(RodError):
    def __init__(self, message, residual_history=None, step_index=None):
        super().__init__(message)
        self.residual_history = residual_history or []
        self.step_index = step_index


class FactorizationError(RodError):
    """Singular or numerically indefinite tangent system."""


# ---------------------------------------------------------------------------
# material / section / state containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Material:
    """Isotropic elastic constants; the section law uses E directly."""

    youngs_modulus: float
    poisson: float = 0.0

    def __post_init__(self):
        if self.youngs_modulus <= 0.0:
            raise ValueError("Young's modulus must be positive")

    @property
    def lame_lambda(self) -> float:
        e, nu = self.youngs_modulus, self.poisson
        return e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))

    @property
    def lame_mu(self) -> float:
        return self.youngs_modulus / (2.0 * (1.0 + self.poisson))


@dataclass(frozen=True)
class CircularSection:
    radius: float

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError("section radius must be positive")

    @property
    def area(self) -> float:
        return np.pi * self.radius**2

    @property
    def second_moment(self) -> float:
        return np.pi * self.radius**4 / 4.0

    @property
    def torsion_constant(self) -> float:
        return np.pi * self.radius**4 / 2.0


@dataclass(frozen=True)
class StrainState:
    alpha: float
    beta2: float
    beta3: float
    gamma: float


@dataclass(frozen=True)
class SectionResultants:
    n: float
    m2: float
    m3: float
    q: float


@dataclass(frozen=True)
class FrameSnapshot:
    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    lambda1: np.ndarray
    lambda2: np.ndarray
    g11: float
    g11_contra: float


def resultants(st: StrainState, g11_contra: float, mat: Material, sec: CircularSection) -> SectionResultants:
    """Section resultants conjugate to (alpha, beta2, beta3, gamma)."""
    e = mat.youngs_modulus
    gi = g11_contra
    return SectionResultants(
        n=e * gi * gi * sec.area * st.alpha,
        m2=e * gi * gi * sec.second_moment * st.beta2,
        m3=e * gi * gi * sec.second_moment * st.beta3,
        q=2.0 * e * gi * sec.torsion_constant * st.gamma,
    )


# ---------------------------------------------------------------------------
# rotation maps
# ---------------------------------------------------------------------------


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def smallest_rotation(a_hat_ref: np.ndarray, a_hat: np.ndarray) -> np.ndarray:
    """Rotation-like map carrying the plane normal to a_hat_ref onto the plane
    normal to a_hat with minimal turning. Acts isometrically on that plane."""
    c = float(a_hat @ a_hat_ref)
    if 1.0 + c <= ANTIPODAL_TOL:
        raise FrameSingularityError("deformed tangent antipodal to reference tangent")
    w = a_hat_ref + a_hat
    return np.eye(3) - np.outer(w, a_hat) / (1.0 + c)


def rodrigues_about(l_skew: np.ndarray, theta: float) -> np.ndarray:
    return np.eye(3) + np.sin(theta) * l_skew + (1.0 - np.cos(theta)) * (l_skew @ l_skew)


def _perp_unit(t_hat: np.ndarray) -> np.ndarray:
    """A unit vector orthogonal to t_hat (least-aligned global axis, projected)."""
    k = int(np.argmin(np.abs(t_hat)))
    e = np.zeros(3)
    e[k] = 1.0
    v = e - (e @ t_hat) * t_hat
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------------------
# reference frame field (smallest-rotation transport along the reference curve)
# ---------------------------------------------------------------------------


class ReferenceFrameField:
    """Orthonormal director pairs (A2, A3) transported along the reference curve.

    Directors are produced by sequential smallest-rotation transport over a
    fine parameter grid, so the field has (numerically) zero torsion:
    A2 . A3,1 = 0 at every evaluation point. The parametric director
    derivatives follow the transport rule A_i,1 = -A1_hat (A11 . A_i)/|A1|.
    """

    def __init__(self, ctrl_x: np.ndarray, kv: KnotVector, start_a2: np.ndarray | None = None, n_per_span: int = 8):
        self.ctrl_x = np.asarray(ctrl_x, dtype=float)
        self.kv = kv
        breaks = kv.span_breaks()
        grid = [np.linspace(a, b, n_per_span, endpoint=False) for a, b in zip(breaks[:-1], breaks[1:])]
        self.grid = np.concatenate(grid + [[breaks[-1]]])
        tangents = np.array([self._tangent(u) for u in self.grid])
        self.tangents = tangents
        a2 = start_a2 / np.linalg.norm(start_a2) if start_a2 is not None else _perp_unit(tangents[0])
        a2 = a2 - (a2 @ tangents[0]) * tangents[0]
        nrm = np.linalg.norm(a2)
        if nrm < 1e-12:
            raise RodError("start director parallel to the start tangent")
        a2 = a2 / nrm
        frames = np.empty((self.grid.size, 2, 3))
        frames[0, 0] = a2
        frames[0, 1] = np.cross(tangents[0], a2)
        for i in range(1, self.grid.size):
            rot = smallest_rotation(tangents[i - 1], tangents[i])
            frames[i, 0] = rot @ frames[i - 1, 0]
            frames[i, 1] = rot @ frames[i - 1, 1]
            for j in (0, 1):  # re-normalise against drift on long curves
                frames[i, j] -= (frames[i, j] @ tangents[i]) * tangents[i]
                frames[i, j] /= np.linalg.norm(frames[i, j])
        self.frames = frames

    def _tangent(self, u: float) -> np.ndarray:
        be = eval_basis(self.kv, float(u))
        t = be.d1 @ self.ctrl_x[be.ctrl_indices()]
        nrm = np.linalg.norm(t)
        if nrm == 0.0:
            raise RodError(f"zero reference tangent at parameter {u}")
        return t / nrm

    def directors(self, u: float):
        """(A2, A3) at parameter u, transported from the nearest grid sample."""
        i = int(np.argmin(np.abs(self.grid - u)))
        t_hat = self._tangent(u)
        rot = smallest_rotation(self.tangents[i], t_hat)
        a2 = rot @ self.frames[i, 0]
        a3 = rot @ self.frames[i, 1]
        a2 -= (a2 @ t_hat) * t_hat
        a2 /= np.linalg.norm(a2)
        a3 -= (a3 @ t_hat) * t_hat + (a3 @ a2) * a2
        a3 /= np.linalg.norm(a3)
        return a2, a3


# ---------------------------------------------------------------------------
# rod model: precomputed reference data + batched energy/force/stiffness
# ---------------------------------------------------------------------------


@dataclass
class RodConfiguration:
    """One discretised yarn: reference control net plus current DOF values."""

    model: "RodModel"
    ctrl_u: np.ndarray
    nodal_twist: np.ndarray

    @property
    def ctrl_x(self) -> np.ndarray:
        return self.model.ctrl_x

    @property
    def kv(self) -> KnotVector:
        return self.model.kv


class RodModel:
    """Reference geometry, material and quadrature data for one rod."""

    def __init__(
        self,
        ctrl_x: np.ndarray,
        kv: KnotVector | None,
        material: Material,
        section: CircularSection,
        n_gauss: int = 4,
        start_a2: np.ndarray | None = None,
    ):
        self.ctrl_x = np.asarray(ctrl_x, dtype=float)
        self.kv = kv if kv is not None else make_clamped_knots(self.ctrl_x.shape[0])
        if self.ctrl_x.shape[0] != self.kv.n_ctrl:
            raise RodError("control net size does not match knot vector")
        self.material = material
        self.section = section
        self.n_gauss = n_gauss
        self.n_ctrl = self.ctrl_x.shape[0]
        self.n_elem = self.kv.n_spans
        self.n_dof = 4 * self.n_ctrl
        self.frame_field = ReferenceFrameField(self.ctrl_x, self.kv, start_a2=start_a2)
        self._setup_quadrature()

    # -- reference setup ----------------------------------------------------

    def _setup_quadrature(self):
        us, ws = quadrature_points(self.kv, self.n_gauss)
        nq = us.size
        self.qp_u = us
        self.qp_w = ws
        self.nq = nq
        self.conn = np.empty((nq, 4), dtype=int)
        self.B = np.empty((nq, 4))
        self.B1 = np.empty((nq, 4))
        self.B2 = np.empty((nq, 4))
        ref = {k: np.empty((nq, 3)) for k in ("A1", "A11", "Ahat", "v", "A2", "A3", "A2p", "A3p")}
        for i, u in enumerate(us):
            be = eval_basis(self.kv, float(u))
            self.conn[i] = be.ctrl_indices()
            self.B[i], self.B1[i], self.B2[i] = be.values, be.d1, be.d2
            pts = self.ctrl_x[self.conn[i]]
            a1 = be.d1 @ pts
            a11 = be.d2 @ pts
            nrm = np.linalg.norm(a1)
            if nrm == 0.0:
                raise RodError(f"zero reference tangent at quadrature point {i}")
            ahat = a1 / nrm
            a2, a3 = self.frame_field.directors(float(u))
            ref["A1"][i], ref["A11"][i], ref["Ahat"][i] = a1, a11, ahat
            ref["v"][i] = (a11 - (ahat @ a11) * ahat) / nrm
            ref["A2"][i], ref["A3"][i] = a2, a3
            # transport rule: directors tilt toward -A1_hat as the tangent turns
            ref["A2p"][i] = -ahat * (a11 @ a2) / nrm
            ref["A3p"][i] = -ahat * (a11 @ a3) / nrm
        self.A1, self.A11 = ref["A1"], ref["A11"]
        self.Ahat, self.v = ref["Ahat"], ref["v"]
        self.A2, self.A3 = ref["A2"], ref["A3"]
        self.A2p, self.A3p = ref["A2p"], ref["A3p"]
        self.nA1 = np.linalg.norm(self.A1, axis=1)
        self.G11 = self.nA1**2
        self.Ginv = 1.0 / self.G11
        self.L = np.array([skew(t) for t in self.Ahat])
        self.L1 = np.array([skew(t) for t in self.v])
        self.LL = self.L @ self.L
        self.LL1 = self.L @ self.L1 + self.L1 @ self.L
        self.beta2_ref = np.einsum("qi,qi->q", self.A2, self.A11)
        self.beta3_ref = np.einsum("qi,qi->q", self.A3, self.A11)
        self.gamma_ref = 0.5 * np.einsum("qi,qi->q", self.A2, self.A3p)
        self.wj = self.qp_w * self.nA1  # quadrature weight times arc Jacobian
        e = self.material.youngs_modulus
        self.k_alpha = e * self.Ginv**2 * self.section.area
        self.k_beta = e * self.Ginv**2 * self.section.second_moment
        self.k_gamma = 2.0 * e * self.Ginv * self.section.torsion_constant

    # -- DOF helpers ---------------------------------------------------------

    def split_dofs(self, dofs: np.ndarray):
        d = np.asarray(dofs, dtype=float).reshape(self.n_ctrl, 4)
        return d[:, :3], d[:, 3]

    def deformed_ctrl(self, dofs: np.ndarray) -> np.ndarray:
        u, _ = self.split_dofs(dofs)
        return self.ctrl_x + u

    # -- batched kinematics core ---------------------------------------------

    def _kinematics(self, dofs: np.ndarray, qsel=None):
        """Per-quadrature-point deformed state; qsel restricts to a qp subset."""
        u_ctrl, th_ctrl = self.split_dofs(dofs)
        sl = slice(None) if qsel is None else qsel
        conn = self.conn[sl]
        B, B1, B2 = self.B[sl], self.B1[sl], self.B2[sl]
        ue = u_ctrl[conn]  # (nq, 4, 3)
        te = th_ctrl[conn]  # (nq, 4)
        k = {}
        k["B"], k["B1"], k["B2"], k["conn"] = B, B1, B2, conn
        k["A1"], k["A11"] = self.A1[sl], self.A11[sl]
        k["Ahat"], k["A2"], k["A3"] = self.Ahat[sl], self.A2[sl], self.A3[sl]
        k["A2p"], k["A3p"] = self.A2p[sl], self.A3p[sl]
        k["L"], k["L1"], k["LL"], k["LL1"] = self.L[sl], self.L1[sl], self.LL[sl], self.LL1[sl]
        k["b2ref"], k["b3ref"], k["gref"] = self.beta2_ref[sl], self.beta3_ref[sl], self.gamma_ref[sl]
        k["wj"] = self.wj[sl]
        k["ka"], k["kb"], k["kg"] = self.k_alpha[sl], self.k_beta[sl], self.k_gamma[sl]

        a1 = k["A1"] + np.einsum("qa,qad->qd", B1, ue)
        a11 = k["A11"] + np.einsum("qa,qad->qd", B2, ue)
        th = np.einsum("qa,qa->q", B, te)
        thp = np.einsum("qa,qa->q", B1, te)
        na = np.linalg.norm(a1, axis=1)
        if np.any(na == 0.0):
            raise FrameSingularityError("zero deformed tangent")
        ahat = a1 / na[:, None]
        c = np.einsum("qi,qi->q", ahat, k["Ahat"])
        if np.any(1.0 + c <= ANTIPODAL_TOL):
            bad = int(np.argmin(c))
            raise FrameSingularityError(f"antipodal tangent at quadrature point {bad}")
        k.update(a1=a1, a11=a11, th=th, thp=thp, na=na, ahat=ahat, c=c)

        eye = np.eye(3)
        proj = (eye[None] - np.einsum("qi,qj->qij", ahat, ahat)) / na[:, None, None]
        ahat1 = np.einsum("qij,qj->qi", proj, a11)
        k["P"], k["ahat1"] = proj, ahat1

        st, ct = np.sin(th), np.cos(th)
        lam1 = eye[None] + st[:, None, None] * k["L"] + (1.0 - ct)[:, None, None] * k["LL"]
        lam1p = ct[:, None, None] * k["L"] + st[:, None, None] * k["LL"]
        lam1pp = -st[:, None, None] * k["L"] + ct[:, None, None] * k["LL"]
        lam11 = thp[:, None, None] * lam1p + st[:, None, None] * k["L1"] + (1.0 - ct)[:, None, None] * k["LL1"]
        s1 = thp[:, None, None] * lam1pp + ct[:, None, None] * k["L1"] + st[:, None, None] * k["LL1"]
        v1 = -thp[:, None, None] * lam1p - st[:, None, None] * k["L1"] + ct[:, None, None] * k["LL1"]
        k.update(lam1=lam1, lam1p=lam1p, lam1pp=lam1pp, lam11=lam11, S1=s1, V1=v1, st=st, ct=ct)

        w_sum = k["Ahat"] + ahat
        opc = 1.0 + c
        lam2 = eye[None] - np.einsum("qi,qj->qij", w_sum, ahat) / opc[:, None, None]
        k.update(W=w_sum, opc=opc, lam2=lam2)
        lam21 = self._dlam2(k, ahat1)
        k["lam21"] = lam21

        w2 = np.einsum("qij,qj->qi", lam1, k["A2"])
        w3 = np.einsum("qij,qj->qi", lam1, k["A3"])
        a2 = np.einsum("qij,qj->qi", lam2, w2)
        a3 = np.einsum("qij,qj->qi", lam2, w3)
        y2 = np.einsum("qij,qj->qi", lam11, k["A2"]) + np.einsum("qij,qj->qi", lam1, k["A2p"])
        y3 = np.einsum("qij,qj->qi", lam11, k["A3"]) + np.einsum("qij,qj->qi", lam1, k["A3p"])
        a21 = np.einsum("qij,qj->qi", lam21, w2) + np.einsum("qij,qj->qi", lam2, y2)
        a31 = np.einsum("qij,qj->qi", lam21, w3) + np.einsum("qij,qj->qi", lam2, y3)
        k.update(w2=w2, w3=w3, a2=a2, a3=a3, y2=y2, y3=y3, a21=a21, a31=a31)

        alpha = 0.5 * (np.einsum("qi,qi->q", a1, a1) - np.einsum("qi,qi->q", k["A1"], k["A1"]))
        beta2 = k["b2ref"] - np.einsum("qi,qi->q", a2, a11)
        beta3 = k["b3ref"] - np.einsum("qi,qi->q", a3, a11)
        gamma = 0.5 * np.einsum("qi,qi->q", a2, a31) - k["gref"]
        k.update(alpha=alpha, beta2=beta2, beta3=beta3, gamma=gamma)
        k.update(
            n_res=k["ka"] * alpha,
            m2=k["kb"] * beta2,
            m3=k["kb"] * beta3,
            q_res=k["kg"] * gamma,
        )
        return k

    # rotation-map directional derivatives, batched over quadrature points

    @staticmethod
    def _dlam2(k, q):
        w_sum, ahat, a_ref, opc = k["W"], k["ahat"], k["Ahat"], k["opc"]
        aq = np.einsum("qi,qi->q", a_ref, q)
        out = -(np.einsum("qi,qj->qij", q, ahat) + np.einsum("qi,qj->qij", w_sum, q)) / opc[:, None, None]
        out += np.einsum("qi,qj->qij", w_sum, ahat) * (aq / opc**2)[:, None, None]
        return out

    @staticmethod
    def _d2lam2(k, p, q):
        w_sum, ahat, a_ref, opc = k["W"], k["ahat"], k["Ahat"], k["opc"]
        ap = np.einsum("qi,qi->q", a_ref, p)
        aq = np.einsum("qi,qi->q", a_ref, q)
        o1 = opc[:, None, None]
        o2 = (opc**2)[:, None, None]
        o3 = (opc**3)[:, None, None]
        out = -(np.einsum("qi,qj->qij", q, p) + np.einsum("qi,qj->qij", p, q)) / o1
        out += (np.einsum("qi,qj->qij", q, ahat) + np.einsum("qi,qj->qij", w_sum, q)) * ap[:, None, None] / o2
        out += (np.einsum("qi,qj->qij", p, ahat) + np.einsum("qi,qj->qij", w_sum, p)) * aq[:, None, None] / o2
        out -= 2.0 * np.einsum("qi,qj->qij", w_sum, ahat) * (ap * aq)[:, None, None] / o3
        return out

    @staticmethod
    def _d3lam2(k, p, q, s):
        w_sum, ahat, a_ref, opc = k["W"], k["ahat"], k["Ahat"], k["opc"]
        ap = np.einsum("qi,qi->q", a_ref, p)
        aq = np.einsum("qi,qi->q", a_ref, q)
        a_s = np.einsum("qi,qi->q", a_ref, s)
        o2 = (opc**2)[:, None, None]
        o3 = (opc**3)[:, None, None]
        o4 = (opc**4)[:, None, None]
        op = lambda x, y: np.einsum("qi,qj->qij", x, y)
        out = (op(q, p) + op(p, q)) * a_s[:, None, None] / o2
        out += (op(q, s) + op(s, q)) * ap[:, None, None] / o2
        out -= 2.0 * (op(q, ahat) + op(w_sum, q)) * (ap * a_s)[:, None, None] / o3
        out += (op(p, s) + op(s, p)) * aq[:, None, None] / o2
        out -= 2.0 * (op(p, ahat) + op(w_sum, p)) * (aq * a_s)[:, None, None] / o3
        out -= 2.0 * (op(s, ahat) + op(w_sum, s)) * (ap * aq)[:, None, None] / o3
        out += 6.0 * op(w_sum, ahat) * (ap * aq * a_s)[:, None, None] / o4
        return out

    @staticmethod
    def _d2hat(k, w1, w2):
        a, na = k["a1"], k["na"]
        n3 = (na**3)[:, None]
        n5 = (na**5)[:, None]
        aw1 = np.einsum("qi,qi->q", a, w1)[:, None]
        aw2 = np.einsum("qi,qi->q", a, w2)[:, None]
        w12 = np.einsum("qi,qi->q", w1, w2)[:, None]
        return -(w1 * aw2 + w2 * aw1 + a * w12) / n3 + 3.0 * a * aw1 * aw2 / n5

    @staticmethod
    def _d3hat(k, w1, w2, w3):
        a, na = k["a1"], k["na"]
        n3 = (na**3)[:, None]
        n5 = (na**5)[:, None]
        n7 = (na**7)[:, None]
        dot = lambda x, y: np.einsum("qi,qi->q", x, y)[:, None]
        a1_, a2_, a3_ = dot(a, w1), dot(a, w2), dot(a, w3)
        w12, w13, w23 = dot(w1, w2), dot(w1, w3), dot(w2, w3)
        out = -(w1 * w23 + w2 * w13 + w3 * w12) / n3
        out += 3.0 * ((w1 * a2_ + w2 * a1_ + a * w12) * a3_ + w3 * a1_ * a2_ + a * (w13 * a2_ + a1_ * w23)) / n5
        out -= 15.0 * a * a1_ * a2_ * a3_ / n7
        return out

    # -- strain gradient arrays ----------------------------------------------

    def _first_derivative_data(self, k):
        """Direction-space strain gradients; basis-function factors applied later."""
        nq = k["a1"].shape[0]
        eye = np.eye(3)
        e_dirs = np.broadcast_to(eye, (nq, 3, 3))  # [q, d, comp] rows are e_d

        p_dir = np.transpose(k["P"], (0, 2, 1))  # [q, d, comp]: P e_d
        dl2p = np.stack([self._dlam2(k, p_dir[:, d]) for d in range(3)], axis=1)  # [q,d,3,3]
        da2 = np.einsum("qdij,qj->qdi", dl2p, k["w2"])
        da3 = np.einsum("qdij,qj->qdi", dl2p, k["w3"])
        q_dir = np.stack([self._d2hat(k, k["a11"], e_dirs[:, d]) for d in range(3)], axis=1)
        dl2q = np.stack([self._dlam2(k, q_dir[:, d]) for d in range(3)], axis=1)
        d2l2_hp = np.stack([self._d2lam2(k, k["ahat1"], p_dir[:, d]) for d in range(3)], axis=1)
        r1_3 = np.einsum("qdij,qj->qdi", d2l2_hp + dl2q, k["w3"]) + np.einsum("qdij,qj->qdi", dl2p, k["y3"])
        r2_3 = da3

        g = {}
        g["p_dir"], g["q_dir"], g["dl2p"], g["dl2q"], g["d2l2_hp"] = p_dir, q_dir, dl2p, dl2q, d2l2_hp
        g["da2"], g["da3"], g["r1_3"], g["r2_3"] = da2, da3, r1_3, r2_3
        # displacement-gradient coefficients: [q, d] to be multiplied by B1 / B2
        g["ga_1"] = k["a1"]
        g["gb2_1"] = -np.einsum("qdi,qi->qd", da2, k["a11"])
        g["gb2_2"] = -k["a2"]
        g["gb3_1"] = -np.einsum("qdi,qi->qd", da3, k["a11"])
        g["gb3_2"] = -k["a3"]
        g["gg_1"] = 0.5 * (np.einsum("qdi,qi->qd", da2, k["a31"]) + np.einsum("qi,qdi->qd", k["a2"], r1_3))
        g["gg_2"] = 0.5 * np.einsum("qi,qdi->qd", k["a2"], r2_3)

        # twist-gradient coefficients: scalars times B / B1
        da2_t = np.einsum("qij,qjl,ql->qi", k["lam2"], k["lam1p"], k["A2"])
        da3_t = np.einsum("qij,qjl,ql->qi", k["lam2"], k["lam1p"], k["A3"])
        s1 = (
            np.einsum("qij,qjl,ql->qi", k["lam21"], k["lam1p"], k["A3"])
            + np.einsum("qij,qjl,ql->qi", k["lam2"], k["S1"], k["A3"])
            + np.einsum("qij,qjl,ql->qi", k["lam2"], k["lam1p"], k["A3p"])
        )
        s2 = np.einsum("qij,qjl,ql->qi", k["lam2"], k["lam1p"], k["A3"])
        g["da2_t"], g["da3_t"], g["s1"], g["s2"] = da2_t, da3_t, s1, s2
        g["hb2"] = -np.einsum("qi,qi->q", da2_t, k["a11"])
        g["hb3"] = -np.einsum("qi,qi->q", da3_t, k["a11"])
        g["hg_0"] = 0.5 * (np.einsum("qi,qi->q", da2_t, k["a31"]) + np.einsum("qi,qi->q", k["a2"], s1))
        g["hg_1"] = 0.5 * np.einsum("qi,qi->q", k["a2"], s2)
        return g

    def _gradient_arrays(self, k, g):
        """Full per-DOF strain gradients: G*[q, a, d] and H*[q, a]."""
        B, B1, B2 = k["B"], k["B1"], k["B2"]
        mk = lambda c1, c2: np.einsum("qa,qd->qad", B1, c1) + np.einsum("qa,qd->qad", B2, c2)
        grad_alpha = np.einsum("qa,qd->qad", B1, g["ga_1"])
        grad_b2 = mk(g["gb2_1"], g["gb2_2"])
        grad_b3 = mk(g["gb3_1"], g["gb3_2"])
        grad_g = mk(g["gg_1"], g["gg_2"])
        h_b2 = np.einsum("qa,q->qa", B, g["hb2"])
        h_b3 = np.einsum("qa,q->qa", B, g["hb3"])
        h_g = np.einsum("qa,q->qa", B, g["hg_0"]) + np.einsum("qa,q->qa", B1, g["hg_1"])
        return grad_alpha, grad_b2, grad_b3, grad_g, h_b2, h_b3, h_g

    # -- public evaluations ----------------------------------------------------

    def energy(self, dofs: np.ndarray) -> float:
        k = self._kinematics(dofs)
        psi = 0.5 * (
            k["n_res"] * k["alpha"] + k["m2"] * k["beta2"] + k["m3"] * k["beta3"] + k["q_res"] * k["gamma"]
        )
        return float(np.sum(k["wj"] * psi))

    def strain_energy_density(self, dofs: np.ndarray) -> np.ndarray:
        """Energy per unit parameter (Jacobian included) at each quadrature point."""
        k = self._kinematics(dofs)
        return k["wj"] * 0.5 * (
            k["n_res"] * k["alpha"] + k["m2"] * k["beta2"] + k["m3"] * k["beta3"] + k["q_res"] * k["gamma"]
        )

    def stress_power_integral(self, dofs: np.ndarray) -> float:
        """Integral of S : (F^T F) over the rod volume.

        Equals int S:G dV + 2 int S:E dV; the metric part reduces to the
        axial resultant times G11 (odd section moments vanish and the
        transported directors carry no reference torsion).
        """
        k = self._kinematics(dofs)
        e = self.material.youngs_modulus
        metric_part = np.sum(k["wj"] * e * self.Ginv * self.section.area * k["alpha"])
        return float(metric_part + 4.0 * self.energy(dofs))

    def internal_forces(self, dofs: np.ndarray) -> np.ndarray:
        k = self._kinematics(dofs)
        g = self._first_derivative_data(k)
        return self._scatter_forces(k, g)

    def _scatter_forces(self, k, g) -> np.ndarray:
        ga, gb2, gb3, gg, hb2, hb3, hg = self._gradient_arrays(k, g)
        wj = k["wj"]
        fu = np.einsum(
            "q,qad->qad",
            wj,
            k["n_res"][:, None, None] * ga
            + k["m2"][:, None, None] * gb2
            + k["m3"][:, None, None] * gb3
            + k["q_res"][:, None, None] * gg,
        )
        ft = np.einsum("q,qa->qa", wj, k["m2"][:, None] * hb2 + k["m3"][:, None] * hb3 + k["q_res"][:, None] * hg)
        out = np.zeros(self.n_dof)
        conn = k["conn"]
        for a in range(4):
            idx = 4 * conn[:, a]
            for d in range(3):
                np.add.at(out, idx + d, fu[:, a, d])
            np.add.at(out, idx + 3, ft[:, a])
        return out

    def stiffness(self, dofs: np.ndarray) -> np.ndarray:
        k = self._kinematics(dofs)
        g = self._first_derivative_data(k)
        blocks = self._element_hessian_blocks(k, g)
        kmat = np.zeros((self.n_dof, self.n_dof))
        conn = k["conn"]
        nq = conn.shape[0]
        dof_idx = np.empty((nq, 16), dtype=int)
        for a in range(4):
            dof_idx[:, 4 * a : 4 * a + 3] = 4 * conn[:, a : a + 1] + np.arange(3)
            dof_idx[:, 4 * a + 3] = 4 * conn[:, a] + 3
        rows = np.repeat(dof_idx, 16, axis=1).ravel()
        cols = np.tile(dof_idx, (1, 16)).ravel()
        np.add.at(kmat, (rows, cols), blocks.reshape(nq, -1).ravel())
        return kmat

    def _element_hessian_blocks(self, k, g) -> np.ndarray:
        """Per-quadrature-point 16x16 Hessian contributions (4 dofs x 4 ctrl)."""
        nq = k["a1"].shape[0]
        B, B1, B2 = k["B"], k["B1"], k["B2"]
        wj = k["wj"]
        n_res, m2, m3, q_res = k["n_res"], k["m2"], k["m3"], k["q_res"]
        eye = np.eye(3)

        # ---- material part: outer products of the strain gradients
        ga, gb2, gb3, gg, hb2, hb3, hg = self._gradient_arrays(k, g)
        kaw, kbw, kgw = wj * k["ka"], wj * k["kb"], wj * k["kg"]
        kuu = np.einsum("q,qad,qbe->qadbe", kaw, ga, ga)
        kuu += np.einsum("q,qad,qbe->qadbe", kbw, gb2, gb2)
        kuu += np.einsum("q,qad,qbe->qadbe", kbw, gb3, gb3)
        kuu += np.einsum("q,qad,qbe->qadbe", kgw, gg, gg)
        kut = np.einsum("q,qad,qb->qadb", kbw, gb2, hb2)
        kut += np.einsum("q,qad,qb->qadb", kbw, gb3, hb3)
        kut += np.einsum("q,qad,qb->qadb", kgw, gg, hg)
        ktt = np.einsum("q,qa,qb->qab", kbw, hb2, hb2)
        ktt += np.einsum("q,qa,qb->qab", kbw, hb3, hb3)
        ktt += np.einsum("q,qa,qb->qab", kgw, hg, hg)

        # ---- geometric part: resultants times second strain derivatives
        p_dir, q_dir = g["p_dir"], g["q_dir"]
        dl2p, dl2q, d2l2_hp = g["dl2p"], g["dl2q"], g["d2l2_hp"]
        da2, da3, r1_3, r2_3 = g["da2"], g["da3"], g["r1_3"], g["r2_3"]

        e_of = lambda d: np.broadcast_to(eye[d], (nq, 3))
        m_de = np.stack(
            [np.stack([self._d2hat(k, e_of(d), e_of(e)) for e in range(3)], axis=1) for d in range(3)], axis=1
        )  # [q, d, e, comp]
        d3h = np.stack(
            [np.stack([self._d3hat(k, k["a11"], e_of(d), e_of(e)) for e in range(3)], axis=1) for d in range(3)],
            axis=1,
        )
        u2 = np.stack(
            [
                np.stack(
                    [self._d2lam2(k, p_dir[:, d], p_dir[:, e]) + self._dlam2(k, m_de[:, d, e]) for e in range(3)],
                    axis=1,
                )
                for d in range(3)
            ],
            axis=1,
        )  # [q, d, e, 3, 3]
        dqp = np.stack(
            [np.stack([self._d2lam2(k, q_dir[:, d], p_dir[:, e]) for e in range(3)], axis=1) for d in range(3)],
            axis=1,
        )
        u1 = np.stack(
            [
                np.stack(
                    [
                        self._d3lam2(k, k["ahat1"], p_dir[:, d], p_dir[:, e])
                        + self._d2lam2(k, k["ahat1"], m_de[:, d, e])
                        + self._dlam2(k, d3h[:, d, e])
                        for e in range(3)
                    ],
                    axis=1,
                )
                for d in range(3)
            ],
            axis=1,
        )
        u1 += dqp + np.transpose(dqp, (0, 2, 1, 3, 4))

        q2 = np.einsum("qdeij,qj->qdei", u2, k["w2"])  # second derivatives of a2, a3
        q3 = np.einsum("qdeij,qj->qdei", u2, k["w3"])

        # [B1_I B1_J] coefficients
        c11 = n_res[:, None, None] * eye[None]
        c11 -= m2[:, None, None] * np.einsum("qdei,qi->qde", q2, k["a11"])
        c11 -= m3[:, None, None] * np.einsum("qdei,qi->qde", q3, k["a11"])
        gg11 = 0.5 * (
            np.einsum("qdi,qei->qde", da2, r1_3)
            + np.einsum("qei,qdi->qde", da2, r1_3)
            + np.einsum("qdei,qi->qde", q2, k["a31"])
            + np.einsum("qi,qdeij,qj->qde", k["a2"], u1, k["w3"])
            + np.einsum("qi,qdeij,qj->qde", k["a2"], u2, k["y3"])
        )
        c11 += q_res[:, None, None] * gg11
        # [B1_I B2_J] coefficients; the [B2_I B1_J] block is its d<->e transpose
        gg12 = 0.5 * (np.einsum("qdi,qei->qde", da2, r2_3) + np.einsum("qi,qdei->qde", k["a2"], q3))
        c12 = -(m2[:, None, None] * da2 + m3[:, None, None] * da3) + q_res[:, None, None] * gg12

        kuu += np.einsum("q,qde,qa,qb->qadbe", wj, c11, B1, B1)
        kuu += np.einsum("q,qde,qa,qb->qadbe", wj, c12, B1, B2)
        kuu += np.einsum("q,qed,qa,qb->qadbe", wj, c12, B2, B1)

        # mixed u-theta geometric blocks
        da2_t, da3_t, s1, s2 = g["da2_t"], g["da3_t"], g["s1"], g["s2"]
        lam1p, lam2, s1m = k["lam1p"], k["lam2"], k["S1"]
        dl2_l1p_a2 = np.einsum("qdij,qjl,ql->qdi", dl2p, lam1p, k["A2"])
        dl2_l1p_a3 = np.einsum("qdij,qjl,ql->qdi", dl2p, lam1p, k["A3"])
        mix_b_10 = -(
            m2[:, None] * np.einsum("qdi,qi->qd", dl2_l1p_a2, k["a11"])
            + m3[:, None] * np.einsum("qdi,qi->qd", dl2_l1p_a3, k["a11"])
        )
        mix_b_20 = -(m2[:, None] * da2_t + m3[:, None] * da3_t)
        d2a31_ut_10 = (
            np.einsum("qdij,qjl,ql->qdi", d2l2_hp + dl2q, lam1p, k["A3"])
            + np.einsum("qdij,qjl,ql->qdi", dl2p, s1m, k["A3"])
            + np.einsum("qdij,qjl,ql->qdi", dl2p, lam1p, k["A3p"])
        )
        mix_g_10 = 0.5 * (
            np.einsum("qdi,qi->qd", da2, s1)
            + np.einsum("qdi,qi->qd", dl2_l1p_a2, k["a31"])
            + np.einsum("qi,qdi->qd", da2_t, r1_3)
            + np.einsum("qi,qdi->qd", k["a2"], d2a31_ut_10)
        )
        mix_g_20 = 0.5 * (np.einsum("qi,qdi->qd", da2_t, r2_3) + np.einsum("qi,qdi->qd", k["a2"], dl2_l1p_a3))
        mix_g_11 = 0.5 * (np.einsum("qdi,qi->qd", da2, s2) + np.einsum("qi,qdi->qd", k["a2"], dl2_l1p_a3))
        cu_t_10 = mix_b_10 + q_res[:, None] * mix_g_10
        cu_t_20 = mix_b_20 + q_res[:, None] * mix_g_20
        cu_t_11 = q_res[:, None] * mix_g_11
        kut += np.einsum("q,qd,qa,qb->qadb", wj, cu_t_10, B1, B)
        kut += np.einsum("q,qd,qa,qb->qadb", wj, cu_t_20, B2, B)
        kut += np.einsum("q,qd,qa,qb->qadb", wj, cu_t_11, B1, B1)

        # theta-theta geometric blocks
        lam2_l1pp_a2 = np.einsum("qij,qjl,ql->qi", lam2, k["lam1pp"], k["A2"])
        lam2_l1pp_a3 = np.einsum("qij,qjl,ql->qi", lam2, k["lam1pp"], k["A3"])
        tt_b = -(
            m2 * np.einsum("qi,qi->q", lam2_l1pp_a2, k["a11"])
            + m3 * np.einsum("qi,qi->q", lam2_l1pp_a3, k["a11"])
        )
        d2a31_tt = (
            np.einsum("qij,qjl,ql->qi", k["lam21"], k["lam1pp"], k["A3"])
            + np.einsum("qij,qjl,ql->qi", lam2, k["V1"], k["A3"])
            + np.einsum("qij,qjl,ql->qi", lam2, k["lam1pp"], k["A3p"])
        )
        tt_g_00 = 0.5 * (
            2.0 * np.einsum("qi,qi->q", da2_t, s1)
            + np.einsum("qi,qi->q", lam2_l1pp_a2, k["a31"])
            + np.einsum("qi,qi->q", k["a2"], d2a31_tt)
        )
        tt_g_01 = 0.5 * (np.einsum("qi,qi->q", da2_t, s2) + np.einsum("qi,qi->q", k["a2"], lam2_l1pp_a3))
        ctt_00 = tt_b + q_res * tt_g_00
        ctt_01 = q_res * tt_g_01
        ktt += np.einsum("q,qa,qb->qab", wj * ctt_00, B, B)
        ktt += np.einsum("q,qa,qb->qab", wj * ctt_01, B, B1)
        ktt += np.einsum("q,qa,qb->qab", wj * ctt_01, B1, B)

        # ---- pack into per-qp 16x16 blocks, dof order (ux,uy,uz,th) per ctrl pt
        blocks = np.zeros((nq, 16, 16))
        for a in range(4):
            for b in range(4):
                blocks[:, 4 * a : 4 * a + 3, 4 * b : 4 * b + 3] = kuu[:, a, :, b, :]
                blocks[:, 4 * a : 4 * a + 3, 4 * b + 3] = kut[:, a, :, b]
                blocks[:, 4 * b + 3, 4 * a : 4 * a + 3] = kut[:, a, :, b]
                blocks[:, 4 * a + 3, 4 * b + 3] = ktt[:, a, b]
        return blocks

    # -- element-level views (four quadrature points of one knot span) --------

    def _element_qsel(self, elem: int) -> slice:
        if not (0 <= elem < self.n_elem):
            raise RodError(f"element index {elem} out of range")
        return slice(elem * self.n_gauss, (elem + 1) * self.n_gauss)

    def element_internal_forces(self, dofs: np.ndarray, elem: int):
        """(f_u, f_theta) for one element's four control points."""
        qsel = self._element_qsel(elem)
        k = self._kinematics(dofs, qsel=qsel)
        g = self._first_derivative_data(k)
        ga, gb2, gb3, gg, hb2, hb3, hg = self._gradient_arrays(k, g)
        wj = k["wj"]
        fu = np.einsum(
            "q,qad->ad",
            wj,
            k["n_res"][:, None, None] * ga
            + k["m2"][:, None, None] * gb2
            + k["m3"][:, None, None] * gb3
            + k["q_res"][:, None, None] * gg,
        )
        ft = np.einsum("q,qa->a", wj, k["m2"][:, None] * hb2 + k["m3"][:, None] * hb3 + k["q_res"][:, None] * hg)
        return fu, ft

    def element_stiffness(self, dofs: np.ndarray, elem: int) -> np.ndarray:
        """Dense symmetric 16x16 block for one element (4 dofs per control point)."""
        qsel = self._element_qsel(elem)
        k = self._kinematics(dofs, qsel=qsel)
        g = self._first_derivative_data(k)
        return self._element_hessian_blocks(k, g).sum(axis=0)

    # -- single-point evaluations (frames/strains/resultants) -----------------

    def _point_kinematics(self, dofs: np.ndarray, u: float):
        # reuse the batched pipeline with a one-point pseudo grid
        be = eval_basis(self.kv, float(u))
        idx = be.ctrl_indices()
        pts = self.ctrl_x[idx]
        a1_ref = be.d1 @ pts
        a11_ref = be.d2 @ pts
        nrm = np.linalg.norm(a1_ref)
        ahat_ref = a1_ref / nrm
        a2_ref, a3_ref = self.frame_field.directors(float(u))
        u_ctrl, th_ctrl = self.split_dofs(dofs)
        a1 = a1_ref + be.d1 @ u_ctrl[idx]
        a11 = a11_ref + be.d2 @ u_ctrl[idx]
        th = be.values @ th_ctrl[idx]
        return be, a1_ref, a11_ref, ahat_ref, a2_ref, a3_ref, a1, a11, th

    def frame_at(self, dofs: np.ndarray, u: float) -> FrameSnapshot:
        _, a1_ref, a11_ref, ahat_ref, a2_ref, a3_ref, a1, a11, th = self._point_kinematics(dofs, u)
        na = np.linalg.norm(a1)
        if na == 0.0:
            raise FrameSingularityError(f"zero deformed tangent at parameter {u}")
        ahat = a1 / na
        if 1.0 + float(ahat @ ahat_ref) <= ANTIPODAL_TOL:
            raise FrameSingularityError(f"antipodal tangent at parameter {u}")
        lam1 = rodrigues_about(skew(ahat_ref), th)
        lam2 = smallest_rotation(ahat_ref, ahat)
        a2 = lam2 @ lam1 @ a2_ref
        a3 = lam2 @ lam1 @ a3_ref
        g11 = float(a1_ref @ a1_ref)
        return FrameSnapshot(a1=a1, a2=a2, a3=a3, lambda1=lam1, lambda2=lam2, g11=g11, g11_contra=1.0 / g11)

    def strains_at(self, dofs: np.ndarray, u: float) -> StrainState:
        # one-off scalar evaluation mirroring the batched path
        be, a1_ref, a11_ref, ahat_ref, a2_ref, a3_ref, a1, a11, th = self._point_kinematics(dofs, u)
        idx = be.ctrl_indices()
        _, th_ctrl = self.split_dofs(dofs)
        thp = be.d1 @ th_ctrl[idx]
        na = np.linalg.norm(a1)
        ahat = a1 / na
        if 1.0 + float(ahat @ ahat_ref) <= ANTIPODAL_TOL:
            raise FrameSingularityError(f"antipodal tangent at parameter {u}")
        nrm_ref = np.linalg.norm(a1_ref)
        v = (a11_ref - (ahat_ref @ a11_ref) * ahat_ref) / nrm_ref
        l_sk, l1_sk = skew(ahat_ref), skew(v)
        lam1 = rodrigues_about(l_sk, th)
        lam1p = np.cos(th) * l_sk + np.sin(th) * (l_sk @ l_sk)
        lam11 = thp * lam1p + np.sin(th) * l1_sk + (1 - np.cos(th)) * (l_sk @ l1_sk + l1_sk @ l_sk)
        lam2 = smallest_rotation(ahat_ref, ahat)
        opc = 1.0 + float(ahat @ ahat_ref)
        w_sum = ahat_ref + ahat
        proj = (np.eye(3) - np.outer(ahat, ahat)) / na
        ahat1 = proj @ a11
        lam21 = (
            -(np.outer(ahat1, ahat) + np.outer(w_sum, ahat1)) / opc
            + np.outer(w_sum, ahat) * float(ahat_ref @ ahat1) / opc**2
        )
        a2p_ref = -ahat_ref * (a11_ref @ a2_ref) / nrm_ref
        a3p_ref = -ahat_ref * (a11_ref @ a3_ref) / nrm_ref
        w2, w3 = lam1 @ a2_ref, lam1 @ a3_ref
        a2 = lam2 @ w2
        a3 = lam2 @ w3
        a31 = lam21 @ w3 + lam2 @ (lam11 @ a3_ref + lam1 @ a3p_ref)
        alpha = 0.5 * float(a1 @ a1 - a1_ref @ a1_ref)
        beta2 = float(a2_ref @ a11_ref - a2 @ a11)
        beta3 = float(a3_ref @ a11_ref - a3 @ a11)
        gamma = 0.5 * float(a2 @ a31 - a2_ref @ a3p_ref)
        return StrainState(alpha=alpha, beta2=beta2, beta3=beta3, gamma=gamma)

    def resultants_at(self, dofs: np.ndarray, u: float) -> SectionResultants:
        st = self.strains_at(dofs, u)
        be = eval_basis(self.kv, float(u))
        a1_ref = be.d1 @ self.ctrl_x[be.ctrl_indices()]
        return resultants(st, 1.0 / float(a1_ref @ a1_ref), self.material, self.section)
