"""Two-yarn periodic unit cell of a weft knit and its homogenised response.

The cell spans one wale period (w) and two course spacings (2c): yarn A is a
full snake period of one course, yarn B the same net translated by the course
offset v2 = (w/2, c, 0). Loop interlock happens at four leg-crossing sites,
two against each periodic image of yarn B; contact keeps the surfaces apart
while the periodic ties and base anchoring impose the macroscale stretch.

Macro strain enters through the symmetric stretch U = sqrt(I + 2E): end
control points are tied to start control points offset by U L for the lattice
vector L, yarn B's base is tied to yarn A's base offset by U v2, and the
out-of-plane displacement at those boundary nodes vanishes (plane stress).
The volume-averaged energy density uses V = (w * 2c) * 2r.

Built cells are relaxed (contact only, zero strain) and re-referenced so the
stress-free state is geometrically compatible: psi(0) = 0 holds exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import knitgeo
from .contact import ContactManager, ContactPair, _Curve, closest_points, grid_local_minima
from .knitgeo import GeometryError, KnitGeometryParams
from .rod import CircularSection, ConvergenceError, Material, RodError, RodModel
from .solver import Assembly, ConstraintSet, NewtonOptions, solve_newton


@dataclass(frozen=True)
class MacroStrainState:
    """In-plane Green-Lagrange strain triple (course, wale, shear)."""

    e11: float
    e22: float
    e12: float

    def as_array(self) -> np.ndarray:
        return np.array([self.e11, self.e22, self.e12])


def stretch_from_strain(e: MacroStrainState) -> np.ndarray:
    """Symmetric in-plane stretch U with U^T U = I + 2E, embedded in 3x3."""
    cmat = np.array([[1.0 + 2.0 * e.e11, 2.0 * e.e12], [2.0 * e.e12, 1.0 + 2.0 * e.e22]])
    det = np.linalg.det(cmat)
    if det <= 0.0 or cmat[0, 0] <= 0.0:
        raise ValueError(f"strain state {e} gives a non-positive metric")
    sq = np.sqrt(det)
    u2 = (cmat + sq * np.eye(2)) / np.sqrt(cmat.trace() + 2.0 * sq)
    out = np.eye(3)
    out[:2, :2] = u2
    return out


@dataclass
class RveModel:
    params: KnitGeometryParams
    material: Material
    n_elem: int
    assembly: Assembly
    contact: ContactManager
    v1: np.ndarray
    v2: np.ndarray
    volume: float
    relax_info: dict = field(default_factory=dict)

    @property
    def n_ctrl(self) -> int:
        return self.assembly.rods[0].n_ctrl

    def yarn_ctrl(self, i: int) -> np.ndarray:
        return self.assembly.rods[i].ctrl_x


@dataclass
class HomogenisationResult:
    strain: MacroStrainState
    psi: float
    energy: float
    micro_work: float
    full: np.ndarray
    steps: int
    contact_state: dict


# ---------------------------------------------------------------------------
# cell construction
# ---------------------------------------------------------------------------

_IMAGE_SHIFTS = ("image_up", "image_down")


def _image_vector(params: KnitGeometryParams, tag: str) -> np.ndarray:
    w, c = params.wale_spacing, params.course_spacing
    if tag == "image_up":
        return np.array([-w, 0.0, 0.0])
    if tag == "image_down":
        return np.array([0.0, -2.0 * c, 0.0])
    raise ValueError(f"unknown image tag {tag}")


def _detect_contact_sites(params: KnitGeometryParams, rod_a: RodModel, rod_b: RodModel) -> list[ContactPair]:
    """Candidate closest-point sites against both interlocking images of yarn B."""
    pairs = []
    r = params.yarn_radius
    window = 2.0 * r + 4.0 * params.yarn_gap + r
    for tag in _IMAGE_SHIFTS:
        lvec = _image_vector(params, tag)
        ca = _Curve(rod_a.ctrl_x, rod_a.kv, np.zeros(3))
        cb = _Curve(rod_b.ctrl_x, rod_b.kv, lvec)
        found = []
        for tl, tr, _ in grid_local_minima(ca, cb, n=48, d_max=window):
            try:
                tl2, tr2, d = closest_points(ca, cb, (tl, tr))
            except Exception:
                continue
            if any(abs(f[0] - tl2) < 1e-3 and abs(f[1] - tr2) < 1e-3 for f in found):
                continue
            found.append((tl2, tr2, d))
        for site, (tl2, tr2, d) in enumerate(found):
            pair = ContactPair(
                rod_l=0,
                rod_r=1,
                key=(tag, site),
                shift_r=lvec.copy(),
                theta_l=tl2,
                theta_r=tr2,
                d_min=d,
            )
            pair.lattice = lvec  # base vector; deformed shift is U @ lattice
            pairs.append(pair)
        if len(found) < 2:
            raise GeometryError(f"loop interlock sites missing for {tag}: found {len(found)}")
    return pairs


def _make_contact(params: KnitGeometryParams, rod_a: RodModel, rod_b: RodModel, stretch: np.ndarray | None = None):
    mgr = ContactManager(params.yarn_radius, _detect_contact_sites(params, rod_a, rod_b))
    u_mat = np.eye(3) if stretch is None else stretch

    def update(pair: ContactPair, lam: float):
        u_lam = np.eye(3) + lam * (u_mat - np.eye(3))
        pair.shift_r = u_lam @ pair.lattice

    mgr.shift_update = update
    return mgr


def _apply_ties(cons: ConstraintSet, asm: Assembly, rve_or_parts, stretch: np.ndarray):
    """Periodic wrap ties, cross-course base tie, pins and twist constraints.

    Each yarn is a periodic spline stored open: the last three control points
    are wrap copies of the first three, tied with the stretched period offset
    (C^2 periodicity of the deformed centreline). Yarn B's first two control
    points follow yarn A's with the stretched course offset, anchoring the
    course stagger; the remaining coupling is contact. Twist is periodic and
    pinned at the cell boundary; boundary out-of-plane motion is suppressed
    through the pinned base (plane-stress condition).
    """
    rod_a, rod_b = asm.rods
    n = rod_a.n_ctrl
    m = n - 3  # spans per period
    du = stretch - np.eye(3)
    v1 = rve_or_parts["v1"]
    v2 = rve_or_parts["v2"]
    for k in (0, 1, 2):
        for rod_i, rod in ((0, rod_a), (1, rod_b)):
            geom_gap = rod.ctrl_x[k] + v1 - rod.ctrl_x[m + k]
            for comp in range(3):
                cons.tie(
                    asm.dof_index(rod_i, m + k, comp),
                    asm.dof_index(rod_i, k, comp),
                    offset_const=float(geom_gap[comp]),
                    offset_linear=float((du @ v1)[comp]),
                )
            cons.tie(asm.dof_index(rod_i, m + k, 3), asm.dof_index(rod_i, k, 3))
    for k in (0, 1):
        base_gap = rod_a.ctrl_x[k] + v2 - rod_b.ctrl_x[k]
        for comp in range(3):
            cons.tie(
                asm.dof_index(1, k, comp),
                asm.dof_index(0, k, comp),
                offset_const=float(base_gap[comp]),
                offset_linear=float((du @ v2)[comp]),
            )
        cons.tie(asm.dof_index(1, k, 3), asm.dof_index(0, k, 3))
        cons.fix(asm.dof_index(0, k, 3), 0.0)
    for comp in range(3):
        cons.fix(asm.dof_index(0, 0, comp), 0.0)
    return cons


def _pairwise_min_distance(params: KnitGeometryParams, ctrl: np.ndarray, kv, v2: np.ndarray) -> float:
    """Closest approach between yarn A and the interlocking images of yarn B."""
    best = np.inf
    ca = _Curve(ctrl, kv, np.zeros(3))
    for tag in _IMAGE_SHIFTS:
        cb = _Curve(ctrl + v2, kv, _image_vector(params, tag))
        seeds = grid_local_minima(ca, cb, n=48, d_max=np.inf)
        for tl, tr, _ in seeds:
            try:
                _, _, d = closest_points(ca, cb, (tl, tr))
            except Exception:
                continue
            best = min(best, d)
    return best


def _periodic_yarn(params: KnitGeometryParams, n_elem: int, weave_amplitude: float):
    """Periodic open-form control net for one course yarn (n_elem spans)."""
    snake = knitgeo.snake_samples(params, max(16 * n_elem, 480), weave_amplitude=weave_amplitude)
    pts = knitgeo.resample_by_arc(snake, n_elem, drop_last=True)
    from .splines import fit_periodic_curve

    return fit_periodic_curve(pts, np.array([params.wale_spacing, 0.0, 0.0]))


def calibrate_weave(params: KnitGeometryParams, target_gap: float = 0.0, n_probe: int = 32) -> float:
    """Weave amplitude making the loop-crossing clearance 2r + target_gap.

    The crossing distance grows monotonically with the amplitude from zero
    (intersecting centrelines), so a short bisection suffices. The default
    target is exact touching: interlocked loops engage as soon as the cell
    deforms, and the rest state carries no contact force.
    """
    r = params.yarn_radius
    target = 2.0 * r + target_gap
    v2 = np.array([params.wale_spacing / 2.0, params.course_spacing, 0.0])

    def min_dist(amp: float) -> float:
        ctrl, kv = _periodic_yarn(params, n_probe, amp)
        return _pairwise_min_distance(params, ctrl, kv, v2)

    lo, hi = 0.05 * r, 4.0 * r
    if min_dist(hi) < target:
        raise GeometryError("weave calibration failed: crossing clearance below target even at 4r amplitude")
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if min_dist(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-10 * r:
            break
    return hi


def build_rve(
    params: KnitGeometryParams,
    material: Material,
    n_elem: int = 32,
    relax: bool = True,
    weave_amplitude: float | None = None,
    newton_opts: NewtonOptions | None = None,
) -> RveModel:
    """Construct, relax and re-reference the two-yarn periodic cell.

    ``weave_amplitude`` controls the out-of-plane interleaving of the loop
    legs; by default it is calibrated so the crossing clearance at rest is
    one yarn diameter plus the yarn gap (loops linked, just not touching).
    """
    w, c = params.wale_spacing, params.course_spacing
    if weave_amplitude is None:
        weave_amplitude = calibrate_weave(params)
    v1 = np.array([w, 0.0, 0.0])
    v2 = np.array([w / 2.0, c, 0.0])
    ctrl_a, kv = _periodic_yarn(params, n_elem, weave_amplitude)
    ctrl_b = ctrl_a + v2
    section = CircularSection(params.yarn_radius)
    rod_a = RodModel(ctrl_a, kv, material, section)
    rod_b = RodModel(ctrl_b, kv, material, section)
    asm = Assembly([rod_a, rod_b])
    volume = (w * 2.0 * c) * (2.0 * params.yarn_radius)

    relax_info = {
        "relaxed": False,
        "initial_penetration": 0.0,
        "residual_energy": 0.0,
        "weave_amplitude": float(weave_amplitude),
    }
    contact = _make_contact(params, rod_a, rod_b)
    d0 = min(p.d_min for p in contact.pairs)
    relax_info["initial_penetration"] = max(0.0, 2.0 * params.yarn_radius - d0)

    if relax and relax_info["initial_penetration"] > 0.0:
        cons = ConstraintSet(asm.n_dof)
        _apply_ties(cons, asm, {"v1": v1, "v2": v2}, np.eye(3))
        res = solve_newton(asm, cons, [1.0], contact=contact, opts=newton_opts or NewtonOptions())
        full = res[-1].full
        # re-reference: the relaxed centrelines become the stress-free state
        new_a = asm.deformed_ctrl(full, 0)
        new_b = asm.deformed_ctrl(full, 1)
        rod_a = RodModel(new_a, kv, material, section)
        rod_b = RodModel(new_b, kv, material, section)
        asm = Assembly([rod_a, rod_b])
        contact = _make_contact(params, rod_a, rod_b)
        relax_info["relaxed"] = True
        relax_info["residual_energy"] = res[-1].residuals[-1]
        relax_info["min_gap_after"] = min(p.d_min for p in contact.pairs) - 2.0 * params.yarn_radius

    return RveModel(
        params=params,
        material=material,
        n_elem=n_elem,
        assembly=asm,
        contact=contact,
        v1=v1,
        v2=v2,
        volume=volume,
        relax_info=relax_info,
    )


def apply_macro_strain(rve: RveModel, e: MacroStrainState):
    """Constraint set and contact-shift law realising the macro stretch."""
    stretch = stretch_from_strain(e)
    cons = ConstraintSet(rve.assembly.n_dof)
    _apply_ties(cons, rve.assembly, {"v1": rve.v1, "v2": rve.v2}, stretch)
    contact = _make_contact(rve.params, rve.assembly.rods[0], rve.assembly.rods[1], stretch)
    return cons, contact, stretch


def solve_rve(
    rve: RveModel,
    e: MacroStrainState,
    n_steps: int | None = None,
    newton_opts: NewtonOptions | None = None,
) -> HomogenisationResult:
    """Equilibrium of the cell under one macro strain; volume-averaged energy."""
    cons, contact, stretch = apply_macro_strain(rve, e)
    mag = np.abs(e.as_array()).max()
    if n_steps is None:
        n_steps = max(1, int(np.ceil(mag / 0.025)))
    schedule = np.linspace(1.0 / n_steps, 1.0, n_steps) if mag > 0 else [1.0]
    res = solve_newton(rve.assembly, cons, schedule, contact=contact, opts=newton_opts or NewtonOptions())
    final = res[-1]
    energy = rve.assembly.energy(final.full)
    # microscale stress power: field integral over the yarns plus the
    # transmission work of the contact tractions across the surface gaps
    micro = sum(
        rod.stress_power_integral(rve.assembly.rod_dofs(final.full, i))
        for i, rod in enumerate(rve.assembly.rods)
    )
    for pair in contact.active_pairs():
        tau = final.multipliers.get(pair.key, 0.0)
        if tau == 0.0:
            continue
        cl = contact._curve(rve.assembly, final.full, pair.rod_l, pair.shift_l)
        cr = contact._curve(rve.assembly, final.full, pair.rod_r, pair.shift_r)
        xl = cl.at(pair.theta_l)[0]
        xr = cr.at(pair.theta_r)[0]
        dvec = xl - xr
        nhat = dvec / max(np.linalg.norm(dvec), 1e-30)
        # traction pair acting across the surface gap plus, for periodic
        # images, across one deformed lattice vector (inter-cell transmission)
        sep = dvec + stretch @ getattr(pair, "lattice", np.zeros(3))
        micro += tau * float(nhat @ sep)
    micro /= rve.volume
    return HomogenisationResult(
        strain=e,
        psi=energy / rve.volume,
        energy=energy,
        micro_work=micro,
        full=final.full,
        steps=len(res),
        contact_state={p.key: (p.gap, final.multipliers.get(p.key, 0.0)) for p in contact.pairs},
    )


def macro_stress(rve: RveModel, e: MacroStrainState, h: float = 1e-4, solver=None) -> np.ndarray:
    """Second Piola-Kirchhoff membrane stress by central differences of psi.

    Verification path only; the production path differentiates the trained
    surrogate. Uses the decoupled biaxial/shear split.
    """
    solve = solver or (lambda state: solve_rve(rve, state).psi)
    out = np.zeros(3)
    for i, key in enumerate(("e11", "e22", "e12")):
        ep = dict(e11=e.e11, e22=e.e22, e12=e.e12)
        em = dict(ep)
        ep[key] += h
        em[key] -= h
        out[i] = (solve(MacroStrainState(**ep)) - solve(MacroStrainState(**em))) / (2.0 * h)
    return out


def hill_mandel_check(rve: RveModel, e: MacroStrainState, h: float = 1e-4) -> dict:
    """Macroscale stress power versus volume-averaged microscale work."""
    s = macro_stress(rve, e, h=h)
    smat = np.array([[s[0], s[2] / 2.0], [s[2] / 2.0, s[1]]])
    cmat = np.array([[1.0 + 2.0 * e.e11, 2.0 * e.e12], [2.0 * e.e12, 1.0 + 2.0 * e.e22]])
    macro = float(np.tensordot(smat, cmat))
    micro = solve_rve(rve, e).micro_work
    mismatch = abs(macro - micro) / max(abs(macro), 1e-30)
    return {"macro_work": macro, "micro_work": micro, "mismatch": mismatch, "stress": s}


# ---------------------------------------------------------------------------
# response database construction (decoupled biaxial + shear energies)
# ---------------------------------------------------------------------------


def build_response_database(rve: RveModel, states, progress=None, newton_opts=None):
    """Rows (E11, E22, E12, psi) with psi = psi_biaxial + psi_shear.

    Biaxial and shear sub-solves are cached and reused across states sharing
    components. Failed states are recorded and excluded from the rows.
    """
    from .database import ResponseDatabase

    biax_cache: dict = {}
    shear_cache: dict = {}
    rows = []
    failures = []
    t0 = time.time()
    for i, st in enumerate(states):
        key_b = (st.e11, st.e22)
        key_s = st.e12
        try:
            if key_b not in biax_cache:
                if st.e11 == 0.0 and st.e22 == 0.0:
                    biax_cache[key_b] = 0.0
                else:
                    biax_cache[key_b] = solve_rve(
                        rve, MacroStrainState(st.e11, st.e22, 0.0), newton_opts=newton_opts
                    ).psi
            if key_s not in shear_cache:
                if st.e12 == 0.0:
                    shear_cache[key_s] = 0.0
                else:
                    shear_cache[key_s] = solve_rve(
                        rve, MacroStrainState(0.0, 0.0, st.e12), newton_opts=newton_opts
                    ).psi
            rows.append([st.e11, st.e22, st.e12, biax_cache[key_b] + shear_cache[key_s]])
        except (ConvergenceError, RodError, GeometryError) as exc:
            failures.append({"state": [st.e11, st.e22, st.e12], "error": str(exc)})
        if progress is not None:
            progress(i + 1, len(states), time.time() - t0)
    meta = {
        "n_requested": len(states),
        "n_failed": len(failures),
        "failures": failures,
        "biaxial_solves": len(biax_cache),
        "shear_solves": len(shear_cache),
    }
    return ResponseDatabase(rows=np.array(rows) if rows else np.zeros((0, 4)), metadata=meta)


# ---------------------------------------------------------------------------
# yarn-level fabric tiling
# ---------------------------------------------------------------------------


def tile_fabric(
    params: KnitGeometryParams,
    n_course: int,
    n_wale: int,
    material: Material,
    n_elem_per_loop: int = 12,
):
    """Yarn-level sheet: n_wale course yarns, each n_course loops long.

    Courses alternate the half-wale stagger so successive loops interlock
    exactly as in the unit cell. Returns (assembly, contact manager, info).
    """
    if n_course < 2 or n_wale < 2:
        raise ValueError("need at least a 2 x 2 loop tile")
    w, c = params.wale_spacing, params.course_spacing
    section = CircularSection(params.yarn_radius)
    snake = knitgeo.snake_samples(params, max(800, 100 * n_course))
    period = snake.copy()
    yarns = []
    for j in range(n_wale):
        chain = [period + np.array([i * w, 0.0, 0.0]) for i in range(n_course)]
        pts = np.vstack([chain[0]] + [seg[1:] for seg in chain[1:]])
        pts = pts + np.array([(j % 2) * w / 2.0, j * c, 0.0])
        ctrl, kv = knitgeo.fit_yarn_spline(pts, n_elem_per_loop * n_course + 3)
        yarns.append(RodModel(ctrl, kv, material, section))
    asm = Assembly(yarns)

    pairs = []
    r = params.yarn_radius
    window = 2.0 * r + 4.0 * params.yarn_gap + 0.5 * r
    for j in range(n_wale - 1):
        ca = _Curve(yarns[j].ctrl_x, yarns[j].kv, np.zeros(3))
        cb = _Curve(yarns[j + 1].ctrl_x, yarns[j + 1].kv, np.zeros(3))
        for site, (tl, tr, _) in enumerate(grid_local_minima(ca, cb, n=24 * n_course, d_max=window)):
            try:
                tl2, tr2, d = closest_points(ca, cb, (tl, tr))
            except Exception:
                continue
            pair = ContactPair(rod_l=j, rod_r=j + 1, key=(j, site), theta_l=tl2, theta_r=tr2, d_min=d)
            pair.lattice = np.zeros(3)
            pairs.append(pair)
    # drop duplicate sites found from adjacent grid cells
    uniq = []
    for p in pairs:
        if not any(q.rod_l == p.rod_l and abs(q.theta_l - p.theta_l) < 1e-4 and abs(q.theta_r - p.theta_r) < 1e-4 for q in uniq):
            uniq.append(p)
    contact = ContactManager(params.yarn_radius, uniq)
    info = {"n_yarns": n_wale, "loops_per_yarn": n_course, "n_contact_sites": len(uniq)}
    return asm, contact, info
