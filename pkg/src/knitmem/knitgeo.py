"""Weft-knit loop centreline geometry.

One quarter of a knit loop runs from the inter-loop point E at the course
baseline through the leg contact point M and the ear point K to the needle
apex A at a quarter wale spacing. The three branches (EM straight-ish leg,
MK ear arc, KA crown circle) follow the classical parametric description of
plain-knit loops; the whole curve lies on the cylinder
y^2 + (z + s + r)^2 = (s + r)^2.

A complete course yarn is the quarter mirrored about the apex plane (one
up-arch) followed by the glide image of the up-arch (y and z negated, shifted
half a wale): a smooth snake with period equal to the wale spacing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .splines import fit_interpolating_spline


class GeometryError(ValueError):
    """Infeasible knit parameter combination (negative radicand or length)."""


@dataclass(frozen=True)
class KnitGeometryParams:
    """Course spacing c, wale spacing w, yarn radius r and yarn gap t.

    ``aux_offset`` is the parametric pullback used for the crown-circle
    secant construction (0.001 length units in the classical description;
    scale it together with the lengths for exact geometric similarity).
    """

    course_spacing: float
    wale_spacing: float
    yarn_radius: float
    yarn_gap: float
    aux_offset: float = 0.001

    def __post_init__(self):
        for name in ("course_spacing", "wale_spacing", "yarn_radius", "yarn_gap"):
            if getattr(self, name) <= 0.0:
                raise GeometryError(f"{name} must be positive")
        c, r, t = self.course_spacing, self.yarn_radius, self.yarn_gap
        if self.loop_radius <= 0.0:
            raise GeometryError(f"ear radius c/2 - t/2 - r = {self.loop_radius} must be positive (c={c}, r={r}, t={t})")
        if self.s + r <= c / 2.0 + self.loop_radius:
            raise GeometryError(
                "cylinder radius s + r too small for the ear span; "
                f"s={self.s:.6g}, r={r}, c/2+R={c / 2.0 + self.loop_radius:.6g}"
            )

    # -- derived scalars (defining relations hold to rounding) ---------------

    @property
    def s(self) -> float:
        c, r, t = self.course_spacing, self.yarn_radius, self.yarn_gap
        return ((c - r - t / 2.0) ** 2 - (r + t / 2.0) ** 2) / (4.0 * r)

    @property
    def loop_radius(self) -> float:
        """Ear arc extent R."""
        return self.course_spacing / 2.0 - self.yarn_gap / 2.0 - self.yarn_radius

    @property
    def gamma_loop(self) -> float:
        arg = (self.course_spacing / 2.0) / (self.s + self.yarn_radius)
        if not -1.0 <= arg <= 1.0:
            raise GeometryError(f"loop angle argument {arg} outside [-1, 1]")
        return float(np.arcsin(arg))

    @property
    def phi(self) -> float:
        c, r = self.course_spacing, self.yarn_radius
        return float(np.arctan((c - 2.0 * r * np.sin(self.gamma_loop)) / (2.0 * r)))

    @property
    def h(self) -> float:
        return (self.course_spacing / 2.0 - self.loop_radius) * np.tan(np.pi / 2.0 - self.phi)

    @property
    def ear_a(self) -> float:
        """Ear arc x-amplitude; pinned by continuity with the leg at M."""
        return self.h + self.yarn_radius

    @property
    def ox(self) -> float:
        return self.wale_spacing / 4.0

    def _aux_points(self):
        c = self.course_spacing
        big_r = self.loop_radius
        y1 = c / 2.0 + big_r - self.aux_offset
        y2 = c / 2.0 + big_r
        return (self.mk_x(y1), self.z_of_y(y1)), (self.mk_x(y2), self.z_of_y(y2))

    @property
    def oz(self) -> float:
        (x1, z1), (x2, z2) = self._aux_points()
        ox = self.ox
        denom = 2.0 * (z2 - z1)
        if denom == 0.0:
            raise GeometryError("degenerate crown-circle construction (coincident auxiliary points)")
        return ((x2 - ox) ** 2 - (x1 - ox) ** 2 + z2**2 - z1**2) / denom

    @property
    def crown_radius(self) -> float:
        (x1, z1), _ = self._aux_points()
        return float(np.hypot(x1 - self.ox, z1 - self.oz))

    # -- branch equations ------------------------------------------------------

    def z_of_y(self, y):
        """Cylinder profile shared by the EM and MK branches."""
        sr = self.s + self.yarn_radius
        rad = sr**2 - np.asarray(y, dtype=float) ** 2
        if np.any(rad < 0.0):
            raise GeometryError(f"negative radicand in the cylinder profile at y={y}")
        return np.sqrt(rad) - sr

    def em_x(self, y):
        return -2.0 * self.yarn_radius * np.asarray(y, dtype=float) / self.course_spacing

    def mk_x(self, y):
        c = self.course_spacing
        big_r = self.loop_radius
        arg = 1.0 - (np.asarray(y, dtype=float) - c / 2.0) / big_r
        if np.any(arg < -1e-14):
            raise GeometryError(f"negative radicand in the ear branch at y={y}")
        return self.h - self.ear_a * np.sqrt(np.clip(arg, 0.0, None))

    def ka_z_of_x(self, x):
        rad = self.crown_radius**2 - (np.asarray(x, dtype=float) - self.ox) ** 2
        if np.any(rad < 0.0):
            raise GeometryError(f"negative radicand in the crown branch at x={x}")
        return self.oz - np.sqrt(rad)

    def ka_y_of_z(self, z):
        sr = self.s + self.yarn_radius
        rad = sr**2 - (np.asarray(z, dtype=float) + sr) ** 2
        if np.any(rad < 0.0):
            raise GeometryError(f"negative radicand inverting the cylinder profile at z={z}")
        return np.sqrt(rad)

    # -- landmark points -------------------------------------------------------

    @property
    def point_m(self) -> np.ndarray:
        y = self.course_spacing / 2.0
        return np.array([self.em_x(y), y, self.z_of_y(y)])

    @property
    def point_k(self) -> np.ndarray:
        y = self.course_spacing / 2.0 + self.loop_radius
        return np.array([self.mk_x(y), y, self.z_of_y(y)])

    @property
    def point_a(self) -> np.ndarray:
        z = self.ka_z_of_x(self.ox)
        return np.array([self.ox, float(self.ka_y_of_z(z)), float(z)])


def loop_centerline(params: KnitGeometryParams, n: int = 200) -> np.ndarray:
    """Sampled quarter-loop polyline E -> M -> K -> A.

    The leg and ear are sampled in y (the ear through the square-root
    substitution so points stay equispaced in x near K); the crown in x.
    Allocation is proportional to branch chord length.
    """
    if n < 50:
        raise ValueError("need at least 50 samples for a faithful quarter loop")
    c = params.course_spacing
    big_r = params.loop_radius
    p_m, p_k, p_a = params.point_m, params.point_k, params.point_a
    lengths = np.array(
        [
            np.linalg.norm(p_m - np.array([0.0, 0.0, 0.0])),
            np.linalg.norm(p_k - p_m),
            np.linalg.norm(p_a - p_k),
        ]
    )
    counts = np.maximum((lengths / lengths.sum() * n).astype(int), 8)

    y_em = np.linspace(0.0, c / 2.0, counts[0], endpoint=False)
    em = np.c_[params.em_x(y_em), y_em, params.z_of_y(y_em)]

    q = np.linspace(1.0, 0.0, counts[1], endpoint=False)  # sqrt substitution
    y_mk = c / 2.0 + big_r * (1.0 - q**2)
    mk = np.c_[params.mk_x(y_mk), y_mk, params.z_of_y(y_mk)]

    x_ka = np.linspace(float(p_k[0]), params.ox, counts[2])
    z_ka = params.ka_z_of_x(x_ka)
    ka = np.c_[x_ka, params.ka_y_of_z(z_ka), z_ka]

    return np.vstack([em, mk, ka])


def arch_samples(params: KnitGeometryParams, n: int = 200) -> np.ndarray:
    """One full up-arch E -> A -> E' (quarter loop mirrored about x = w/4)."""
    quarter = loop_centerline(params, max(n // 2, 50))
    mirror = quarter[::-1].copy()
    mirror[:, 0] = params.wale_spacing / 2.0 - mirror[:, 0]
    return np.vstack([quarter, mirror[1:]])


def snake_samples(params: KnitGeometryParams, n: int = 400, weave_amplitude: float = 0.0) -> np.ndarray:
    """One wale period of a course yarn: up-arch plus its y-reflected image.

    The reflected arch (x + w/2, -y, z) continues the centreline smoothly at
    the baseline crossing (the dome z-profile has zero slope there).

    ``weave_amplitude`` adds the front/back interleaving a_w cos(2 pi x / w)
    to z. The quarter-loop branch equations describe the loop shape up to
    this out-of-plane alternation, which is what makes neighbouring loops
    pass over/under each other with opposite sense at their two leg
    crossings, i.e. makes the loops topologically linked. The term vanishes
    at the needle and sinker crowns (x = w/4, 3w/4), so the crown geometry
    is untouched. Calibrate the amplitude so the crossing clearance equals
    one yarn diameter plus the yarn gap (see the cell builder).
    """
    up = arch_samples(params, max(n // 2, 100))
    down = up.copy()
    down[:, 0] += params.wale_spacing / 2.0
    down[:, 1] *= -1.0
    pts = np.vstack([up, down[1:]])
    if weave_amplitude != 0.0:
        pts = pts.copy()
        pts[:, 2] += weave_amplitude * np.cos(2.0 * np.pi * pts[:, 0] / params.wale_spacing)
    return pts


def resample_by_arc(samples: np.ndarray, m: int, drop_last: bool = True) -> np.ndarray:
    """m arc-length-uniform points along a polyline (open: endpoint excluded)."""
    samples = np.asarray(samples, dtype=float)
    seg = np.linalg.norm(np.diff(samples, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, arc[-1], m, endpoint=False) if drop_last else np.linspace(0.0, arc[-1], m)
    out = np.empty((m, samples.shape[1]))
    for i, a in enumerate(targets):
        j = int(np.searchsorted(arc, a, side="right") - 1)
        j = min(j, len(seg) - 1)
        frac = (a - arc[j]) / seg[j] if seg[j] > 0 else 0.0
        out[i] = samples[j] + frac * (samples[j + 1] - samples[j])
    return out


def fit_yarn_spline(samples: np.ndarray, n_ctrl: int):
    """Subsample a polyline by arc length and fit the interpolating cubic."""
    seg = np.linalg.norm(np.diff(samples, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, arc[-1], n_ctrl)
    idx_pts = np.empty((n_ctrl, samples.shape[1]))
    for i, a in enumerate(targets):
        j = int(np.searchsorted(arc, a, side="right") - 1)
        j = min(j, len(seg) - 1)
        frac = (a - arc[j]) / seg[j] if seg[j] > 0 else 0.0
        idx_pts[i] = samples[j] + frac * (samples[j + 1] - samples[j])
    return fit_interpolating_spline(idx_pts)


def default_params() -> KnitGeometryParams:
    """Reference parameter set used across examples and benchmarks.

    Chosen so that 12 x 12 loops give a 10.0 mm x 5.85 mm sheet and the yarn
    diameter equals the nominal fabric thickness of 0.2356 mm; the small gap
    keeps the ear arc inside its carrier cylinder. With these values the
    needle crown sits one radius short of the sinker arc above it, i.e. the
    loops hang snugly and wale-wise tension engages the interlock at small
    strain.
    """
    return KnitGeometryParams(
        course_spacing=0.4875,
        wale_spacing=10.0 / 12.0,
        yarn_radius=0.1178,
        yarn_gap=0.005,
    )
