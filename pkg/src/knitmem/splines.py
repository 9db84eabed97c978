"""Univariate cubic B-spline basis, curve evaluation and interpolation.

Degree is fixed at 3 throughout: the rod formulation needs C^2 smooth
centrelines for the bending strains, and the loop geometry is fitted with the
same basis. Basis values and derivatives come from the standard recursive
algorithms (Cox-de Boor / Piegl & Tiller A2.3), not from differencing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEGREE = 3


class SplineError(ValueError):
    """Invalid knot vector, parameter or interpolation data."""


@dataclass(frozen=True)
class KnotVector:
    """Cubic knot vector, clamped (open) or plain nondecreasing.

    The evaluable domain runs from knots[degree] to knots[n_ctrl]; for a
    clamped vector those are the first and last knot values. Immutable.
    """

    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        if knots.ndim != 1 or knots.size < 2 * (DEGREE + 1):
            raise SplineError(f"need at least {2 * (DEGREE + 1)} knots, got {knots.size}")
        if np.any(np.diff(knots) < 0.0):
            raise SplineError("knots must be nondecreasing")
        if knots[self.n_ctrl] <= knots[DEGREE]:
            raise SplineError("empty evaluable domain")

    @property
    def degree(self) -> int:
        return DEGREE

    @property
    def n_ctrl(self) -> int:
        return self.knots.size - DEGREE - 1

    @property
    def is_clamped(self) -> bool:
        return bool(
            np.all(self.knots[: DEGREE + 1] == self.knots[0])
            and np.all(self.knots[-(DEGREE + 1):] == self.knots[-1])
        )

    @property
    def start(self) -> float:
        return float(self.knots[DEGREE])

    @property
    def end(self) -> float:
        return float(self.knots[self.n_ctrl])

    @property
    def n_spans(self) -> int:
        sel = self.knots[DEGREE : self.n_ctrl + 1]
        return int(np.count_nonzero(np.diff(sel) > 0.0))

    def span_breaks(self) -> np.ndarray:
        """Unique knot values inside the evaluable domain."""
        return np.unique(self.knots[DEGREE : self.n_ctrl + 1])


@dataclass(frozen=True)
class BasisEval:
    """The four nonzero cubic basis functions at one parameter value.

    ``values[k]`` belongs to control point ``span_index - 3 + k``.
    """

    span_index: int
    values: np.ndarray
    d1: np.ndarray
    d2: np.ndarray

    def ctrl_indices(self) -> np.ndarray:
        return np.arange(self.span_index - DEGREE, self.span_index + 1)


def make_clamped_knots(n_ctrl: int) -> KnotVector:
    """Clamped cubic knot vector on [0, 1] with uniform interior knots."""
    if n_ctrl < DEGREE + 1:
        raise SplineError(f"need at least {DEGREE + 1} control points, got {n_ctrl}")
    interior = np.linspace(0.0, 1.0, n_ctrl - DEGREE + 1)[1:-1]
    knots = np.concatenate([np.zeros(DEGREE + 1), interior, np.ones(DEGREE + 1)])
    return KnotVector(knots)


def find_span(kv: KnotVector, u: float) -> int:
    """Index s with knots[s] <= u < knots[s+1] (last span at the right end)."""
    knots = kv.knots
    n = kv.n_ctrl
    if u < kv.start or u > kv.end:
        raise SplineError(f"parameter {u} outside knot domain [{kv.start}, {kv.end}]")
    if u >= knots[n]:
        return n - 1
    s = int(np.searchsorted(knots, u, side="right") - 1)
    return min(max(s, DEGREE), n - 1)


def eval_basis(kv: KnotVector, u: float) -> BasisEval:
    """Nonzero basis functions and first/second parametric derivatives at u.

    Piegl & Tiller algorithm A2.3 specialised to degree 3.
    """
    p = DEGREE
    span = find_span(kv, u)
    knots = kv.knots

    # triangular table of all lower-degree bases plus the knot differences
    ndu = np.zeros((p + 1, p + 1))
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = u - knots[span + 1 - j]
        right[j] = knots[span + j] - u
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((3, p + 1))
    ders[0, :] = ndu[:, p]

    a = np.zeros((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, 3):
            d = 0.0
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1

    r = float(p)
    ders[1, :] *= r
    ders[2, :] *= r * (p - 1)
    return BasisEval(span_index=span, values=ders[0].copy(), d1=ders[1].copy(), d2=ders[2].copy())


def eval_curve(ctrl: np.ndarray, kv: KnotVector, u: float):
    """Curve point, tangent and second parametric derivative at u.

    ``ctrl`` has one control point per row (any point dimension).
    """
    ctrl = np.asarray(ctrl, dtype=float)
    if ctrl.shape[0] != kv.n_ctrl:
        raise SplineError(f"control net has {ctrl.shape[0]} points, knot vector expects {kv.n_ctrl}")
    be = eval_basis(kv, u)
    idx = be.ctrl_indices()
    pts = ctrl[idx]
    return be.values @ pts, be.d1 @ pts, be.d2 @ pts


def eval_curve_many(ctrl: np.ndarray, kv: KnotVector, us: np.ndarray) -> np.ndarray:
    """Curve points at many parameter values (points only, no derivatives)."""
    us = np.atleast_1d(np.asarray(us, dtype=float))
    out = np.empty((us.size, np.asarray(ctrl).shape[1]))
    for i, u in enumerate(us):
        out[i] = eval_curve(ctrl, kv, float(u))[0]
    return out


def chord_length_params(samples: np.ndarray) -> np.ndarray:
    """Chord-length parametrisation of a point sequence, normalised to [0, 1]."""
    samples = np.asarray(samples, dtype=float)
    seg = np.linalg.norm(np.diff(samples, axis=0), axis=1)
    total = seg.sum()
    if total == 0.0:
        raise SplineError("coincident samples: zero total chord length")
    t = np.concatenate([[0.0], np.cumsum(seg)]) / total
    t[-1] = 1.0  # guard against accumulated rounding past the domain end
    return np.clip(t, 0.0, 1.0)


def averaged_knots(params: np.ndarray) -> KnotVector:
    """Knot vector by parameter averaging (interpolation stays well posed)."""
    n = params.size
    interior = np.array([params[j : j + DEGREE].mean() for j in range(1, n - DEGREE)])
    knots = np.concatenate([np.zeros(DEGREE + 1), interior, np.ones(DEGREE + 1)])
    return KnotVector(knots)


def fit_interpolating_spline(samples: np.ndarray):
    """Cubic curve through the given samples at chord-length parameters.

    Global interpolation (Piegl & Tiller A9.1): one control point per sample,
    knots by parameter averaging. Returns ``(ctrl, kv)``.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] < DEGREE + 1:
        raise SplineError(f"need at least {DEGREE + 1} samples to fit a cubic curve")
    t = chord_length_params(samples)
    if np.any(np.diff(t) <= 0.0):
        raise SplineError("coincident consecutive samples")
    kv = averaged_knots(t)

    n = samples.shape[0]
    mat = np.zeros((n, n))
    for i, ti in enumerate(t):
        be = eval_basis(kv, float(ti))
        mat[i, be.ctrl_indices()] = be.values
    try:
        ctrl = np.linalg.solve(mat, samples)
    except np.linalg.LinAlgError as exc:
        raise SplineError(f"singular interpolation system: {exc}") from exc
    return ctrl, kv


def insert_knot(ctrl: np.ndarray, kv: KnotVector, u: float):
    """Insert a single interior knot (Boehm), preserving the curve exactly."""
    ctrl = np.asarray(ctrl, dtype=float)
    if not (kv.start < u < kv.end):
        raise SplineError("knot insertion parameter must be interior")
    p = DEGREE
    span = find_span(kv, u)
    new_knots = np.insert(kv.knots, span + 1, u)
    new_ctrl = np.empty((ctrl.shape[0] + 1, ctrl.shape[1]))
    new_ctrl[: span - p + 1] = ctrl[: span - p + 1]
    new_ctrl[span + 1 :] = ctrl[span:]
    for i in range(span - p + 1, span + 1):
        denom = kv.knots[i + p] - kv.knots[i]
        alpha = (u - kv.knots[i]) / denom if denom > 0.0 else 0.0
        new_ctrl[i] = alpha * ctrl[i] + (1.0 - alpha) * ctrl[i - 1]
    return new_ctrl, KnotVector(new_knots)


def make_uniform_wrapped_knots(n_period: int) -> KnotVector:
    """Uniform unclamped knots for a periodic curve stored in open form.

    The period [0, 1] carries n_period spans; the control net has
    n_period + 3 points, the last three being first-three copies translated
    by the period vector. The wrap makes the seam exactly C^2.
    """
    if n_period < DEGREE + 1:
        raise SplineError(f"need at least {DEGREE + 1} spans per period")
    h = 1.0 / n_period
    return KnotVector(h * np.arange(-DEGREE, n_period + DEGREE + 1))


def fit_periodic_curve(samples: np.ndarray, period_shift: np.ndarray, n_period: int | None = None):
    """Interpolating periodic cubic through one period of samples.

    ``samples`` holds points at parameters i / m (the closing sample,
    samples[0] + period_shift, is implied, not passed). Returns the open-form
    control net (m + 3 rows, wrap rows translated by period_shift) and its
    wrapped knot vector.
    """
    samples = np.asarray(samples, dtype=float)
    shift = np.asarray(period_shift, dtype=float)
    m = samples.shape[0] if n_period is None else n_period
    if m != samples.shape[0]:
        raise SplineError("one sample per period span is required")
    if m < DEGREE + 1:
        raise SplineError(f"need at least {DEGREE + 1} samples per period")
    kv = make_uniform_wrapped_knots(m)
    mat = np.zeros((m, m))
    rhs = samples.copy()
    for i in range(m):
        be = eval_basis(kv, i / m)
        for a, j in enumerate(be.ctrl_indices()):
            if j >= m:
                rhs[i] -= be.values[a] * shift
                j -= m
            mat[i, j % m] += be.values[a]
    try:
        c = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError as exc:
        raise SplineError(f"singular periodic interpolation system: {exc}") from exc
    ctrl = np.vstack([c, c[:DEGREE] + shift])
    return ctrl, kv


def quadrature_points(kv: KnotVector, n_gauss: int = 4):
    """Gauss-Legendre points and weights per knot span, in parameter space."""
    gx, gw = np.polynomial.legendre.leggauss(n_gauss)
    breaks = kv.span_breaks()
    us, ws = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        us.append(0.5 * (b - a) * gx + 0.5 * (a + b))
        ws.append(0.5 * (b - a) * gw)
    return np.concatenate(us), np.concatenate(ws)
