"""Design-of-experiments sampling over the in-plane strain box."""

from __future__ import annotations

import numpy as np
from scipy.stats import qmc

from .rve import MacroStrainState

DEFAULT_BOUNDS = ((-0.05, 0.15), (-0.05, 0.15), (0.0, 0.15))


def _check_bounds(bounds):
    bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
    if len(bounds) != 3 or any(hi <= lo for lo, hi in bounds):
        raise ValueError(f"invalid strain bounds {bounds}")
    return bounds


def uniform_grid(bounds=DEFAULT_BOUNDS, n_s: int = 6) -> list[MacroStrainState]:
    """Tensor grid with n_s levels per strain component (n_s^3 states)."""
    bounds = _check_bounds(bounds)
    if n_s < 2:
        raise ValueError("need at least 2 levels per feature")
    axes = [np.linspace(lo, hi, n_s) for lo, hi in bounds]
    states = []
    for e11 in axes[0]:
        for e22 in axes[1]:
            for e12 in axes[2]:
                states.append(MacroStrainState(float(e11), float(e22), float(e12)))
    return states


def sobol_points(bounds=DEFAULT_BOUNDS, n_total: int = 512) -> list[MacroStrainState]:
    """First n_total points of the base-2 low-discrepancy sequence in the box.

    The all-zeros leading point of the raw sequence is skipped, so the first
    emitted point is the box midpoint.
    """
    bounds = _check_bounds(bounds)
    if n_total < 1:
        raise ValueError("need at least one sample")
    eng = qmc.Sobol(d=3, scramble=False)
    eng.fast_forward(1)
    unit = eng.random(n_total)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    pts = lo + unit * (hi - lo)
    return [MacroStrainState(*map(float, p)) for p in pts]


def sample_design_space(bounds=DEFAULT_BOUNDS, scheme: str = "uniform", n_s: int = 6, n_total: int = 512):
    if scheme == "uniform":
        return uniform_grid(bounds, n_s)
    if scheme == "sobol":
        return sobol_points(bounds, n_total)
    raise ValueError(f"unknown sampling scheme {scheme!r} (expected 'uniform' or 'sobol')")
