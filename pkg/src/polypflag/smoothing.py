"""Polyp-preserving level-set smoothing of the initial segmentation.

The segmentation u0 evolves under du/dt = beta * |grad u|, which moves every
iso-surface with normal speed beta.  The velocity family ranges from plain
mean-curvature motion to the proposed shape-modulated quarter-power motion
g(si) * k_min^(1/4), which slows down exactly where the shape index marks a
protrusion, so noise-scale bumps vanish while polyps persist.

The default step count follows from requiring a sphere at the resolution
limit to vanish: under the quarter-power motion a radius-r sphere collapses
in time T = (4/5) r^(4/5), which for r = 1 mm and dt = 0.055 gives 15 steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from math import ceil

import numpy as np

from .volume import (GRADIENT_FLOOR, ScalarVolume, curvature_arrays,
                     shape_index)

DEFAULT_DT = 0.055
DEFAULT_ITERATIONS = 15


class VelocityKind(Enum):
    MEAN_CURVATURE = "mean"
    AFFINE_GAUSS_PLUS = "affine"
    MIN_CURVATURE = "min"
    MIN_CURVATURE_QUARTER = "min_quarter"
    SHAPE_MODULATED_QUARTER = "shape_quarter"


@dataclass
class EvolutionParams:
    dt: float = DEFAULT_DT
    iterations: int = DEFAULT_ITERATIONS
    velocity: VelocityKind = VelocityKind.SHAPE_MODULATED_QUARTER

    def __post_init__(self):
        if isinstance(self.velocity, str):
            self.velocity = VelocityKind(self.velocity)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


class EvolutionError(RuntimeError):
    """Non-finite values appeared during the evolution."""


def g_shape(si):
    """Velocity multiplier (1/pi) atan((si - 0.75) * 10) + 1/2, low near si = -1."""
    si = np.clip(si, -1.0, 1.0)
    out = np.arctan((si - 0.75) * 10.0) / np.pi + 0.5
    return out if isinstance(si, np.ndarray) else float(out)


def _quarter(k):
    """Odd extension of the quarter power: sign(k) |k|^(1/4)."""
    return np.sign(k) * np.abs(k) ** 0.25


def velocity(kind: VelocityKind, pair, si: float = 0.0) -> float:
    """Normal speed of one surface point given its principal curvatures."""
    k_min, k_max = float(pair[0]), float(pair[1])
    if kind is VelocityKind.MEAN_CURVATURE:
        return 0.5 * (k_min + k_max)
    if kind is VelocityKind.AFFINE_GAUSS_PLUS:
        return max(k_min * k_max, 0.0) ** 0.25
    if kind is VelocityKind.MIN_CURVATURE:
        return k_min
    if kind is VelocityKind.MIN_CURVATURE_QUARTER:
        return float(_quarter(k_min))
    if kind is VelocityKind.SHAPE_MODULATED_QUARTER:
        return float(g_shape(si)) * float(_quarter(k_min))
    raise ValueError(f"unknown velocity kind {kind}")


def _beta_field(kind: VelocityKind, grids) -> np.ndarray:
    if kind is VelocityKind.MEAN_CURVATURE:
        return grids.mean
    if kind is VelocityKind.AFFINE_GAUSS_PLUS:
        return np.maximum(grids.gaussian, 0.0) ** 0.25
    if kind is VelocityKind.MIN_CURVATURE:
        return grids.k_min
    if kind is VelocityKind.MIN_CURVATURE_QUARTER:
        return _quarter(grids.k_min)
    if kind is VelocityKind.SHAPE_MODULATED_QUARTER:
        si = shape_index(grids.k_min, grids.k_max)
        return g_shape(si) * _quarter(grids.k_min)
    raise ValueError(f"unknown velocity kind {kind}")


def _band_box(u: np.ndarray, lo: float, hi: float, pad: int):
    band = (u > lo) & (u < hi)
    if not band.any():
        return None
    slices = []
    for axis in range(3):
        proj = band.any(axis=tuple(a for a in range(3) if a != axis))
        idx = np.where(proj)[0]
        slices.append(slice(max(int(idx[0]) - pad, 0), min(int(idx[-1]) + pad + 1, u.shape[axis])))
    return tuple(slices)


def evolve(u0: ScalarVolume, params: EvolutionParams,
           narrow_band: bool = False, callback=None) -> ScalarVolume:
    """Explicit evolution u <- u + dt * beta * |grad u|, clamped to [0, 1].

    Voxels with a degenerate gradient are left unchanged.  The shape index
    used by the shape-modulated motion is recomputed from the current u at
    every iteration.  With narrow_band=True the update runs on the bounding
    box of 0.01 < u < 0.99 (padded); it matches the full-grid evolution to
    well under 1e-4 because the excluded plateaus carry negligible gradient.
    """
    u = u0.data.astype(np.float64).copy()
    for it in range(params.iterations):
        if narrow_band:
            box = _band_box(u, 0.01, 0.99, pad=6)
            if box is None:
                break
            sub = u[box]
            grids = curvature_arrays(sub, u0.spacing)
            beta = _beta_field(params.velocity, grids)
            step = np.where(grids.defined, params.dt * beta * grids.grad_mag, 0.0)
            u[box] = np.clip(sub + step, 0.0, 1.0)
        else:
            grids = curvature_arrays(u, u0.spacing)
            beta = _beta_field(params.velocity, grids)
            step = np.where(grids.defined, params.dt * beta * grids.grad_mag, 0.0)
            u = np.clip(u + step, 0.0, 1.0)
        if not np.isfinite(u).all():
            raise EvolutionError(f"non-finite values at iteration {it}")
        if callback is not None:
            callback(it, ScalarVolume(u.astype(np.float32), u0.spacing))
    return ScalarVolume(u.astype(np.float32), u0.spacing)


def sphere_vanish_iterations(r0: float, dt: float) -> int:
    """Steps for a radius-r0 sphere to vanish under the quarter-power motion.

    The collapse time is T = (4/5) r0^(4/5); the step count is ceil(T / dt).
    """
    if r0 <= 0:
        return 0
    if dt <= 0:
        raise ValueError("dt must be positive")
    return ceil(0.8 * r0 ** 0.8 / dt)
