"""Shared analytic test fields.

All fields are "insideness of the lumen" maps: values near 1 in air/fluid,
near 0 in tissue, with sigmoid transitions.  Centers are deliberately placed
off the voxel lattice so that no voxel sits on an exact symmetry point of
the field (a grid-symmetric extremum has a vanishing discrete gradient).
"""

import numpy as np
import pytest

from polypflag.volume import ScalarVolume

OFF = np.array([0.237, 0.411, 0.193])  # sub-voxel center offset


def grid(shape, spacing):
    axes = [np.arange(n) * s for n, s in zip(shape, spacing)]
    return np.meshgrid(*axes, indexing="ij")


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60, 60)))


def sphere_volume(radius, shape=(48, 48, 48), spacing=(1.0, 1.0, 1.0),
                  width_mm=1.5, lumen_inside=True, level_at_radius=None):
    """Smoothed indicator of a ball.

    lumen_inside=True gives a lumen cavity (u high inside); False gives a
    tissue blob in lumen (a suspended protrusion, u low inside).  With
    level_at_radius=alpha the alpha iso-surface starts exactly at `radius`.
    """
    X, Y, Z = grid(shape, spacing)
    c = (np.asarray(shape) - 1) / 2.0 * np.asarray(spacing) + OFF * np.asarray(spacing)
    r = np.sqrt((X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2)
    r_mid = radius
    if level_at_radius is not None:
        a = level_at_radius
        r_mid = radius + width_mm * np.log(a / (1 - a))
    u = sigmoid((r_mid - r) / width_mm)
    if not lumen_inside:
        u = 1.0 - u
    return ScalarVolume(u.astype(np.float32), spacing), c


def cylinder_volume(radius, shape=(40, 40, 40), spacing=(1.0, 1.0, 1.0),
                    width_mm=1.5, lumen_inside=True):
    """Smoothed indicator of an infinite z-aligned cylinder.

    lumen_inside=True is a colon-like tube (lumen inside); False is a solid
    tissue rod in lumen, the k_min = 0 configuration.
    """
    X, Y, Z = grid(shape, spacing)
    c = (np.asarray(shape) - 1) / 2.0 * np.asarray(spacing) + OFF * np.asarray(spacing)
    rho = np.sqrt((X - c[0]) ** 2 + (Y - c[1]) ** 2)
    u = sigmoid((radius - rho) / width_mm)
    if not lumen_inside:
        u = 1.0 - u
    return ScalarVolume(u.astype(np.float32), spacing), c


def slab_volume(shape=(32, 32, 32), spacing=(1.0, 1.0, 1.0), width_mm=1.5,
                wall_frac=0.45):
    """Flat wall: tissue below, lumen above (plane iso-surfaces)."""
    X, Y, Z = grid(shape, spacing)
    z0 = wall_frac * (shape[2] - 1) * spacing[2] + 0.37 * spacing[2]
    u = sigmoid((Z - z0) / width_mm)
    return ScalarVolume(u.astype(np.float32), spacing), z0


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)
