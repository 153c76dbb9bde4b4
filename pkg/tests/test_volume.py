import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polypflag.volume import (CurvaturePair, ScalarVolume, curvature_field,
                              curvedness, gradient, hessian, iso_curvatures,
                              load_volume, save_volume, shape_index)
from conftest import sphere_volume, cylinder_volume, grid


def test_scalar_volume_validation():
    with pytest.raises(ValueError):
        ScalarVolume(np.zeros((4, 4)), (1, 1, 1))
    with pytest.raises(ValueError):
        ScalarVolume(np.zeros((4, 4, 4)), (1, 0, 1))
    v = ScalarVolume(np.zeros((2, 3, 4)), (1, 2, 3))
    assert v.dims == (2, 3, 4)
    assert v.data.dtype == np.float32


# ---------------------------------------------------------------------------
# gradient
# ---------------------------------------------------------------------------

def test_gradient_constant_volume_is_zero():
    vol = ScalarVolume(np.full((8, 8, 8), 0.7), (1, 1, 1))
    assert np.allclose(gradient(vol, (4, 4, 4)), 0.0)
    assert np.allclose(gradient(vol, (0, 0, 0)), 0.0)  # boundary clamps, no fault


def test_gradient_linear_field_exact():
    X, Y, Z = grid((10, 10, 10), (0.5, 0.5, 0.5))
    vol = ScalarVolume(2.0 * X, (0.5, 0.5, 0.5))
    assert np.allclose(gradient(vol, (5, 5, 5)), [2.0, 0.0, 0.0], atol=1e-5)
    # one-sided boundary difference is exact on affine fields too
    assert np.allclose(gradient(vol, (0, 5, 5)), [2.0, 0.0, 0.0], atol=1e-5)


def test_gradient_signed_distance_unit_magnitude():
    X, Y, Z = grid((32, 32, 32), (1.0, 1.0, 1.0))
    c = np.array([15.4, 15.7, 15.2])
    r = np.sqrt((X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2)
    vol = ScalarVolume(10.0 - r, (1.0, 1.0, 1.0))
    g = gradient(vol, (24, 16, 15))  # off-center
    assert abs(np.linalg.norm(g) - 1.0) < 1e-2


# ---------------------------------------------------------------------------
# hessian
# ---------------------------------------------------------------------------

def test_hessian_constant_zero():
    vol = ScalarVolume(np.full((8, 8, 8), 1.0), (1, 1, 1))
    assert np.allclose(hessian(vol, (4, 4, 4)), 0.0)


def test_hessian_quadratic_exact():
    X, Y, Z = grid((12, 12, 12), (0.5, 0.5, 0.5))
    vol = ScalarVolume(X**2, (0.5, 0.5, 0.5))
    H = hessian(vol, (6, 6, 6))
    expect = np.zeros((3, 3))
    expect[0, 0] = 2.0
    assert np.allclose(H, expect, atol=1e-4)


def test_hessian_mixed_quadratic_exact():
    X, Y, Z = grid((12, 12, 12), (1.0, 1.0, 1.0))
    vol = ScalarVolume(3.0 * X * Y, (1.0, 1.0, 1.0))
    H = hessian(vol, (6, 6, 6))
    assert H[0, 1] == pytest.approx(3.0, abs=1e-4)
    assert H[1, 0] == H[0, 1]


def test_hessian_distance_field_eigenstructure():
    X, Y, Z = grid((32, 32, 32), (1.0, 1.0, 1.0))
    c = np.array([15.4, 15.7, 15.2])
    r = np.sqrt((X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2)
    vol = ScalarVolume(10.0 - r, (1.0, 1.0, 1.0))
    idx = (25, 16, 15)
    d = np.linalg.norm(np.array(idx) - c)
    H = hessian(vol, idx)
    w = np.sort(np.linalg.eigvalsh(H))
    # two equal transverse eigenvalues -1/d and one near-zero radial
    assert abs(w[0] - w[1]) < 0.05 * abs(1.0 / d)
    assert w[0] == pytest.approx(-1.0 / d, rel=0.05)
    assert abs(w[2]) < 0.05 / d


# ---------------------------------------------------------------------------
# iso-surface curvatures (protrusion-into-lumen positive)
# ---------------------------------------------------------------------------

def test_curvature_tissue_sphere_is_positive():
    # a tissue blob in lumen is a protrusion: both curvatures +1/R
    vol, c = sphere_volume(10.0, lumen_inside=False)
    idx = tuple(np.rint(c / 1.0).astype(int) + np.array([10, 0, 0]))
    pair = iso_curvatures(vol, idx)
    assert pair.k_min == pytest.approx(0.1, rel=0.05)
    assert pair.k_max == pytest.approx(0.1, rel=0.05)


def test_curvature_lumen_sphere_is_negative():
    # a lumen cavity is a cup: both curvatures -1/R
    vol, c = sphere_volume(10.0, lumen_inside=True)
    idx = tuple(np.rint(c / 1.0).astype(int) + np.array([10, 0, 0]))
    pair = iso_curvatures(vol, idx)
    assert pair.k_min == pytest.approx(-0.1, rel=0.05)
    assert pair.k_max == pytest.approx(-0.1, rel=0.05)


def test_curvature_rod_cylinder():
    # solid rod in lumen: the k_min = 0 cylinder, k_max = +1/R
    vol, c = cylinder_volume(5.0, lumen_inside=False)
    idx = tuple(np.rint(c / 1.0).astype(int) + np.array([5, 0, 0]))
    pair = iso_curvatures(vol, idx)
    assert abs(pair.k_min) < 0.05 * 0.2
    assert pair.k_max == pytest.approx(0.2, rel=0.05)


def test_curvature_tube_wall():
    # colon-like tube seen from the lumen: (-1/R, 0)
    vol, c = cylinder_volume(5.0, lumen_inside=True)
    idx = tuple(np.rint(c / 1.0).astype(int) + np.array([5, 0, 0]))
    pair = iso_curvatures(vol, idx)
    assert pair.k_min == pytest.approx(-0.2, rel=0.05)
    assert abs(pair.k_max) < 0.05 * 0.2


def test_curvature_plane_is_flat():
    X, Y, Z = grid((16, 16, 16), (1.0, 1.0, 1.0))
    vol = ScalarVolume(1.0 / (1.0 + np.exp(-(Z - 7.37) / 1.5)), (1, 1, 1))
    pair = iso_curvatures(vol, (8, 8, 7))
    assert abs(pair.k_min) < 1e-6
    assert abs(pair.k_max) < 1e-6


def test_curvature_degenerate_gradient_returns_none():
    vol = ScalarVolume(np.full((8, 8, 8), 0.5), (1, 1, 1))
    assert iso_curvatures(vol, (4, 4, 4)) is None


def test_curvature_field_matches_point_op():
    vol, c = sphere_volume(8.0, shape=(32, 32, 32), lumen_inside=False)
    grids = curvature_field(vol)
    for idx in [(24, 16, 16), (16, 24, 16), (16, 16, 10)]:
        pair = iso_curvatures(vol, idx)
        assert grids.k_min[idx] == pytest.approx(pair.k_min, abs=1e-9)
        assert grids.k_max[idx] == pytest.approx(pair.k_max, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_curvature_invariants_random_fields(seed):
    rs = np.random.default_rng(seed)
    data = rs.random((9, 9, 9))
    vol = ScalarVolume(data, (1.0, 0.7, 1.3))
    grids = curvature_field(vol)
    assert (grids.k_min <= grids.k_max + 1e-12).all()
    # H and K reconstruct where the discriminant was not clamped
    h = 0.5 * (grids.k_min + grids.k_max)
    k = grids.k_min * grids.k_max
    unclamped = grids.defined & (grids.mean**2 - grids.gaussian > 1e-12)
    assert np.allclose(h[unclamped], grids.mean[unclamped], atol=1e-9)
    assert np.allclose(k[unclamped], grids.gaussian[unclamped], atol=1e-9)


def test_spacing_covariance_half_spacing():
    # resampling at half spacing leaves analytic curvature estimates unchanged
    est = {}
    for spacing, shape in ((1.0, (40, 40, 40)), (0.5, (80, 80, 80))):
        vol, c = sphere_volume(10.0, shape=shape, spacing=(spacing,) * 3,
                               width_mm=2.0, lumen_inside=False)
        idx = tuple(np.rint(c / spacing).astype(int) + np.array([int(10 / spacing), 0, 0]))
        est[spacing] = iso_curvatures(vol, idx).k_max
    assert est[0.5] == pytest.approx(est[1.0], rel=0.05)
    assert est[0.5] == pytest.approx(0.1, rel=0.05)


# ---------------------------------------------------------------------------
# shape descriptors
# ---------------------------------------------------------------------------

def test_shape_index_landmarks():
    assert shape_index(0.2, 0.2) == pytest.approx(-1.0)     # cap / protrusion
    assert shape_index(-0.2, -0.2) == pytest.approx(1.0)    # cup
    assert shape_index(0.0, 0.2) == pytest.approx(-0.5)     # ridge
    assert shape_index(-0.2, 0.0) == pytest.approx(0.5)     # valley (tube wall)
    assert shape_index(-0.2, 0.2) == pytest.approx(0.0)     # saddle


def test_shape_index_scale_invariant_curvedness_shifts():
    si1 = shape_index(0.1, 0.3)
    si2 = shape_index(0.2, 0.6)
    assert si1 == pytest.approx(si2, abs=1e-12)
    lam = 2.0  # scaling lengths by lam divides curvatures by lam
    c1 = curvedness(0.1, 0.3)
    c2 = curvedness(0.1 / lam, 0.3 / lam)
    assert c2 - c1 == pytest.approx(-(2.0 / np.pi) * np.log(lam), abs=1e-12)


def test_curvature_pair_namedtuple():
    p = CurvaturePair(-0.1, 0.2)
    assert p.k_min == -0.1 and p.k_max == 0.2


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

def test_volume_roundtrip_bit_exact(tmp_path, rng):
    data = rng.random((7, 9, 11)).astype(np.float32)
    vol = ScalarVolume(data, (0.5, 0.7, 1.0))
    save_volume(vol, tmp_path / "vol")
    back = load_volume(tmp_path / "vol")
    assert back.dims == vol.dims
    assert back.spacing == vol.spacing
    assert (back.data == vol.data).all()
    # a second save reproduces the bytes exactly
    save_volume(back, tmp_path / "vol2")
    assert (tmp_path / "vol.raw").read_bytes() == (tmp_path / "vol2.raw").read_bytes()


def test_volume_stream_order_is_x_fastest(tmp_path):
    data = np.arange(24, dtype=np.float32).reshape(2, 3, 4)  # [x, y, z]
    vol = ScalarVolume(data, (1, 1, 1))
    save_volume(vol, tmp_path / "v")
    stream = np.frombuffer((tmp_path / "v.raw").read_bytes(), dtype="<f4")
    # first two stream entries are (x=0) and (x=1) at y=z=0
    assert stream[0] == data[0, 0, 0]
    assert stream[1] == data[1, 0, 0]
    assert stream[2] == data[0, 1, 0]
