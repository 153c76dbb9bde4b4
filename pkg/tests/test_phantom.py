import numpy as np
import pytest

from polypflag.phantom import (GroundTruthPolyp, IntensityModel, PhantomSpec,
                               PolypSpec, generate_phantom,
                               intensity_histogram, load_truth, save_truth,
                               wall_point)
from polypflag.volume import ScalarVolume


def straight_spec(**kw):
    defaults = dict(
        shape=(72, 48, 48),
        spacing=(1.0, 1.0, 1.0),
        tube_radius=9.0,
        tube_axis=[[12.0, 23.6, 23.4], [60.0, 23.6, 23.4]],
    )
    defaults.update(kw)
    return PhantomSpec(**defaults)


def test_zero_polyps_empty_truth():
    vol, truth = generate_phantom(straight_spec(), seed=1)
    assert truth == []
    assert vol.dims == (72, 48, 48)


def test_single_sessile_polyp_truth_entry():
    spec = straight_spec()
    p = wall_point(spec, 0.5, 0.0)  # top of the tube
    spec.polyps = [PolypSpec(p, 5.0, "sessile")]
    vol, truth = generate_phantom(spec, seed=1)
    assert len(truth) == 1
    t = truth[0]
    assert t.morphology == "sessile"
    assert t.size == 5.0
    # the truth center is the bulb apex, one protrusion height off the wall
    assert np.linalg.norm(np.subtract(t.center, p)) == pytest.approx(5.0, abs=1e-6)


def test_determinism_bit_identical():
    spec = straight_spec(noise_sigma=0.03, fluid_fill_fraction=0.3)
    v1, _ = generate_phantom(spec, seed=42)
    v2, _ = generate_phantom(spec, seed=42)
    assert (v1.data == v2.data).all()
    v3, _ = generate_phantom(spec, seed=43)
    assert (v1.data != v3.data).any()


def test_fluid_fill_fraction_voxel_count():
    m = IntensityModel()
    spec = straight_spec(shape=(72, 48, 96), spacing=(1.0, 1.0, 0.5),
                         tube_axis=[[12.0, 23.6, 23.4], [60.0, 23.6, 23.4]],
                         fluid_fill_fraction=0.3)
    vol, _ = generate_phantom(spec, seed=0)
    air_cut = 0.5 * (m.air_level + m.tissue_level)
    fluid_cut = 0.5 * (m.tissue_level + m.fluid_level)
    air = vol.data < air_cut
    fluid = vol.data > fluid_cut
    lumen = air.sum() + fluid.sum()
    assert fluid.sum() / lumen == pytest.approx(0.30, abs=0.02)


def test_fluid_plane_horizontal():
    spec = straight_spec(fluid_fill_fraction=0.4)
    vol, _ = generate_phantom(spec, seed=0)
    m = IntensityModel()
    fluid = vol.data > 0.5 * (m.tissue_level + m.fluid_level)
    air = vol.data < 0.5 * (m.air_level + m.tissue_level)
    zf = np.where(fluid.any(axis=(0, 1)))[0]
    za = np.where(air.any(axis=(0, 1)))[0]
    # fluid occupies a contiguous slab below the air, up to the soft transition
    transition = spec.intensity_model.transition_width_voxels
    assert zf.max() <= za.min() + transition
    assert zf.min() < zf.max() < za.max()


def test_sessile_protrusion_height():
    spec = straight_spec()
    p = np.asarray(wall_point(spec, 0.5, 0.0))
    size = 6.0
    spec.polyps = [PolypSpec(tuple(p), size, "sessile")]
    vol, _ = generate_phantom(spec, seed=0)
    # walk from the axis upward through the polyp: the tissue boundary
    # (mid-level crossing) should sit `size` inside the nominal wall
    i, j = int(round(p[0])), int(round(p[1]))
    column = vol.data[i, j, :]
    mid = 0.5 * (IntensityModel().air_level + IntensityModel().tissue_level)
    k_axis = int(round(23.4))
    k = k_axis
    while column[k] < mid:
        k += 1
    crossing_z = k - (mid - column[k - 1]) / (column[k] - column[k - 1]) * 0 + 0.0
    boundary_mm = (k - 1 + (mid - column[k - 1]) / (column[k] - column[k - 1])) * 1.0
    wall_mm = p[2]
    assert wall_mm - boundary_mm == pytest.approx(size, abs=1.0)


def test_flat_polyp_elevation_validated():
    with pytest.raises(ValueError):
        PolypSpec((0, 0, 0), 8.0, "flat", elevation=3.5)
    PolypSpec((0, 0, 0), 8.0, "flat", elevation=2.0)  # fine


def test_overlapping_polyps_rejected():
    spec = straight_spec()
    p1 = wall_point(spec, 0.5, 0.0)
    p2 = wall_point(spec, 0.52, 0.0)
    spec.polyps = [PolypSpec(p1, 6.0, "sessile"), PolypSpec(p2, 6.0, "sessile")]
    with pytest.raises(ValueError, match="overlap"):
        generate_phantom(spec, seed=0)


def test_tube_exiting_volume_rejected():
    spec = straight_spec(tube_radius=22.0)
    with pytest.raises(ValueError, match="exits"):
        generate_phantom(spec, seed=0)


def test_polyp_off_wall_rejected():
    spec = straight_spec()
    spec.polyps = [PolypSpec((36.0, 23.6, 23.4), 5.0, "sessile")]  # on the axis
    with pytest.raises(ValueError, match="wall"):
        generate_phantom(spec, seed=0)


def test_pedunculated_and_flat_generate():
    spec = straight_spec(shape=(96, 48, 48), tube_axis=[[12.0, 23.6, 23.4], [84.0, 23.6, 23.4]])
    spec.polyps = [
        PolypSpec(wall_point(spec, 0.25, 0.0), 6.0, "pedunculated"),
        PolypSpec(wall_point(spec, 0.75, np.pi / 2), 8.0, "flat", elevation=2.0),
    ]
    vol, truth = generate_phantom(spec, seed=3)
    assert [t.morphology for t in truth] == ["pedunculated", "flat"]
    assert np.isfinite(vol.data).all()


# ---------------------------------------------------------------------------
# histogram
# ---------------------------------------------------------------------------

def test_histogram_constant_volume_single_bin():
    vol = ScalarVolume(np.full((6, 6, 6), 0.5), (1, 1, 1))
    counts, edges = intensity_histogram(vol, 16)
    assert (counts > 0).sum() == 1
    assert counts.sum() == 6**3


def test_histogram_counts_sum_to_voxels(rng):
    vol = ScalarVolume(rng.random((8, 8, 8)), (1, 1, 1))
    counts, _ = intensity_histogram(vol, 32)
    assert counts.sum() == 8**3


def test_histogram_trimodal_on_phantom():
    spec = straight_spec(fluid_fill_fraction=0.35, noise_sigma=0.02)
    vol, _ = generate_phantom(spec, seed=5)
    counts, edges = intensity_histogram(vol, 64)
    centers = 0.5 * (edges[:-1] + edges[1:])
    # smooth lightly, then find local maxima
    c = np.convolve(counts, np.ones(5) / 5, mode="same")
    peaks = [i for i in range(1, 63) if c[i] >= c[i - 1] and c[i] > c[i + 1] and c[i] > 50]
    modes = [centers[i] for i in peaks]
    m = IntensityModel()
    assert any(abs(v - m.air_level) < 0.15 for v in modes)
    assert any(abs(v - m.tissue_level) < 0.15 for v in modes)
    assert any(abs(v - m.fluid_level) < 0.15 for v in modes)


# ---------------------------------------------------------------------------
# truth table round trip
# ---------------------------------------------------------------------------

def test_truth_roundtrip(tmp_path):
    truth = [GroundTruthPolyp((1.5, 2.5, 3.5), 6.0, "sessile"),
             GroundTruthPolyp((10.0, 20.0, 30.0), 8.0, "flat")]
    save_truth(truth, tmp_path / "truth.tsv")
    back = load_truth(tmp_path / "truth.tsv")
    assert len(back) == 2
    assert back[0].morphology == "sessile"
    assert back[1].size == 8.0
    assert np.allclose(back[0].center, (1.5, 2.5, 3.5))
