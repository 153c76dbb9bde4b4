"""Differential Haralick texture features around candidate patches.

For each candidate the patch is dilated into the wall tissue (air and fluid
voxels are discarded) to form a polyp-side volume V1, and V1 is dilated
again to form a surrounding normal-tissue shell V2.  Gray-level
co-occurrence matrices over seven lattice directions yield entropy, energy,
contrast, sum-mean and homogeneity; the five are averaged over directions
separately for V1 and V2 and differenced, and the mean-gray difference joins
them, giving six differential texture features.  An absolute mode (V1 only)
exists for comparison experiments.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .candidates import CandidatePatch
from .surface import TriMesh
from .volume import ScalarVolume

DIRECTIONS = ((1, 0, 0), (0, 1, 0), (0, 0, 1),
              (1, 0, 1), (1, 1, 0), (0, 1, 1), (1, 1, 1))
N_LEVELS = 32
MIN_REGION_VOXELS = 50
DILATION_DEPTH = 3          # voxels; frozen from the {2, 3, 4} calibration grid
DILATION_DEPTH_GRID = (2, 3, 4)

TEXTURE_FEATURE_NAMES = ("d_entropy", "d_energy", "d_contrast",
                         "d_sum_mean", "d_homogeneity", "d_mean_gray")
HARALICK_NAMES = ("entropy", "energy", "contrast", "sum_mean", "homogeneity")


class DegenerateRegionError(ValueError):
    """A co-occurrence matrix has no valid voxel pairs."""


def candidate_volumes(vol: ScalarVolume, lumen_mask: ScalarVolume,
                      patch: CandidatePatch, mesh: TriMesh,
                      depth_inner: int = DILATION_DEPTH,
                      depth_outer: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Voxel index arrays (N, 3) for the polyp-side V1 and surrounding V2.

    V1 holds tissue voxels (lumen mask < 0.5) within depth_inner dilation
    steps of the patch surface; V2 holds tissue within depth_outer further
    steps of V1, excluding V1.  Both shells use equal depths by default.
    """
    if depth_outer is None:
        depth_outer = depth_inner
    shape = vol.dims
    vox = np.rint(mesh.vertices[patch.patch] / np.asarray(vol.spacing)).astype(int)
    vox = np.clip(vox, 0, np.asarray(shape) - 1)

    pad = depth_inner + depth_outer + 2
    lo = np.maximum(vox.min(axis=0) - pad, 0)
    hi = np.minimum(vox.max(axis=0) + pad + 1, shape)
    box = tuple(slice(int(a), int(b)) for a, b in zip(lo, hi))

    seed = np.zeros(tuple(int(b - a) for a, b in zip(lo, hi)), dtype=bool)
    seed[tuple((vox - lo).T)] = True
    tissue = lumen_mask.data[box] < 0.5
    struct = ndimage.generate_binary_structure(3, 1)

    grown_inner = ndimage.binary_dilation(seed, struct, iterations=depth_inner)
    v1 = grown_inner & tissue
    grown_outer = ndimage.binary_dilation(v1, struct, iterations=depth_outer)
    v2 = grown_outer & tissue & ~v1

    v1_idx = np.argwhere(v1) + lo
    v2_idx = np.argwhere(v2) + lo
    return v1_idx, v2_idx


def quantize(vol: ScalarVolume, voxels: np.ndarray, n_levels: int,
             intensity_range: tuple[float, float] | None = None) -> np.ndarray:
    """Gray levels of a voxel set quantized to n_levels uniform bins."""
    vals = vol.data[tuple(voxels.T)].astype(np.float64)
    if intensity_range is None:
        lo, hi = np.percentile(vals, [1.0, 99.0])
    else:
        lo, hi = intensity_range
    if hi <= lo:
        hi = lo + 1e-9
    q = np.floor((vals - lo) / (hi - lo) * n_levels).astype(np.int64)
    return np.clip(q, 0, n_levels - 1)


def cooccurrence(vol: ScalarVolume, voxels: np.ndarray, direction,
                 n_levels: int = N_LEVELS,
                 intensity_range: tuple[float, float] | None = None) -> np.ndarray:
    """Symmetric, normalized gray-level co-occurrence matrix for one direction.

    Pairs (x, x + direction) are counted when both endpoints belong to the
    voxel set, in both orders; raises DegenerateRegionError with no pairs.
    """
    voxels = np.asarray(voxels, dtype=np.int64).reshape(-1, 3)
    if len(voxels) == 0:
        raise DegenerateRegionError("empty voxel set")
    if n_levels < 2:
        raise ValueError("n_levels must be >= 2")
    levels = quantize(vol, voxels, n_levels, intensity_range)
    lookup = {tuple(v): q for v, q in zip(map(tuple, voxels), levels)}
    d = tuple(int(t) for t in direction)
    m = np.zeros((n_levels, n_levels), dtype=np.float64)
    for v, q in zip(map(tuple, voxels), levels):
        partner = (v[0] + d[0], v[1] + d[1], v[2] + d[2])
        q2 = lookup.get(partner)
        if q2 is not None:
            m[q, q2] += 1.0
            m[q2, q] += 1.0
    total = m.sum()
    if total == 0:
        raise DegenerateRegionError(f"no co-occurrence pairs along {d}")
    return m / total


def haralick(m: np.ndarray) -> np.ndarray:
    """(entropy, energy, contrast, sum_mean, homogeneity) of a normalized GLCM.

    entropy = -sum p ln p (0 ln 0 = 0); energy = sum p^2;
    contrast = sum (i-j)^2 p; sum_mean = sum ((i+j)/2) p with 0-based levels;
    homogeneity = sum p / (1 + |i-j|).
    """
    m = np.asarray(m, dtype=np.float64)
    n = m.shape[0]
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    nz = m > 0
    entropy = float(-(m[nz] * np.log(m[nz])).sum())
    energy = float((m * m).sum())
    contrast = float(((i - j) ** 2 * m).sum())
    sum_mean = float((((i + j) / 2.0) * m).sum())
    homogeneity = float((m / (1.0 + np.abs(i - j))).sum())
    return np.array([entropy, energy, contrast, sum_mean, homogeneity])


def _region_haralick(vol, voxels, n_levels, intensity_range) -> np.ndarray:
    """Direction-averaged Haralick five for one voxel set."""
    acc, used = np.zeros(5), 0
    for d in DIRECTIONS:
        try:
            acc += haralick(cooccurrence(vol, voxels, d, n_levels, intensity_range))
            used += 1
        except DegenerateRegionError:
            continue
    if used == 0:
        raise DegenerateRegionError("no direction produced co-occurrence pairs")
    return acc / used


def texture_features(vol: ScalarVolume, v1: np.ndarray, v2: np.ndarray,
                     n_levels: int = N_LEVELS,
                     intensity_range: tuple[float, float] | None = None,
                     mode: str = "differential") -> tuple[np.ndarray, bool]:
    """Six texture features and a reliability flag.

    Differential mode returns V1-minus-V2 for the direction-averaged Haralick
    five plus the mean-gray difference; absolute mode returns the V1 averages
    and V1's mean gray.  Regions under the voxel floor yield zeros with the
    flag cleared.
    """
    if mode not in ("differential", "absolute"):
        raise ValueError(f"unknown texture mode {mode!r}")
    v1 = np.asarray(v1, dtype=np.int64).reshape(-1, 3)
    v2 = np.asarray(v2, dtype=np.int64).reshape(-1, 3)
    small = len(v1) < MIN_REGION_VOXELS or (mode == "differential" and len(v2) < MIN_REGION_VOXELS)
    if small:
        return np.zeros(6), False
    if intensity_range is None and mode == "differential":
        both = np.vstack([v1, v2])
        vals = vol.data[tuple(both.T)]
        intensity_range = tuple(np.percentile(vals, [1.0, 99.0]))
    try:
        h1 = _region_haralick(vol, v1, n_levels, intensity_range)
        g1 = float(vol.data[tuple(v1.T)].mean())
        if mode == "absolute":
            return np.append(h1, g1), True
        h2 = _region_haralick(vol, v2, n_levels, intensity_range)
        g2 = float(vol.data[tuple(v2.T)].mean())
        return np.append(h1 - h2, g1 - g2), True
    except DegenerateRegionError:
        return np.zeros(6), False


def study_intensity_range(vol: ScalarVolume, lumen_mask: ScalarVolume) -> tuple[float, float]:
    """The study's tissue intensity range: 1st to 99th percentile off-lumen."""
    tissue = vol.data[lumen_mask.data < 0.5]
    lo, hi = np.percentile(tissue, [1.0, 99.0])
    return float(lo), float(hi)
