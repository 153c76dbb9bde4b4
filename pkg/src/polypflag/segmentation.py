"""Initial soft segmentation of the colon lumen.

Air and tagged-fluid gray-level densities are learned once by kernel density
estimation from a reference study, shifted per study by histogram peak
alignment, and combined with an interface-confidence score that exploits the
horizontal air-fluid interface: for each voxel the air likelihoods of the 18
voxels above it and the fluid likelihoods of the 18 voxels below it (a 3x3
column neighborhood, two layers each way) are accumulated and divided by 18.
The initial segmentation u0 takes, per voxel, the maximum of the two class
likelihoods and the (clamped) interface confidence, then spurious bright
components are removed by automatically seeded connected-component cleanup.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.signal import find_peaks
from scipy.stats import gaussian_kde

from .volume import ScalarVolume

DENSITY_GRID_POINTS = 256
COMPONENT_THRESHOLD = 0.6
COMPONENT_CAP = 5
SEED_FLOOR_RATIO = 0.9


class EmptySegmentationError(ValueError):
    """No voxel qualifies as lumen: nothing above the component threshold."""


@dataclass
class ClassDensities:
    """Sampled air/fluid intensity densities on a uniform grid.

    ``air_pdf``/``fluid_pdf`` integrate to one; the peak-normalized
    ``air_likelihood``/``fluid_likelihood`` (max = 1) are what the
    segmentation consumes.
    """

    grid: np.ndarray
    air_pdf: np.ndarray
    fluid_pdf: np.ndarray

    @property
    def air_likelihood(self) -> np.ndarray:
        return self.air_pdf / self.air_pdf.max()

    @property
    def fluid_likelihood(self) -> np.ndarray:
        return self.fluid_pdf / self.fluid_pdf.max()

    def air_peak(self) -> float:
        return float(self.grid[np.argmax(self.air_pdf)])

    def fluid_peak(self) -> float:
        return float(self.grid[np.argmax(self.fluid_pdf)])

    def shifted(self, air_delta: float, fluid_delta: float) -> "ClassDensities":
        # represented on per-class shifted grids via resampling onto a common grid
        lo = min(self.grid[0] + air_delta, self.grid[0] + fluid_delta)
        hi = max(self.grid[-1] + air_delta, self.grid[-1] + fluid_delta)
        grid = np.linspace(lo, hi, self.grid.size)
        air = np.interp(grid, self.grid + air_delta, self.air_pdf, left=0.0, right=0.0)
        fluid = np.interp(grid, self.grid + fluid_delta, self.fluid_pdf, left=0.0, right=0.0)
        return ClassDensities(grid, air, fluid)


def _kde_on_grid(samples: np.ndarray, grid: np.ndarray) -> np.ndarray:
    step = (grid[-1] - grid[0]) / grid.size
    if np.ptp(samples) == 0:
        # degenerate single-value class: a narrow Gaussian at that value
        width = max(step, 1e-12)
        pdf = np.exp(-0.5 * ((grid - samples[0]) / width) ** 2) / (width * np.sqrt(2 * np.pi))
        return pdf
    kde = gaussian_kde(samples, bw_method="silverman")
    # a 256-point sampled curve cannot represent structure finer than its
    # grid; floor the bandwidth at a few grid steps so near-degenerate
    # sample sets do not produce sub-resolution spikes
    sigma = samples.std(ddof=1)
    if kde.factor * sigma < 4.0 * step:
        kde.set_bandwidth(4.0 * step / sigma)
    return kde(grid)


def estimate_class_densities(air_samples, fluid_samples,
                             grid_points: int = DENSITY_GRID_POINTS) -> ClassDensities:
    """Gaussian-KDE density estimates (Silverman bandwidth) on a shared grid."""
    air = np.asarray(air_samples, dtype=np.float64).ravel()
    fluid = np.asarray(fluid_samples, dtype=np.float64).ravel()
    if air.size == 0 or fluid.size == 0:
        raise ValueError("both air and fluid sample sets must be non-empty")
    lo = min(air.min(), fluid.min())
    hi = max(air.max(), fluid.max())
    pad = 0.15 * max(hi - lo, 1e-6)
    grid = np.linspace(lo - pad, hi + pad, grid_points)
    return ClassDensities(grid, _kde_on_grid(air, grid), _kde_on_grid(fluid, grid))


def reference_densities(vol: ScalarVolume, air_mask: np.ndarray,
                        fluid_mask: np.ndarray, air_cut: float,
                        fluid_cut: float) -> ClassDensities:
    """Train class densities from segmented air/fluid regions of one study.

    The masks play the role of a manual segmentation and include the
    partial-volume shell, which is what gives the likelihoods the shoulders
    the interface-confidence taps rely on; voxels past the class midpoint
    cuts are dropped as tissue-contaminated.
    """
    air = vol.data[air_mask & (vol.data < air_cut)]
    fluid = vol.data[fluid_mask & (vol.data > fluid_cut)]
    return estimate_class_densities(air, fluid)


def trimodal_peaks(counts: np.ndarray, edges: np.ndarray,
                   smooth_bins: int = 5) -> tuple[float, float, float]:
    """(air, tissue, fluid) peak intensities of a trimodal histogram.

    The histogram is smoothed with a moving average, local maxima are
    located, and the three strongest mutually separated modes are kept
    (greedy, with an exclusion zone of a tenth of the intensity range).
    Raises if fewer than three modes survive.
    """
    c = np.convolve(counts.astype(np.float64), np.ones(smooth_bins) / smooth_bins, mode="same")
    centers = 0.5 * (edges[:-1] + edges[1:])
    min_sep = max(len(c) // 12, 2)
    peaks, props = find_peaks(c, distance=min_sep, prominence=0.0)
    if len(peaks) < 3:
        raise ValueError(
            f"histogram is not trimodal ({len(peaks)} separated modes found); "
            f"smoothed counts: {np.array2string(c, precision=1, threshold=40)}")
    order = np.argsort(props["prominences"])[::-1][:3]
    modes = sorted(peaks[order])
    return tuple(float(centers[i]) for i in modes)


def shift_densities(ref: ClassDensities, study_hist) -> ClassDensities:
    """Translate the reference densities so their modes match the study peaks."""
    counts, edges = study_hist
    air_peak, _, fluid_peak = trimodal_peaks(np.asarray(counts), np.asarray(edges))
    return ref.shifted(air_peak - ref.air_peak(), fluid_peak - ref.fluid_peak())


def likelihood_volumes(vol: ScalarVolume, d: ClassDensities) -> tuple[np.ndarray, np.ndarray]:
    """Per-voxel peak-normalized air and fluid likelihoods (float64 arrays)."""
    v = vol.data.astype(np.float64).ravel()
    air = np.interp(v, d.grid, d.air_likelihood, left=0.0, right=0.0).reshape(vol.dims)
    fluid = np.interp(v, d.grid, d.fluid_likelihood, left=0.0, right=0.0).reshape(vol.dims)
    return air, fluid


def _shift_z(a: np.ndarray, k: int) -> np.ndarray:
    """a[..., z + k] with edge clamping."""
    nz = a.shape[2]
    idx = np.clip(np.arange(nz) + k, 0, nz - 1)
    return a[:, :, idx]


def interface_confidence(vol: ScalarVolume, d: ClassDensities) -> ScalarVolume:
    """Interface-confidence volume, values in [0, 2] for unit-peak likelihoods.

    IC(x,y,z) = [sum of air likelihood over the 3x3 column at z+1 and z+2
    plus fluid likelihood over the same columns at z-1 and z-2] / 18.
    """
    air, fluid = likelihood_volumes(vol, d)
    box = np.ones((3, 3, 1))
    air_box = ndimage.convolve(air, box, mode="nearest")
    fluid_box = ndimage.convolve(fluid, box, mode="nearest")
    ic = (_shift_z(air_box, 1) + _shift_z(air_box, 2)
          + _shift_z(fluid_box, -1) + _shift_z(fluid_box, -2)) / 18.0
    return ScalarVolume(ic.astype(np.float32), vol.spacing)


def initial_segmentation(vol: ScalarVolume, d: ClassDensities,
                         ic: ScalarVolume) -> ScalarVolume:
    """u0 = max(air likelihood, fluid likelihood, IC clamped to 1), in [0, 1]."""
    if ic.dims != vol.dims:
        raise ValueError("interface-confidence shape does not match the volume")
    air, fluid = likelihood_volumes(vol, d)
    u0 = np.maximum(np.maximum(air, fluid), np.minimum(ic.data.astype(np.float64), 1.0))
    return ScalarVolume(np.clip(u0, 0.0, 1.0).astype(np.float32), vol.spacing)


def extract_components(u0: ScalarVolume, seed_score: ScalarVolume,
                       threshold: float = COMPONENT_THRESHOLD,
                       component_cap: int = COMPONENT_CAP,
                       floor_ratio: float = SEED_FLOOR_RATIO) -> ScalarVolume:
    """Keep the connected components of {u0 >= threshold} picked by seeds.

    Seeds are the largest seed-score voxels (interface confidence, or air
    likelihood as a fallback score), taken one per iteration outside the
    already-kept region, until the score drops below floor_ratio times the
    global maximum or the component cap is reached.  Soft u0 values survive
    inside kept components; everything else is zeroed.  Idempotent.
    """
    mask = u0.data >= threshold
    if not mask.any():
        raise EmptySegmentationError(f"no voxel reaches the {threshold} component threshold")
    labels, n = ndimage.label(mask, structure=np.ones((3, 3, 3)))
    score = np.where(mask, seed_score.data.astype(np.float64), -np.inf)
    floor = floor_ratio * score.max()
    if not np.isfinite(floor):
        raise EmptySegmentationError("seed score is degenerate over the thresholded region")
    kept = set()
    for _ in range(component_cap):
        flat = int(np.argmax(score))
        best = score.ravel()[flat]
        if not np.isfinite(best) or best < floor:
            break
        lab = int(labels.ravel()[flat])
        kept.add(lab)
        score[labels == lab] = -np.inf
    keep_mask = np.isin(labels, sorted(kept))
    cleaned = np.where(keep_mask, u0.data, 0.0).astype(np.float32)
    return ScalarVolume(cleaned, u0.spacing)


def segment(vol: ScalarVolume, d: ClassDensities) -> tuple[ScalarVolume, ScalarVolume]:
    """Full pre-segmentation: returns (cleaned u0, interface confidence)."""
    ic = interface_confidence(vol, d)
    u0 = initial_segmentation(vol, d, ic)
    air, _ = likelihood_volumes(vol, d)
    seed_score = ScalarVolume(np.maximum(ic.data, air.astype(np.float32)), vol.spacing)
    return extract_components(u0, seed_score), ic
