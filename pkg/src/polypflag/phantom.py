"""Synthetic colon phantoms with known polyps and a tagged-fluid pool.

A phantom is an air-distended tube of configurable axis and radius embedded
in tissue, partially filled with bright fluid up to an exactly horizontal
plane (constant z), with polyps of three morphologies grown on the wall:

* ``sessile``  - a dome (Gaussian bump) growing directly from the wall;
  ``size`` is its protrusion height, its footprint is about 1.5x wider.
* ``pedunculated`` - a spherical head of diameter ``size`` on a cylindrical
  stalk.
* ``flat``     - a shallow spherical cap of footprint diameter ``size`` and
  elevation below 3 mm.

Intensity ordering follows the air < tissue < fluid convention with smooth
class transitions about six voxels wide; Gaussian noise is added last, so a
fixed (spec, seed) pair reproduces the volume bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .volume import ScalarVolume


@dataclass
class IntensityModel:
    air_level: float = 0.0
    tissue_level: float = 0.5
    fluid_level: float = 1.0
    transition_width_voxels: float = 6.0


@dataclass
class PolypSpec:
    center: tuple[float, float, float]  # mm, on the tube wall
    size: float                         # mm, see module docstring per morphology
    morphology: str                     # sessile | pedunculated | flat
    elevation: float = 0.0              # mm, flat polyps only, must stay < 3
    texture_contrast: float = 0.0       # intensity offset inside the polyp body
    texture_noise: float = 0.0          # extra noise sigma inside the polyp body

    def __post_init__(self):
        if self.morphology not in ("sessile", "pedunculated", "flat"):
            raise ValueError(f"unknown morphology {self.morphology!r}")
        if self.size <= 0:
            raise ValueError("polyp size must be positive")
        if self.morphology == "flat":
            if not 0 < self.elevation < 3.0:
                raise ValueError("flat polyps must have 0 < elevation < 3 mm")


@dataclass
class GroundTruthPolyp:
    center: tuple[float, float, float]  # mm, apex of the protrusion
    size: float                         # mm
    morphology: str


@dataclass
class PhantomSpec:
    shape: tuple[int, int, int]
    spacing: tuple[float, float, float]
    tube_radius: float
    tube_axis: np.ndarray               # (k, 3) polyline in mm
    polyps: list[PolypSpec] = field(default_factory=list)
    fluid_fill_fraction: float = 0.0
    noise_sigma: float = 0.0
    intensity_model: IntensityModel = field(default_factory=IntensityModel)
    wall_wave_amplitude: float = 0.0    # sinusoidal haustral-like ripple, mm
    wall_wave_period: float = 20.0      # mm along the axis

    def __post_init__(self):
        self.tube_axis = np.atleast_2d(np.asarray(self.tube_axis, dtype=np.float64))
        if self.tube_axis.shape[0] < 2 or self.tube_axis.shape[1] != 3:
            raise ValueError("tube_axis must be a polyline of >= 2 points in mm")
        if not 0.0 <= self.fluid_fill_fraction <= 1.0:
            raise ValueError("fluid_fill_fraction must be in [0, 1]")
        if self.tube_radius <= 0:
            raise ValueError("tube_radius must be positive")


SESSILE_ASPECT = 2.5  # sessile bulb: height / lateral radius, apex curvature 6.25/size
STALK_LENGTH_RATIO = 0.5  # pedunculated stalk length as a fraction of head diameter


def wall_point(spec: PhantomSpec, t: float, angle: float) -> tuple[float, float, float]:
    """A point on the tube wall: axis parameter t in [0, 1], angle in radians.

    angle = 0 points along +z ("up"); angle = pi points to the tube floor.
    """
    axis = spec.tube_axis
    seg_len = np.linalg.norm(np.diff(axis, axis=0), axis=1)
    total = seg_len.sum()
    s = t * total
    acc = 0.0
    for i, L in enumerate(seg_len):
        if s <= acc + L or i == len(seg_len) - 1:
            lam = (s - acc) / L if L > 0 else 0.0
            p = axis[i] + lam * (axis[i + 1] - axis[i])
            d = (axis[i + 1] - axis[i]) / (L if L > 0 else 1.0)
            break
        acc += L
    # orthonormal frame with "up" as close to +z as the axis allows
    up = np.array([0.0, 0.0, 1.0])
    n1 = up - d * (up @ d)
    if np.linalg.norm(n1) < 1e-9:
        n1 = np.array([1.0, 0.0, 0.0])
    n1 /= np.linalg.norm(n1)
    n2 = np.cross(d, n1)
    radial = np.cos(angle) * n1 + np.sin(angle) * n2
    return tuple(p + spec.tube_radius * radial)


def _axis_distance(points: np.ndarray, axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distance from each point to the polyline and the arclength of the foot."""
    best = np.full(points.shape[0], np.inf)
    best_s = np.zeros(points.shape[0])
    acc = 0.0
    for a, b in zip(axis[:-1], axis[1:]):
        ab = b - a
        L2 = float(ab @ ab)
        if L2 == 0:
            continue
        t = np.clip(((points - a) @ ab) / L2, 0.0, 1.0)
        foot = a + t[:, None] * ab
        d = np.linalg.norm(points - foot, axis=1)
        closer = d < best
        best[closer] = d[closer]
        best_s[closer] = acc + t[closer] * np.sqrt(L2)
        acc += np.sqrt(L2)
    return best, best_s


def _validate(spec: PhantomSpec):
    extent = np.asarray(spec.shape) * np.asarray(spec.spacing)
    margin = 3.0 * max(spec.spacing)

    def polyp_extent(p: PolypSpec) -> float:
        if p.morphology == "sessile":
            return p.size
        if p.morphology == "pedunculated":
            return p.size * (1.0 + STALK_LENGTH_RATIO)
        return max(p.size / 2.0, p.elevation)

    for q in spec.tube_axis:
        lo = q - spec.tube_radius - spec.wall_wave_amplitude - margin
        hi = q + spec.tube_radius + spec.wall_wave_amplitude + margin
        if (lo < 0).any() or (hi > extent).any():
            raise ValueError(
                f"tube exits the volume: axis point {q} needs radius "
                f"{spec.tube_radius} plus a {margin:.1f} mm margin inside {extent}")

    wall_tol = 1.5 * max(spec.spacing)
    for p in spec.polyps:
        d, _ = _axis_distance(np.asarray([p.center], dtype=np.float64), spec.tube_axis)
        if abs(d[0] - spec.tube_radius) > wall_tol + spec.wall_wave_amplitude:
            raise ValueError(
                f"polyp center {p.center} is {d[0]:.2f} mm from the axis; "
                f"the wall is at {spec.tube_radius:.2f} mm")

    for i, p in enumerate(spec.polyps):
        for j, q in enumerate(spec.polyps[:i]):
            gap = np.linalg.norm(np.subtract(p.center, q.center))
            if gap < polyp_extent(p) + polyp_extent(q):
                raise ValueError(
                    f"polyps {j} and {i} overlap: centers {gap:.2f} mm apart, "
                    f"bodies span {polyp_extent(q):.2f}+{polyp_extent(p):.2f} mm")


def generate_phantom(spec: PhantomSpec, seed: int = 0, with_masks: bool = False):
    """Generate the phantom volume and its ground-truth polyp list.

    Deterministic for a fixed (spec, seed); rejects overlapping polyps and
    tubes that do not fit inside the volume with a 3-voxel margin.  With
    with_masks=True a third element is returned: boolean class masks (air,
    fluid, lumen) of the noise-free geometry, the stand-in for a manual
    segmentation when training reference class densities.
    """
    _validate(spec)
    nx, ny, nz = spec.shape
    sx, sy, sz = spec.spacing
    xs = np.arange(nx) * sx
    ys = np.arange(ny) * sy
    zs = np.arange(nz) * sz
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    rho, s_axis = _axis_distance(pts, spec.tube_axis)
    rho = rho.reshape(spec.shape)
    s_axis = s_axis.reshape(spec.shape)

    radius = spec.tube_radius
    if spec.wall_wave_amplitude > 0:
        radius = radius + spec.wall_wave_amplitude * np.sin(2.0 * np.pi * s_axis / spec.wall_wave_period)

    # signed "insideness" of the lumen in mm (positive inside)
    d_lumen = radius - rho

    truth = []
    polyp_cores = []  # (center, core_radius, contrast, extra_noise)
    for p in spec.polyps:
        c = np.asarray(p.center, dtype=np.float64)
        d_ax, _ = _axis_distance(c[None, :], spec.tube_axis)
        # inward wall normal: from the wall point toward the axis
        foot = _closest_axis_point(c, spec.tube_axis)
        n_in = (foot - c) / max(float(np.linalg.norm(foot - c)), 1e-9)
        q2 = (X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2
        if p.morphology == "sessile":
            # a half-ellipsoid bulb growing from the wall: height = size
            # along the inward normal, lateral radius = size / aspect; tall
            # enough that the whole bulb reads as a protrusion (si near -1)
            # while the apex stays in the sharp-curvature regime
            h = p.size
            a_lat = h / SESSILE_ASPECT
            s_ax = (X - c[0]) * n_in[0] + (Y - c[1]) * n_in[1] + (Z - c[2]) * n_in[2]
            qt2 = np.maximum(q2 - s_ax**2, 0.0)
            q_ell = np.sqrt(qt2 / a_lat**2 + s_ax**2 / h**2)
            d_ell = (q_ell - 1.0) * a_lat
            d_lumen = np.minimum(d_lumen, d_ell)
            body_center = c + n_in * h
            core_r = 0.8 * h
        elif p.morphology == "pedunculated":
            r_head = p.size / 2.0
            stalk = STALK_LENGTH_RATIO * p.size
            head_c = c + n_in * (stalk + r_head)
            d_head = np.sqrt((X - head_c[0]) ** 2 + (Y - head_c[1]) ** 2 + (Z - head_c[2]) ** 2) - r_head
            d_stalk = _capsule_distance(X, Y, Z, c, head_c, 0.4 * r_head)
            d_lumen = np.minimum(d_lumen, np.minimum(d_head, d_stalk))
            body_center = c + n_in * (stalk + p.size)
            core_r = r_head
        else:  # flat: shallow spherical cap carved from a buried ball
            a = p.size / 2.0
            e = p.elevation
            r_cap = (a * a + e * e) / (2.0 * e)
            ball_c = c - n_in * (r_cap - e)
            d_ball = np.sqrt((X - ball_c[0]) ** 2 + (Y - ball_c[1]) ** 2 + (Z - ball_c[2]) ** 2) - r_cap
            d_lumen = np.minimum(d_lumen, d_ball)
            body_center = c + n_in * e
            core_r = a
        truth.append(GroundTruthPolyp(tuple(body_center), p.size, p.morphology))
        if p.texture_contrast != 0.0 or p.texture_noise > 0.0:
            polyp_cores.append((np.asarray(p.center), core_r, p.texture_contrast, p.texture_noise))

    lumen_mask = d_lumen > 0
    m = spec.intensity_model
    w_mm = m.transition_width_voxels * float(np.mean(spec.spacing)) / 4.4  # 10-90 sigmoid width

    def compose(z_star):
        if z_star is None:
            d_air = d_lumen
            d_fluid = np.full_like(d_lumen, -1e3)
        else:
            d_air = np.minimum(d_lumen, Z - z_star)
            d_fluid = np.minimum(d_lumen, z_star - Z)
        s_air = _sigmoid(d_air / w_mm)
        s_fluid = _sigmoid(d_fluid / w_mm)
        intensity = (m.tissue_level
                     + (m.air_level - m.tissue_level) * s_air
                     + (m.fluid_level - m.tissue_level) * s_fluid)
        return intensity, s_air, s_fluid

    # exactly horizontal fluid plane, placed by bisection so that the voxel
    # count at the class-midpoint thresholds hits the requested fill fraction
    z_star = None
    if spec.fluid_fill_fraction > 0 and lumen_mask.any():
        air_cut = 0.5 * (m.air_level + m.tissue_level)
        fluid_cut = 0.5 * (m.tissue_level + m.fluid_level)

        def measured_fraction(z_s):
            intensity, _, _ = compose(z_s)
            n_air = int((intensity < air_cut).sum()) if m.air_level < m.tissue_level else \
                int((intensity > air_cut).sum())
            n_fluid = int((intensity > fluid_cut).sum()) if m.fluid_level > m.tissue_level else \
                int((intensity < fluid_cut).sum())
            total = n_air + n_fluid
            return n_fluid / total if total else 0.0

        z_lumen = Z[lumen_mask]
        lo, hi = float(z_lumen.min()) - 2 * w_mm, float(z_lumen.max()) + 2 * w_mm
        for _ in range(20):
            mid = 0.5 * (lo + hi)
            if measured_fraction(mid) < spec.fluid_fill_fraction:
                lo = mid
            else:
                hi = mid
        # the count is a staircase in the plane height; probe around the
        # bisection bracket and keep the closest achievable fraction
        probes = np.linspace(lo - sz, hi + sz, 9)
        errors = [abs(measured_fraction(p) - spec.fluid_fill_fraction) for p in probes]
        z_star = float(probes[int(np.argmin(errors))])

    intensity, s_air, s_fluid = compose(z_star)

    rng = np.random.default_rng(seed)
    for c, core_r, contrast, extra_noise in polyp_cores:
        q = np.sqrt((X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2)
        core = _sigmoid((core_r - q) / w_mm) * (1.0 - s_air) * (1.0 - s_fluid)
        if contrast != 0.0:
            intensity = intensity + contrast * core
        if extra_noise > 0.0:
            intensity = intensity + extra_noise * core * rng.standard_normal(intensity.shape)
    if spec.noise_sigma > 0:
        intensity = intensity + rng.normal(0.0, spec.noise_sigma, intensity.shape)

    vol = ScalarVolume(intensity.astype(np.float32), spec.spacing)
    if with_masks:
        masks = {"air": s_air > 0.5, "fluid": s_fluid > 0.5, "lumen": lumen_mask}
        return vol, truth, masks
    return vol, truth


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


def _closest_axis_point(c: np.ndarray, axis: np.ndarray) -> np.ndarray:
    best, best_p = np.inf, axis[0]
    for a, b in zip(axis[:-1], axis[1:]):
        ab = b - a
        L2 = float(ab @ ab)
        t = 0.0 if L2 == 0 else float(np.clip(((c - a) @ ab) / L2, 0.0, 1.0))
        p = a + t * ab
        d = float(np.linalg.norm(c - p))
        if d < best:
            best, best_p = d, p
    return best_p


def _capsule_distance(X, Y, Z, a, b, radius):
    ab = b - a
    L2 = float(ab @ ab)
    t = ((X - a[0]) * ab[0] + (Y - a[1]) * ab[1] + (Z - a[2]) * ab[2]) / max(L2, 1e-12)
    t = np.clip(t, 0.0, 1.0)
    fx, fy, fz = a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]
    return np.sqrt((X - fx) ** 2 + (Y - fy) ** 2 + (Z - fz) ** 2) - radius


# ---------------------------------------------------------------------------
# Histogram and ground-truth table
# ---------------------------------------------------------------------------

def intensity_histogram(vol: ScalarVolume, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Counts over uniformly spaced bins spanning the volume's value range."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    lo, hi = vol.value_range()
    if lo == hi:
        counts = np.zeros(bins, dtype=np.int64)
        counts[bins // 2] = vol.data.size
        edges = np.linspace(lo - 0.5, hi + 0.5, bins + 1)
        return counts, edges
    counts, edges = np.histogram(vol.data, bins=bins, range=(lo, hi))
    return counts.astype(np.int64), edges


def save_truth(truth: list[GroundTruthPolyp], path) -> Path:
    """One polyp per line: center_x center_y center_z size morphology."""
    path = Path(path)
    lines = ["# center_x_mm\tcenter_y_mm\tcenter_z_mm\tsize_mm\tmorphology"]
    for t in truth:
        lines.append("%.6f\t%.6f\t%.6f\t%.6f\t%s" % (*t.center, t.size, t.morphology))
    path.write_text("\n".join(lines) + "\n")
    return path


def load_truth(path) -> list[GroundTruthPolyp]:
    truth = []
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        cx, cy, cz, size, morph = line.split("\t")
        truth.append(GroundTruthPolyp((float(cx), float(cy), float(cz)), float(size), morph))
    return truth
