"""Volumetric scalar grids and their finite-difference differential geometry.

A volume is a 3D scalar grid with anisotropic physical spacing, indexed
``data[x, y, z]``.  The z axis is the gravity axis (+z points up, patient
supine), so fluid-air interfaces are planes of constant z.  All derivative
quantities are returned in physical units (1/mm, 1/mm^2).

Orientation convention used throughout the package: the scalar field is an
"insideness" map of the colon lumen (close to 1 in air/fluid, close to 0 in
tissue), surface normals point from the lumen into the tissue, and a
protrusion into the lumen (a polyp seen from the air side) has positive
principal curvatures, which places its shape index near -1.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

GRADIENT_FLOOR = 1e-6  # 1/mm; below this the iso-surface through a voxel is undefined


class CurvaturePair(NamedTuple):
    """Principal curvatures of the iso-surface through a voxel, k_min <= k_max."""

    k_min: float
    k_max: float


@dataclass
class ScalarVolume:
    """3D scalar grid with physical spacing in millimeters per voxel.

    ``data`` has shape (nx, ny, nz) and is stored as float32; the serialized
    form is an x-fastest/z-slowest raw stream of little-endian float32.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {self.data.shape}")
        if min(self.data.shape) < 1:
            raise ValueError(f"all dims must be >= 1, got {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValueError(f"spacing must be three positive floats, got {self.spacing}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def copy(self) -> "ScalarVolume":
        return ScalarVolume(self.data.copy(), self.spacing)

    def value_range(self) -> tuple[float, float]:
        return float(self.data.min()), float(self.data.max())

    def voxel_to_mm(self, idx) -> np.ndarray:
        return np.asarray(idx, dtype=np.float64) * np.asarray(self.spacing)

    def mm_to_voxel(self, pos_mm) -> np.ndarray:
        return np.asarray(pos_mm, dtype=np.float64) / np.asarray(self.spacing)


# ---------------------------------------------------------------------------
# Full-grid derivatives (vectorized; the per-voxel operations below match them)
# ---------------------------------------------------------------------------

def gradient_field(vol: ScalarVolume) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Central-difference gradient in 1/mm; one-sided at the volume faces."""
    return gradient_arrays(vol.data.astype(np.float64), vol.spacing)


def gradient_arrays(u: np.ndarray, spacing) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return tuple(np.gradient(u, *spacing, edge_order=1))


def hessian_field(vol: ScalarVolume) -> tuple[np.ndarray, ...]:
    """Compact second-difference Hessian (xx, yy, zz, xy, xz, yz) in 1/mm^2.

    Face voxels replicate the adjacent interior stencil; the pipeline keeps
    every shape of interest at least 3 voxels away from the faces.
    """
    return hessian_arrays(vol.data.astype(np.float64), vol.spacing)


def hessian_arrays(u: np.ndarray, spacing) -> tuple[np.ndarray, ...]:
    sx, sy, sz = spacing

    def pure(axis, h):
        d = np.zeros_like(u)
        lo, hi, mid = [slice(None)] * 3, [slice(None)] * 3, [slice(None)] * 3
        lo[axis], hi[axis], mid[axis] = slice(0, -2), slice(2, None), slice(1, -1)
        if u.shape[axis] >= 3:
            d[tuple(mid)] = (u[tuple(hi)] - 2.0 * u[tuple(mid)] + u[tuple(lo)]) / h**2
            first, nxt = [slice(None)] * 3, [slice(None)] * 3
            first[axis], nxt[axis] = 0, 1
            d[tuple(first)] = d[tuple(nxt)]
            last, prev = [slice(None)] * 3, [slice(None)] * 3
            last[axis], prev[axis] = -1, -2
            d[tuple(last)] = d[tuple(prev)]
        return d

    def mixed(a, ha, b, hb):
        d = np.zeros_like(u)
        if u.shape[a] < 3 or u.shape[b] < 3:
            return d
        pp, pm, mp, mm, mid = ([slice(None)] * 3 for _ in range(5))
        for s in (pp, pm, mp, mm, mid):
            s[a] = slice(1, -1)
            s[b] = slice(1, -1)
        pp[a], pp[b] = slice(2, None), slice(2, None)
        pm[a], pm[b] = slice(2, None), slice(0, -2)
        mp[a], mp[b] = slice(0, -2), slice(2, None)
        mm[a], mm[b] = slice(0, -2), slice(0, -2)
        d[tuple(mid)] = (u[tuple(pp)] - u[tuple(pm)] - u[tuple(mp)] + u[tuple(mm)]) / (4.0 * ha * hb)
        for axis in (a, b):
            first, nxt = [slice(None)] * 3, [slice(None)] * 3
            first[axis], nxt[axis] = 0, 1
            d[tuple(first)] = d[tuple(nxt)]
            last, prev = [slice(None)] * 3, [slice(None)] * 3
            last[axis], prev[axis] = -1, -2
            d[tuple(last)] = d[tuple(prev)]
        return d

    return (pure(0, sx), pure(1, sy), pure(2, sz),
            mixed(0, sx, 1, sy), mixed(0, sx, 2, sz), mixed(1, sy, 2, sz))


@dataclass
class CurvatureGrids:
    """Per-voxel principal curvatures of the iso-surfaces of a volume.

    ``defined`` is False where the gradient magnitude is under the floor;
    curvature values there are zero-filled and must not be consumed.
    """

    k_min: np.ndarray
    k_max: np.ndarray
    mean: np.ndarray
    gaussian: np.ndarray
    grad_mag: np.ndarray
    defined: np.ndarray


def curvature_field(vol: ScalarVolume, grad_floor: float = GRADIENT_FLOOR) -> CurvatureGrids:
    """Principal curvatures k_min <= k_max everywhere the gradient is usable.

    Mean curvature comes from the gradient/Hessian contraction over |grad|^3,
    Gaussian curvature from the adjugate-Hessian contraction over |grad|^4,
    oriented so protrusions into the lumen are positive; the discriminant is
    clamped at zero against numerical noise.
    """
    return curvature_arrays(vol.data.astype(np.float64), vol.spacing, grad_floor)


def curvature_arrays(u: np.ndarray, spacing, grad_floor: float = GRADIENT_FLOOR) -> CurvatureGrids:
    gx, gy, gz = gradient_arrays(u, spacing)
    hxx, hyy, hzz, hxy, hxz, hyz = hessian_arrays(u, spacing)

    g2 = gx * gx + gy * gy + gz * gz
    gn = np.sqrt(g2)
    defined = gn >= grad_floor

    g_h_g = (gx * (hxx * gx + hxy * gy + hxz * gz)
             + gy * (hxy * gx + hyy * gy + hyz * gz)
             + gz * (hxz * gx + hyz * gy + hzz * gz))
    trace = hxx + hyy + hzz

    # adjugate(H) contracted with the gradient
    axx = hyy * hzz - hyz * hyz
    ayy = hxx * hzz - hxz * hxz
    azz = hxx * hyy - hxy * hxy
    axy = hxz * hyz - hxy * hzz
    axz = hxy * hyz - hxz * hyy
    ayz = hxy * hxz - hyz * hxx
    g_adj_g = (gx * (axx * gx + axy * gy + axz * gz)
               + gy * (axy * gx + ayy * gy + ayz * gz)
               + gz * (axz * gx + ayz * gy + azz * gz))

    gn_safe = np.where(defined, gn, 1.0)
    mean = np.where(defined, (g2 * trace - g_h_g) / (2.0 * gn_safe**3), 0.0)
    gauss = np.where(defined, g_adj_g / gn_safe**4, 0.0)
    disc = np.sqrt(np.maximum(mean * mean - gauss, 0.0))
    return CurvatureGrids(mean - disc, mean + disc, mean, gauss, gn, defined)


UMBILIC_EPS = 1e-8  # 1/mm; below this curvature spread the shape index is a limit value


def shape_index(k_min, k_max, umbilic_eps: float = UMBILIC_EPS):
    """Shape index in [-1, 1]: -(2/pi) atan((k_max + k_min) / (k_max - k_min)).

    With the lumen-oriented curvature convention protrusions land near -1 and
    cups near +1.  Umbilic points (k_max ~ k_min) take the limit value
    -sign(mean curvature); flat umbilics (both curvatures ~ 0) are the
    caller's job to flag as undefined.
    """
    k_min = np.asarray(k_min, dtype=np.float64)
    k_max = np.asarray(k_max, dtype=np.float64)
    spread = k_max - k_min
    umb = spread < umbilic_eps
    safe = np.where(umb, 1.0, spread)
    si = -(2.0 / np.pi) * np.arctan((k_max + k_min) / safe)
    si = np.where(umb, -np.sign(k_max + k_min), si)
    return si if si.ndim else float(si)


def curvedness(k_min, k_max):
    """Log curvature magnitude: (2/pi) ln sqrt((k_max^2 + k_min^2) / 2)."""
    k_min = np.asarray(k_min, dtype=np.float64)
    k_max = np.asarray(k_max, dtype=np.float64)
    r = np.sqrt(0.5 * (k_max * k_max + k_min * k_min))
    with np.errstate(divide="ignore"):
        c = (2.0 / np.pi) * np.log(r)
    return c if c.ndim else float(c)


# ---------------------------------------------------------------------------
# Per-voxel operations
# ---------------------------------------------------------------------------

def _diff1(u, idx, axis, h):
    i = idx[axis]
    n = u.shape[axis]
    sel = list(idx)
    if 0 < i < n - 1:
        sel[axis] = i + 1
        hi = u[tuple(sel)]
        sel[axis] = i - 1
        lo = u[tuple(sel)]
        return (hi - lo) / (2.0 * h)
    # clamped one-sided difference at the faces
    j = min(max(i, 1), n - 2) if n >= 2 else i
    sel[axis] = min(i + 1, n - 1)
    hi = u[tuple(sel)]
    sel[axis] = max(i - 1, 0)
    lo = u[tuple(sel)]
    return (hi - lo) / ((min(i + 1, n - 1) - max(i - 1, 0)) * h) if n >= 2 else 0.0


def gradient(vol: ScalarVolume, idx) -> np.ndarray:
    """Gradient (1/mm) at a voxel; one-sided at the faces, central inside."""
    u = vol.data.astype(np.float64)
    return np.array([_diff1(u, tuple(idx), a, vol.spacing[a]) for a in range(3)])


def hessian(vol: ScalarVolume, idx) -> np.ndarray:
    """Symmetric 3x3 Hessian (1/mm^2) at a voxel, compact central stencils.

    Face voxels are shifted onto the adjacent interior stencil, matching the
    edge replication of :func:`hessian_field`.
    """
    u = vol.data.astype(np.float64)
    idx = tuple(min(max(int(i), 1), n - 2) if n >= 3 else int(i)
                for i, n in zip(idx, u.shape))
    s = vol.spacing
    H = np.zeros((3, 3))
    for a in range(3):
        if u.shape[a] < 3:
            continue
        sel = list(idx)
        sel[a] = idx[a] + 1
        hi = u[tuple(sel)]
        sel[a] = idx[a] - 1
        lo = u[tuple(sel)]
        H[a, a] = (hi - 2.0 * u[idx] + lo) / s[a] ** 2
    for a in range(3):
        for b in range(a + 1, 3):
            if u.shape[a] < 3 or u.shape[b] < 3:
                continue
            sel = list(idx)
            vals = {}
            for da, db in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                sel[a], sel[b] = idx[a] + da, idx[b] + db
                vals[(da, db)] = u[tuple(sel)]
            H[a, b] = H[b, a] = (vals[(1, 1)] - vals[(1, -1)] - vals[(-1, 1)] + vals[(-1, -1)]) / (4.0 * s[a] * s[b])
    return H


def iso_curvatures(vol: ScalarVolume, idx, grad_floor: float = GRADIENT_FLOOR) -> CurvaturePair | None:
    """Principal curvatures of the iso-surface through a voxel.

    Returns None where the gradient magnitude is below the floor (degenerate
    iso-surface); callers skip such voxels.
    """
    g = gradient(vol, idx)
    gn = float(np.linalg.norm(g))
    if gn < grad_floor:
        return None
    H = hessian(vol, idx)
    g_h_g = float(g @ H @ g)
    trace = float(np.trace(H))
    adj = np.array([
        [H[1, 1] * H[2, 2] - H[1, 2] ** 2, H[0, 2] * H[1, 2] - H[0, 1] * H[2, 2], H[0, 1] * H[1, 2] - H[0, 2] * H[1, 1]],
        [0.0, H[0, 0] * H[2, 2] - H[0, 2] ** 2, H[0, 1] * H[0, 2] - H[1, 2] * H[0, 0]],
        [0.0, 0.0, H[0, 0] * H[1, 1] - H[0, 1] ** 2],
    ])
    adj[1, 0], adj[2, 0], adj[2, 1] = adj[0, 1], adj[0, 2], adj[1, 2]
    g_adj_g = float(g @ adj @ g)
    mean = (gn * gn * trace - g_h_g) / (2.0 * gn**3)
    gauss = g_adj_g / gn**4
    disc = float(np.sqrt(max(mean * mean - gauss, 0.0)))
    return CurvaturePair(mean - disc, mean + disc)


# ---------------------------------------------------------------------------
# File format: raw float32 stream + sidecar text header
# ---------------------------------------------------------------------------

def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".raw", ".hdr"):
        p = p.with_suffix("")
    return p.with_suffix(".raw"), p.with_suffix(".hdr")


def save_volume(vol: ScalarVolume, path) -> Path:
    """Write ``<path>.raw`` (little-endian float32, x fastest, z slowest) and
    ``<path>.hdr`` (key: value lines). Round-trips bit-exactly."""
    raw_path, hdr_path = _paths(path)
    stream = np.ascontiguousarray(vol.data.transpose(2, 1, 0), dtype="<f4")
    raw_path.write_bytes(stream.tobytes())
    lo, hi = vol.value_range()
    hdr_path.write_text(
        "format: polypflag-raw-v1\n"
        f"dims: {vol.dims[0]} {vol.dims[1]} {vol.dims[2]}\n"
        f"spacing: {vol.spacing[0]:.10g} {vol.spacing[1]:.10g} {vol.spacing[2]:.10g}\n"
        "dtype: float32-le\n"
        "order: x-fastest z-slowest\n"
        f"value_min: {lo:.10g}\n"
        f"value_max: {hi:.10g}\n"
    )
    return raw_path


def load_volume(path) -> ScalarVolume:
    raw_path, hdr_path = _paths(path)
    header = {}
    for line in hdr_path.read_text().splitlines():
        if ":" in line:
            key, val = line.split(":", 1)
            header[key.strip()] = val.strip()
    nx, ny, nz = (int(t) for t in header["dims"].split())
    spacing = tuple(float(t) for t in header["spacing"].split())
    stream = np.frombuffer(raw_path.read_bytes(), dtype="<f4")
    if stream.size != nx * ny * nz:
        raise ValueError(f"raw stream has {stream.size} voxels, header says {nx * ny * nz}")
    data = stream.reshape(nz, ny, nx).transpose(2, 1, 0)
    return ScalarVolume(np.ascontiguousarray(data), spacing)
