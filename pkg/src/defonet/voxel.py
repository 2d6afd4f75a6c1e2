"""Voxel grids, height fields, orthographic depth views and grid metrics.

Array convention: occupancy is indexed ``[i, j, k]`` along world ``x, y, z``
with ``z`` pointing up. Voxel ``(i, j, k)`` spans
``origin + [i, i+1] * pitch`` (and likewise for ``j``, ``k``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_PITCH = 0.022

#: Depth value for pixels whose ray hits nothing.
NO_RETURN = np.inf

_AXES = {"x": 0, "y": 1, "z": 2}
_GRID_MAGIC = b"VOXG"
_GRID_VERSION = 1
_GRID_HEADER = struct.Struct("<4sHHf4x")
_DEPTH_MAGIC = b"DPTH"
_DEPTH_VERSION = 1
# magic, version, width, height, view axis, view sign, pitch, origin xyz
_DEPTH_HEADER = struct.Struct("<4sHHHBbffff")


def f32_value(x: float) -> float:
    """The shortest decimal that rounds to the same float32 (undoes f32 storage noise)."""
    return float(str(np.float32(x)))


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Resolution, pitch and world placement of a cubic voxel lattice."""

    resolution: int
    pitch: float = DEFAULT_PITCH
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not _is_power_of_two(self.resolution) or self.resolution < 8:
            raise ValueError(f"resolution must be a power of two >= 8, got {self.resolution}")
        if not self.pitch > 0:
            raise ValueError(f"pitch must be positive, got {self.pitch}")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))

    @property
    def extent(self) -> float:
        return self.resolution * self.pitch

    def bounds(self, axis: int) -> tuple[float, float]:
        lo = self.origin[axis]
        return lo, lo + self.extent

    def edges(self, axis: int) -> np.ndarray:
        """World coordinates of the ``N + 1`` voxel boundaries along ``axis``."""
        return self.origin[axis] + np.arange(self.resolution + 1) * self.pitch

    def centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.resolution) + 0.5) * self.pitch


@dataclass
class VoxelGrid:
    occupancy: np.ndarray
    pitch: float = DEFAULT_PITCH
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        occ = np.asarray(self.occupancy)
        if occ.ndim != 3 or len(set(occ.shape)) != 1:
            raise ValueError(f"occupancy must be an N×N×N cube, got shape {occ.shape}")
        if not np.isin(occ, (0, 1)).all():
            raise ValueError("occupancy values must be exactly 0 or 1")
        self.occupancy = occ.astype(np.uint8)
        # validates resolution and pitch
        self.spec = GridSpec(occ.shape[0], float(self.pitch), self.origin)
        self.pitch = self.spec.pitch
        self.origin = self.spec.origin

    @property
    def resolution(self) -> int:
        return self.occupancy.shape[0]

    @classmethod
    def empty(cls, spec: GridSpec) -> "VoxelGrid":
        n = spec.resolution
        return cls(np.zeros((n, n, n), np.uint8), spec.pitch, spec.origin)

    def __eq__(self, other):
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return (self.spec == other.spec) and np.array_equal(self.occupancy, other.occupancy)

    def to_bytes(self) -> bytes:
        header = _GRID_HEADER.pack(_GRID_MAGIC, _GRID_VERSION, self.resolution, self.pitch)
        return header + pack_bits(self.occupancy)

    @classmethod
    def from_bytes(cls, data: bytes) -> "VoxelGrid":
        if len(data) < _GRID_HEADER.size:
            raise ValueError("truncated grid header")
        magic, version, n, pitch = _GRID_HEADER.unpack_from(data)
        if magic != _GRID_MAGIC:
            raise ValueError(f"bad grid magic {magic!r}")
        if version != _GRID_VERSION:
            raise ValueError(f"unsupported grid version {version}")
        occ = unpack_bits(data[_GRID_HEADER.size:], n)
        return cls(occ, f32_value(pitch))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "VoxelGrid":
        return cls.from_bytes(Path(path).read_bytes())


def packed_size(n: int) -> int:
    """Bytes used by one packed N³ grid (no header)."""
    return n * ((n * n + 7) // 8)


def pack_bits(occupancy: np.ndarray) -> bytes:
    """Pack an N³ occupancy cube, x fastest, then y, then z; whole bytes per z-slice."""
    occ = np.asarray(occupancy, dtype=np.uint8)
    n = occ.shape[0]
    # [k, j, i] in C order makes i the fastest-varying index
    slices = occ.transpose(2, 1, 0).reshape(n, n * n)
    return np.packbits(slices, axis=1, bitorder="little").tobytes()


def unpack_bits(data: bytes, n: int) -> np.ndarray:
    slice_bytes = (n * n + 7) // 8
    if len(data) < n * slice_bytes:
        raise ValueError(f"need {n * slice_bytes} bytes of grid data, got {len(data)}")
    raw = np.frombuffer(data[: n * slice_bytes], dtype=np.uint8).reshape(n, slice_bytes)
    bits = np.unpackbits(raw, axis=1, count=n * n, bitorder="little")
    return np.ascontiguousarray(bits.reshape(n, n, n).transpose(2, 1, 0))


@dataclass
class HeightField:
    """Top surface ``z`` and solid thickness below it on a regular x-y lattice.

    Cell ``(a, b)`` covers ``x0 + [a, a+1] * dx`` by ``y0 + [b, b+1] * dy``.
    """

    z: np.ndarray
    support: np.ndarray
    x0: float = 0.0
    y0: float = 0.0
    dx: float = DEFAULT_PITCH
    dy: float = DEFAULT_PITCH

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.support = np.asarray(self.support, dtype=float)
        if self.z.ndim != 2 or self.z.shape != self.support.shape:
            raise ValueError("z and support must be matching 2-D arrays")
        if not np.isfinite(self.z).all():
            raise ValueError("height field has non-finite heights")
        if (self.support < 0).any():
            raise ValueError("thickness must be non-negative")

    @property
    def nx(self) -> int:
        return self.z.shape[0]

    @property
    def ny(self) -> int:
        return self.z.shape[1]

    @classmethod
    def on_grid(cls, spec: GridSpec, z, support) -> "HeightField":
        """A field whose cells coincide with the grid's columns."""
        n = spec.resolution
        z = np.broadcast_to(np.asarray(z, dtype=float), (n, n)).copy()
        support = np.broadcast_to(np.asarray(support, dtype=float), (n, n)).copy()
        return cls(z, support, spec.origin[0], spec.origin[1], spec.pitch, spec.pitch)


def voxelize(hf: HeightField, spec: GridSpec) -> VoxelGrid:
    """Rasterize the solid slabs ``[z - thickness, z]`` of a height field.

    Each grid column samples the field at its centre; voxel ``k`` is set when
    its z-interval overlaps the slab with positive length.
    """
    tol = 1e-9 * spec.pitch
    n = spec.resolution
    x_lo, x_hi = spec.bounds(0)
    y_lo, y_hi = spec.bounds(1)
    if hf.x0 < x_lo - tol or hf.x0 + hf.nx * hf.dx > x_hi + tol:
        raise ValueError("height field overflows the grid along x")
    if hf.y0 < y_lo - tol or hf.y0 + hf.ny * hf.dy > y_hi + tol:
        raise ValueError("height field overflows the grid along y")
    solid = hf.support > 0
    if solid.any():
        z_lo, z_hi = spec.bounds(2)
        if (hf.z[solid] > z_hi + tol).any() or ((hf.z - hf.support)[solid] < z_lo - tol).any():
            raise ValueError("height field overflows the grid along z")

    cx, cy = spec.centers(0), spec.centers(1)
    a = np.floor((cx - hf.x0) / hf.dx).astype(int)
    b = np.floor((cy - hf.y0) / hf.dy).astype(int)
    in_x = (a >= 0) & (a < hf.nx)
    in_y = (b >= 0) & (b < hf.ny)
    top = np.full((n, n), -np.inf)
    thick = np.zeros((n, n))
    ii, jj = np.ix_(np.flatnonzero(in_x), np.flatnonzero(in_y))
    top[ii, jj] = hf.z[a[ii], b[jj]]
    thick[ii, jj] = hf.support[a[ii], b[jj]]
    bottom = top - thick

    edges = spec.edges(2)
    lo, hi = edges[:-1], edges[1:]
    overlap = np.minimum(hi, top[..., None]) - np.maximum(lo, bottom[..., None])
    occ = (overlap > tol) & (thick[..., None] > 0)
    return VoxelGrid(occ.astype(np.uint8), spec.pitch, spec.origin)


@dataclass(frozen=True)
class OrthoCamera:
    """Axis-aligned orthographic camera covering one face of a grid.

    ``direction`` is the viewing direction, e.g. ``"+y"`` looks along +y from
    the grid's min-y face. Pixels coincide with the face's voxel columns.
    """

    direction: str
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    pitch: float = DEFAULT_PITCH
    size: int = 64

    def __post_init__(self):
        if len(self.direction) != 2 or self.direction[0] not in "+-" or self.direction[1] not in _AXES:
            raise ValueError(f"view direction must be one of ±x, ±y, ±z, got {self.direction!r}")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))

    @property
    def axis(self) -> int:
        return _AXES[self.direction[1]]

    @property
    def sign(self) -> int:
        return 1 if self.direction[0] == "+" else -1

    @classmethod
    def facing(cls, spec: GridSpec, direction: str) -> "OrthoCamera":
        return cls(direction, spec.origin, spec.pitch, spec.resolution)


@dataclass
class DepthImage:
    """Range raster indexed ``depth[u, v]`` over the two axes orthogonal to the view.

    ``u`` and ``v`` are the remaining world axes in ascending order.
    """

    depth: np.ndarray
    camera: OrthoCamera = field(default_factory=lambda: OrthoCamera("+y"))

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float32)
        finite = np.isfinite(self.depth)
        if (self.depth[finite] < 0).any():
            raise ValueError("depths must be non-negative")
        if np.isnan(self.depth).any():
            raise ValueError("use NO_RETURN (inf) for missing returns, not NaN")

    @property
    def width(self) -> int:
        return self.depth.shape[0]

    @property
    def height(self) -> int:
        return self.depth.shape[1]

    def to_bytes(self) -> bytes:
        cam = self.camera
        header = _DEPTH_HEADER.pack(
            _DEPTH_MAGIC, _DEPTH_VERSION, self.width, self.height,
            cam.axis, cam.sign, cam.pitch, *cam.origin,
        )
        # rows along v, u fastest
        return header + np.ascontiguousarray(self.depth.T).astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "DepthImage":
        if len(data) < _DEPTH_HEADER.size:
            raise ValueError("truncated depth header")
        magic, version, w, h, axis, sign, pitch, ox, oy, oz = _DEPTH_HEADER.unpack_from(data)
        if magic != _DEPTH_MAGIC or version != _DEPTH_VERSION:
            raise ValueError("not a depth raster (bad magic or version)")
        if w != h or axis > 2 or sign not in (-1, 1):
            raise ValueError("malformed depth header")
        body = data[_DEPTH_HEADER.size:]
        if len(body) != 4 * w * h:
            raise ValueError(f"expected {4 * w * h} raster bytes, got {len(body)}")
        raster = np.frombuffer(body, dtype="<f4").reshape(h, w).T
        direction = ("+" if sign > 0 else "-") + "xyz"[axis]
        origin = tuple(f32_value(v) for v in (ox, oy, oz))
        return cls(raster.copy(), OrthoCamera(direction, origin, f32_value(pitch), w))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "DepthImage":
        return cls.from_bytes(Path(path).read_bytes())


def _along_view(occ: np.ndarray, cam: OrthoCamera) -> np.ndarray:
    """View occupancy as [u, v, depth-order]."""
    arr = np.moveaxis(occ, cam.axis, -1)
    return arr[..., ::-1] if cam.sign < 0 else arr


def render_depth(grid: VoxelGrid, view: OrthoCamera | str) -> DepthImage:
    """Ray-cast each face pixel to the first occupied voxel."""
    cam = OrthoCamera.facing(grid.spec, view) if isinstance(view, str) else view
    if cam.size != grid.resolution:
        raise ValueError("camera size does not match grid resolution")
    arr = _along_view(grid.occupancy, cam)
    hit = arr.any(axis=-1)
    first = arr.argmax(axis=-1)
    depth = np.where(hit, first * grid.pitch, NO_RETURN).astype(np.float32)
    return DepthImage(depth, cam)


def depth_to_grid(img: DepthImage, spec: GridSpec) -> VoxelGrid:
    """Mark the voxel pierced at each pixel's depth (a 2.5-D shell)."""
    cam = img.camera
    if cam.size != spec.resolution or img.depth.shape != (spec.resolution, spec.resolution):
        raise ValueError("depth image size does not match the grid resolution")
    if not np.isclose(cam.pitch, spec.pitch, rtol=1e-6) or not np.allclose(cam.origin, spec.origin):
        raise ValueError("depth image camera extent does not match the grid bounds")
    n = spec.resolution
    hit = np.isfinite(img.depth)
    idx = np.rint(np.where(hit, img.depth, 0.0) / spec.pitch).astype(int)
    if (idx[hit] >= n).any():
        raise ValueError("depth beyond the far face of the grid")
    arr = np.zeros((n, n, n), np.uint8)
    u, v = np.nonzero(hit)
    arr[u, v, idx[hit]] = 1
    if cam.sign < 0:
        arr = arr[..., ::-1]
    occ = np.moveaxis(arr, -1, cam.axis)
    return VoxelGrid(np.ascontiguousarray(occ), spec.pitch, spec.origin)


def visible_shell(grid: VoxelGrid, view: OrthoCamera | str) -> VoxelGrid:
    """The voxels a camera sees first along each ray."""
    return depth_to_grid(render_depth(grid, view), grid.spec)


def column_bottom(occ: np.ndarray) -> np.ndarray:
    """Lowest occupied k per (i, j) column; -1 where the column is empty."""
    occ = np.asarray(occ)
    has = occ.any(axis=2)
    return np.where(has, occ.argmax(axis=2), -1)


def column_top(occ: np.ndarray) -> np.ndarray:
    """Highest occupied k per (i, j) column; -1 where the column is empty."""
    occ = np.asarray(occ)
    n = occ.shape[2]
    has = occ.any(axis=2)
    return np.where(has, n - 1 - occ[:, :, ::-1].argmax(axis=2), -1)


def profile_bottom(occ: np.ndarray) -> np.ndarray:
    """Lowest occupied k per x-slice (over all y); -1 where the slice is empty."""
    b = column_bottom(occ).astype(float)
    b[b < 0] = np.inf
    low = b.min(axis=1)
    return np.where(np.isfinite(low), low, -1).astype(int)


def profile_top(occ: np.ndarray) -> np.ndarray:
    """Highest occupied k per x-slice (over all y); -1 where the slice is empty."""
    return column_top(occ).max(axis=1)


@dataclass
class GridMetrics:
    iou: float
    max_deflection_error_voxels: float
    rmse_deflection_cm: float
    column_errors_cm: np.ndarray
    n_columns: int
    n_excluded: int


def grid_metrics(pred: VoxelGrid, truth: VoxelGrid, probe_columns=None) -> GridMetrics:
    """Compare a predicted grid against a reference.

    Column deflection is the lowest occupied voxel index. ``probe_columns`` is
    an optional sequence of ``(i, j)``; by default every column occupied in
    either grid is probed. Probed columns empty in either grid are excluded
    from the RMSE and counted in ``n_excluded``.
    """
    if pred.resolution != truth.resolution or not np.isclose(pred.pitch, truth.pitch):
        raise ValueError(
            f"grid mismatch: {pred.resolution}@{pred.pitch} vs {truth.resolution}@{truth.pitch}"
        )
    p, t = pred.occupancy.astype(bool), truth.occupancy.astype(bool)
    union = np.logical_or(p, t).sum()
    iou = 1.0 if union == 0 else float(np.logical_and(p, t).sum() / union)

    bp, bt = column_bottom(p), column_bottom(t)
    if probe_columns is None:
        probes = np.argwhere((bp >= 0) | (bt >= 0))
    else:
        probes = np.asarray(list(probe_columns), dtype=int).reshape(-1, 2)
    if len(probes):
        pi, pj = probes[:, 0], probes[:, 1]
        ok = (bp[pi, pj] >= 0) & (bt[pi, pj] >= 0)
        errs = (bp[pi, pj][ok] - bt[pi, pj][ok]) * pred.pitch * 100.0
    else:
        ok = np.zeros(0, bool)
        errs = np.zeros(0)
    rmse = float(np.sqrt(np.mean(errs**2))) if errs.size else float("nan")

    if p.any() and t.any():
        max_err = float(abs(bp[bp >= 0].min() - bt[bt >= 0].min()))
    elif not p.any() and not t.any():
        max_err = 0.0
    else:
        max_err = float("nan")
    return GridMetrics(iou, max_err, rmse, errs, int(ok.sum()), int((~ok).sum()))
