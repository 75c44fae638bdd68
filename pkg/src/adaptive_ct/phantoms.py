"""Binary phantom generation and the CTPH corpus container.

Shapes live in a continuous frame centred on the image: x grows to the right,
y grows upward, one unit is one pixel width. Row 0 of the pixel array is the
top of the image. Rotations are counter-clockwise in that frame, which is the
same convention the projector uses for its ray directions.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

KINDS = ("circle", "ellipse", "triangle", "pentagon", "hexagon")
DEFAULT_ROTATION_GRID = tuple(5.0 * i for i in range(36))


class ShapeError(ValueError):
    """Raised when a shape does not fit inside the image."""


class DatasetConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ShapeSpec:
    """One phantom shape.

    ``scale`` is the circumradius as a fraction of the image half-width and
    ``center`` is the offset of the circumcentre from the image centre in
    pixels, as ``(x, y)``.
    """

    kind: str
    rotation_deg: float = 0.0
    scale: float = 0.3
    center: tuple[float, float] = (0.0, 0.0)
    aspect: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"unknown shape kind {self.kind!r}")
        if not 0.0 < self.scale <= 1.0:
            raise ShapeError(f"scale must lie in (0, 1], got {self.scale}")
        if not 0.0 < self.aspect <= 1.0:
            raise ShapeError(f"aspect must lie in (0, 1], got {self.aspect}")

    def rotated(self, delta_deg: float) -> "ShapeSpec":
        return ShapeSpec(self.kind, (self.rotation_deg + delta_deg) % 180.0,
                         self.scale, self.center, self.aspect)


def _polygon_vertices(spec: ShapeSpec, radius: float) -> np.ndarray:
    """Vertices (counter-clockwise) before rotation and shift."""
    if spec.kind == "triangle":
        # right-isosceles: the hypotenuse is a diameter of the circumcircle
        angles = np.deg2rad([0.0, 90.0, 180.0])
    else:
        n = 5 if spec.kind == "pentagon" else 6
        angles = np.deg2rad(90.0 + 360.0 * np.arange(n) / n)
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _rotation(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s], [s, c]])


def shape_vertices(spec: ShapeSpec, image_size: int) -> np.ndarray:
    """Transformed polygon vertices in the centred frame (polygons only)."""
    radius = spec.scale * image_size / 2.0
    verts = _polygon_vertices(spec, radius) @ _rotation(spec.rotation_deg).T
    return verts + np.asarray(spec.center, dtype=float)


def _extent(spec: ShapeSpec, image_size: int) -> tuple[float, float, float, float]:
    radius = spec.scale * image_size / 2.0
    cx, cy = spec.center
    if spec.kind == "circle":
        return cx - radius, cx + radius, cy - radius, cy + radius
    if spec.kind == "ellipse":
        a, b = radius, radius * spec.aspect
        phi = math.radians(spec.rotation_deg)
        hx = math.hypot(a * math.cos(phi), b * math.sin(phi))
        hy = math.hypot(a * math.sin(phi), b * math.cos(phi))
        return cx - hx, cx + hx, cy - hy, cy + hy
    v = shape_vertices(spec, image_size)
    return v[:, 0].min(), v[:, 0].max(), v[:, 1].min(), v[:, 1].max()


def check_bounds(spec: ShapeSpec, image_size: int) -> None:
    half = image_size / 2.0
    xmin, xmax, ymin, ymax = _extent(spec, image_size)
    for name, value, ok in (("x_min", xmin, xmin >= -half), ("x_max", xmax, xmax <= half),
                            ("y_min", ymin, ymin >= -half), ("y_max", ymax, ymax <= half)):
        if not ok:
            raise ShapeError(
                f"{spec.kind} leaves the image: {name}={value:.3f} outside [-{half}, {half}]")


def pixel_centers(image_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Centred (x, y) coordinates of every pixel centre, shape (n, n)."""
    coords = np.arange(image_size) - (image_size - 1) / 2.0
    return np.meshgrid(coords, coords[::-1])


def rasterize_shape(spec: ShapeSpec, image_size: int) -> np.ndarray:
    """Binary image: a pixel is 1 iff its centre lies inside the shape.

    Sharp corners can leave a pixel touching the rest only diagonally; only
    the largest 4-connected component is kept.
    """
    check_bounds(spec, image_size)
    x, y = pixel_centers(image_size)
    x = x - spec.center[0]
    y = y - spec.center[1]
    radius = spec.scale * image_size / 2.0
    if spec.kind == "circle":
        inside = x * x + y * y <= radius * radius
    elif spec.kind == "ellipse":
        phi = math.radians(spec.rotation_deg)
        u = x * math.cos(phi) + y * math.sin(phi)
        v = -x * math.sin(phi) + y * math.cos(phi)
        b = radius * spec.aspect
        inside = (u / radius) ** 2 + (v / b) ** 2 <= 1.0
    else:
        verts = shape_vertices(spec, image_size) - np.asarray(spec.center)
        inside = np.ones_like(x, dtype=bool)
        for p, q in zip(verts, np.roll(verts, -1, axis=0)):
            # left of every counter-clockwise edge
            inside &= (q[0] - p[0]) * (y - p[1]) - (q[1] - p[1]) * (x - p[0]) >= 0.0
    labels, n = ndimage.label(inside)
    if n > 1:
        inside = labels == 1 + np.argmax(np.bincount(labels.ravel())[1:])
    return inside.astype(np.float64)


@dataclass
class DatasetSpec:
    shape_kinds: Sequence[str] = ("ellipse",)
    count: int = 3000
    rotation_grid: Sequence[float] = DEFAULT_ROTATION_GRID
    scale_range: tuple[float, float] = (0.25, 0.40)
    shift_range: tuple[float, float] = (-0.1, 0.1)  # fraction of image size
    image_size: int = 128
    seed: int = 0
    aspect: float = 0.5

    def __post_init__(self):
        if not self.shape_kinds:
            raise DatasetConfigError("shape_kinds must not be empty")
        for kind in self.shape_kinds:
            if kind not in KINDS:
                raise DatasetConfigError(f"unknown shape kind {kind!r}")
        if self.count < 1:
            raise DatasetConfigError(f"count must be >= 1, got {self.count}")
        if len(self.rotation_grid) == 0:
            raise DatasetConfigError("rotation_grid must not be empty")


def phantom_rng(seed: int, index: int) -> np.random.Generator:
    """Per-phantom stream keyed on (seed, index), independent of generation order."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def sample_shape(spec: DatasetSpec, index: int) -> ShapeSpec:
    rng = phantom_rng(spec.seed, index)
    kind = spec.shape_kinds[int(rng.integers(len(spec.shape_kinds)))]
    rotation = float(spec.rotation_grid[int(rng.integers(len(spec.rotation_grid)))])
    scale = float(rng.uniform(*spec.scale_range))
    lo, hi = spec.shift_range
    shift = rng.uniform(lo, hi, size=2) * spec.image_size
    return ShapeSpec(kind, rotation % 180.0, scale, (float(shift[0]), float(shift[1])),
                     spec.aspect)


def generate_dataset(spec: DatasetSpec) -> list[tuple[np.ndarray, ShapeSpec]]:
    out = []
    for i in range(spec.count):
        shape = sample_shape(spec, i)
        out.append((rasterize_shape(shape, spec.image_size), shape))
    return out


def ood_rotation_split(train_grid: Sequence[float]) -> list[float]:
    """Midpoints between consecutive grid rotations, wrapping around at 180 degrees."""
    grid = [float(g) for g in train_grid]
    if not grid:
        raise ValueError("train_grid must not be empty")
    out = []
    for a, b in zip(grid, grid[1:] + [grid[0] + 180.0]):
        out.append(((a + b) / 2.0) % 180.0)
    return out


# ---------------------------------------------------------------------------
# CTPH container
# ---------------------------------------------------------------------------

MAGIC = b"CTPH"
VERSION = 1
_HEADER = struct.Struct("<4sIII")
_RECORD = struct.Struct("<Bddddd")


def save_dataset(path: str | Path, records: Sequence[tuple[np.ndarray, ShapeSpec]],
                 image_size: int) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, image_size, len(records)))
        for image, shape in records:
            if image.shape != (image_size, image_size):
                raise ValueError(f"image shape {image.shape} does not match size {image_size}")
            fh.write(_RECORD.pack(KINDS.index(shape.kind), shape.rotation_deg, shape.scale,
                                  shape.center[0], shape.center[1], shape.aspect))
            fh.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def load_dataset(path: str | Path) -> tuple[int, list[tuple[np.ndarray, ShapeSpec]]]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, n, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    offset = _HEADER.size
    step = _RECORD.size + n * n
    if len(data) != offset + count * step:
        raise ValueError(f"{path}: expected {count} records of {step} bytes")
    records = []
    for _ in range(count):
        code, rot, scale, cx, cy, aspect = _RECORD.unpack_from(data, offset)
        offset += _RECORD.size
        pixels = np.frombuffer(data, dtype=np.uint8, count=n * n, offset=offset)
        offset += n * n
        records.append((pixels.reshape(n, n).astype(np.float64),
                        ShapeSpec(KINDS[code], rot, scale, (cx, cy), aspect)))
    return n, records
