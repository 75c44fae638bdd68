"""Parallel-beam projector with Joseph's interpolation kernel.

Angle convention: at angle ``theta`` the rays travel along
``(cos theta, sin theta)`` in the centred image frame (x right, y up), and the
detector coordinate of a point is ``t = -x sin theta + y cos theta``. So at
0 degrees the rays are horizontal and a projection holds row sums.

The whole 180-angle system matrix is assembled once per geometry and kept as
a CSR matrix; forward and back projection are row slices of that matrix and
its transpose, so the adjoint pair is exact by construction.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

N_ANGLES = 180


class AngleError(ValueError):
    pass


def default_detector_count(image_size: int) -> int:
    """ceil(1.5 n), bumped by one if needed so detector and pixel grids share parity."""
    count = math.ceil(1.5 * image_size)
    if (count - image_size) % 2:
        count += 1
    return count


@dataclass(frozen=True)
class Geometry:
    image_size: int = 128
    detector_count: int | None = None
    detector_spacing: float = 1.0

    def __post_init__(self):
        if self.detector_count is None:
            object.__setattr__(self, "detector_count", default_detector_count(self.image_size))
        if self.detector_count * self.detector_spacing < math.ceil(math.sqrt(2) * self.image_size):
            raise ValueError(
                f"{self.detector_count} detectors of width {self.detector_spacing} do not "
                f"cover a {self.image_size}-pixel image at every angle")

    @property
    def n_pixels(self) -> int:
        return self.image_size * self.image_size

    def detector_positions(self) -> np.ndarray:
        return (np.arange(self.detector_count) - (self.detector_count - 1) / 2.0) * self.detector_spacing


@dataclass
class Measurement:
    angle_deg: int
    values: np.ndarray
    noise_sigma: float = 0.0


def check_angle(angle_deg) -> int:
    if int(angle_deg) != angle_deg:
        raise AngleError(f"angle must be an integer number of degrees, got {angle_deg}")
    angle = int(angle_deg)
    if not 0 <= angle < N_ANGLES:
        raise AngleError(f"angle {angle} outside [0, {N_ANGLES})")
    return angle


def _joseph_rows(geom: Geometry, angle_deg: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(detector index, pixel index, weight) triplets for one angle."""
    n = geom.image_size
    theta = math.radians(angle_deg)
    c, s = math.cos(theta), math.sin(theta)
    t = geom.detector_positions()[:, None]
    steps = np.arange(n) - (n - 1) / 2.0
    if abs(c) >= abs(s):
        # march over columns, interpolate between rows
        x = steps[None, :]
        y = (t + x * s) / c
        frac_index = (n - 1) / 2.0 - y  # fractional row
        fixed = np.broadcast_to(np.arange(n)[None, :], frac_index.shape)
        weight = 1.0 / abs(c)
        by_rows = True
    else:
        # march over rows, interpolate between columns
        y = -steps[None, :]  # row i sits at y = (n-1)/2 - i
        x = (y * c - t) / s
        frac_index = x + (n - 1) / 2.0  # fractional column
        fixed = np.broadcast_to(np.arange(n)[None, :], frac_index.shape)
        weight = 1.0 / abs(s)
        by_rows = False
    lo = np.floor(frac_index).astype(np.int64)
    w_hi = frac_index - lo
    det = np.broadcast_to(np.arange(geom.detector_count)[:, None], frac_index.shape)

    dets, pix, vals = [], [], []
    for idx, w in ((lo, 1.0 - w_hi), (lo + 1, w_hi)):
        ok = (idx >= 0) & (idx < n) & (w > 0.0)
        if by_rows:
            flat = idx[ok] * n + fixed[ok]
        else:
            flat = fixed[ok] * n + idx[ok]
        dets.append(det[ok])
        pix.append(flat)
        vals.append(w[ok] * weight)
    return np.concatenate(dets), np.concatenate(pix), np.concatenate(vals)


@functools.lru_cache(maxsize=8)
def system_matrix(geom: Geometry) -> sp.csr_matrix:
    """All 180 angles stacked: row ``angle * detector_count + d``."""
    rows, cols, vals = [], [], []
    for angle in range(N_ANGLES):
        d, p, w = _joseph_rows(geom, angle)
        rows.append(d + angle * geom.detector_count)
        cols.append(p)
        vals.append(w)
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N_ANGLES * geom.detector_count, geom.n_pixels))
    mat = mat.tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def angle_rows(geom: Geometry, angles) -> sp.csr_matrix:
    """Stacked system-matrix rows for a sequence of angles (repeats allowed)."""
    D = geom.detector_count
    idx = np.concatenate([np.arange(D) + check_angle(a) * D for a in angles])
    return system_matrix(geom)[idx]


def _check_image(image: np.ndarray, geom: Geometry) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (geom.image_size, geom.image_size):
        raise ValueError(f"image shape {image.shape} does not match geometry "
                         f"{geom.image_size}x{geom.image_size}")
    return image


def forward_project(image: np.ndarray, angle_deg: int, geom: Geometry) -> np.ndarray:
    image = _check_image(image, geom)
    return angle_rows(geom, [angle_deg]) @ image.ravel()


def back_project(values: np.ndarray, angle_deg: int, geom: Geometry) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (geom.detector_count,):
        raise ValueError(f"expected {geom.detector_count} detector values, got {values.shape}")
    out = angle_rows(geom, [angle_deg]).T @ values
    return out.reshape(geom.image_size, geom.image_size)


def sinogram(image: np.ndarray, geom: Geometry) -> np.ndarray:
    """Clean projections at all 180 angles, shape (180, detector_count)."""
    image = _check_image(image, geom)
    return (system_matrix(geom) @ image.ravel()).reshape(N_ANGLES, geom.detector_count)


def simulate_measurement(truth: np.ndarray, angle_deg: int, sigma: float,
                         rng: np.random.Generator, geom: Geometry) -> Measurement:
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    angle = check_angle(angle_deg)
    values = forward_project(truth, angle, geom)
    if sigma > 0:
        values = values + rng.normal(0.0, sigma, size=values.shape)
    return Measurement(angle, values, float(sigma))


def noise_sigma_for_level(truth: np.ndarray, level: float, geom: Geometry) -> float:
    """Noise std as ``level`` times the mean absolute clean sinogram value."""
    if level < 0:
        raise ValueError(f"noise level must be >= 0, got {level}")
    if level == 0:
        return 0.0
    return float(level * np.mean(np.abs(sinogram(truth, geom))))
