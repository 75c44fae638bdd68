"""Box-constrained SIRT and the PSNR metric."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .projector import Geometry, Measurement, angle_rows

PSNR_CAP = 100.0


@dataclass(frozen=True)
class ReconConfig:
    iterations: int = 150
    box_lo: float = 0.0
    box_hi: float = 1.0
    warm_start: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not self.box_lo < self.box_hi:
            raise ValueError(f"empty box [{self.box_lo}, {self.box_hi}]")


def _inverse_or_zero(sums: np.ndarray) -> np.ndarray:
    out = np.zeros_like(sums)
    nz = sums > 0
    out[nz] = 1.0 / sums[nz]
    return out


class SirtOperator:
    """System rows plus SIRT row/column scalings for one angle sequence."""

    def __init__(self, angles: Sequence[int], geom: Geometry):
        self.angles = tuple(int(a) for a in angles)
        self.geom = geom
        self.A = angle_rows(geom, self.angles)
        self.AT = self.A.T.tocsr()
        self.row_scale = _inverse_or_zero(np.asarray(self.A.sum(axis=1)).ravel())
        self.col_scale = _inverse_or_zero(np.asarray(self.A.sum(axis=0)).ravel())

    def run(self, y: np.ndarray, cfg: ReconConfig, init: np.ndarray | None = None) -> np.ndarray:
        A, AT, R, C = self.A, self.AT, self.row_scale, self.col_scale
        if init is None:
            x = np.zeros(A.shape[1])
        else:
            x = np.array(init, dtype=np.float64).ravel()
        for _ in range(cfg.iterations):
            x += C * (AT @ (R * (y - A @ x)))
            np.clip(x, cfg.box_lo, cfg.box_hi, out=x)
        return x.reshape(self.geom.image_size, self.geom.image_size)


def sirt_reconstruct(measurements: Sequence[Measurement], geom: Geometry,
                     cfg: ReconConfig = ReconConfig(),
                     init: np.ndarray | None = None) -> np.ndarray:
    """x <- clip(x + C A^T R (y - A x)) for exactly ``cfg.iterations`` sweeps.

    ``init`` defaults to the zero image (cold start).
    """
    if not measurements:
        raise ValueError("SIRT needs at least one measurement")
    if init is not None:
        init = np.asarray(init, dtype=np.float64)
        if init.min() < cfg.box_lo or init.max() > cfg.box_hi:
            raise ValueError("initial image lies outside the box")
    op = SirtOperator([m.angle_deg for m in measurements], geom)
    y = np.concatenate([np.asarray(m.values, dtype=np.float64) for m in measurements])
    return op.run(y, cfg, init)


def relative_residual(measurements: Sequence[Measurement], image: np.ndarray,
                      geom: Geometry) -> float:
    A = angle_rows(geom, [m.angle_deg for m in measurements])
    y = np.concatenate([m.values for m in measurements])
    return float(np.linalg.norm(y - A @ image.ravel()) / np.linalg.norm(y))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB with peak value 1; identical images give the 100 dB cap."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))
