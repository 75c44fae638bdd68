"""Sequential angle-selection episodes over one hidden phantom."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from typing import IO

import numpy as np

from .projector import N_ANGLES, Geometry, Measurement, check_angle, noise_sigma_for_level, simulate_measurement
from .recon import ReconConfig, psnr, sirt_reconstruct


class RewardMode(str, enum.Enum):
    END_TO_END = "end_to_end"
    INCREMENTAL = "incremental"


class EpisodeFinished(RuntimeError):
    pass


@dataclass
class EpisodeState:
    truth: np.ndarray
    recon: np.ndarray
    angle_vec: np.ndarray
    measurements: list[Measurement]
    step_index: int
    horizon: int
    sigma: float
    psnr_curve: list[float] = field(default_factory=list)

    @property
    def done(self) -> bool:
        return self.step_index >= self.horizon

    @property
    def angles(self) -> list[int]:
        return [m.angle_deg for m in self.measurements]


@dataclass
class CTEnvironment:
    geom: Geometry
    recon: ReconConfig = ReconConfig()
    reward_mode: RewardMode = RewardMode.END_TO_END
    noise_level: float = 0.0
    log: IO[str] | None = None

    def reset(self, truth: np.ndarray, horizon: int) -> EpisodeState:
        if horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {horizon}")
        truth = np.asarray(truth, dtype=np.float64)
        zero = np.zeros_like(truth)
        return EpisodeState(
            truth=truth, recon=zero, angle_vec=np.zeros(N_ANGLES), measurements=[],
            step_index=0, horizon=horizon,
            sigma=noise_sigma_for_level(truth, self.noise_level, self.geom),
            psnr_curve=[psnr(zero, truth)])

    def step(self, state: EpisodeState, angle_deg: int,
             rng: np.random.Generator | None) -> tuple[EpisodeState, float, bool]:
        """Measure at ``angle_deg``, rebuild the reconstruction and score it.

        Repeated angles are allowed and add a second measurement row.
        """
        if state.done:
            raise EpisodeFinished(f"episode already has {state.horizon} measurements")
        angle = check_angle(angle_deg)
        meas = simulate_measurement(state.truth, angle, state.sigma, rng, self.geom)
        measurements = state.measurements + [meas]
        init = state.recon if self.recon.warm_start else None
        recon = sirt_reconstruct(measurements, self.geom, self.recon, init)
        angle_vec = state.angle_vec.copy()
        angle_vec[angle] = 1.0
        quality = psnr(recon, state.truth)
        new = replace(state, recon=recon, angle_vec=angle_vec, measurements=measurements,
                      step_index=state.step_index + 1,
                      psnr_curve=state.psnr_curve + [quality])
        done = new.done
        if self.reward_mode is RewardMode.END_TO_END:
            reward = quality if done else 0.0
        else:
            reward = quality - state.psnr_curve[-1]
        if self.log is not None:
            self.log.write(json.dumps({"step": new.step_index, "angle": angle,
                                       "reward": reward, "psnr": quality}) + "\n")
        return new, reward, done
