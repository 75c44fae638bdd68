"""Baseline policies, rollouts without learning, and evaluation reports."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import agent as ag
from .env import CTEnvironment, EpisodeState
from .phantoms import ShapeSpec, shape_vertices
from .projector import N_ANGLES
from .trainer import policy_distribution

UNDEFINED = "undefined"


def equidistant_angles(M: int, offset: int = 0) -> list[int]:
    """floor(i * 180 / M) + offset for i = 0..M-1, wrapped into [0, 180)."""
    if not 1 <= M <= N_ANGLES:
        raise ValueError(f"number of angles must lie in [1, {N_ANGLES}], got {M}")
    return [(i * N_ANGLES // M + offset) % N_ANGLES for i in range(M)]


@dataclass
class EquidistantPolicy:
    offset: int = 0

    @property
    def id(self) -> str:
        return "equidistant" if self.offset == 0 else f"equidistant+{self.offset}"

    def choose(self, state: EpisodeState, rng) -> int:
        return equidistant_angles(state.horizon, self.offset)[state.step_index]


@dataclass
class RandomPolicy:
    id: str = "random"

    def choose(self, state: EpisodeState, rng) -> int:
        return int(rng.integers(N_ANGLES))


@dataclass
class LearnedPolicy:
    params: dict
    agent_cfg: ag.AgentConfig
    greedy: bool = True
    mask_repeats: bool = False

    @property
    def id(self) -> str:
        return "learned_greedy" if self.greedy else "learned_sampled"

    def probabilities(self, state: EpisodeState) -> np.ndarray:
        fwd = ag.forward(state.recon, state.angle_vec, self.params, self.agent_cfg, heads=("actor",))
        probs, _ = policy_distribution(fwd.logits, state.angle_vec, self.mask_repeats)
        return probs

    def choose(self, state: EpisodeState, rng) -> int:
        return ag.sample_action(self.probabilities(state), rng, greedy=self.greedy)


def episode_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def run_episode(policy, truth: np.ndarray, env: CTEnvironment, horizon: int,
                rng: np.random.Generator) -> tuple[list[int], list[float]]:
    """Roll one episode out without learning; returns (angles, psnr curve)."""
    state = env.reset(truth, horizon)
    done = False
    while not done:
        angle = policy.choose(state, rng)
        state, _, done = env.step(state, angle, rng)
    return state.angles, state.psnr_curve


@dataclass
class EvalReport:
    policy_id: str
    dataset_id: str
    horizon: int
    final_psnr: list[float]
    angles: list[list[int]]
    psnr_curves: list[list[float]]
    mean: float = field(init=False)
    std: float = field(init=False)

    def __post_init__(self):
        values = np.asarray(self.final_psnr, dtype=np.float64)
        self.mean = float(values.mean()) if values.size else float("nan")
        self.std = float(values.std()) if values.size else float("nan")

    def angle_histograms(self) -> np.ndarray:
        """Counts per (step, angle), shape (horizon, 180)."""
        hist = np.zeros((self.horizon, N_ANGLES), dtype=np.int64)
        for seq in self.angles:
            for k, a in enumerate(seq):
                hist[k, a] += 1
        return hist

    def cell(self) -> str:
        return f"{self.mean:.2f} ± {self.std:.2f}"

    def summary_line(self) -> str:
        return f"{self.policy_id}, {self.horizon}, {self.mean!r}, {self.std!r}"


def _evaluate_one(args):
    policy, truth, env, horizon, seed, index = args
    return run_episode(policy, truth, env, horizon, episode_rng(seed, index))


def evaluate(policy, images: Sequence[np.ndarray], env: CTEnvironment, horizon: int,
             seed: int = 0, dataset_id: str = "dataset", workers: int = 1) -> EvalReport:
    """One episode per phantom; phantom ``i`` always uses the rng stream (seed, i)."""
    if len(images) == 0:
        raise ValueError("evaluation needs at least one phantom")
    jobs = [(policy, img, env, horizon, seed, i) for i, img in enumerate(images)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_evaluate_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_evaluate_one(job) for job in jobs]
    angles = [r[0] for r in results]
    curves = [r[1] for r in results]
    return EvalReport(policy.id, dataset_id, horizon, [c[-1] for c in curves], angles, curves)


def best_equidistant_offset(images, env: CTEnvironment, horizon: int,
                            offsets: Sequence[int] = tuple(range(0, 180, 5)),
                            seed: int = 0) -> tuple[int, EvalReport]:
    """Equidistant baseline with the offset that scores best on ``images``."""
    best = None
    for off in offsets:
        rep = evaluate(EquidistantPolicy(off), images, env, horizon, seed)
        if best is None or rep.mean > best[1].mean:
            best = (off, rep)
    return best


# ---------------------------------------------------------------------------
# angle concentration around informative directions
# ---------------------------------------------------------------------------

def circular_distance(a: float, b: float, period: float = 180.0) -> float:
    d = abs(a - b) % period
    return min(d, period - d)


def informative_angles(shape: ShapeSpec, image_size: int = 128) -> list[float] | None:
    """Ray directions tangent to the shape's dominant edges, or None for circles.

    Angles follow the projector convention (ray direction), so the ellipse
    major axis and polygon edge directions can be compared to actions directly.
    """
    if shape.kind == "circle":
        return None
    if shape.kind == "ellipse":
        return [shape.rotation_deg % 180.0]
    verts = shape_vertices(shape, image_size)
    edges = np.roll(verts, -1, axis=0) - verts
    return sorted({round(math.degrees(math.atan2(e[1], e[0])) % 180.0, 9) for e in edges})


def angle_concentration(angles: Sequence[Sequence[int]], shapes: Sequence[ShapeSpec],
                        first_step: int = 2) -> dict:
    """Median over phantoms of the smallest circular distance between the
    angles chosen from step ``first_step`` (1-based) on and the shape's
    informative angles."""
    dists = []
    for seq, shape in zip(angles, shapes):
        targets = informative_angles(shape)
        if targets is None:
            dists.append(None)
            continue
        chosen = list(seq)[first_step - 1:]
        if not chosen:
            dists.append(None)
            continue
        dists.append(min(circular_distance(a, t) for a in chosen for t in targets))
    defined = [d for d in dists if d is not None]
    median = float(np.median(defined)) if defined else UNDEFINED
    return {"median": median, "per_phantom": dists}


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------

REPORT_HEADER = ("phantom", "final_psnr", "angles")
SUMMARY_HEADER = "policy, M, mean_psnr, std_psnr"


def write_report_csv(report: EvalReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for i, (p, seq) in enumerate(zip(report.final_psnr, report.angles)):
            w.writerow([i, repr(float(p)), " ".join(str(a) for a in seq)])


def write_summary(reports: Sequence[EvalReport], path: str | Path) -> str:
    lines = [SUMMARY_HEADER] + [r.summary_line() for r in reports]
    text = "\n".join(lines) + "\n"
    Path(path).write_text(text)
    return text
