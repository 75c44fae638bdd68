"""Online one-step actor-critic training.

Per selected angle: sample from the policy, measure and reconstruct, form the
TD error, then one combined backward pass and one Adam step for each
parameter group. The policy group owns the shared encoder and the actor head;
the value group owns the critic head. The encoder gradient carries both the
actor and critic terms of the combined loss.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import agent as ag
from .env import CTEnvironment, RewardMode
from .nn_core import AdamState, adam_step

log = logging.getLogger(__name__)

METRICS_HEADER = ("episode", "return", "final_psnr", "actor_loss", "critic_loss", "entropy")


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, record: "TrainRecord | None" = None):
        super().__init__(message)
        self.record = record


@dataclass
class TrainConfig:
    gamma: float = 0.99
    actor_weight: float = 1.0
    critic_weight: float = 0.5
    entropy_weight: float = 0.01
    lr: float = 1e-4
    weight_decay: float = 1e-5
    critic_lr: float | None = None  # None: same step size as the policy group
    episodes: int = 1000
    horizon: int = 3
    reward_mode: RewardMode = RewardMode.END_TO_END
    seed: int = 0
    mask_repeats: bool = False

    def __post_init__(self):
        self.reward_mode = RewardMode(self.reward_mode)
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        for name in ("actor_weight", "critic_weight", "entropy_weight", "lr", "weight_decay",
                     "critic_lr"):
            if (getattr(self, name) or 0.0) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class TrainRecord:
    episode: int
    ret: float
    final_psnr: float
    actor_loss: float
    critic_loss: float
    entropy: float
    angles: list[int] = field(default_factory=list)

    def csv_row(self) -> str:
        return ",".join([str(self.episode)] + [repr(float(v)) for v in (
            self.ret, self.final_psnr, self.actor_loss, self.critic_loss, self.entropy)])


def td_error(reward: float, gamma: float, v_next: float, v_cur: float, terminal: bool) -> float:
    """r + gamma * V(next) - V(cur), with V(next) forced to 0 on the last step."""
    bootstrap = 0.0 if terminal else gamma * v_next
    return reward + bootstrap - v_cur


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    total = 0.0
    for k, r in enumerate(rewards):
        total += gamma ** k * r
    return total


def policy_distribution(logits: np.ndarray, angle_vec: np.ndarray, mask_repeats: bool = False):
    """Probabilities and log-probabilities, optionally excluding used angles."""
    if mask_repeats and angle_vec.sum() < len(angle_vec):
        logits = np.where(angle_vec > 0, -np.inf, logits)
    z = logits - logits.max()
    e = np.exp(z)
    total = e.sum()
    probs = e / total
    with np.errstate(divide="ignore"):
        logp = z - np.log(total)
    return probs, logp


def entropy(probs: np.ndarray, logp: np.ndarray) -> float:
    with np.errstate(invalid="ignore"):
        return float(-np.sum(np.where(probs > 0, probs * logp, 0.0)))


def loss_gradients(fwd: ag.Forward, probs: np.ndarray, logp: np.ndarray, action: int,
                   delta: float, cfg: TrainConfig) -> tuple[np.ndarray, float, dict]:
    """d(loss)/d(logits) and d(loss)/d(value) for the combined loss.

    loss = actor_weight * (-log pi[a] * delta) + critic_weight * delta**2
           - entropy_weight * H(pi),
    with delta held constant in the actor term and the bootstrap target held
    constant in the critic term.
    """
    H = entropy(probs, logp)
    onehot = np.zeros_like(probs)
    onehot[action] = 1.0
    with np.errstate(invalid="ignore"):
        plogp = np.where(probs > 0, probs * logp, 0.0)
    dlogits = (cfg.actor_weight * delta * (probs - onehot)
               + cfg.entropy_weight * (plogp + probs * H))
    dvalue = -2.0 * cfg.critic_weight * delta
    terms = {"actor_loss": -float(logp[action]) * delta, "critic_loss": delta * delta,
             "entropy": H}
    return dlogits, dvalue, terms


class Trainer:
    """Holds everything a resumable training run needs: weights, optimisers, rng, counter."""

    def __init__(self, images: Sequence[np.ndarray], env: CTEnvironment,
                 agent_cfg: ag.AgentConfig, cfg: TrainConfig,
                 params: dict[str, np.ndarray] | None = None):
        if len(images) == 0:
            raise ValueError("training needs at least one phantom")
        self.images = images
        self.env = env
        self.agent_cfg = agent_cfg
        self.cfg = cfg
        if params is None:
            init_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed, spawn_key=(1,))))
            params = ag.init_params(agent_cfg, init_rng)
        self.params = params
        self.policy_opt = AdamState.for_params(params, ag.encoder_names() + ag.ACTOR_NAMES,
                                               lr=cfg.lr, weight_decay=cfg.weight_decay)
        critic_lr = cfg.lr if cfg.critic_lr is None else cfg.critic_lr
        self.value_opt = AdamState.for_params(params, ag.CRITIC_NAMES,
                                              lr=critic_lr, weight_decay=cfg.weight_decay)
        self.rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed, spawn_key=(2,))))
        self.episode = 0

    def update_step(self, fwd: ag.Forward, probs, logp, action: int, delta: float) -> dict:
        dlogits, dvalue, terms = loss_gradients(fwd, probs, logp, action, delta, self.cfg)
        grads = ag.backward(fwd, dlogits, dvalue, self.params, self.agent_cfg)
        bad = [k for k, g in grads.items() if not np.isfinite(g.sum())]
        if bad or not all(math.isfinite(v) for v in terms.values()):
            raise TrainingAborted(f"non-finite loss or gradient in {bad or list(terms)}")
        adam_step(self.params, grads, self.policy_opt)
        adam_step(self.params, grads, self.value_opt)
        return terms

    def run_episode(self) -> TrainRecord:
        cfg, acfg = self.cfg, self.agent_cfg
        truth = self.images[int(self.rng.integers(len(self.images)))]
        state = self.env.reset(truth, cfg.horizon)
        rewards, sums = [], {"actor_loss": 0.0, "critic_loss": 0.0, "entropy": 0.0}
        done = False
        while not done:
            fwd = ag.forward(state.recon, state.angle_vec, self.params, acfg)
            probs, logp = policy_distribution(fwd.logits, state.angle_vec, cfg.mask_repeats)
            action = ag.sample_action(probs, self.rng)
            state_next, reward, done = self.env.step(state, action, self.rng)
            v_next = 0.0 if done else ag.critic_forward(
                state_next.recon, state_next.angle_vec, self.params, acfg)
            delta = td_error(reward, cfg.gamma, v_next, fwd.value, done)
            try:
                terms = self.update_step(fwd, probs, logp, action, delta)
            except TrainingAborted as exc:
                exc.record = TrainRecord(self.episode, float("nan"), float("nan"),
                                         float("nan"), float("nan"), float("nan"), state_next.angles)
                raise
            for k in sums:
                sums[k] += terms[k]
            rewards.append(reward)
            state = state_next
        m = cfg.horizon
        rec = TrainRecord(self.episode, float(sum(rewards)), state.psnr_curve[-1],
                          sums["actor_loss"] / m, sums["critic_loss"] / m, sums["entropy"] / m,
                          state.angles)
        self.episode += 1
        return rec

    def train(self, episodes: int, on_record: Callable[[TrainRecord], None] | None = None
              ) -> list[TrainRecord]:
        records = []
        for _ in range(episodes):
            rec = self.run_episode()
            records.append(rec)
            if on_record is not None:
                on_record(rec)
            if rec.episode % 500 == 0:
                log.info("episode %d return %.3f psnr %.3f entropy %.3f",
                         rec.episode, rec.ret, rec.final_psnr, rec.entropy)
        return records


def train(images: Sequence[np.ndarray], env: CTEnvironment, agent_cfg: ag.AgentConfig,
          cfg: TrainConfig, params: dict | None = None) -> tuple[dict, list[TrainRecord]]:
    trainer = Trainer(images, env, agent_cfg, cfg, params)
    records = trainer.train(cfg.episodes)
    return trainer.params, records
