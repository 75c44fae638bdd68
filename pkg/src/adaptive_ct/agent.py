"""Shared-encoder actor-critic network.

encoder: 3 x (conv3x3 -> group norm -> leaky ReLU -> 2x2 max pool), channels 1->8->16->32
actor:   [code, angle flags] -> dense(256) -> leaky ReLU -> dense(180) -> softmax
critic:  [code, angle flags] -> dense(256) -> leaky ReLU -> dense(1)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn_core as nn
from .projector import N_ANGLES

ENCODER_CHANNELS = (1, 8, 16, 32)


@dataclass(frozen=True)
class AgentConfig:
    image_size: int = 128
    hidden: int = 256
    groups: int = 4
    slope: float = 0.01
    actor_out_scale: float = 0.01

    @property
    def code_length(self) -> int:
        return (self.image_size // 8) ** 2 * ENCODER_CHANNELS[-1]


def encoder_names() -> list[str]:
    names = []
    for i in range(1, 4):
        names += [f"enc{i}.w", f"enc{i}.b", f"enc{i}.gamma", f"enc{i}.beta"]
    return names


ACTOR_NAMES = ["actor.fc1.w", "actor.fc1.b", "actor.fc2.w", "actor.fc2.b"]
CRITIC_NAMES = ["critic.fc1.w", "critic.fc1.b", "critic.fc2.w", "critic.fc2.b"]


def init_params(cfg: AgentConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    if cfg.image_size % 8:
        raise ValueError(f"image size {cfg.image_size} is not divisible by 8")
    p = {}
    for i in range(1, 4):
        cin, cout = ENCODER_CHANNELS[i - 1], ENCODER_CHANNELS[i]
        p[f"enc{i}.w"] = nn.kaiming_uniform(rng, (cout, cin, 3, 3), cin * 9, cfg.slope)
        p[f"enc{i}.b"] = np.zeros(cout)
        p[f"enc{i}.gamma"] = np.ones(cout)
        p[f"enc{i}.beta"] = np.zeros(cout)
    n_in = cfg.code_length + N_ANGLES
    for head, n_out in (("actor", N_ANGLES), ("critic", 1)):
        p[f"{head}.fc1.w"] = nn.kaiming_uniform(rng, (cfg.hidden, n_in), n_in, cfg.slope)
        p[f"{head}.fc1.b"] = np.zeros(cfg.hidden)
        p[f"{head}.fc2.w"] = nn.kaiming_uniform(rng, (n_out, cfg.hidden), cfg.hidden, cfg.slope)
        p[f"{head}.fc2.b"] = np.zeros(n_out)
    # small output layer keeps the initial policy close to uniform
    p["actor.fc2.w"] *= cfg.actor_out_scale
    return p


@dataclass
class Forward:
    logits: np.ndarray
    probs: np.ndarray
    value: float
    cache: dict


def _check_inputs(recon: np.ndarray, angle_vec: np.ndarray, cfg: AgentConfig):
    if recon.shape != (cfg.image_size, cfg.image_size):
        raise ValueError(f"reconstruction shape {recon.shape} does not match the "
                         f"configured {cfg.image_size}x{cfg.image_size}")
    if angle_vec.shape != (N_ANGLES,):
        raise ValueError(f"angle vector must have {N_ANGLES} entries, got {angle_vec.shape}")


def encode(recon: np.ndarray, params: dict, cfg: AgentConfig, cache: dict | None = None) -> np.ndarray:
    recon = np.asarray(recon, dtype=np.float64)
    if recon.shape != (cfg.image_size, cfg.image_size):
        raise ValueError(f"reconstruction shape {recon.shape} does not match the "
                         f"configured {cfg.image_size}x{cfg.image_size}")
    h = recon[None]
    for i in range(1, 4):
        h, c_conv = nn.conv2d_forward(h, params[f"enc{i}.w"], params[f"enc{i}.b"])
        h, c_gn = nn.group_norm_forward(h, cfg.groups, params[f"enc{i}.gamma"], params[f"enc{i}.beta"])
        h, c_act = nn.leaky_relu_forward(h, cfg.slope)
        h, c_pool = nn.max_pool2_forward(h)
        if cache is not None:
            cache[f"enc{i}"] = (c_conv, c_gn, c_act, c_pool)
    if cache is not None:
        cache["code_shape"] = h.shape
    return h.ravel()


def _head(features: np.ndarray, params: dict, head: str, cfg: AgentConfig):
    h, c1 = nn.dense_forward(features, params[f"{head}.fc1.w"], params[f"{head}.fc1.b"])
    h, ca = nn.leaky_relu_forward(h, cfg.slope)
    out, c2 = nn.dense_forward(h, params[f"{head}.fc2.w"], params[f"{head}.fc2.b"])
    return out, (c1, ca, c2)


def _head_backward(dout: np.ndarray, caches, head: str, grads: dict) -> np.ndarray:
    c1, ca, c2 = caches
    dh, grads[f"{head}.fc2.w"], grads[f"{head}.fc2.b"] = nn.dense_backward(dout, c2)
    dh = nn.leaky_relu_backward(dh, ca)
    dfeat, grads[f"{head}.fc1.w"], grads[f"{head}.fc1.b"] = nn.dense_backward(dh, c1)
    return dfeat


def forward(recon: np.ndarray, angle_vec: np.ndarray, params: dict, cfg: AgentConfig,
            heads: tuple[str, ...] = ("actor", "critic")) -> Forward:
    angle_vec = np.asarray(angle_vec, dtype=np.float64)
    _check_inputs(np.asarray(recon), angle_vec, cfg)
    cache: dict = {}
    code = encode(recon, params, cfg, cache)
    features = np.concatenate([code, angle_vec])
    logits = probs = None
    value = float("nan")
    if "actor" in heads:
        logits, cache["actor"] = _head(features, params, "actor", cfg)
        probs = nn.softmax(logits)
    if "critic" in heads:
        v, cache["critic"] = _head(features, params, "critic", cfg)
        value = float(v[0])
    cache["n_code"] = code.size
    return Forward(logits, probs, value, cache)


def backward(fwd: Forward, dlogits: np.ndarray | None, dvalue: float | None,
             params: dict, cfg: AgentConfig) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given its derivatives w.r.t. logits and value."""
    cache = fwd.cache
    grads: dict[str, np.ndarray] = {}
    dfeat = np.zeros(cache["n_code"] + N_ANGLES)
    if dlogits is not None:
        dfeat += _head_backward(dlogits, cache["actor"], "actor", grads)
    if dvalue is not None:
        dfeat += _head_backward(np.array([dvalue]), cache["critic"], "critic", grads)
    dh = dfeat[:cache["n_code"]].reshape(cache["code_shape"])
    for i in range(3, 0, -1):
        c_conv, c_gn, c_act, c_pool = cache[f"enc{i}"]
        dh = nn.max_pool2_backward(dh, c_pool)
        dh = nn.leaky_relu_backward(dh, c_act)
        dh, grads[f"enc{i}.gamma"], grads[f"enc{i}.beta"] = nn.group_norm_backward(dh, c_gn)
        dh, grads[f"enc{i}.w"], grads[f"enc{i}.b"] = nn.conv2d_backward(dh, c_conv)
    for name in params:
        if name not in grads:
            grads[name] = np.zeros_like(params[name])
    return grads


def actor_forward(recon, angle_vec, params, cfg: AgentConfig) -> np.ndarray:
    return forward(recon, angle_vec, params, cfg, heads=("actor",)).probs


def critic_forward(recon, angle_vec, params, cfg: AgentConfig) -> float:
    return forward(recon, angle_vec, params, cfg, heads=("critic",)).value


def sample_action(probs: np.ndarray, rng: np.random.Generator | None = None,
                  greedy: bool = False) -> int:
    """Inverse-CDF draw over angles 0..179, or the argmax when ``greedy``."""
    probs = np.asarray(probs, dtype=np.float64)
    total = probs.sum()
    if abs(total - 1.0) > 1e-6 or np.any(probs < 0):
        raise ValueError(f"not a probability vector (sum={total})")
    if greedy:
        return int(np.argmax(probs))
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(probs) - 1))
