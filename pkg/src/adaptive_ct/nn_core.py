"""Small numpy layers with hand-written backward passes, plus Adam.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)``. Tensors are plain float64 arrays, channel-first and
unbatched (``[C, H, W]``), since training updates once per selected angle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

GN_EPS = 1e-5


class ShapeMismatch(ValueError):
    pass


# ---------------------------------------------------------------------------
# conv 3x3, zero padding 1, stride 1
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray) -> np.ndarray:
    C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # C, H, W, 3, 3
    return win.transpose(0, 3, 4, 1, 2).reshape(C * 9, H * W)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    if x.ndim != 3 or w.ndim != 4 or w.shape[2:] != (3, 3):
        raise ShapeMismatch(f"conv2d expects [C,H,W] input and [O,C,3,3] kernels, "
                            f"got {x.shape} and {w.shape}")
    if w.shape[1] != x.shape[0] or b.shape != (w.shape[0],):
        raise ShapeMismatch(f"conv2d channel mismatch: input {x.shape}, kernels {w.shape}, "
                            f"bias {b.shape}")
    C, H, W = x.shape
    cols = _im2col(x)
    out = w.reshape(w.shape[0], -1) @ cols + b[:, None]
    return out.reshape(w.shape[0], H, W), (x.shape, cols, w)


def conv2d_backward(dout: np.ndarray, cache):
    (C, H, W), cols, w = cache
    O = w.shape[0]
    d = dout.reshape(O, H * W)
    db = d.sum(axis=1)
    dw = (d @ cols.T).reshape(w.shape)
    dcols = (w.reshape(O, -1).T @ d).reshape(C, 3, 3, H, W)
    dxp = np.zeros((C, H + 2, W + 2))
    for ky in range(3):
        for kx in range(3):
            dxp[:, ky:ky + H, kx:kx + W] += dcols[:, ky, kx]
    return dxp[:, 1:-1, 1:-1], dw, db


# ---------------------------------------------------------------------------
# group normalisation
# ---------------------------------------------------------------------------

def group_norm_forward(x: np.ndarray, groups: int, gamma: np.ndarray, beta: np.ndarray,
                       eps: float = GN_EPS):
    C, H, W = x.shape
    if groups < 1 or C % groups:
        raise ValueError(f"{C} channels cannot be split into {groups} groups")
    xg = x.reshape(groups, -1)
    mean = xg.mean(axis=1, keepdims=True)
    var = xg.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean) * inv_std).reshape(C, H, W)
    out = gamma[:, None, None] * xhat + beta[:, None, None]
    return out, (xhat, inv_std, gamma, groups)


def group_norm_backward(dout: np.ndarray, cache):
    xhat, inv_std, gamma, groups = cache
    C, H, W = xhat.shape
    dgamma = (dout * xhat).sum(axis=(1, 2))
    dbeta = dout.sum(axis=(1, 2))
    dxhat = (dout * gamma[:, None, None]).reshape(groups, -1)
    xh = xhat.reshape(groups, -1)
    dx = inv_std * (dxhat - dxhat.mean(axis=1, keepdims=True)
                    - xh * (dxhat * xh).mean(axis=1, keepdims=True))
    return dx.reshape(C, H, W), dgamma, dbeta


# ---------------------------------------------------------------------------
# activations, pooling, dense
# ---------------------------------------------------------------------------

def leaky_relu_forward(x: np.ndarray, slope: float = 0.01):
    pos = x > 0
    return np.where(pos, x, slope * x), (pos, slope)


def leaky_relu_backward(dout: np.ndarray, cache):
    pos, slope = cache
    # x == 0 takes the negative-side slope
    return np.where(pos, dout, slope * dout)


def max_pool2_forward(x: np.ndarray):
    C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeMismatch(f"max_pool2 needs even spatial dims, got {H}x{W}")
    win = x.reshape(C, H // 2, 2, W // 2, 2).transpose(0, 1, 3, 2, 4).reshape(C, H // 2, W // 2, 4)
    arg = win.argmax(axis=3)  # first maximum wins ties
    out = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]
    return out, (x.shape, arg)


def max_pool2_backward(dout: np.ndarray, cache):
    (C, H, W), arg = cache
    win = np.zeros((C, H // 2, W // 2, 4))
    np.put_along_axis(win, arg[..., None], dout[..., None], axis=3)
    return win.reshape(C, H // 2, W // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(C, H, W)


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    if x.ndim != 1 or w.shape != (b.shape[0], x.shape[0]):
        raise ShapeMismatch(f"dense: input {x.shape}, weight {w.shape}, bias {b.shape}")
    return w @ x + b, (x, w)


def dense_backward(dout: np.ndarray, cache):
    x, w = cache
    return w.T @ dout, np.outer(dout, x), dout.copy()


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    return z - np.log(np.exp(z).sum())


def softmax_backward(dprobs: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of softmax."""
    return probs * (dprobs - np.dot(dprobs, probs))


# ---------------------------------------------------------------------------
# init and Adam
# ---------------------------------------------------------------------------

def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                    slope: float = 0.01) -> np.ndarray:
    gain = np.sqrt(2.0 / (1.0 + slope * slope))
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], names=None, **hyper) -> "AdamState":
        names = list(params) if names is None else list(names)
        return cls({k: np.zeros_like(params[k]) for k in names},
                   {k: np.zeros_like(params[k]) for k in names}, **hyper)


@numba.njit(cache=True)
def _adam_kernel(p, g, m, v, b1, b2, step, root_c2, eps, decay):
    p, g, m, v = p.ravel(), g.ravel(), m.ravel(), v.ravel()
    for i in range(p.size):
        gi = g[i] + decay * p[i]
        m[i] = b1 * m[i] + (1.0 - b1) * gi
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi
        p[i] -= step * m[i] / (np.sqrt(v[i]) / root_c2 + eps)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> None:
    """In-place Adam update of the parameters tracked by ``state``.

    Weight decay is the coupled L2 form: ``decay * param`` joins the gradient
    before the moment updates. ``step`` folds in the first-moment bias
    correction and ``root_c2`` the second-moment one.
    """
    state.t += 1
    step = state.lr / (1.0 - state.beta1 ** state.t)
    root_c2 = np.sqrt(1.0 - state.beta2 ** state.t)
    for name in state.m:
        p, g = params[name], grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, param {p.shape}")
        if not (p.flags.c_contiguous and g.flags.c_contiguous):
            raise ValueError(f"{name}: adam_step needs contiguous arrays")
        _adam_kernel(p, g, state.m[name], state.v[name], state.beta1, state.beta2,
                     step, root_c2, state.eps, state.weight_decay)
