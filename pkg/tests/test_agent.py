import numpy as np
import pytest
from scipy import stats

from adaptive_ct import agent as ag
from adaptive_ct.nn_core import log_softmax
from fd_harness import check_coords

CFG = ag.AgentConfig(32)


def _setup(seed=0):
    rng = np.random.default_rng(seed)
    params = ag.init_params(CFG, rng)
    recon = rng.random((32, 32))
    angle_vec = np.zeros(180)
    angle_vec[[3, 90]] = 1.0
    return params, recon, angle_vec, rng


def test_output_shapes_and_probabilities():
    params, recon, av, _ = _setup()
    fwd = ag.forward(recon, av, params, CFG)
    assert fwd.logits.shape == (180,) and fwd.probs.shape == (180,)
    assert abs(fwd.probs.sum() - 1) < 1e-12 and np.isfinite(fwd.value)
    assert CFG.code_length == 512


def test_rejects_wrong_shapes():
    params, recon, av, _ = _setup()
    with pytest.raises(ValueError):
        ag.forward(np.zeros((16, 16)), av, params, CFG)
    with pytest.raises(ValueError):
        ag.forward(recon, np.zeros(179), params, CFG)
    with pytest.raises(ValueError):
        ag.init_params(ag.AgentConfig(30), np.random.default_rng(0))


def test_initial_policy_near_uniform():
    params, recon, av, _ = _setup(1)
    p = ag.forward(recon, av, params, CFG).probs
    assert np.all(np.abs(p - 1 / 180) < 1e-3)


def test_heads_share_encoder_weights():
    params, recon, av, _ = _setup(2)
    a = ag.forward(recon, av, params, CFG)
    params["enc1.w"] += 0.05
    b = ag.forward(recon, av, params, CFG)
    assert not np.allclose(a.logits, b.logits) and a.value != b.value
    # separate heads: touching the critic leaves the actor alone
    params["critic.fc2.b"] += 1.0
    c = ag.forward(recon, av, params, CFG)
    assert np.array_equal(b.logits, c.logits) and c.value == pytest.approx(b.value + 1.0)


def test_single_head_calls_agree_with_joint_forward():
    params, recon, av, _ = _setup(3)
    fwd = ag.forward(recon, av, params, CFG)
    np.testing.assert_array_equal(ag.actor_forward(recon, av, params, CFG), fwd.probs)
    assert ag.critic_forward(recon, av, params, CFG) == fwd.value


def _fd_check(target: str, seed: int):
    params, recon, av, rng = _setup(seed)
    action = 17
    fwd = ag.forward(recon, av, params, CFG)
    if target == "logp":
        dlogits = -fwd.probs.copy()
        dlogits[action] += 1.0
        grads = ag.backward(fwd, dlogits, None, params, CFG)
        loss = lambda: float(log_softmax(ag.forward(recon, av, params, CFG).logits)[action])
    else:
        grads = ag.backward(fwd, None, 1.0, params, CFG)
        loss = lambda: ag.forward(recon, av, params, CFG).value
    coords = []
    for name, arr in params.items():
        if np.abs(grads[name]).max() == 0:
            continue
        k = min(40, arr.size)
        coords += [(name, int(i)) for i in rng.choice(arr.size, size=k, replace=False)]
    return check_coords(loss, params, grads, coords)


@pytest.mark.parametrize("target", ["logp", "value"])
def test_end_to_end_gradients(target):
    errs = _fd_check(target, 5)
    assert len(errs) > 300
    assert np.mean(errs < 1e-4) >= 0.99


def test_unused_head_gets_zero_gradient():
    params, recon, av, _ = _setup(6)
    fwd = ag.forward(recon, av, params, CFG)
    grads = ag.backward(fwd, None, 1.0, params, CFG)
    assert all(not grads[n].any() for n in ag.ACTOR_NAMES)
    assert set(grads) == set(params)


def test_sampling_matches_distribution():
    rng = np.random.default_rng(7)
    probs = rng.random(180) ** 3
    probs /= probs.sum()
    draws = np.array([ag.sample_action(probs, rng) for _ in range(20000)])
    counts = np.bincount(draws, minlength=180)
    # pool sparse bins so the chi-square approximation holds
    order = np.argsort(probs)
    exp = probs[order] * len(draws)
    obs = counts[order]
    edges = np.searchsorted(np.cumsum(exp), np.arange(0, len(draws), 400)[1:])
    e_pooled = [c.sum() for c in np.split(exp, edges)]
    o_pooled = [c.sum() for c in np.split(obs, edges)]
    assert stats.chisquare(o_pooled, e_pooled).pvalue > 0.001


def test_sampling_edge_cases():
    rng = np.random.default_rng(8)
    one_hot = np.zeros(180)
    one_hot[42] = 1.0
    assert all(ag.sample_action(one_hot, rng) == 42 for _ in range(50))
    probs = np.full(180, 1 / 180)
    probs[5] += 0.1
    probs /= probs.sum()
    assert ag.sample_action(probs, None, greedy=True) == 5
    tie = np.zeros(180)
    tie[[9, 30]] = 0.5
    assert ag.sample_action(tie, None, greedy=True) == 9
    with pytest.raises(ValueError):
        ag.sample_action(np.full(180, 0.01), rng)


def test_sampling_deterministic_given_rng():
    probs = np.full(180, 1 / 180)
    a = [ag.sample_action(probs, np.random.default_rng(3)) for _ in range(3)]
    assert len(set(a)) == 1
