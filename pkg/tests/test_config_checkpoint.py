import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptive_ct import agent as ag
from adaptive_ct import checkpoint as ck
from adaptive_ct.config import ConfigError, RunConfig, config_from_dict, parse_config
from adaptive_ct.env import CTEnvironment, RewardMode
from adaptive_ct.phantoms import DatasetSpec, generate_dataset
from adaptive_ct.projector import Geometry
from adaptive_ct.recon import ReconConfig
from adaptive_ct.trainer import TrainConfig, Trainer


def test_parse_overrides_and_comments():
    cfg = parse_config("# comment\nimage_size = 64\nshape_kinds = circle, ellipse  # trailing\n"
                       "warm_start = true\nlr = 3e-4\n")
    assert cfg.image_size == 64 and cfg.shape_kinds == ("circle", "ellipse")
    assert cfg.warm_start is True and cfg.lr == 3e-4
    assert cfg.horizon == RunConfig().horizon


def test_unknown_key_rejected_by_name():
    with pytest.raises(ConfigError) as info:
        parse_config("learning_rate = 0.1\n")
    assert info.value.key == "learning_rate"
    with pytest.raises(ConfigError):
        config_from_dict({"bogus": 1})


def test_bad_values_rejected():
    for text in ("horizon = three", "warm_start = maybe", "reward_mode = sparse", "version = 2",
                 "no equals sign"):
        with pytest.raises(ConfigError):
            parse_config(text)


def test_dumps_roundtrip():
    cfg = RunConfig(image_size=64, shape_kinds=("triangle", "hexagon"), lr=1.25e-4, critic_lr=1e-3,
                    mask_repeats=True)
    assert parse_config(cfg.dumps()) == cfg
    assert config_from_dict(cfg.to_dict()) == cfg


def test_train_config_view():
    tc = RunConfig(critic_lr=-1.0, reward_mode="incremental").train_config()
    assert tc.critic_lr is None and tc.reward_mode is RewardMode.INCREMENTAL
    assert RunConfig(critic_lr=1e-3).train_config().critic_lr == 1e-3


def test_test_split_uses_midpoint_rotations():
    spec = RunConfig().dataset_spec("test")
    assert spec.rotation_grid[0] == 2.5 and spec.seed == RunConfig().data_seed + 1


def _trainer(seed=0):
    images = [im for im, _ in generate_dataset(DatasetSpec(("ellipse",), count=4, image_size=32, seed=1))]
    env = CTEnvironment(Geometry(32), ReconConfig(10), RewardMode.END_TO_END, 0.0)
    return Trainer(images, env, ag.AgentConfig(32), TrainConfig(seed=seed))


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    tr = _trainer()
    tr.train(2)
    ck.save(tmp_path / "a.ctac", ck.from_trainer(tr, RunConfig().to_dict()))
    back = ck.load(tmp_path / "a.ctac")
    assert back.episode == 2
    for k, v in tr.params.items():
        assert back.params[k].tobytes() == v.tobytes()
    for group, state in (("policy", tr.policy_opt), ("value", tr.value_opt)):
        assert back.optimizers[group].t == state.t == 6
        assert all(back.optimizers[group].m[k].tobytes() == state.m[k].tobytes() for k in state.m)
    # saving the loaded checkpoint reproduces the file byte for byte
    assert ck.dumps(back) == (tmp_path / "a.ctac").read_bytes()


def test_restored_trainer_continues_identically():
    a = _trainer(3)
    a.train(2)
    blob = ck.dumps(ck.from_trainer(a, {}))
    rest = a.train(2)
    b = _trainer(3)
    ck.restore_trainer(b, ck.loads(blob))
    assert [r.csv_row() for r in b.train(2)] == [r.csv_row() for r in rest]


@settings(max_examples=25, deadline=None)
@given(pos=st.integers(0, 10**9), bit=st.integers(0, 7))
def test_any_flipped_bit_detected(pos, bit):
    blob = bytearray(_BLOB)
    blob[pos % len(blob)] ^= 1 << bit
    with pytest.raises(ck.CheckpointError):
        ck.loads(bytes(blob))


_BLOB = ck.dumps(ck.from_trainer(_trainer(4), {"x": 1}))


def test_truncated_and_foreign_files_rejected():
    with pytest.raises(ck.CheckpointError):
        ck.loads(_BLOB[:-1])
    with pytest.raises(ck.CheckpointError):
        ck.loads(b"CTPH" + _BLOB[4:])


def test_restore_rejects_other_architecture():
    other = Trainer([np.zeros((32, 32))], CTEnvironment(Geometry(32), ReconConfig(5), "end_to_end", 0.0),
                    ag.AgentConfig(32, hidden=64), TrainConfig())
    with pytest.raises(ck.CheckpointError):
        ck.restore_trainer(other, ck.loads(_BLOB))
