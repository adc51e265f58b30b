import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from timeaug.augment import AugConfig
from timeaug.corpus import index_frames
from timeaug.losses import LossConfig
from timeaug.nn import EncoderConfig
from timeaug.nn.checkpoint import load
from timeaug.pairsampler import PairPolicy, SamplerConfig, build_buffer, iterate_epoch
from timeaug.synthworld import InteractionConfig, InteractionStream, WorldConfig, generate_episode, make_world
from timeaug.train import (BufferSource, StreamSource, TrainConfig, TrainingDiverged, build_learner,
                           checkpoint_bytes, load_learner, train, write_trace)

ENC = EncoderConfig(kind="mlp", mlp_hidden=(32,), embed_dim=8, dropout_p=0.0, input_shape=(1, 16, 16))
WORLD = WorldConfig(n_categories=2, objects_per_category=3, image_size=16, channels=1, n_backgrounds=2)


def stream_source(seed=0, mode="tt_plus", world_cfg=WORLD):
    world = make_world(world_cfg, 0)
    return StreamSource(InteractionStream(world, InteractionConfig(), seed), AugConfig(), mode, seed,
                        capacity=500, pushes_per_step=4, prefill=64)


def run(seed=0, steps=5, objective="simclr", path=None, mode="tt_plus"):
    learner = build_learner(ENC, objective, seed)
    cfg = TrainConfig(batch_size=16, steps=steps, seed=seed, pair_mode=mode)
    return train(learner, stream_source(seed, mode), LossConfig(objective=objective), cfg, checkpoint_path=path)


def test_zero_steps_leaves_model_unchanged():
    before = build_learner(ENC, "simclr", 3).state()
    res = run(seed=3, steps=0)
    assert res.trace == [] and res.steps == 0
    for k, v in res.learner.state().items():
        assert_array_equal(v, before[k])


@pytest.mark.parametrize("objective", ["simclr", "byol", "vicreg"])
def test_identical_checkpoint_bytes(tmp_path, objective):
    run(seed=1, steps=4, objective=objective, path=tmp_path / "a.bin")
    run(seed=1, steps=4, objective=objective, path=tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_checkpoint_restores_learner(tmp_path):
    res = run(seed=2, steps=3, objective="byol", path=tmp_path / "c.bin")
    learner, meta = load_learner(tmp_path / "c.bin", ENC, "byol")
    assert meta["step"] == 3 and meta["objective"] == "byol"
    for k, v in res.learner.state().items():
        assert_array_equal(learner.state()[k], v)
    _, opt, _ = load(tmp_path / "c.bin")
    assert opt["step"] == 3


def test_smoke_loss_decreases():
    first, last = [], []
    for seed in range(3):
        learner = build_learner(ENC, "simclr", seed)
        res = train(learner, stream_source(seed, "tt_plus"), LossConfig(),
                    TrainConfig(batch_size=32, steps=200, seed=seed, lr=1e-3))
        first.append(res.trace[0]["loss"])
        last.append(res.trace[-1]["loss"])
    assert np.mean(last) < np.mean(first)


def test_byol_target_follows_ema():
    learner = build_learner(ENC, "byol", 0)
    online0 = {k: v.copy() for k, v in learner.encoder.state_dict().items()}
    target0 = {k: v.copy() for k, v in learner.target.state_dict().items()}
    res = train(learner, stream_source(0), LossConfig(objective="byol", tau=0.9),
                TrainConfig(batch_size=16, steps=1))
    for k in target0:
        assert_allclose(learner.target.state_dict()[k], 0.9 * target0[k] + 0.1 * learner.encoder.state_dict()[k],
                        rtol=1e-5, atol=1e-7)
    assert any(not np.array_equal(online0[k], learner.encoder.state_dict()[k]) for k in online0)
    assert res.steps == 1


class NanSource:
    def __init__(self, good_steps):
        self.good = good_steps

    def batches(self, batch_size, steps, epochs):
        rng = np.random.default_rng(0)
        for k in range(steps):
            x = rng.random((batch_size, 1, 16, 16)).astype(np.float32)
            if k >= self.good:
                x[:] = np.nan
            yield x, x + 0.01


def test_non_finite_loss_aborts_with_last_good_checkpoint(tmp_path):
    learner = build_learner(ENC, "simclr", 0)
    with pytest.raises(TrainingDiverged) as info:
        train(learner, NanSource(2), LossConfig(), TrainConfig(batch_size=8, steps=5),
              checkpoint_path=tmp_path / "ck.bin")
    assert info.value.step == 3
    tensors, opt, meta = load(tmp_path / "ck.bin")
    assert meta["step"] == 2 and opt["step"] == 2
    for k, v in learner.state().items():
        assert_array_equal(tensors[k], v)
    res = train(build_learner(ENC, "simclr", 0), NanSource(1), LossConfig(), TrainConfig(batch_size=8, steps=5),
                raise_on_divergence=False)
    assert res.steps == 1 and res.diverged is not None


def test_trace_columns(tmp_path):
    res = run(steps=3)
    write_trace(res.trace, tmp_path / "trace.csv")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "step,loss,objective,seed"
    assert [line.split(",")[0] for line in lines[1:]] == ["1", "2", "3"]
    clock = [row["wall_clock"] for row in res.trace]
    assert clock == sorted(clock) and clock[0] >= 0


def buffer_fixture():
    world = make_world(WORLD, 0)
    frames = generate_episode(world, InteractionConfig(N_s=5), seed=0, length=60)
    index = index_frames(frames)
    buf = build_buffer(index, SamplerConfig(N_o=4, cycles=3, seed=0))
    return index, buf


def test_source_frames_identical_across_pair_modes():
    index, buf = buffer_fixture()
    anchors = {}
    for mode in ("baseline", "tt", "tt_plus"):
        src = BufferSource(index, buf, AugConfig(), mode, seed=4)
        anchors[mode] = np.concatenate([xa for xa, _ in src.batches(8, steps=None, epochs=2)])
    assert_array_equal(anchors["baseline"], anchors["tt"])
    assert_array_equal(anchors["tt"], anchors["tt_plus"])


def test_buffer_source_epochs_and_one_aug_policy():
    index, buf = buffer_fixture()
    src = BufferSource(index, buf, AugConfig(), "tt_plus", seed=0, policy=PairPolicy("one"), dataset_size=32)
    batches = list(src.batches(8, steps=None, epochs=3))
    assert len(batches) == 3 * 4
    order = [i for e in range(3) for i in iterate_epoch(buf, 8, e, 32)]
    seen = {}
    for (_, xb), idx in zip(batches, order):
        for k, v in zip(idx, xb):
            if int(k) in seen:
                assert_array_equal(seen[int(k)], v)
            seen[int(k)] = v
    assert len(seen) < len(order) * 8


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)
    with pytest.raises(ValueError):
        TrainConfig(steps=10, epochs=2)
    with pytest.raises(ValueError):
        TrainConfig(source="disk")
    with pytest.raises(ValueError):
        TrainConfig(pair_mode="moco")


def test_checkpoint_bytes_depend_on_state():
    a = build_learner(ENC, "simclr", 0)
    b = build_learner(ENC, "simclr", 1)
    res = run(steps=1)
    assert checkpoint_bytes(a, res.opt_state, {}) != checkpoint_bytes(b, res.opt_state, {})
