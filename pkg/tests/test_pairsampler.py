import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal
from scipy import stats

from timeaug.augment import AugConfig
from timeaug.corpus import DatasetIndex, Record
from timeaug.pairsampler import (PairBuffer, PairPolicy, SamplerConfig, StreamBuffer, build_buffer,
                                 build_toybox_pairs, expected_run_length, iterate_epoch, one_aug_control,
                                 sample_run_lengths, stream_push, stream_sample)


def make_index(n_objects=3, n_sessions=2, frames=5, seed=None, tags=None):
    """core50-like fixture: every object has one clip per session."""
    rng = np.random.default_rng(seed) if seed is not None else None
    records = []
    for o in range(n_objects):
        for s in range(n_sessions):
            n = frames if rng is None else int(rng.integers(1, frames + 1))
            tag = None if tags is None else tags[(o + s) % len(tags)]
            for f in range(n):
                records.append(Record(f"s{s}/o{o}/{f}", o, o % 2, s, f"s{s}_o{o}", f, transformation=tag))
    return DatasetIndex(records, "core50").validate()


fixtures = st.builds(lambda o, s, f, seed: make_index(o, s, f, seed),
                     st.integers(1, 6), st.integers(1, 4), st.integers(1, 8), st.integers(0, 10_000))


def run_objects(buf, index):
    bounds = buf.run_starts + [buf.total_views]
    return [index.records[buf.views[a]].object_id for a in buf.run_starts], bounds


# -- run lengths -------------------------------------------------------------------

def test_expected_run_length_values():
    assert expected_run_length(0.0) == 1.0
    assert expected_run_length(0.95) == pytest.approx(20.0)
    assert expected_run_length(0.9) == pytest.approx(10.0)
    with pytest.raises(ValueError):
        expected_run_length(1.0)


@pytest.mark.parametrize("p", [0.5, 0.9, 0.95, 0.98])
def test_monte_carlo_mean_within_three_se(p):
    runs = sample_run_lengths(p, 100_000, np.random.default_rng(int(p * 100)))
    se = runs.std(ddof=1) / np.sqrt(len(runs))
    assert abs(runs.mean() - expected_run_length(p)) < 3 * se


def test_buffer_run_lengths_follow_p_o():
    index = make_index(4, 2, 10)
    buf = build_buffer(index, SamplerConfig(p_o=0.9, N_o=None, cycles=6000, seed=1))
    lengths = np.diff(buf.run_starts + [buf.total_views])
    se = lengths.std(ddof=1) / np.sqrt(len(lengths))
    assert abs(lengths.mean() - 10.0) < 3 * se


def test_session_runs_follow_p_s():
    index = make_index(2, 3, 50)
    buf = build_buffer(index, SamplerConfig(N_o=200, p_s=0.9, cycles=100, seed=2))
    # object runs censor session runs, so check the per-step switch rate instead of run means
    steps = [k for k in buf.kinds if k != "object_transition"]
    n = len(steps)
    rate = steps.count("css") / n
    assert abs(rate - 0.1) < 3 * np.sqrt(0.09 / n)
    assert 1 / rate == pytest.approx(expected_run_length(0.9), rel=0.05)


# -- buffer structure --------------------------------------------------------------

def test_three_objects_n_o_three_structure():
    index = make_index(3, 1, 6)
    buf = build_buffer(index, SamplerConfig(N_o=3, cycles=1, seed=0))
    assert buf.total_views == 9 and len(buf) == 8
    assert buf.run_starts == [0, 3, 6]
    assert buf.kinds == ["temporal", "temporal", "object_transition"] * 2 + ["temporal", "temporal"]
    for k in range(8):
        assert buf.pairs[k] == (buf.views[k], buf.views[k + 1])


@settings(max_examples=60, deadline=None)
@given(fixtures, st.integers(1, 6), st.integers(1, 4), st.integers(0, 1000))
def test_per_cycle_permutation_and_cycle_length(index, n_o, cycles, seed):
    buf = build_buffer(index, SamplerConfig(N_o=n_o, cycles=cycles, seed=seed))
    n_obj = len(index.objects())
    assert buf.total_views == cycles * n_obj * n_o
    objs, _ = run_objects(buf, index)
    for c in range(cycles):
        assert sorted(objs[c * n_obj:(c + 1) * n_obj]) == sorted(index.objects())
    assert buf.cycle_boundaries[0] == 0
    assert all(b == c * n_obj * n_o - 1 for c, b in enumerate(buf.cycle_boundaries) if c > 0)


@settings(max_examples=60, deadline=None)
@given(fixtures, st.integers(1, 6), st.integers(0, 1000), st.sampled_from(["randomwalk", "uniform"]))
def test_pair_kinds_respect_objects_sessions_adjacency(index, n_s, seed, mode):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        buf = build_buffer(index, SamplerConfig(mode=mode, N_o=6, N_s=n_s, cycles=2, seed=seed))
    recs = index.records
    for (a, b), kind in zip(buf.pairs, buf.kinds):
        ra, rb = recs[a], recs[b]
        if kind == "object_transition":
            continue
        assert ra.object_id == rb.object_id
        if kind == "css":
            assert ra.session_id != rb.session_id
        else:
            assert ra.clip_id == rb.clip_id
            if mode == "randomwalk":
                clip_len = sum(r.clip_id == ra.clip_id for r in recs)
                assert abs(ra.frame_no - rb.frame_no) == (0 if clip_len == 1 else 1)


@settings(max_examples=30, deadline=None)
@given(fixtures, st.integers(0, 1000))
def test_seed_determinism(index, seed):
    cfg = SamplerConfig(N_o=None, p_o=0.7, p_s=0.6, cycles=3, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a, b = build_buffer(index, cfg), build_buffer(index, cfg)
    assert a.pairs == b.pairs and a.kinds == b.kinds and a.views == b.views


def test_randomwalk_reflects_at_clip_start():
    index = make_index(1, 1, 4)
    for seed in range(20):
        buf = build_buffer(index, SamplerConfig(N_o=2, cycles=1, seed=seed))
        a, b = buf.pairs[0]
        if index.records[a].frame_no == 0:
            assert index.records[b].frame_no == 1
        if index.records[a].frame_no == 3:
            assert index.records[b].frame_no == 2


def test_single_session_switch_falls_back_with_warning():
    index = make_index(2, 1, 5)
    with pytest.warns(UserWarning, match="fell back"):
        buf = build_buffer(index, SamplerConfig(N_o=4, N_s=1, cycles=1))
    assert buf.warnings == 2 * 3
    assert "css" not in buf.kinds


def test_default_cycles_match_dataset_size():
    index = make_index(3, 2, 10)
    buf = build_buffer(index, SamplerConfig(N_o=5))
    assert buf.total_views >= len(index)
    assert buf.total_views == 4 * 3 * 5


def test_sampler_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(p_o=0.9, N_o=10)
    with pytest.raises(ValueError):
        SamplerConfig(N_o=None)
    with pytest.raises(ValueError):
        SamplerConfig(p_s=0.5, N_s=2)
    with pytest.raises(ValueError):
        SamplerConfig(N_o=3, N_s=5)
    with pytest.raises(ValueError):
        SamplerConfig(p_o=1.0, N_o=None)
    with pytest.raises(ValueError):
        SamplerConfig(mode="zigzag")
    with pytest.raises(ValueError):
        build_buffer(DatasetIndex([], "core50"), SamplerConfig())


def test_dump_load_round_trip(tmp_path):
    index = make_index(3, 2, 5)
    buf = build_buffer(index, SamplerConfig(N_o=4, N_s=2, cycles=2, seed=3))
    buf.dump(tmp_path / "b.jsonl")
    back = PairBuffer.load(tmp_path / "b.jsonl")
    assert back.pairs == [tuple(map(int, p)) for p in buf.pairs] and back.kinds == buf.kinds


# -- toybox pairing ----------------------------------------------------------------

def toybox_index(lengths, tags=None):
    records = []
    for c, n in enumerate(lengths):
        tag = None if tags is None else tags[c]
        for f in range(n):
            records.append(Record(f"c{c}/{f}", c, 0, 0, f"clip{c}", f, transformation=tag))
    return DatasetIndex(records, "toybox").validate()


def test_toybox_successive_pairs_and_clip_links():
    index = toybox_index([5, 3])
    buf = build_toybox_pairs(index, seed=0)
    first = buf.views[0]
    frames = [(index.records[a].clip_id, index.records[a].frame_no, index.records[b].clip_id,
               index.records[b].frame_no) for a, b in buf.pairs]
    if index.records[first].clip_id == "clip0":
        assert frames[:5] == [("clip0", 0, "clip0", 1), ("clip0", 1, "clip0", 2), ("clip0", 2, "clip0", 3),
                              ("clip0", 3, "clip0", 4), ("clip0", 4, "clip1", 0)]
    else:
        assert frames[2] == ("clip1", 2, "clip0", 0)
    assert buf.kinds.count("object_transition") == 1


def test_toybox_two_frame_clip_one_pair():
    buf = build_toybox_pairs(toybox_index([2]), seed=0)
    assert len(buf) == 1 and buf.kinds == ["temporal"]


def test_toybox_exclude_rotations():
    index = toybox_index([3, 3, 3, 3], tags=["rotation_x", "translation_y", "rotation_z", "hodgepodge"])
    rot = {"rotation_x", "rotation_y", "rotation_z"}
    buf = build_toybox_pairs(index, seed=1, exclude=rot)
    for a, b in buf.pairs:
        assert index.records[a].transformation not in rot
        assert index.records[b].transformation not in rot
    with pytest.raises(ValueError):
        build_toybox_pairs(toybox_index([3], tags=["rotation_x"]), exclude=rot)


# -- epochs and stream buffer ------------------------------------------------------

def test_epoch_batches_from_dataset_size():
    buf = PairBuffer([(i, i + 1) for i in range(2000)], ["temporal"] * 2000)
    batches = list(iterate_epoch(buf, 512, seed=0, dataset_size=1024))
    assert len(batches) == 2 and all(len(b) == 512 for b in batches)
    again = list(iterate_epoch(buf, 512, seed=0, dataset_size=1024))
    for x, y in zip(batches, again):
        assert_array_equal(x, y)
    with pytest.raises(ValueError):
        list(iterate_epoch(buf, 5000, seed=0))


def test_epoch_sampling_uniform_chi_square():
    buf = PairBuffer([(i, i + 1) for i in range(50)], ["temporal"] * 50)
    counts = np.zeros(50)
    for epoch in range(100):
        for batch in iterate_epoch(buf, 10, seed=epoch):
            counts += np.bincount(batch, minlength=50)
    assert stats.chisquare(counts).pvalue > 0.01


def test_stream_buffer_ring():
    buf = StreamBuffer(3)
    for k in range(1, 5):
        stream_push(buf, (k, k))
    assert buf.contents() == [(2, 2), (3, 3), (4, 4)]
    assert len(buf) == 3
    with pytest.raises(ValueError):
        stream_sample(StreamBuffer(2), 1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        buf.push((1, 2, 3))


def test_stream_sample_membership_and_determinism():
    buf = StreamBuffer(100_000)
    for k in range(1000):
        buf.push((k, k + 1))
    a = stream_sample(buf, 256, np.random.default_rng(5))
    b = stream_sample(buf, 256, np.random.default_rng(5))
    assert len(a) == 256 and a == b
    assert all(p[1] == p[0] + 1 and 0 <= p[0] < 1000 for p in a)


# -- one-vs-many augmentation ------------------------------------------------------

def test_one_aug_policy_reuses_partner():
    img = np.random.default_rng(0).random((3, 8, 8)).astype(np.float32)
    rng = np.random.default_rng(1)
    one = one_aug_control("one")
    assert_array_equal(one.partner(7, img, AugConfig(), rng), one.partner(7, img, AugConfig(), rng))
    many = PairPolicy("per_minibatch")
    assert not np.array_equal(many.partner(7, img, AugConfig(), rng), many.partner(7, img, AugConfig(), rng))
    assert_array_equal(PairPolicy("one").partner(0, img, AugConfig.identity(), rng), img)
    with pytest.raises(ValueError):
        PairPolicy("two")
