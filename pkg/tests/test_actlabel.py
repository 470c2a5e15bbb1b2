from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neuraltraj.actlabel import (
    InverseDynamics,
    LatentActionCodec,
    idm_label,
    latent_label,
    merge_windows,
    train_idm,
    train_latent_codec,
)
from neuraltraj.datasets import expert_corpus
from neuraltraj.diffkit import ModelBundle
from neuraltraj.exceptions import EmptyDataset, MissingActions, TooShort
from neuraltraj.gridsim import default_catalog

CAT = default_catalog()
PICK = CAT.task("pick_red_square")


@pytest.fixture(scope="module")
def pick_train():
    return expert_corpus([PICK], [0], 24, seed=2)


@pytest.fixture(scope="module")
def pick_test():
    return expert_corpus([PICK], [0], 6, seed=99)


@pytest.fixture(scope="module")
def idm(pick_train):
    return InverseDynamics(steps=600, hidden=128, seed=0).fit(pick_train)


@pytest.fixture(scope="module")
def codec():
    tasks = [CAT.tasks[k] for k in sorted(CAT.tasks)]
    vids = expert_corpus(tasks, [0, 1], 2, seed=1, agent="human", with_actions=False, with_states=False)
    vids += expert_corpus([PICK], [0], 6, seed=5, with_actions=False, with_states=False)
    return LatentActionCodec(steps=800, seed=0).fit(vids)


def strip(traj):
    return replace(traj, actions=None, states=None, embodiment="neural")


def test_idm_requires_actions(pick_train):
    with pytest.raises(MissingActions):
        InverseDynamics(steps=1).fit([strip(pick_train[0])])
    with pytest.raises(EmptyDataset):
        InverseDynamics(steps=1).fit([])


def test_idm_label_contract(idm, pick_test):
    t = strip(pick_test[0])
    lab = idm.label(t)
    assert lab.actions.shape == (len(t.frames) - 1, 3)
    assert np.all(np.abs(lab.actions) <= 1.0)
    np.testing.assert_array_equal(lab.actions, idm.label(t).actions)


def test_idm_beats_zero_action_baseline(idm, pick_test):
    err = np.mean([np.abs(idm.label(strip(t)).actions - t.actions).mean() for t in pick_test])
    base = np.mean([np.abs(t.actions).mean() for t in pick_test])
    assert err < 0.5 * base


def test_idm_too_short(idm, pick_test):
    t = strip(pick_test[0])
    with pytest.raises(TooShort):
        idm.label(replace(t, frames=t.frames[: idm.horizon]))


def test_single_window_used_verbatim(idm, pick_test):
    t = strip(pick_test[0])
    short = replace(t, frames=t.frames[: idm.horizon + 1])
    lab = idm.label(short, seed=3)
    chunk = idm.predict([(short.frames[0], short.frames[-1])], seed=3)[0]
    np.testing.assert_allclose(lab.actions, chunk, atol=1e-6)


def test_static_pair_smaller_than_moving(idm, pick_test):
    f = pick_test[0].frames
    static = idm.predict([(f[0], f[0])])[0]
    moving = idm.predict([(f[0], f[idm.horizon])])[0]
    assert np.linalg.norm(static[:, :2]) < np.linalg.norm(moving[:, :2])


def test_idm_bundle_roundtrip(idm, pick_test, tmp_path):
    p = tmp_path / "idm.ckpt"
    idm.bundle_.save(p)
    t = strip(pick_test[1])
    np.testing.assert_array_equal(idm_label(ModelBundle.load(p), t).actions, idm.label(t).actions)


def test_functional_train_idm(pick_train):
    b = train_idm(pick_train[:3], {"steps": 2, "hidden": 16}, seed=1)
    assert b.arch["name"] == "flow_idm"


@given(n_win=st.integers(1, 12), H=st.integers(1, 5), seed=st.integers(0, 1000))
@settings(max_examples=50, deadline=None)
def test_window_mean_and_coverage(n_win, H, seed):
    rng = np.random.default_rng(seed)
    chunks = rng.uniform(-1, 1, (n_win, H, 3)).astype(np.float32)
    n = n_win + H - 1
    out = merge_windows(chunks, n)
    for i in range(n):
        preds = [chunks[s, i - s] for s in range(n_win) if 0 <= i - s < H]
        assert preds  # every step covered
        np.testing.assert_allclose(out[i], np.mean(preds, 0), rtol=1e-5, atol=1e-6)


def test_merge_alternatives():
    chunks = np.arange(2 * 3 * 1, dtype=np.float32).reshape(2, 3, 1)
    np.testing.assert_array_equal(merge_windows(chunks, 4, "first")[:, 0], [0, 1, 2, 5])
    np.testing.assert_array_equal(merge_windows(chunks, 4, "median")[:, 0], [0, 2, 3, 5])
    with pytest.raises(ValueError):
        merge_windows(chunks, 4, "max")


# ---------------------------------------------------------------- latent codec

def test_codec_label_count(codec, pick_test):
    t = strip(pick_test[0])
    lab = codec.label(t)
    T = len(t.frames) - 1
    assert len(lab.latent) == T - codec.delta + 1
    assert lab.latent.indices.shape[1] == 16
    assert lab.latent.indices.max() < 8
    np.testing.assert_array_equal(lab.latent.indices, codec.label(t).latent.indices)


def test_codec_too_short(codec, pick_test):
    t = strip(pick_test[0])
    with pytest.raises(TooShort):
        codec.label(replace(t, frames=t.frames[: codec.delta]))


def test_codec_beats_copy_baseline(codec, pick_test):
    model, copy = codec.reconstruction_loss(pick_test)
    assert model < copy
    pm, pc = codec.pixel_reconstruction(pick_test[:2])
    assert pm < pc


def test_codec_perplexity(codec, pick_test):
    assert codec.perplexity(pick_test) > 1.5


def test_static_pairs_consistent(codec):
    tasks = [CAT.tasks[k] for k in sorted(CAT.tasks)]
    vids = expert_corpus(tasks, range(5), 2, seed=11, with_actions=False, with_states=False)
    frames = [v.frames[i] for v in vids for i in (0, len(v.frames) // 2)][:100]
    idx, _ = codec.encode(frames, frames)
    sigs = [tuple(r) for r in idx]
    modal = max(set(sigs), key=sigs.count)
    agree = np.mean([np.mean(np.array(s) == np.array(modal)) for s in sigs])
    assert agree >= 0.9


def test_codes_separate_grasp_and_transport(codec, pick_test):
    codes, phase = [], []
    for t in pick_test:
        lab = codec.label(strip(t))
        for i in range(len(lab.latent)):
            held0 = t.states[i].held_object is not None
            held1 = t.states[i + codec.delta].held_object is not None
            if held0 == held1:
                codes.append(lab.latent.indices[i])
                phase.append(int(held0))  # 0 approach/descend, 1 transport
    codes, phase = np.array(codes), np.array(phase)
    chance = max(phase.mean(), 1 - phase.mean())
    purity = []
    for pos in range(codes.shape[1]):
        hits = sum(max(np.sum((codes[:, pos] == c) & (phase == p)) for p in (0, 1)) for c in np.unique(codes[:, pos]))
        purity.append(hits / len(phase))
    assert max(purity) > chance


def test_functional_codec(pick_test):
    b = train_latent_codec(pick_test[:2], C=8, L=16, seed=0, steps=3, hidden=16)
    lab = latent_label(b, strip(pick_test[0]))
    assert lab.latent.continuous.shape[1] == 16 * 4
