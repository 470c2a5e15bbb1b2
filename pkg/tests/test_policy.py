import csv
from dataclasses import replace

import numpy as np
import pytest

from neuraltraj.datasets import expert_corpus
from neuraltraj.exceptions import ConfigError, EmptyDataset, IndexOutOfRange, ShapeMismatch
from neuraltraj.gridsim import RandomPolicy, default_catalog, evaluate_policy, render
from neuraltraj.gridsim.tasks import initial_state
from neuraltraj.policy import STATE_DIM, Policy, TrainingRun, act, assemble_input, state_vector, train_policy
from neuraltraj.trajstore import LatentActions

CAT = default_catalog()
PICK = CAT.task("pick_red_square")
SMALL = dict(d_model=16, n_heads=2, hidden=32, instr_dim=8, batch_size=32)


@pytest.fixture(scope="module")
def real():
    return expert_corpus([PICK], [0], 8, seed=3)


def as_neural(t):
    return replace(t, states=None, embodiment="neural", source="worldmodel")


def test_assemble_input_state_slot(real):
    t = real[0]
    frame, instr, sv = assemble_input(t, 3)
    np.testing.assert_array_equal(sv, state_vector(t.states[3]))
    assert sv.shape == (STATE_DIM,) and sv[0] > 0
    nf, ni, nsv = assemble_input(as_neural(t), 3)
    np.testing.assert_array_equal(nf, frame)
    assert ni == instr
    np.testing.assert_array_equal(nsv, np.zeros(STATE_DIM))
    with pytest.raises(IndexOutOfRange):
        assemble_input(t, len(t.frames))
    with pytest.raises(IndexOutOfRange):
        assemble_input(t, -1)


def test_cotrain_consumption_is_balanced(real):
    neural = [as_neural(t) for t in expert_corpus([PICK], [0], 4, seed=9)]
    pol = Policy(steps=320, **SMALL).fit(real + neural)
    frac = pol.consumed_["real"] / sum(pol.consumed_.values())
    assert sum(pol.consumed_.values()) == 320 * 32
    assert 0.48 <= frac <= 0.52


def _grads(pol, parts, pools, idx):
    for p in pol.model_.parameters():
        p.grad = None
    loss, _, _ = pol._batch_loss(parts, pools, np.asarray(idx))
    loss.backward()
    return {k: None if p.grad is None else p.grad.copy() for k, p in pol.model_.named_parameters().items()}


def test_dual_head_isolation(real):
    pol = Policy(**SMALL)
    parts, pools = pol._prepare(real[:4] + [as_neural(t) for t in real[4:]])
    g_n = _grads(pol, parts, pools, pools[1][:16])
    g_r = _grads(pol, parts, pools, pools[0][:16])
    for k in g_n:
        if k.startswith("head_r"):
            assert g_n[k] is None or not np.any(g_n[k])
            assert np.any(g_r[k])
        if k.startswith("head_n"):
            assert g_r[k] is None or not np.any(g_r[k])
            assert np.any(g_n[k])


def test_zero_state_has_no_effect_on_neural_gradients(real):
    pol = Policy(**SMALL)
    parts, pools = pol._prepare([as_neural(t) for t in real[:3]])
    idx = pools[1][:20]
    g0 = _grads(pol, parts, pools, idx)
    parts[-1].state[:] = np.random.default_rng(0).normal(size=parts[-1].state.shape)
    g1 = _grads(pol, parts, pools, idx)
    for k in g0:
        np.testing.assert_array_equal(g0[k], g1[k])


def test_act_contract(real, tmp_path):
    pol = Policy(steps=30, **SMALL).fit(real)
    s = initial_state(PICK, np.random.default_rng(1))
    f = render(s)
    a = pol.act(f, PICK.instruction, s)
    assert a.shape == (pol.horizon, 3)
    assert np.all(np.abs(a) <= 1)
    np.testing.assert_array_equal(a, pol.act(f, PICK.instruction, s))
    with pytest.raises(ShapeMismatch):
        pol.act(f[:16], PICK.instruction, s)
    pol.bundle_.save(tmp_path / "p.ckpt")
    from neuraltraj.diffkit import ModelBundle
    np.testing.assert_array_equal(act(ModelBundle.load(tmp_path / "p.ckpt"), f, PICK.instruction, s), a)


def test_empty_and_unlabeled():
    with pytest.raises(EmptyDataset):
        Policy().fit([])
    t = expert_corpus([PICK], [0], 1, seed=3, with_actions=False)[0]
    with pytest.raises(EmptyDataset):
        Policy(steps=1).fit([t])


def test_real_only_pick_place_success():
    data = expert_corpus([PICK], [0], 100, seed=2)
    run = TrainingRun(real=data, steps=1500, seed=0, eval_tasks=[PICK], eval_trials=20)
    pol = train_policy(run)
    assert pol.eval_score_ > 0.8
    reeval = Policy.from_bundle(pol.bundle_).evaluate([PICK], 20)
    assert abs(reeval - pol.eval_score_) <= 0.05


def test_neural_only_beats_random(real):
    neural = [as_neural(t) for t in expert_corpus([PICK], [0], 60, seed=4)]
    pol = Policy(steps=1000).fit(neural)
    assert pol.head_ == "n"
    rand = evaluate_policy(RandomPolicy(0), PICK, 20, 1).mean
    assert evaluate_policy(pol, PICK, 20, 1).mean > max(3 * rand, 0.1)


def test_latent_targets_train_neural_head(real):
    rng = np.random.default_rng(0)
    neural = []
    for t in real[:4]:
        n = len(t.frames) - 8
        cont = np.tile(t.actions[:n], (1, 22))[:, :64]  # a learnable function of the scene
        lat = LatentActions(rng.integers(0, 8, (n, 16)).astype(np.uint8), cont.astype(np.float32))
        neural.append(replace(as_neural(t), actions=None, latent=lat))
    pol = Policy(steps=60, neural_target="latent", **SMALL).fit(real[4:] + neural)
    assert pol.model_.head_n.weight.shape[0] == 64
    assert pol.model_.head_r.weight.shape[0] == pol.horizon * 3
    assert pol.head_ == "r"
    losses = [m["loss_neural"] for m in pol.metrics_ if m["loss_neural"] != ""]
    assert losses and np.mean(losses[-10:]) < np.mean(losses[:10])
    with pytest.raises(ConfigError):
        Policy(steps=1, neural_target="latent").fit(neural)


def test_metrics_csv(real, tmp_path):
    pol = Policy(steps=5, **SMALL).fit(real)
    pol.write_metrics(tmp_path / "m.csv")
    rows = list(csv.DictReader(open(tmp_path / "m.csv")))
    assert len(rows) == 5
    assert list(rows[0]) == ["step", "loss_real", "loss_neural", "eval_score"]


def test_deterministic_training(real):
    a = Policy(steps=10, **SMALL).fit(real[:3])
    b = Policy(steps=10, **SMALL).fit(real[:3])
    assert a.bundle_.digest() == b.bundle_.digest()
