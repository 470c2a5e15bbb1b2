"""End-to-end acceptance criteria; each prints one pass/fail line in the session summary.

The experiment presets share a workdir (set NEURALTRAJ_ACCEPTANCE_DIR to keep it between runs;
cached stages are digest-verified before reuse).
"""

import os
import time

import numpy as np
import pytest
from scipy import stats

from model_gradchecks import MODELS
from test_diffkit import PRIMS, TinyNet, _inputs

from neuraltraj.actlabel import InverseDynamics
from neuraltraj.bench import aggregate, instruction_following, pearson, score_instruction_following, score_physics
from neuraltraj.datasets import expert_corpus
from neuraltraj.diffkit import Adam, attach_lora, gradcheck, merge_lora
from neuraltraj.diffkit import ops as T
from neuraltraj.exceptions import CorruptEpisode
from neuraltraj.gridsim import default_catalog
from neuraltraj.pipeline import build_preset, report, run
from neuraltraj.trajstore import read_dataset, write_dataset
from neuraltraj.worldmodel import WorldModel

pytestmark = pytest.mark.acceptance

CAT = default_catalog()
TASKS = [CAT.tasks[k] for k in sorted(CAT.tasks)]
PICK = CAT.task("pick_red_square")


def record(log, k, ok, detail):
    prev = log.get(k)
    if prev is not None:
        ok, detail = prev[0] and ok, f"{prev[1]}; {detail}"
    log[k] = (bool(ok), detail)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = os.environ.get("NEURALTRAJ_ACCEPTANCE_DIR")
    return d or tmp_path_factory.mktemp("acceptance")


def run_preset(name, workdir, scale="full"):
    m = build_preset(name, scale)
    t0 = time.time()
    run(m, workdir, resume=True)
    return report(m, workdir), time.time() - t0


# 1 -----------------------------------------------------------------------------------------

def test_criterion_1_gradients(acceptance_log):
    t0 = time.time()
    worst = {}
    for name, build in PRIMS.items():
        for seed in range(5):
            fn, inputs = build(np.random.default_rng(seed))
            worst[name] = max(worst.get(name, 0.0), gradcheck(fn, inputs, max_probes=None).max_rel_error)
    for name, check in MODELS.items():
        for seed in range(5):
            worst[name] = max(worst.get(name, 0.0), check(seed).max_rel_error)
    elapsed = time.time() - t0
    top = max(worst, key=worst.get)
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 300
    record(acceptance_log, 1, ok, f"{len(PRIMS)} primitives + {len(MODELS)} models x 5 seeds, "
                                  f"max rel err {worst[top]:.1e} ({top}), {elapsed:.0f}s")
    assert ok, worst


# 2 -----------------------------------------------------------------------------------------

def test_criterion_2_lora(acceptance_log):
    net = TinyNet(seed=1)
    x, k = _inputs(0)
    before = net(x, k).data.copy()
    attach_lora(net, ["inp", "out.layers.0", "out.layers.1"], seed=3)
    identity = np.array_equal(net(x, k).data, before)
    defaults = net.inp.lora.r == 4 and net.inp.lora.alpha == 4.0

    opt = Adam(net.trainable(), lr=1e-2)
    y = np.random.default_rng(5).normal(size=(100, 2)).astype(np.float32)
    for _ in range(30):
        opt.zero_grad()
        T.mse(net(x, k), y).backward()
        opt.step()
    xt, kt = _inputs(9)
    adapted = net(xt, kt).data.copy()
    merge_lora(net)
    merge_err = float(np.max(np.abs(net(xt, kt).data - adapted)))

    # the same contracts on the world model, whose every Linear layer is adapted
    vids = expert_corpus([PICK], [0], 2, seed=0, with_actions=False, with_states=False)
    wm = WorldModel(steps=5, d_model=16, n_heads=2, hidden=32, instr_dim=8).fit(vids)
    ft = wm.finetune_lora(vids, steps=0)
    wm_identity = np.array_equal(wm.rollout(vids[0].frames[0], PICK, T=6).frames,
                                 ft.rollout(vids[0].frames[0], PICK, T=6).frames)
    ok = identity and defaults and merge_err <= 1e-5 and wm_identity
    record(acceptance_log, 2, ok, f"identity bit-equal={identity and wm_identity}, merge err {merge_err:.1e}, "
                                  f"defaults r=4 alpha=4: {defaults}")
    assert ok


# 3 -----------------------------------------------------------------------------------------

def test_criterion_3_oracles(acceptance_log):
    t0 = time.time()
    eps = expert_corpus(TASKS, range(5), 19, seed=31, with_actions=False)
    assert len(eps) >= 1000
    rng = np.random.default_rng(0)
    gt_if = gt_pa = shuffled = cross = 0
    for i, e in enumerate(eps):
        task = CAT.task(e.task_id)
        gt_if += score_instruction_following(e, task) == 1
        gt_pa += score_physics(e).score == 1.0
        shuffled += instruction_following(e.frames[rng.permutation(len(e.frames))], task).score == 0
        other = TASKS[(TASKS.index(CAT.tasks[e.task_id.split("@")[0]]) + 1 + i % (len(TASKS) - 1)) % len(TASKS)]
        cross += score_instruction_following(e, other.with_env(task.env_id)) == 0
    n, elapsed = len(eps), time.time() - t0
    ok = gt_if == n and gt_pa == n and shuffled >= 0.99 * n and cross >= 0.99 * n and elapsed < 600
    record(acceptance_log, 3, ok, f"{n} episodes: IF=1 {gt_if}/{n}, PA=1 {gt_pa}/{n}, shuffled IF=0 "
                                  f"{shuffled}/{n}, cross-task IF=0 {cross}/{n}, {elapsed:.0f}s")
    assert ok


# 4 -----------------------------------------------------------------------------------------

NOVEL_BEHAVIOR_ROW = [23, 45, 10, 15, 90, 75, 55, 95, 15, 55, 20, 17, 55, 35]
ONLY_NT = [1.96, 16.67, 0.00, 1.96, 8.82, 0.00, 0.98, 5.88, 2.94, 0.00, 52.94, 15.69, 82.35, 33.33,
           17.65, 6.86, 59.80, 28.43, 25.49, 29.41, 48.04, 48.04, 2.94, 2.94]
IF_SERIES, IF_HUMAN = [68.8, 72.9, 77.1, 79.2], [81.3, 79.2, 91.7, 93.8]


def test_criterion_4_averages(acceptance_log):
    a, b = aggregate(NOVEL_BEHAVIOR_ROW), aggregate(ONLY_NT)
    ok = abs(a - 43.2) <= 0.05 and abs(b - 20.55) <= 0.05 and len(ONLY_NT) == 24
    record(acceptance_log, 4, ok, f"novel-behavior average {a:.3f} (43.2), only-neural average {b:.3f} (20.55)")
    assert ok


@pytest.mark.xfail(strict=True, reason="the listed IF series give r = 0.880, not the reported 0.94")
def test_criterion_4_pearson(acceptance_log):
    r = pearson(IF_SERIES, IF_HUMAN)
    assert r == pytest.approx(stats.pearsonr(IF_SERIES, IF_HUMAN)[0], abs=1e-12)
    ok = abs(r - 0.94) <= 0.01
    record(acceptance_log, 4, ok, f"pearson {r:.4f} vs reported 0.94 (+-0.01): unattainable from the listed rows")
    assert ok


# 5 -----------------------------------------------------------------------------------------

def test_criterion_5_idm_replay(acceptance_log):
    t0 = time.time()
    train = expert_corpus([PICK], [0], 100, seed=2)
    held = expert_corpus([PICK], [0], 30, seed=99)
    rates = {}
    for frac in (0.1, 0.3, 1.0):
        per_seed = []
        for seed in range(3):
            order = np.random.default_rng(seed).permutation(len(train))[:int(round(frac * len(train)))]
            idm = InverseDynamics(steps=4000, seed=seed).fit([train[i] for i in order])
            per_seed.append(idm.replay_score(held, seed=seed))
        rates[frac] = per_seed
    means = [float(np.mean(rates[f])) for f in (0.1, 0.3, 1.0)]
    elapsed = time.time() - t0
    ok = min(rates[1.0]) >= 0.9 and means[0] <= means[1] <= means[2] and elapsed < 3600
    record(acceptance_log, 5, ok, "replay 10/30/100% = " + "/".join(f"{m:.3f}" for m in means)
           + f", full-data per seed {rates[1.0]}, {elapsed:.0f}s")
    assert ok, rates


# 6-8 ---------------------------------------------------------------------------------------

def test_criterion_7_behavior_generalization(workdir, acceptance_log):
    rep, elapsed = run_preset("behavior-gen", workdir)
    labels = rep["labels"]
    base, neural = labels["baseline"][""]["mean"], labels["neural"][""]["mean"]
    seeds = {e["label"]: 0 for e in rep["evals"]}
    for e in rep["evals"]:
        seeds[e["label"]] += 1
    ok = base < 0.1 and neural - base >= 0.2 and min(seeds.values()) >= 3 and elapsed < 4 * 3600
    record(acceptance_log, 7, ok, f"novel verbs: real-only {base:.3f}, neural-only {neural:.3f} "
                                  f"(gain {neural - base:+.3f}), {seeds['neural']} seeds, {elapsed:.0f}s")
    assert ok


def test_criterion_6_scaling(workdir, acceptance_log):
    rep, elapsed = run_preset("scaling", workdir)
    s = rep["series"]["neural"]
    ok = (len(s["x"]) >= 4 and s["n_points"] >= 3 * len(s["x"]) and s["nondecreasing"]
          and s["spearman"] is not None and s["spearman"] > 0 and elapsed < 4 * 3600)
    curve = ", ".join(f"{x:g}:{m:.3f}" for x, m in zip(s["x"], s["mean"]))
    record(acceptance_log, 6, ok, f"success by neural count {curve}; spearman {s['spearman']:.3f} "
                                  f"over {s['n_points']} runs, {elapsed:.0f}s")
    assert ok


def test_criterion_8_bench_correlation(workdir, acceptance_log):
    rep, elapsed = run_preset("benchmark", workdir)
    c = rep["correlation"]
    ok = c is not None and len(c["variants"]) >= 4 and c["r"] is not None and c["r"] > 0 and elapsed < 6 * 3600
    pts = ", ".join(f"{v['name']}: bench {(v['IF'] + v['PA']) / 2:.1f} success {v['success']:.3f}"
                    for v in c["variants"])
    record(acceptance_log, 8, ok, f"r = {c['r']:.3f} over {len(c['variants'])} variants ({pts}), {elapsed:.0f}s")
    assert ok


# 9 -----------------------------------------------------------------------------------------

def test_criterion_9_determinism(tmp_path, acceptance_log):
    t0 = time.time()
    m = build_preset("behavior-gen", "smoke")
    a, b = run(m, tmp_path / "a"), run(m, tmp_path / "b")
    same_digests = a.digests() == b.digests()
    ra, rb = report(m, tmp_path / "a").summary, report(m, tmp_path / "b").summary
    same_report = ra == rb

    resumed = run(m, tmp_path / "a", resume=True)
    resume_ok = resumed.digests() == a.digests() and all(r.cached for r in resumed.records.values())

    trajs = expert_corpus([PICK], [0], 10, seed=4)
    write_dataset(trajs, tmp_path / "ds")
    back = read_dataset(tmp_path / "ds")
    roundtrip = all(np.array_equal(x.frames, y.frames) and np.array_equal(x.actions, y.actions)
                    and x.instruction == y.instruction for x, y in zip(trajs, back)) and len(back) == 10
    p = tmp_path / "ds" / "episode_00003.bin"
    data = bytearray(p.read_bytes())
    data[len(data) // 2] ^= 0x01
    p.write_bytes(bytes(data))
    try:
        read_dataset(tmp_path / "ds")
        corrupt_detected = False
    except CorruptEpisode:
        corrupt_detected = True
    elapsed = time.time() - t0
    ok = same_digests and same_report and resume_ok and roundtrip and corrupt_detected and elapsed < 600
    record(acceptance_log, 9, ok, f"rerun digests equal={same_digests}, report equal={same_report}, "
                                  f"resume equal={resume_ok}, round-trip={roundtrip}, "
                                  f"corruption detected={corrupt_detected}, {elapsed:.0f}s")
    assert ok
