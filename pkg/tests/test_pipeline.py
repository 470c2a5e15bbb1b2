import csv
import json
import shutil
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neuraltraj.cli import main
from neuraltraj.exceptions import ConfigError, DigestMismatch, MissingOutputs, StageFailure
from neuraltraj.pipeline import ExperimentManifest, StageSpec, build_preset, report, run
from neuraltraj.pipeline.presets import NEW_ENVS, NOVEL, PICK
from neuraltraj.pipeline.stages import balanced_prefix
from neuraltraj.trajstore import Trajectory, read_dataset


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    wd = tmp_path_factory.mktemp("wd")
    m = build_preset("behavior-gen", "smoke")
    return m, wd, run(m, wd)


def tiny_manifest(**policy):
    return ExperimentManifest("tiny", 5, [
        StageSpec("teleop", "gen-teleop", {"tasks": [PICK], "n_per": 2}),
        StageSpec("policy", "train-policy", {"steps": 3, "d_model": 8, "n_heads": 2, "hidden": 8, "instr_dim": 4,
                                             **policy}, {"real": "teleop"}),
        StageSpec("eval", "eval", {"tasks": [PICK], "trials": 1}, {"model": "policy"}),
    ])


def test_manifest_json_roundtrip(tmp_path):
    m = build_preset("scaling", "smoke", seed=3)
    back = ExperimentManifest.load(m.save(tmp_path / "m.json"))
    assert back.to_json() == m.to_json()
    assert [s.id for s in back.order()] == [s.id for s in m.order()]


@pytest.mark.parametrize("stages", [
    [],
    [StageSpec("a", "no-such-kind")],
    [StageSpec("a", "eval", inputs={"model": "missing"})],
    [StageSpec("a", "eval"), StageSpec("a", "bench")],
    [StageSpec("a", "eval", inputs={"model": "b"}), StageSpec("b", "eval", inputs={"model": "a"})],
    [StageSpec("a", "eval", expect={"model": "00"})],
])
def test_invalid_manifests(stages):
    with pytest.raises(ConfigError):
        ExperimentManifest("bad", 0, stages).validate()


def test_load_rejects_garbage(tmp_path):
    (tmp_path / "m.json").write_text("[1, 2]")
    with pytest.raises(ConfigError):
        ExperimentManifest.load(tmp_path / "m.json")
    with pytest.raises(ConfigError):
        ExperimentManifest.from_json({"name": "x", "stages": [], "bogus": 1})


def test_stage_seed_derivation():
    m = build_preset("behavior-gen", "smoke", seed=0)
    seeds = {s.id: m.stage_seed(s) for s in m.stages}
    assert len(set(seeds.values())) == len(seeds)
    assert seeds == {s.id: build_preset("behavior-gen", "smoke", seed=0).stage_seed(s) for s in m.stages}
    other = build_preset("behavior-gen", "smoke", seed=1)
    assert all(other.stage_seed(s) != seeds[s.id] for s in other.stages)
    assert m.stage_seed(StageSpec("x", "eval", {"seed": 17})) == 17


def test_preset_shapes():
    sc = build_preset("scaling")
    counts = sorted({s.config["n_neural"] for s in sc.stages if s.kind == "train-policy" and "n_neural" in s.config})
    assert len(counts) >= 4 and counts == [counts[0] * k for k in (1, 2, 4, 8)]
    real_sizes = {s.config.get("n_real") for s in sc.stages if s.kind == "train-policy"}
    assert len(real_sizes) == 1

    bg = build_preset("behavior-gen")
    ft = bg.stage(bg.stage("finetune").inputs["data"])
    assert ft.config["tasks"] == [PICK] and ft.config["envs"] == [0]
    assert bg.stage("rollout-novel").config["tasks"] == NOVEL and len(NOVEL) == 4
    neural = [s for s in bg.stages if s.kind == "train-policy" and set(s.inputs) == {"neural"}]
    assert len(neural) == 3

    eg = build_preset("env-gen")
    robot_envs = set(eg.stage("teleop-robot").config["envs"]) | set(eg.stage("teleop-ft").config["envs"])
    assert set(eg.stage("rollout-newenv").config["envs"]) == set(NEW_ENVS)
    assert not robot_envs & set(NEW_ENVS)

    bm = build_preset("benchmark")
    assert len({s.config["group"] for s in bm.stages if s.kind == "eval"}) >= 4
    with pytest.raises(ConfigError):
        build_preset("nope")


def test_rerun_is_bit_identical(smoke, tmp_path):
    m, wd, first = smoke
    second = run(m, tmp_path)
    assert first.digests() == second.digests()
    a = report(m, wd, tmp_path / "ra").summary
    b = report(m, tmp_path, tmp_path / "rb").summary
    assert a == b


def test_resume_skips_and_matches(smoke, tmp_path):
    m, wd, first = smoke
    shutil.copytree(wd, tmp_path / "wd")
    again = run(m, tmp_path / "wd", resume=True)
    assert all(r.cached for r in again.records.values())
    assert again.digests() == first.digests()


def test_partial_then_resumed_equals_scratch(smoke, tmp_path):
    m, _, first = smoke
    head = ExperimentManifest(m.name, m.seed, m.stages[:5], preset=m.preset)
    run(head, tmp_path)
    full = run(m, tmp_path, resume=True)
    assert sum(r.cached for r in full.records.values()) == 5
    assert full.digests() == first.digests()


def test_tampered_cache_is_detected(smoke, tmp_path):
    m, wd, first = smoke
    shutil.copytree(wd, tmp_path / "wd")
    res = run(m, tmp_path / "wd", resume=True)
    ckpt = res.path("pretrain", "model")
    ckpt.write_bytes(ckpt.read_bytes()[:-1] + b"\0")
    with pytest.raises(DigestMismatch):
        run(m, tmp_path / "wd", resume=True)
    fresh = run(m, tmp_path / "wd")  # a non-resumed run recomputes over the damage
    assert fresh.digests() == first.digests()


def test_declared_input_digest(smoke, tmp_path):
    m, _, first = smoke
    good = first.digests()["teleop-human"]["data"]
    stages = [StageSpec(s.id, s.kind, s.config, s.inputs, dict(s.expect)) for s in m.stages[:4]]
    stages[3].expect["corpus"] = good
    ok = run(ExperimentManifest(m.name, m.seed, stages), tmp_path)
    assert ok.digests()["pretrain"] == first.digests()["pretrain"]
    stages[3].expect["corpus"] = "0" * 64
    with pytest.raises(DigestMismatch):
        run(ExperimentManifest(m.name, m.seed, stages), tmp_path)


def test_stage_failure_names_stage(tmp_path):
    m = tiny_manifest(d_model=-1)
    with pytest.raises(StageFailure) as ei:
        run(m, tmp_path)
    assert ei.value.stage_id == "policy"


def test_report_contract(smoke, tmp_path):
    m, wd, _ = smoke
    rep = report(m, wd, tmp_path / "rep")
    rows = list(csv.DictReader(open(rep.files["results"])))
    labels = defaultdict(set)
    for r in rows:
        labels[r["task"]].add(r["label"])
    assert set(labels) == set(NOVEL)
    assert all(v == {"baseline", "neural"} for v in labels.values())
    sums = defaultdict(float)
    for r in rows:
        sums[r["label"]] += float(r["mean"])
    summary = json.loads(rep.files["summary"].read_text())
    for label, xs in summary["labels"].items():
        assert sums[label] == pytest.approx(xs[""]["sum"], abs=1e-9)
        assert xs[""]["mean"] == pytest.approx(sums[label] / len(NOVEL), abs=1e-9)
    assert rep.files["strips"] and all(p.read_bytes()[:4] == b"\x89PNG" for p in rep.files["strips"])
    assert "| task | baseline | neural |" in rep.files["markdown"].read_text()


def test_report_missing_outputs(smoke, tmp_path):
    m, wd, _ = smoke
    shutil.copytree(wd, tmp_path / "wd")
    res = run(m, tmp_path / "wd", resume=True)
    res.path("eval-novel-s0", "result").unlink()
    with pytest.raises(MissingOutputs):
        report(m, tmp_path / "wd")
    with pytest.raises(MissingOutputs):
        report(tiny_manifest(), tmp_path / "never-ran")


def test_rollout_stage_outputs_neural_videos(smoke):
    _, _, res = smoke
    vids = read_dataset(res.path("rollout-novel", "data"))
    assert {v.task_id.split("@")[0] for v in vids} == set(NOVEL)
    assert all(v.embodiment == "neural" and v.actions is None for v in vids)
    labeled = read_dataset(res.path("label-novel", "data"))
    assert all(v.actions is not None and len(v.actions) == len(v.frames) - 1 for v in labeled)


@given(st.lists(st.sampled_from("abc"), min_size=1, max_size=30), st.integers(0, 30), st.integers(0, 30))
@settings(max_examples=60, deadline=None)
def test_balanced_prefix_nests_and_balances(tasks, n, m):
    frames = np.zeros((2, 4, 4, 3), np.uint8)
    trajs = [Trajectory(frames, task_id=t, seed=i) for i, t in enumerate(tasks)]
    a, b = balanced_prefix(trajs, min(n, m)), balanced_prefix(trajs, max(n, m))
    assert b[:len(a)] == a
    assert len(b) == min(max(n, m), len(trajs))
    counts = defaultdict(int)
    for t in b:
        counts[t.task_id] += 1
    avail = defaultdict(int)
    for t in tasks:
        avail[t] += 1
    full = [k for k in counts if counts[k] < avail[k]]  # tasks not yet exhausted stay within one of each other
    if full:
        assert max(counts.values()) - min(counts[k] for k in full) <= 1


def test_cli_end_to_end(tmp_path, capsys):
    mpath = tiny_manifest().save(tmp_path / "m.json")
    assert main(["run", str(mpath), "--workdir", str(tmp_path / "wd")]) == 0
    assert main(["run", str(mpath), "--workdir", str(tmp_path / "wd"), "--resume", "--no-report"]) == 0
    assert main(["report", str(mpath), "--workdir", str(tmp_path / "wd")]) == 0
    assert "| task | policy |" in capsys.readouterr().out
    assert main(["report", str(mpath), "--workdir", str(tmp_path / "other")]) == 2
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    tiny_manifest(d_model=-1).save(tmp_path / "bad.json")
    assert main(["run", str(tmp_path / "bad.json"), "--workdir", str(tmp_path / "wd")]) == 3
    out = tmp_path / "teleop"
    assert main(["gen-teleop", "--tasks", PICK, "--n-per", "1", "--out", str(out)]) == 0
    assert len(read_dataset(out / "data")) == 1
    assert main(["gen-teleop", "--tasks", "no_such_task", "--out", str(out)]) == 3
    assert main(["label", "--videos", str(out / "data"), "--out", str(tmp_path / "l")]) == 2
    assert main(["train-policy", "--real", str(tmp_path / "nowhere"), "--out", str(tmp_path / "p")]) == 2
    assert main(["preset", "scaling", "--scale", "smoke", "--out", str(tmp_path / "s.json")]) == 0
    assert ExperimentManifest.load(tmp_path / "s.json").preset == "scaling"


@pytest.mark.parametrize("verb", ["gen-teleop", "pretrain-wm", "finetune-wm", "rollout", "label", "train-policy",
                                  "eval", "bench", "run", "report"])
def test_cli_help_documents_defaults(verb, capsys):
    with pytest.raises(SystemExit) as ei:
        main([verb, "--help"])
    assert ei.value.code == 0
    text = capsys.readouterr().out
    assert "--" in text and ("default" in text or verb in ("bench",))


def test_cli_usage_error_exit_code():
    with pytest.raises(SystemExit) as ei:
        main(["eval"])
    assert ei.value.code == 2
