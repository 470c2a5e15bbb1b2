"""Stage implementations.

Every stage has the signature ``fn(config, inputs, out_dir, seed) -> {output_name: relative_path}``
where ``inputs`` maps input names to paths of upstream outputs.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..actlabel import InverseDynamics, LatentActionCodec
from ..bench import score_videos
from ..datasets import expert_corpus
from ..diffkit import ModelBundle
from ..exceptions import ConfigError
from ..gridsim import default_catalog, evaluate_policy, render
from ..gridsim.evaluation import trial_seed
from ..gridsim.tasks import initial_state
from ..policy import Policy
from ..trajstore import read_dataset, write_dataset
from ..worldmodel import WorldModel

STAGES = {}


def stage(kind):
    def deco(fn):
        STAGES[kind] = fn
        return fn
    return deco


def _need(inputs, *names):
    for n in names:
        if n not in inputs:
            raise ConfigError(f"missing input {n!r}")
    return [inputs[n] for n in names]


def resolve_tasks(config) -> list:
    """``tasks`` x ``envs`` as TaskSpecs; ids may carry an ``@envN`` suffix already."""
    cat = default_catalog()
    try:
        tasks = [cat.task(t) for t in config.get("tasks", [])]
    except KeyError as e:
        raise ConfigError(f"unknown task {e}") from None
    if not tasks:
        raise ConfigError("stage needs a non-empty 'tasks' list")
    envs = config.get("envs")
    if envs is None:
        return tasks
    return [t.with_env(int(e)) for t in tasks for e in envs]


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=True), encoding="utf-8")


def _params(config, cls, drop=()):
    names = set(cls._get_param_names()) - {"seed"} - set(drop)
    return {k: v for k, v in config.items() if k in names}


@stage("gen-teleop")
def gen_teleop(config, inputs, out, seed):
    """Scripted-expert episodes for every (task, env) pair."""
    cat = default_catalog()
    tasks = [cat.task(t) for t in config.get("tasks", [])]
    if not tasks:
        raise ConfigError("gen-teleop needs 'tasks'")
    trajs = expert_corpus(tasks, config.get("envs", [0]), int(config.get("n_per", 10)), seed=seed,
                          agent=config.get("agent", "robot"), with_actions=config.get("with_actions", True),
                          with_states=config.get("with_states", True))
    write_dataset(trajs, out / "data", name="teleop")
    return {"data": "data"}


@stage("pretrain-wm")
def pretrain_wm(config, inputs, out, seed):
    (corpus,) = _need(inputs, "corpus")
    wm = WorldModel(**_params(config, WorldModel), seed=seed).fit(read_dataset(corpus))
    wm.bundle_.save(out / "model.ckpt")
    return {"model": "model.ckpt"}


@stage("finetune-wm")
def finetune_wm(config, inputs, out, seed):
    """LoRA finetune; ``steps: 0`` passes the pretrained model through (the zero-shot variant)."""
    model, data = _need(inputs, "model", "data")
    wm = WorldModel.from_bundle(ModelBundle.load(model))
    steps = int(config.get("steps", 500))
    if steps > 0:
        wm = wm.finetune_lora(read_dataset(data), r=int(config.get("r", 4)), alpha=float(config.get("alpha", 4.0)),
                              lr=float(config.get("lr", 1e-3)), steps=steps, seed=seed)
    wm.bundle_.save(out / "model.ckpt")
    return {"model": "model.ckpt"}


@stage("rollout")
def rollout(config, inputs, out, seed):
    """World-model videos from freshly sampled initial scenes of each prompt task."""
    (model,) = _need(inputs, "model")
    wm = WorldModel.from_bundle(ModelBundle.load(model))
    n_per, T = int(config.get("n_per", 4)), int(config.get("T", 64))
    agent = config.get("agent", "robot")
    trajs = []
    for ti, task in enumerate(resolve_tasks(config)):
        for i in range(n_per):
            s = trial_seed(seed, ti * 100_000 + i)
            f0 = render(initial_state(task, np.random.default_rng(s), agent=agent))
            trajs.append(wm.rollout(f0, task, T=T, seed=s))
    write_dataset(trajs, out / "data", name="rollouts")
    return {"data": "data"}


@stage("label")
def label(config, inputs, out, seed):
    """Pseudo-actions for ``videos`` from an IDM (needs ``train`` with actions) or a latent codec."""
    (videos,) = _need(inputs, "videos")
    vids = read_dataset(videos)
    method = config.get("method", "idm")
    if method not in ("idm", "latent"):
        raise ConfigError(f"label method must be 'idm' or 'latent', got {method!r}")
    cls = InverseDynamics if method == "idm" else LatentActionCodec
    if "labeler" in inputs:  # reuse a labeler trained by another label stage
        labeler = cls.from_bundle(ModelBundle.load(inputs["labeler"]))
    elif method == "idm":
        (train,) = _need(inputs, "train")
        labeler = cls(**_params(config, cls), seed=seed).fit(read_dataset(train))
    else:
        train = read_dataset(inputs["train"]) if "train" in inputs else []
        labeler = cls(**_params(config, cls), seed=seed).fit(train + vids)
    out_trajs = [labeler.label(v, seed=seed) if method == "idm" else labeler.label(v) for v in vids]
    labeler.bundle_.save(out / "labeler.ckpt")
    write_dataset(out_trajs, out / "data", name=f"labeled-{method}")
    return {"data": "data", "labeler": "labeler.ckpt"}


def balanced_prefix(trajs, n: int) -> list:
    """First ``n`` of a round-robin over task ids, so smaller subsets nest inside larger ones."""
    by_task = {}
    for t in trajs:
        by_task.setdefault(t.task_id, []).append(t)
    order = []
    for i in range(max(map(len, by_task.values()), default=0)):
        order += [ts[i] for ts in by_task.values() if i < len(ts)]
    return order[:n]


@stage("train-policy")
def train_policy(config, inputs, out, seed):
    """Co-train on ``real`` and/or ``neural``; ``n_real``/``n_neural`` take a prefix of each set."""
    trajs = []
    for name in ("real", "neural"):
        if name in inputs:
            ds = read_dataset(inputs[name])
            n = config.get(f"n_{name}")
            trajs += ds if n is None else balanced_prefix(ds, int(n))
    if not trajs:
        raise ConfigError("train-policy needs a 'real' or 'neural' input")
    params = _params(config, Policy)
    if "ratio" in params:
        params["ratio"] = tuple(params["ratio"])
    pol = Policy(**params, seed=seed).fit(trajs)
    pol.bundle_.save(out / "policy.ckpt")
    pol.write_metrics(out / "metrics.csv")
    return {"model": "policy.ckpt", "metrics": "metrics.csv"}


@stage("eval")
def evaluate(config, inputs, out, seed):
    """Closed-loop success per task; the result carries the config's ``label`` and ``x`` for reports."""
    (model,) = _need(inputs, "model")
    pol = Policy.from_bundle(ModelBundle.load(model))
    trials = int(config.get("trials", 10))
    per_task = {t.task_id: evaluate_policy(pol, t, trials, seed).mean for t in resolve_tasks(config)}
    _write_json(out / "eval.json", {"label": config.get("label", "policy"), "x": config.get("x"),
                                    "group": config.get("group", ""), "per_task": per_task,
                                    "mean": float(np.mean(list(per_task.values()))), "trials": trials})
    return {"result": "eval.json"}


@stage("bench")
def bench(config, inputs, out, seed):
    """IF / PA scores of every video against its own prompt task."""
    (videos,) = _need(inputs, "videos")
    cat = default_catalog()
    vids = read_dataset(videos)
    rep = score_videos((f"v{i:04d}", v, cat.task(v.task_id), config.get("split", "all")) for i, v in enumerate(vids))
    rep.to_csv(out / "bench.csv")
    rep.to_json(out / "bench.json")
    data = json.loads((out / "bench.json").read_text(encoding="utf-8"))
    data.update(label=config.get("label", "bench"), x=config.get("x"), group=config.get("group", ""))
    _write_json(out / "bench.json", data)
    return {"result": "bench.json", "table": "bench.csv"}
