"""Experiment presets.

Stage ids are shared between presets (``teleop-human``, ``pretrain``, ``label-novel`` ...), so
with one workdir and one manifest seed the expensive upstream stages run once.
"""

from __future__ import annotations

from ..exceptions import ConfigError
from ..gridsim import default_catalog
from .manifest import ExperimentManifest, StageSpec

PICK = "pick_red_square"
# non-pick verbs on which a pick-only policy scores lowest (press, push and uncover partly transfer)
NOVEL = ["close_olive_drawer", "cover_teal_container", "pour_orange_disc", "stack_cyan_square"]
SCALING_TASKS = [PICK, "press_magenta_button", "open_olive_drawer", "pour_orange_disc"]
NEW_ENVS = [3, 4]

SCALES = {
    "full": dict(human_envs=[0, 1, 2, 3, 4], human_n=6, robot_n=100, ft_n=40, wm={"steps": 3000},
                 ft={"steps": 1000, "lr": 1e-3}, idm={"steps": 4000}, codec={"steps": 2000}, rollout_n=40, T=64,
                 policy={"steps": 2000}, trials=20, seeds=[0, 1, 2], scaling_n=10, real_n=20,
                 variants=[250, 750, 1500], augment_real=[10, 30, 100]),
    "smoke": dict(human_envs=[0], human_n=1, robot_n=6, ft_n=4,
                  wm={"steps": 20, "d_model": 16, "n_heads": 2, "hidden": 32, "instr_dim": 8, "batch_size": 32},
                  ft={"steps": 10, "lr": 1e-3}, idm={"steps": 20, "hidden": 32, "batch_size": 64},
                  codec={"steps": 20, "hidden": 32, "batch_size": 64}, rollout_n=2, T=16,
                  policy={"steps": 10, "d_model": 16, "n_heads": 2, "hidden": 32, "instr_dim": 8, "batch_size": 32},
                  trials=2, seeds=[0, 1], scaling_n=1, real_n=4, variants=[5, 10, 15], augment_real=[2, 4]),
}


def _scale(scale):
    if isinstance(scale, dict):
        return scale
    if scale not in SCALES:
        raise ConfigError(f"unknown scale {scale!r}; choose from {sorted(SCALES)}")
    return SCALES[scale]


def _upstream(sc) -> list[StageSpec]:
    tasks = sorted(default_catalog().tasks)
    return [
        StageSpec("teleop-human", "gen-teleop", {"tasks": tasks, "envs": sc["human_envs"], "n_per": sc["human_n"],
                                                 "agent": "human", "with_actions": False, "with_states": False}),
        StageSpec("teleop-robot", "gen-teleop", {"tasks": [PICK], "envs": [0], "n_per": sc["robot_n"]}),
        StageSpec("teleop-ft", "gen-teleop", {"tasks": [PICK], "envs": [0], "n_per": sc["ft_n"],
                                              "with_actions": False, "with_states": False}),
        StageSpec("pretrain", "pretrain-wm", dict(sc["wm"]), {"corpus": "teleop-human"}),
        StageSpec("finetune", "finetune-wm", dict(sc["ft"]), {"model": "pretrain", "data": "teleop-ft"}),
    ]


def _rollout_and_label(sc, tag, tasks, envs=(0,), n_per=None, model="finetune", labeler=None):
    label_in = {"videos": f"rollout-{tag}", "train": "teleop-robot"}
    if labeler:
        label_in = {"videos": f"rollout-{tag}", "labeler": labeler}
    return [
        StageSpec(f"rollout-{tag}", "rollout", {"tasks": tasks, "envs": list(envs), "n_per": n_per or sc["rollout_n"],
                                                "T": sc["T"]}, {"model": model}),
        StageSpec(f"bench-{tag}", "bench", {"label": tag, "group": tag}, {"videos": f"rollout-{tag}"}),
        StageSpec(f"label-{tag}", "label", {"method": "idm", **sc["idm"]}, label_in),
    ]


def _policy_eval(sc, sid, inputs, eval_cfg, policy_cfg=None):
    cfg = dict(sc["policy"], **(policy_cfg or {}))
    return [StageSpec(f"policy-{sid}", "train-policy", cfg, inputs),
            StageSpec(f"eval-{sid}", "eval", {"trials": sc["trials"], **eval_cfg}, {"model": f"policy-{sid}"})]


def behavior_gen(sc) -> list[StageSpec]:
    """Finetune on pick/env0 only, roll out novel verbs, compare real-only against neural-only."""
    stages = _upstream(sc) + _rollout_and_label(sc, "novel", NOVEL)
    for s in sc["seeds"]:
        stages += _policy_eval(sc, f"base-s{s}", {"real": "teleop-robot"}, {"tasks": NOVEL, "label": "baseline"})
        stages += _policy_eval(sc, f"novel-s{s}", {"neural": "label-novel"}, {"tasks": NOVEL, "label": "neural"})
    return stages


def env_gen(sc) -> list[StageSpec]:
    """Prompts start from scenes of environments the robot data never showed."""
    tasks = [f"{PICK}@env{e}" for e in NEW_ENVS]
    stages = _upstream(sc) + _rollout_and_label(sc, "newenv", [PICK], NEW_ENVS)
    for s in sc["seeds"]:
        stages += _policy_eval(sc, f"base-s{s}", {"real": "teleop-robot"}, {"tasks": tasks, "label": "baseline"})
        stages += _policy_eval(sc, f"newenv-s{s}", {"neural": "label-newenv"}, {"tasks": tasks, "label": "neural"})
    return stages


def scaling(sc) -> list[StageSpec]:
    """Fixed real data plus nested neural subsets of N, 2N, 4N, 8N trajectories per task."""
    n_max = 8 * sc["scaling_n"]
    stages = _upstream(sc) + _rollout_and_label(sc, "scaling", SCALING_TASKS, n_per=n_max)
    for s in sc["seeds"]:
        stages += _policy_eval(sc, f"real-s{s}", {"real": "teleop-robot"},
                               {"tasks": SCALING_TASKS, "label": "baseline"}, {"n_real": sc["real_n"]})
        for k in (1, 2, 4, 8):
            n = k * sc["scaling_n"] * len(SCALING_TASKS)
            stages += _policy_eval(sc, f"scale{n}-s{s}", {"real": "teleop-robot", "neural": "label-scaling"},
                                   {"tasks": SCALING_TASKS, "label": "neural", "x": n},
                                   {"n_real": sc["real_n"], "n_neural": n, "exec_head": "n"})
    return stages


def augment(sc) -> list[StageSpec]:
    """Co-training on a seen task with IDM and latent pseudo-labels at several real-data sizes."""
    stages = _upstream(sc) + _rollout_and_label(sc, "augment", [PICK], n_per=2 * sc["rollout_n"])
    stages.append(StageSpec("latent-augment", "label", {"method": "latent", **sc["codec"]},
                            {"videos": "rollout-augment", "train": "teleop-robot"}))
    s = sc["seeds"][0]
    for n in sc["augment_real"]:
        ev = {"tasks": [PICK], "x": n}
        stages += _policy_eval(sc, f"aug-real{n}-s{s}", {"real": "teleop-robot"}, ev | {"label": "baseline"},
                               {"n_real": n})
        stages += _policy_eval(sc, f"aug-idm{n}-s{s}", {"real": "teleop-robot", "neural": "label-augment"},
                               ev | {"label": "idm"}, {"n_real": n})
        stages += _policy_eval(sc, f"aug-latent{n}-s{s}", {"real": "teleop-robot", "neural": "latent-augment"},
                               ev | {"label": "latent"}, {"n_real": n, "neural_target": "latent"})
    return stages


def benchmark(sc) -> list[StageSpec]:
    """World-model variants of increasing pretraining; each gets bench scores and a neural-only policy."""
    stages = _upstream(sc) + _rollout_and_label(sc, "novel", NOVEL)
    variants = [(f"wm{st}", f"pretrain-{st}", f"finetune-{st}") for st in sc["variants"]]
    for (name, pre, ft), st in zip(variants, sc["variants"]):
        stages += [StageSpec(pre, "pretrain-wm", dict(sc["wm"], steps=st), {"corpus": "teleop-human"}),
                   StageSpec(ft, "finetune-wm", dict(sc["ft"]), {"model": pre, "data": "teleop-ft"})]
        stages += _rollout_and_label(sc, name, NOVEL, model=ft, labeler="label-novel:labeler")
    variants.append(("novel", "pretrain", "finetune"))
    s = sc["seeds"][0]
    for name, _, _ in variants:
        stages += _policy_eval(sc, f"bench-{name}-s{s}", {"neural": f"label-{name}"},
                               {"tasks": NOVEL, "label": "neural", "group": name})
    return stages


PRESETS = {"behavior-gen": behavior_gen, "env-gen": env_gen, "scaling": scaling, "augment": augment,
           "benchmark": benchmark}


def build_preset(name: str, scale="full", seed: int = 0) -> ExperimentManifest:
    """Manifest for preset ``name`` at ``scale`` ("full" or "smoke", or a dict like SCALES entries)."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    label = scale if isinstance(scale, str) else "custom"
    return ExperimentManifest(f"{name}-{label}", seed, PRESETS[name](_scale(scale)), preset=name).validate()
