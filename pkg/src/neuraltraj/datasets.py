"""Expert demonstration corpora as trajectories."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .gridsim import default_catalog, render, rollout_actions, scripted_expert
from .gridsim.config import DEFAULT_CONFIG
from .gridsim.evaluation import trial_seed
from .gridsim.tasks import TaskSpec, initial_state
from .features import InstructionEncoding
from .trajstore import Trajectory


def expert_trajectory(task: TaskSpec, seed: int, agent: str = "robot", with_actions: bool = True,
                      with_states: bool = True, encoding: InstructionEncoding | None = None) -> Trajectory:
    enc = encoding or InstructionEncoding(default_catalog())
    s0 = initial_state(task, np.random.default_rng(seed), agent=agent)
    actions = scripted_expert(task, s0, rng_seed=seed)
    states = rollout_actions(s0, actions)
    frames = np.stack([render(s) for s in states])
    acts = np.stack([a.clamped().to_array() for a in actions]) if with_actions else None
    return Trajectory(frames, acts, states if with_states else None, task.instruction,
                      enc.instruction_id(task), "real", DEFAULT_CONFIG.fps, "expert", seed, task.task_id,
                      meta={"agent": agent})


def expert_corpus(tasks: Iterable[TaskSpec], envs: Iterable[int], n_per: int, seed: int = 0,
                  agent: str = "robot", with_actions: bool = True, with_states: bool = True) -> list[Trajectory]:
    """``n_per`` demonstrations for every (task, env) pair; seeds derive from ``seed``."""
    enc = InstructionEncoding(default_catalog())
    out = []
    for ti, task in enumerate(tasks):
        for env in envs:
            t = task.with_env(env)
            for i in range(n_per):
                s = trial_seed(seed, (ti * 1000 + env) * 100_000 + i)
                out.append(expert_trajectory(t, s, agent, with_actions, with_states, enc))
    return out
