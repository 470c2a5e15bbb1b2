from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_CONFIG, SimConfig
from .expert import scripted_expert
from .physics import step
from .render import render
from .state import Action, SimState
from .tasks import TaskSpec, credit, initial_state


@dataclass
class Episode:
    task: TaskSpec
    states: list[SimState]
    actions: list[Action]
    frames: list[np.ndarray]
    seed: int


def generate_episode(task: TaskSpec, seed: int, agent: str = "robot",
                     config: SimConfig = DEFAULT_CONFIG) -> Episode:
    """Sample a scene and record the scripted expert solving it."""
    rng = np.random.default_rng(seed)
    s0 = initial_state(task, rng, agent=agent)
    actions = scripted_expert(task, s0, rng_seed=seed, config=config)
    states = [s0]
    for a in actions:
        states.append(step(states[-1], a, config))
    frames = [render(s, config) for s in states]
    return Episode(task, states, actions, frames, seed)


@dataclass
class ScoreSummary:
    mean: float
    scores: list[float] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)

    @classmethod
    def from_scores(cls, scores, seeds=None):
        scores = [float(s) for s in scores]
        return cls(float(np.mean(scores)) if scores else 0.0, scores, list(seeds or range(len(scores))))


def trial_seed(rng_seed: int, i: int) -> int:
    return int(np.random.SeedSequence([rng_seed, i]).generate_state(1)[0])


def evaluate_policy(policy, task: TaskSpec, n_trials: int = 10, rng_seed: int = 0,
                    config: SimConfig = DEFAULT_CONFIG, horizon: int | None = None) -> ScoreSummary:
    """Closed-loop rollouts with randomized placement; each trial scores its best partial credit.

    ``policy`` needs ``act(frame, instruction) -> (H, 3) array``; an optional
    ``reset(task, state)`` hook is called at the start of every trial.  Policies
    with a true ``wants_state`` attribute also receive the current sim state.
    """
    horizon = horizon or config.t_max
    scores, seeds = [], []
    for i in range(n_trials):
        seed = trial_seed(rng_seed, i)
        state = initial_state(task, np.random.default_rng(seed))
        if hasattr(policy, "reset"):
            policy.reset(task, state)
        best = credit(task, state)
        t = 0
        while t < horizon and best < 1.0:
            frame = render(state, config)
            out = policy.act(frame, task.instruction, state) if getattr(policy, "wants_state", False) \
                else policy.act(frame, task.instruction)
            chunk = np.atleast_2d(np.asarray(out, dtype=np.float64))
            for a in chunk:
                state = step(state, Action.from_array(a), config)
                t += 1
                best = max(best, credit(task, state))
                if t >= horizon or best >= 1.0:
                    break
        scores.append(best)
        seeds.append(seed)
    return ScoreSummary.from_scores(scores, seeds)


class ExpertPolicy:
    """The scripted expert exposed through the policy interface."""

    def __init__(self, config: SimConfig = DEFAULT_CONFIG, seed: int = 0):
        self.config = config
        self.seed = seed
        self._queue: list[Action] = []

    def reset(self, task, state):
        self._queue = list(scripted_expert(task, state, self.seed, self.config))

    def act(self, frame, instruction):
        a = self._queue.pop(0) if self._queue else Action(0.0, 0.0, -1.0)
        return a.to_array()[None]


class ConstantPolicy:
    def __init__(self, action=(0.0, 0.0, 0.0)):
        self.action = np.asarray(action, dtype=np.float32)

    def act(self, frame, instruction):
        return self.action[None]


class RandomPolicy:
    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def act(self, frame, instruction):
        return self.rng.uniform(-1, 1, size=(1, 3))
