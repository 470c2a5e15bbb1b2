"""Deterministic 2D tabletop manipulation simulator."""

from .config import DEFAULT_CONFIG, PALETTE, SimConfig
from .evaluation import (
    ConstantPolicy,
    Episode,
    ExpertPolicy,
    RandomPolicy,
    ScoreSummary,
    evaluate_policy,
    generate_episode,
)
from .expert import scripted_expert
from .io import save_png_strip
from .physics import rollout_actions, step
from .render import DecodedEntity, DecodedState, inverse_render, render
from .state import NULL_ACTION, Action, ObjectState, SimState, validate_state
from .tasks import (
    VERBS,
    Catalog,
    Query,
    SceneView,
    TaskSpec,
    credit,
    default_catalog,
    initial_state,
    is_success,
    load_catalog,
)

__all__ = [
    "DEFAULT_CONFIG", "PALETTE", "SimConfig", "ConstantPolicy", "Episode", "ExpertPolicy",
    "RandomPolicy", "ScoreSummary", "evaluate_policy", "generate_episode", "scripted_expert",
    "save_png_strip", "rollout_actions", "step", "DecodedEntity", "DecodedState",
    "inverse_render", "render", "NULL_ACTION", "Action", "ObjectState", "SimState",
    "validate_state", "VERBS", "Catalog", "Query", "SceneView", "TaskSpec", "credit",
    "default_catalog", "initial_state", "is_success", "load_catalog",
]
