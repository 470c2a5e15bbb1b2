"""Experiment manifests, cached stage execution, presets and reports."""

from .manifest import STAGE_KINDS, ExperimentManifest, StageSpec
from .presets import PRESETS, SCALES, build_preset
from .report import Report, report
from .runner import RunResult, load_run, run, tree_digest
from .stages import STAGES

__all__ = ["STAGE_KINDS", "ExperimentManifest", "StageSpec", "PRESETS", "SCALES", "build_preset", "Report",
           "report", "RunResult", "load_run", "run", "tree_digest", "STAGES"]
