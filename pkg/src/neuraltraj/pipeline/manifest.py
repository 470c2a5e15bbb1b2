"""Experiment manifests: a JSON stage graph with per-stage configs and a single seed."""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..exceptions import ConfigError

STAGE_KINDS = ("gen-teleop", "pretrain-wm", "finetune-wm", "rollout", "label", "train-policy", "eval", "bench")


@dataclass
class StageSpec:
    """One node of the graph.

    ``inputs`` maps an input name to an upstream ``"stage_id"`` or ``"stage_id:output"``.
    ``expect`` optionally pins the digest an input must have.
    """

    id: str
    kind: str
    config: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    expect: dict = field(default_factory=dict)

    def upstream(self) -> dict[str, tuple[str, str | None]]:
        out = {}
        for name, ref in self.inputs.items():
            sid, _, output = str(ref).partition(":")
            out[name] = (sid, output or None)
        return out


@dataclass
class ExperimentManifest:
    name: str
    seed: int = 0
    stages: list[StageSpec] = field(default_factory=list)
    preset: str = ""
    report_dir: str = "report"

    def __post_init__(self):
        self.stages = [s if isinstance(s, StageSpec) else StageSpec(**s) for s in self.stages]

    def stage(self, sid: str) -> StageSpec:
        for s in self.stages:
            if s.id == sid:
                return s
        raise ConfigError(f"no stage {sid!r}")

    def stage_seed(self, spec: StageSpec) -> int:
        """Per-stage seed: an explicit ``config["seed"]`` wins, else SeedSequence(manifest seed, crc32(id))."""
        if "seed" in spec.config:
            return int(spec.config["seed"])
        return int(np.random.SeedSequence([self.seed, zlib.crc32(spec.id.encode())]).generate_state(1)[0])

    def validate(self) -> "ExperimentManifest":
        if not self.stages:
            raise ConfigError("manifest has no stages")
        ids = [s.id for s in self.stages]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate stage ids")
        for s in self.stages:
            if s.kind not in STAGE_KINDS:
                raise ConfigError(f"stage {s.id!r}: unknown kind {s.kind!r}")
            for name, (sid, _) in s.upstream().items():
                if sid not in ids:
                    raise ConfigError(f"stage {s.id!r}: input {name!r} refers to unknown stage {sid!r}")
            if set(s.expect) - set(s.inputs):
                raise ConfigError(f"stage {s.id!r}: expected digests for undeclared inputs")
        self.order()
        return self

    def order(self) -> list[StageSpec]:
        """Topological order, stable with respect to the listed order."""
        done, out = set(), []
        pending = list(self.stages)
        while pending:
            ready = [s for s in pending if all(sid in done for sid, _ in s.upstream().values())]
            if not ready:
                raise ConfigError("stage graph has a cycle")
            for s in ready:
                done.add(s.id)
                out.append(s)
            pending = [s for s in pending if s.id not in done]
        return out

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, path) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(self.to_json(), indent=1, sort_keys=True), encoding="utf-8")
        return p

    @classmethod
    def from_json(cls, d: dict) -> "ExperimentManifest":
        if not isinstance(d, dict) or "name" not in d:
            raise ConfigError("manifest must be a JSON object with a name")
        try:
            return cls(**d).validate()
        except TypeError as e:
            raise ConfigError(f"bad manifest: {e}") from None

    @classmethod
    def load(cls, path) -> "ExperimentManifest":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read manifest {path}: {e}") from None
        return cls.from_json(d)
