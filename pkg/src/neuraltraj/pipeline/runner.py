"""Manifest execution with content-addressed stage caching.

Layout under ``workdir``::

    cache/<key>/            outputs of one stage execution plus stage.json
    runs/<manifest>.json    stage id -> cache key and output digests of the last run

A stage key hashes the package version, its kind, config, derived seed and the digests of its
inputs, so identical upstream work is shared between manifests that use the same workdir.
Stages run serially in topological order.
"""

from __future__ import annotations

import hashlib
import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path

from .. import __version__
from ..exceptions import ConfigError, DigestMismatch, MissingOutputs, NeuralTrajError, StageFailure
from .manifest import ExperimentManifest, StageSpec
from .stages import STAGES


def tree_digest(path) -> str:
    """sha256 of a file, or of a directory's sorted (relative path, file sha256) listing."""
    p = Path(path)
    if p.is_file():
        return hashlib.sha256(p.read_bytes()).hexdigest()
    if not p.is_dir():
        raise MissingOutputs(f"missing output {p}")
    h = hashlib.sha256()
    for f in sorted(q for q in p.rglob("*") if q.is_file()):
        h.update(f"{f.relative_to(p).as_posix()}\0{hashlib.sha256(f.read_bytes()).hexdigest()}\n".encode())
    return h.hexdigest()


def stage_key(spec: StageSpec, seed: int, input_digests: dict) -> str:
    payload = {"version": __version__, "kind": spec.kind, "config": spec.config, "seed": seed, "inputs": input_digests}
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()


@dataclass
class StageRecord:
    id: str
    kind: str
    key: str
    seed: int
    inputs: dict
    outputs: dict  # name -> {"path": relative to the cache dir, "digest": ...}
    primary: str = ""  # output used when an input reference names only the stage
    cached: bool = False

    def to_json(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k != "cached"}


@dataclass
class RunResult:
    manifest: ExperimentManifest
    workdir: Path
    records: dict = field(default_factory=dict)

    def path(self, sid: str, output: str | None = None) -> Path:
        rec = self.records[sid]
        name = output or rec.primary
        return self.workdir / "cache" / rec.key / rec.outputs[name]["path"]

    def digests(self) -> dict:
        return {sid: {k: o["digest"] for k, o in r.outputs.items()} for sid, r in self.records.items()}


def _resolve_input(records, spec, name, sid, output):
    rec = records[sid]
    if output is None:
        output = rec.primary
    if output not in rec.outputs:
        raise ConfigError(f"stage {spec.id!r}: {sid!r} has no output {output!r}")
    return rec, output


def _check_cached(cdir: Path, key: str) -> dict | None:
    meta = cdir / "stage.json"
    if not meta.is_file():
        return None
    stored = json.loads(meta.read_text(encoding="utf-8"))
    for name, o in stored["outputs"].items():
        actual = tree_digest(cdir / o["path"]) if (cdir / o["path"]).exists() else None
        if actual != o["digest"]:
            raise DigestMismatch(f"cached output {name!r} of stage {stored['id']!r} ({key[:12]}) changed on disk")
    return stored


def run(manifest: ExperimentManifest, workdir, resume: bool = False, log=None) -> RunResult:
    """Execute every stage; with ``resume`` a stage whose cache entry verifies is skipped."""
    manifest.validate()
    workdir = Path(workdir)
    res = RunResult(manifest, workdir)
    say = log or (lambda msg: None)
    for spec in manifest.order():
        seed = manifest.stage_seed(spec)
        inputs, in_paths = {}, {}
        for name, (sid, output) in spec.upstream().items():
            rec, output = _resolve_input(res.records, spec, name, sid, output)
            digest = rec.outputs[output]["digest"]
            if name in spec.expect and spec.expect[name] != digest:
                raise DigestMismatch(f"stage {spec.id!r}: input {name!r} has digest {digest[:12]}, "
                                     f"manifest expects {spec.expect[name][:12]}")
            inputs[name] = digest
            in_paths[name] = res.path(sid, output)
        key = stage_key(spec, seed, inputs)
        cdir = workdir / "cache" / key
        stored = _check_cached(cdir, key) if resume else None
        if stored is not None:
            res.records[spec.id] = StageRecord(spec.id, spec.kind, key, seed, inputs, stored["outputs"],
                                              stored["primary"], cached=True)
            say(f"[{spec.id}] cached {key[:12]}")
            continue
        if cdir.exists():
            shutil.rmtree(cdir)
        cdir.mkdir(parents=True)
        say(f"[{spec.id}] running {spec.kind}")
        try:
            outs = STAGES[spec.kind](spec.config, in_paths, cdir, seed)
        except ConfigError as e:
            raise StageFailure(spec.id, f"config error: {e}") from e
        except NeuralTrajError as e:
            raise StageFailure(spec.id, str(e)) from e
        except Exception as e:  # any crash inside a stage is reported against its id
            raise StageFailure(spec.id, f"{type(e).__name__}: {e}") from e
        rec = StageRecord(spec.id, spec.kind, key, seed, inputs,
                          {n: {"path": p, "digest": tree_digest(cdir / p)} for n, p in outs.items()},
                          next(iter(outs)))
        (cdir / "stage.json").write_text(json.dumps(rec.to_json(), indent=1, sort_keys=True), encoding="utf-8")
        res.records[spec.id] = rec
    runs = workdir / "runs"
    runs.mkdir(parents=True, exist_ok=True)
    (runs / f"{manifest.name}.json").write_text(
        json.dumps({"manifest": manifest.to_json(), "stages": {k: r.to_json() for k, r in res.records.items()}},
                   indent=1, sort_keys=True), encoding="utf-8")
    return res


def load_run(manifest: ExperimentManifest, workdir) -> RunResult:
    """Reopen the last completed run of ``manifest``; every output must still exist."""
    workdir = Path(workdir)
    f = workdir / "runs" / f"{manifest.name}.json"
    if not f.is_file():
        raise MissingOutputs(f"no completed run of {manifest.name!r} under {workdir}")
    data = json.loads(f.read_text(encoding="utf-8"))
    res = RunResult(manifest, workdir)
    for sid, r in data["stages"].items():
        res.records[sid] = StageRecord(**r)
    missing = [s.id for s in manifest.stages if s.id not in res.records]
    if missing:
        raise MissingOutputs(f"stages without outputs: {missing}")
    for sid in res.records:
        for name in res.records[sid].outputs:
            if not res.path(sid, name).exists():
                raise MissingOutputs(f"output {name!r} of stage {sid!r} is missing: {res.path(sid, name)}")
    return res
