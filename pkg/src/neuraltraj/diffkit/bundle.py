"""Serializable parameter sets and the DKPT1 checkpoint format.

Layout (little-endian): magic b"DKPT1", u32 header length, UTF-8 JSON header
(architecture descriptor, seed, adapter settings, metadata and a list of
``{name, shape}`` blob entries), then each blob's float32 data in header order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..exceptions import CorruptEpisode, SchemaMismatch
from .lora import attach_lora
from .nn import Linear, Module

MAGIC = b"DKPT1"
ARCHITECTURES: dict[str, type] = {}


def register_architecture(name: str):
    def deco(cls):
        cls.arch_name = name
        ARCHITECTURES[name] = cls
        return cls
    return deco


@dataclass
class ModelBundle:
    arch: dict  # {"name": registry key, "config": constructor kwargs}
    params: dict[str, np.ndarray]
    adapters: dict[str, dict] = field(default_factory=dict)  # target -> {"r", "alpha"}
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: Module, seed: int = 0, meta: dict | None = None) -> "ModelBundle":
        adapters = {}
        for name, m in model.named_modules().items():
            if isinstance(m, Linear) and m.lora is not None:
                adapters[name] = {"r": m.lora.r, "alpha": m.lora.alpha}
        arch = {"name": type(model).arch_name, "config": dict(model.config)}
        params = {k: v.astype(np.float32) for k, v in model.state_dict().items()}
        return cls(arch, params, adapters, int(seed), dict(meta or {}))

    def build(self) -> Module:
        cls = ARCHITECTURES[self.arch["name"]]
        model = cls(seed=self.seed, **self.arch["config"])
        groups: dict[tuple, list[str]] = {}
        for t, a in self.adapters.items():
            groups.setdefault((a["r"], a["alpha"]), []).append(t)
        for (r, alpha), targets in groups.items():
            attach_lora(model, targets, r=r, alpha=alpha)
        model.load_state_dict(self.params)
        return model

    @property
    def base_params(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.params.items() if ".lora." not in k}

    def to_bytes(self) -> bytes:
        names = sorted(self.params)
        header = {"arch": self.arch, "seed": self.seed, "adapters": self.adapters, "meta": self.meta,
                  "blobs": [{"name": n, "shape": list(self.params[n].shape)} for n in names]}
        hb = json.dumps(header, sort_keys=True).encode("utf-8")
        parts = [MAGIC, struct.pack("<I", len(hb)), hb]
        parts += [np.ascontiguousarray(self.params[n], dtype="<f4").tobytes() for n in names]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelBundle":
        if data[:5] != MAGIC:
            raise CorruptEpisode("not a DKPT1 checkpoint")
        (n,) = struct.unpack_from("<I", data, 5)
        header = json.loads(data[9:9 + n].decode("utf-8"))
        off = 9 + n
        params = {}
        for b in header["blobs"]:
            size = int(np.prod(b["shape"], dtype=np.int64)) * 4
            if off + size > len(data):
                raise CorruptEpisode(f"truncated blob {b['name']}")
            params[b["name"]] = np.frombuffer(data[off:off + size], dtype="<f4").reshape(b["shape"]).copy()
            off += size
        if off != len(data):
            raise SchemaMismatch("trailing bytes in checkpoint")
        return cls(header["arch"], params, header["adapters"], header["seed"], header["meta"])

    def save(self, path) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(self.to_bytes())
        return p

    @classmethod
    def load(cls, path) -> "ModelBundle":
        return cls.from_bytes(Path(path).read_bytes())

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()
