"""Estimator base class and input validation helpers."""

from __future__ import annotations

import copy

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .diffkit import Adam, ModelBundle, Module
from .exceptions import EmptyDataset, MissingActions, NonFinite, ShapeMismatch
from .trajstore import Trajectory


def check_frame(frame, shape=None) -> np.ndarray:
    f = np.asarray(frame)
    if f.ndim != 3 or f.shape[2] != 3:
        raise ShapeMismatch(f"expected an H x W x 3 frame, got {f.shape}")
    if shape is not None and tuple(f.shape) != tuple(shape):
        raise ShapeMismatch(f"frame shape {f.shape} != {tuple(shape)}")
    return f.astype(np.uint8, copy=False)


def check_trajectories(trajs, require_actions: bool = False, min_len: int = 1) -> list[Trajectory]:
    trajs = list(trajs)
    if not trajs:
        raise EmptyDataset("no trajectories given")
    for t in trajs:
        if not isinstance(t, Trajectory):
            raise TypeError(f"expected Trajectory, got {type(t).__name__}")
        if require_actions and t.actions is None:
            raise MissingActions(f"trajectory {t.task_id or t.seed} has no actions")
        if len(t) < min_len:
            raise ShapeMismatch(f"trajectory shorter than {min_len} transitions")
    return trajs


class NetEstimator(BaseEstimator):
    """sklearn-style wrapper owning a diffkit network in ``model_``."""

    def _check_fitted(self):
        check_is_fitted(self, "model_")

    @property
    def bundle_(self) -> ModelBundle:
        self._check_fitted()
        return ModelBundle.from_model(self.model_, seed=self.seed, meta=self._bundle_meta())

    def _bundle_meta(self) -> dict:
        return {"estimator": type(self).__name__, "params": _jsonable(self.get_params())}

    @classmethod
    def from_bundle(cls, bundle: ModelBundle):
        params = dict(bundle.meta.get("params", {}))
        est = cls(**{k: v for k, v in params.items() if k in cls._get_param_names()})
        est.model_ = bundle.build()
        return est

    def copy(self):
        return copy.deepcopy(self)

    def _train(self, loss_fn, params: dict, steps: int, lr: float, rng: np.random.Generator,
               log_every: int = 0, clip_norm: float | None = 1.0, cosine: bool = False) -> list[float]:
        """Generic Adam loop; ``loss_fn(rng) -> scalar Tensor`` draws its own minibatch.
        ``cosine`` anneals the learning rate to 5% of ``lr``."""
        opt = Adam(params, lr=lr, clip_norm=clip_norm)
        hist = []
        for i in range(steps):
            if cosine:
                opt.lr = lr * (0.05 + 0.95 * 0.5 * (1 + np.cos(np.pi * i / steps)))
            opt.zero_grad()
            loss = loss_fn(rng)
            if not np.isfinite(loss.item()):
                raise NonFinite(f"loss became {loss.item()} at step {i}")
            loss.backward()
            opt.step()
            hist.append(loss.item())
        return hist


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, (int, float, str, bool)) or v is None:
            out[k] = v
        elif isinstance(v, (list, tuple)) and all(isinstance(x, (int, float, str)) for x in v):
            out[k] = list(v)
    return out


def minibatch(rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    return rng.integers(0, n, size=size)


def freeze_copy(model: Module) -> Module:
    return copy.deepcopy(model)


__all__ = ["NetEstimator", "check_frame", "check_trajectories", "minibatch", "freeze_copy"]
