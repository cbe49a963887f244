"""Count-table skill predictors with add-epsilon smoothing and an optional mask.

``q(z | c) = (n[c, z] + eps) / sum_{z' allowed} (n[c, z'] + eps)``, and exactly 0
for masked-out z. In the tabular setting the count update is the exact
maximum-likelihood step, so the predictor converges to the empirical posterior.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

import numpy as np

NEG_INF = float("-inf")


class CountDiscriminator:
    def __init__(self, context_count: int, z_count: int, epsilon: float = 0.5,
                 mask: np.ndarray | None = None):
        if context_count < 1 or z_count < 1:
            raise ValueError("context_count and z_count must be positive")
        if not epsilon > 0:
            raise ValueError("epsilon must be > 0")
        self.context_count = int(context_count)
        self.z_count = int(z_count)
        self.epsilon = float(epsilon)
        self.counts = np.zeros((self.context_count, self.z_count), dtype=np.int64)
        self.mask: np.ndarray | None = None
        if mask is not None:
            self.set_mask(mask)

    def _check(self, context, z) -> None:
        if not 0 <= context < self.context_count:
            raise IndexError(f"context {context} outside [0, {self.context_count})")
        if not 0 <= z < self.z_count:
            raise IndexError(f"z {z} outside [0, {self.z_count})")

    def observe(self, context: int, z: int) -> None:
        self._check(context, z)
        self.counts[context, z] += 1

    def observe_batch(self, contexts: np.ndarray, zs: np.ndarray) -> None:
        contexts = np.asarray(contexts, dtype=np.int64)
        zs = np.asarray(zs, dtype=np.int64)
        if contexts.size == 0:
            return
        if (contexts.min() < 0 or contexts.max() >= self.context_count
                or zs.min() < 0 or zs.max() >= self.z_count):
            raise IndexError("observation outside the table")
        flat = np.bincount(contexts * self.z_count + zs, minlength=self.counts.size)
        self.counts += flat.reshape(self.counts.shape)

    def set_mask(self, allowed: np.ndarray) -> None:
        allowed = np.asarray(allowed, dtype=bool)
        if allowed.shape != self.counts.shape:
            raise ValueError(f"mask shape {allowed.shape} != table shape {self.counts.shape}")
        if not allowed.any(axis=1).all():
            raise ValueError("every context needs at least one allowed z")
        self.mask = None if allowed.all() else allowed

    def _weights(self, contexts) -> np.ndarray:
        w = self.counts[contexts] + self.epsilon
        if self.mask is not None:
            w = np.where(self.mask[contexts], w, 0.0)
        return w

    def probs(self, context: int) -> np.ndarray:
        """Full predictive distribution over z for one context."""
        self._check(context, 0)
        w = self._weights(context)
        return w / w.sum()

    def predict_prob(self, context: int, z: int) -> float:
        self._check(context, z)
        return float(self.probs(context)[z])

    def predict_logprob(self, context: int, z: int) -> float:
        self._check(context, z)
        if self.mask is not None and not self.mask[context, z]:
            return NEG_INF
        w = self._weights(context)
        return float(np.log(w[z]) - np.log(w.sum()))

    def prob_batch(self, contexts: np.ndarray, zs: np.ndarray) -> np.ndarray:
        contexts = np.asarray(contexts, dtype=np.int64)
        w = self._weights(contexts)
        return w[np.arange(len(contexts)), zs] / w.sum(axis=1)

    def logprob_batch(self, contexts: np.ndarray, zs: np.ndarray) -> np.ndarray:
        contexts = np.asarray(contexts, dtype=np.int64)
        w = self._weights(contexts)
        with np.errstate(divide="ignore"):
            return np.log(w[np.arange(len(contexts)), zs]) - np.log(w.sum(axis=1))

    def predict_batch(self, contexts: np.ndarray) -> np.ndarray:
        """Argmax z per context; ties go to the smallest z."""
        return np.argmax(self._weights(np.asarray(contexts, dtype=np.int64)), axis=1)

    def accuracy(self, dataset: Iterable[tuple[int, int]]) -> float:
        pairs = np.asarray(list(dataset), dtype=np.int64).reshape(-1, 2)
        if len(pairs) == 0:
            raise ValueError("accuracy needs a non-empty dataset")
        return self.accuracy_batch(pairs[:, 0], pairs[:, 1])

    def accuracy_batch(self, contexts: np.ndarray, zs: np.ndarray) -> float:
        if len(contexts) == 0:
            raise ValueError("accuracy needs a non-empty dataset")
        return float(np.mean(self.predict_batch(contexts) == np.asarray(zs)))

    # --- persistence: {"context_count", "z_count", "epsilon", "counts": row-major, "mask"?}

    def to_dict(self) -> dict:
        d = {"context_count": self.context_count, "z_count": self.z_count,
             "epsilon": self.epsilon, "counts": self.counts.ravel().tolist()}
        if self.mask is not None:
            d["mask"] = self.mask.ravel().astype(int).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CountDiscriminator":
        disc = cls(d["context_count"], d["z_count"], d["epsilon"])
        disc.counts = np.asarray(d["counts"], dtype=np.int64).reshape(disc.counts.shape)
        if "mask" in d:
            disc.set_mask(np.asarray(d["mask"], dtype=bool).reshape(disc.counts.shape))
        return disc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "CountDiscriminator":
        return cls.from_dict(json.loads(Path(path).read_text()))
