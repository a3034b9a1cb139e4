"""Test-double world models that isolate the planner from learning quality.

OracleModel plays a perfectly trained model for one level: every reachable
state gets its own unit embedding, all pairwise distances at least eps
apart (checked, not assumed), and predictions follow the exact transition
graph. CollisionFreeModel is the opposite extreme: every distinct
(embedding, action) pair maps to a fresh pseudo-random unit vector, so no
reidentification ever fires and the search frontier grows like 5^depth.
FaultInjector corrupts a fraction of another model's predictions to
exercise the full planner's error-correction path.
"""
from __future__ import annotations

import hashlib

import numpy as np

from . import envs
from .seeding import rng as make_rng


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt((x * x).sum(axis=1, keepdims=True))


class OracleModel:
    """Exact world model for a single level, backed by its true graph."""

    def __init__(self, level: envs.LevelSpec, d: int = 16, eps: float = 0.1,
                 pool_factor: int = 8):
        self.level = level
        self.d = d
        self.eps = eps
        graph = envs.true_graph(level)
        self.graph = graph
        n = len(graph.vertices)
        self._index = graph.index()

        # Greedy farthest-point placement from a seeded candidate pool.
        rng = make_rng(level.seed, "oracle", envs._ENV_CODE[level.env_id])
        pool = _unit_rows(rng.standard_normal((max(pool_factor * n, 64), d)))
        emb = np.empty((n, d), dtype=np.float64)
        emb[0] = pool[0]
        min_d2 = ((pool - emb[0]) ** 2).sum(axis=1)
        for i in range(1, n):
            j = int(np.argmax(min_d2))
            emb[i] = pool[j]
            min_d2 = np.minimum(min_d2, ((pool - emb[i]) ** 2).sum(axis=1))
        self.embeddings = emb.astype(np.float32)

        if n > 1:
            gram = self.embeddings @ self.embeddings.T
            sq = np.maximum(2.0 - 2.0 * gram, 0.0)
            np.fill_diagonal(sq, np.inf)
            if float(sq.min()) < eps * eps:
                raise RuntimeError(
                    f"oracle embedding separation failed for level "
                    f"{level.env_id}/{level.seed}: min distance "
                    f"{np.sqrt(sq.min()):.4f} < eps {eps}"
                )

        # successor row per (state row, action)
        self.next_idx = np.empty((n, envs.NUM_ACTIONS), dtype=np.int64)
        for pos, i in self._index.items():
            for a in range(envs.NUM_ACTIONS):
                self.next_idx[i, a] = self._index[graph.edges[(pos, a)]]

    def encode(self, obs: np.ndarray) -> np.ndarray:
        pos = envs.agent_position(obs)
        if pos not in self._index:
            raise KeyError(f"state {pos} is not reachable in this level")
        return self.embeddings[self._index[pos]]

    def predict_batch(self, z, actions, context_obs=None) -> np.ndarray:
        """Exact successor embeddings; unknown embeddings are fixed points."""
        z = np.asarray(z, dtype=np.float32)
        actions = np.asarray(actions, dtype=np.int64)
        half_sq = (self.eps / 2) ** 2
        d2 = (
            (z.astype(np.float64) ** 2).sum(axis=1)[:, None]
            + (self.embeddings.astype(np.float64) ** 2).sum(axis=1)[None, :]
            - 2.0 * z.astype(np.float64) @ self.embeddings.astype(np.float64).T
        )
        nearest = d2.argmin(axis=1)
        known = d2[np.arange(z.shape[0]), nearest] < half_sq
        out = z.copy()
        rows = np.nonzero(known)[0]
        out[rows] = self.embeddings[self.next_idx[nearest[rows], actions[rows]]]
        return out

    def predict(self, z, action, context_obs=None) -> np.ndarray:
        return self.predict_batch(np.asarray(z)[None, :], [int(action)])[0]


class CollisionFreeModel:
    """Hash-keyed embeddings: every new (embedding, action) pair produces a
    fresh unit vector, so the latent graph is an infinite 5-ary tree."""

    def __init__(self, d: int = 16, seed: int = 0):
        self.d = d
        self.seed = seed

    def _vec(self, key: bytes) -> np.ndarray:
        digest = hashlib.blake2b(key, digest_size=8,
                                 key=self.seed.to_bytes(8, "little")).digest()
        r = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
        v = r.standard_normal(self.d)
        return (v / np.linalg.norm(v)).astype(np.float32)

    def encode(self, obs: np.ndarray) -> np.ndarray:
        return self._vec(b"obs:" + np.ascontiguousarray(obs).tobytes())

    def predict_batch(self, z, actions, context_obs=None) -> np.ndarray:
        z = np.asarray(z, dtype=np.float32)
        out = np.empty_like(z)
        for i, a in enumerate(np.asarray(actions, dtype=np.int64)):
            out[i] = self._vec(b"step:" + z[i].tobytes() + bytes([int(a)]))
        return out

    def predict(self, z, action, context_obs=None) -> np.ndarray:
        return self.predict_batch(np.asarray(z)[None, :], [int(action)])[0]


class FaultInjector:
    """Wraps a model, replacing each prediction with a random unit vector
    with probability p. Deterministic given its RNG."""

    def __init__(self, base, p: float, rng: np.random.Generator):
        self.base = base
        self.p = p
        self.rng = rng

    def encode(self, obs: np.ndarray) -> np.ndarray:
        return self.base.encode(obs)

    def predict_batch(self, z, actions, context_obs=None) -> np.ndarray:
        out = np.asarray(self.base.predict_batch(z, actions, context_obs))
        flip = self.rng.random(out.shape[0]) < self.p
        k = int(flip.sum())
        if k:
            noise = self.rng.standard_normal((k, out.shape[1]))
            out = out.copy()
            out[flip] = _unit_rows(noise).astype(out.dtype)
        return out

    def predict(self, z, action, context_obs=None) -> np.ndarray:
        return self.predict_batch(np.asarray(z)[None, :], [int(action)], context_obs)[0]
