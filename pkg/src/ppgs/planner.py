"""Latent-graph planners.

one_shot_plan grows a breadth-first latent graph from the initial
embedding using only the world model: each depth expands every leaf with
all five actions, discards children that reidentify with an already
visited vertex, resolves conflicts among the survivors, and stops as soon
as a leaf reidentifies with the goal embedding.

full_plan_episode wraps the one-shot planner in an execute/verify/replan
loop: it walks the plan in the real environment, compares each observed
embedding against the predicted latent trajectory, stores every observed
transition in a lookup table that overrides the learned forward model,
and replans (with a short horizon) whenever predictions diverge or the
plan runs out.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import envs, kernels


CUTOFF = 256
DEFAULT_TMAX = 64
REPLAN_TMAX = 10


@dataclass
class SearchStats:
    fringe_sizes: list = field(default_factory=list)
    expanded: int = 0
    replans: int = 0


@dataclass
class PlanResult:
    actions: list
    solved: bool
    stats: SearchStats = field(default_factory=SearchStats)
    steps: int = 0

    def to_json(self, level_seed: int, mode: str) -> str:
        return json.dumps(
            {
                "level_seed": level_seed,
                "mode": mode,
                "solved": self.solved,
                "actions": [int(a) for a in self.actions],
                "stats": {
                    "fringe_sizes": list(self.stats.fringe_sizes),
                    "expanded": self.stats.expanded,
                    "replans": self.stats.replans,
                },
            }
        )


def reidentify(z1: np.ndarray, z2: np.ndarray, eps: float) -> bool:
    """True iff the embeddings are within (strictly) eps/2 of each other."""
    diff = np.asarray(z1, dtype=np.float64) - np.asarray(z2, dtype=np.float64)
    return float(diff @ diff) < (eps / 2) ** 2


def filter_candidates(z: np.ndarray, eps: float, rng: np.random.Generator,
                      cutoff: int = CUTOFF) -> np.ndarray:
    """Indices of candidates surviving conflict resolution and the cutoff.

    Conflicting pairs (distance < eps/2) are resolved by greedily removing
    the highest-degree vertex of the conflict graph (lowest index on ties);
    if more than `cutoff` survive, a uniform subsample keeps input order.
    """
    n = z.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    keep = kernels.conflict_keep_mask(z, (eps / 2) ** 2)
    idx = np.nonzero(keep)[0]
    if idx.shape[0] > cutoff:
        chosen = rng.choice(idx.shape[0], size=cutoff, replace=False)
        idx = idx[np.sort(chosen)]
    return idx


class TransitionTable:
    """Append-only store of observed latent transitions (z, a, z')."""

    def __init__(self, d: int):
        self.d = d
        self._keys: list[np.ndarray] = []
        self._actions: list[int] = []
        self._vals: list[np.ndarray] = []
        self._key_mat = np.empty((0, d), dtype=np.float32)
        self._act_arr = np.empty(0, dtype=np.int64)

    def __len__(self) -> int:
        return len(self._keys)

    def append(self, z: np.ndarray, action: int, z_next: np.ndarray) -> None:
        self._keys.append(np.asarray(z, dtype=np.float32))
        self._actions.append(int(action))
        self._vals.append(np.asarray(z_next, dtype=np.float32))
        self._key_mat = None  # invalidate cache

    def _mats(self):
        if self._key_mat is None:
            self._key_mat = np.stack(self._keys) if self._keys else np.empty((0, self.d), np.float32)
            self._act_arr = np.asarray(self._actions, dtype=np.int64)
        return self._key_mat, self._act_arr

    def lookup_batch(self, z: np.ndarray, actions, eps: float) -> np.ndarray:
        """First-match table index per row, -1 where the model must be used."""
        if not self._keys:
            return np.full(z.shape[0], -1, dtype=np.int64)
        keys, acts = self._mats()
        return kernels.table_first_match(keys, acts, z, np.asarray(actions),
                                         (eps / 2) ** 2)

    def value(self, idx: int) -> np.ndarray:
        return self._vals[idx]


def predict_with_table(model, table: TransitionTable | None, z: np.ndarray,
                       actions, context_obs, eps: float) -> np.ndarray:
    """Forward predictions that trust stored real transitions first."""
    actions = np.asarray(actions, dtype=np.int64)
    if table is None or len(table) == 0:
        return model.predict_batch(z, actions, context_obs)
    hit = table.lookup_batch(z, actions, eps)
    out = np.empty((z.shape[0], z.shape[1]), dtype=np.float32)
    miss = hit < 0
    if np.any(miss):
        out[miss] = model.predict_batch(z[miss], actions[miss], context_obs)
    for i in np.nonzero(~miss)[0]:
        out[i] = table.value(int(hit[i]))
    return out


def one_shot_plan(model, s1_obs, goal_obs, *, eps: float, rng: np.random.Generator,
                  tmax: int = DEFAULT_TMAX, no_reid: bool = False,
                  table: TransitionTable | None = None,
                  cutoff: int = CUTOFF) -> PlanResult:
    """Search the latent graph for an action sequence to the goal embedding.

    The initial observation s1_obs is the standing context for every
    forward prediction. Returns solved=False when tmax depths pass without
    goal reidentification.
    """
    stats = SearchStats()
    half_sq = (eps / 2) ** 2
    z1 = np.asarray(model.encode(s1_obs), dtype=np.float32)
    zg = np.asarray(model.encode(goal_obs), dtype=np.float32)
    if reidentify(z1, zg, eps):
        return PlanResult([], True, stats)

    visited = z1[None, :]
    leaves = z1[None, :]
    paths = [[]]
    for _depth in range(tmax):
        stats.expanded += leaves.shape[0]
        n = leaves.shape[0]
        # children in (leaf index, action index) order
        parent = np.repeat(np.arange(n), envs.NUM_ACTIONS)
        acts = np.tile(np.arange(envs.NUM_ACTIONS), n)
        children = predict_with_table(model, table, leaves[parent], acts,
                                      s1_obs, eps)
        if not no_reid:
            mind = kernels.min_sqdist_to_set(children, visited)
            fresh = mind >= half_sq
            children = children[fresh]
            parent = parent[fresh]
            acts = acts[fresh]
        keep = filter_candidates(children, eps, rng, cutoff)
        children = children[keep]
        new_paths = [paths[parent[i]] + [int(acts[i])] for i in keep]
        stats.fringe_sizes.append(int(children.shape[0]))
        if children.shape[0] == 0:
            break
        gd = children.astype(np.float64) - zg.astype(np.float64)
        gdist = (gd * gd).sum(axis=1)
        best = int(np.argmin(gdist))
        if gdist[best] < half_sq:
            return PlanResult(new_paths[best], True, stats)
        visited = np.concatenate([visited, children], axis=0)
        leaves = children
        paths = new_paths
    return PlanResult([], False, stats)


def _predict_trajectory(model, table, z0, actions, context_obs, eps):
    traj = []
    z = np.asarray(z0, dtype=np.float32)
    for a in actions:
        z = predict_with_table(model, table, z[None, :], [int(a)],
                               context_obs, eps)[0]
        traj.append(z)
    return traj


def full_plan_episode(model, level: envs.LevelSpec, *, eps: float,
                      rng: np.random.Generator, step_budget: int = 256,
                      tmax: int = DEFAULT_TMAX, replan_tmax: int = REPLAN_TMAX,
                      use_table: bool = True, cutoff: int = CUTOFF) -> PlanResult:
    """Execute/verify/replan episode in the real environment.

    When a replanning attempt comes back empty the episode takes one
    uniformly random action instead of stalling: the step feeds the
    transition table and moves the agent, after which planning resumes.
    """
    stats = SearchStats()
    state = envs.start_state(level)
    if envs.is_success(state):
        return PlanResult([], True, stats)
    obs = envs.observe(state)
    goal_obs = envs.goal_observation(level)
    table = TransitionTable(model.encode(obs).shape[0]) if use_table else None

    res = one_shot_plan(model, obs, goal_obs, eps=eps, rng=rng, tmax=tmax,
                        table=table, cutoff=cutoff)
    stats.fringe_sizes = res.stats.fringe_sizes
    stats.expanded += res.stats.expanded
    plan = list(res.actions)
    z = np.asarray(model.encode(obs), dtype=np.float32)
    traj = _predict_trajectory(model, table, z, plan, obs, eps)

    executed = []
    for step_i in range(step_budget):
        if plan:
            action = plan.pop(0)
            z_pred = traj.pop(0)
        else:
            action = int(rng.integers(envs.NUM_ACTIONS))
            z_pred = None
        next_state = envs.step(state, action)
        next_obs = envs.observe(next_state)
        z_next = np.asarray(model.encode(next_obs), dtype=np.float32)
        if use_table:
            table.append(z, action, z_next)
        executed.append(action)
        if envs.is_success(next_state):
            return PlanResult(executed, True, stats, steps=len(executed))
        mismatch = z_pred is None or not reidentify(z_pred, z_next, eps)
        if mismatch or not plan:
            stats.replans += 1
            res = one_shot_plan(model, next_obs, goal_obs, eps=eps, rng=rng,
                                tmax=replan_tmax, table=table, cutoff=cutoff)
            stats.expanded += res.stats.expanded
            plan = list(res.actions)
            traj = _predict_trajectory(model, table, z_next, plan, next_obs, eps)
        state, obs, z = next_state, next_obs, z_next
    return PlanResult(executed, False, stats, steps=len(executed))


def execute_plan(level: envs.LevelSpec, actions, step_budget: int = 256):
    """Run an action sequence in the environment; stop at first success.

    Returns (solved, steps_taken)."""
    state = envs.start_state(level)
    if envs.is_success(state):
        return True, 0
    for i, a in enumerate(actions[:step_budget]):
        state = envs.step(state, int(a))
        if envs.is_success(state):
            return True, i + 1
    return False, min(len(actions), step_budget)
