"""GS on Images: learning-free online graph search over raw observations.

The agent explores by uniformly sampling an untried action at its current
observation, records every transition as a labelled edge, and when the
current observation has no untried actions left it walks known edges to
the nearest visited observation that still has some (shortest known route,
ties to the earliest-visited state). Observations are reidentified by
exact byte equality, so this only works on noise-free symbolic inputs.
"""
from __future__ import annotations

from collections import deque

import numpy as np

from . import envs
from .planner import PlanResult, SearchStats


def _key(obs: np.ndarray) -> bytes:
    return np.ascontiguousarray(obs).tobytes()


def gs_on_images(level: envs.LevelSpec, *, rng: np.random.Generator,
                 step_budget: int = 256) -> PlanResult:
    state = envs.start_state(level)
    if envs.is_success(state):
        return PlanResult([], True, SearchStats())
    goal_key = _key(envs.goal_observation(level))

    cur = _key(envs.observe(state))
    order = {cur: 0}                      # visit order, for tie-breaking
    remaining = {cur: list(range(envs.NUM_ACTIONS))}
    adjacency: dict[bytes, list] = {cur: []}   # key -> [(action, key')]

    executed: list[int] = []

    def take(action: int):
        nonlocal state, cur
        state = envs.step(state, action)
        executed.append(action)
        cur = _key(envs.observe(state))

    while len(executed) < step_budget:
        untried = remaining[cur]
        if untried:
            action = untried.pop(int(rng.integers(len(untried))))
            prev = cur
            take(action)
            if cur not in order:
                order[cur] = len(order)
                remaining[cur] = list(range(envs.NUM_ACTIONS))
                adjacency[cur] = []
            adjacency[prev].append((action, cur))
            if cur == goal_key:
                return PlanResult(executed, True, SearchStats(), steps=len(executed))
            continue

        # All actions tried here: BFS over known edges to the nearest
        # observation that still has untried actions.
        parent = {cur: None}
        dist = {cur: 0}
        queue = deque([cur])
        best = None
        while queue:
            node = queue.popleft()
            if best is not None and dist[node] >= best[0]:
                break
            for action, nxt in adjacency[node]:
                if nxt in parent:
                    continue
                parent[nxt] = (node, action)
                dist[nxt] = dist[node] + 1
                if remaining[nxt]:
                    cand = (dist[nxt], order[nxt], nxt)
                    if best is None or cand < best:
                        best = cand
                queue.append(nxt)
        if best is None:
            return PlanResult(executed, False, SearchStats(), steps=len(executed))
        target = best[2]
        route = []
        node = target
        while parent[node] is not None:
            node, action = parent[node]
            route.append(action)
        route.reverse()
        for action in route:
            if len(executed) >= step_budget:
                return PlanResult(executed, False, SearchStats(), steps=len(executed))
            take(action)
        # arrival at `target`; outcomes of known edges are deterministic
    return PlanResult(executed, False, SearchStats(), steps=len(executed))
