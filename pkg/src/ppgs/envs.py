"""Deterministic goal-conditioned puzzle environments.

Three environment families, all procedurally generated and guaranteed
solvable at generation time:

- GridMaze:   perfect maze carved by randomized DFS; one step per action.
- DigitJump:  8x8 grid of digits 1..6; an action moves the agent by the
              digit under it, which makes single actions teleport it across
              the board and leaves cells where it can get stuck forever.
- IceSlider:  the agent slides in the chosen direction until it hits a rock
              or the border; stopping on the goal (not sliding over it)
              counts as success.

Levels regenerate bit-identically from (env_id, seed). A brute-force BFS
oracle over the exact transition graph backs the solvability guarantee and
serves as the reference shortest-path solver in tests.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

GRIDMAZE = "GridMaze"
DIGITJUMP = "DigitJump"
ICESLIDER = "IceSlider"
ENV_IDS = (GRIDMAZE, DIGITJUMP, ICESLIDER)
_ENV_CODE = {GRIDMAZE: 1, DIGITJUMP: 2, ICESLIDER: 3}

# Cell codes as used in level files: 0=Free, 1=Wall, 2=Rock, 10+k=Digit k.
CELL_FREE = 0
CELL_WALL = 1
CELL_ROCK = 2
CELL_DIGIT_BASE = 10

MAX_GENERATION_ATTEMPTS = 256


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    NOOP = 4


NUM_ACTIONS = 5
# (drow, dcol) per action, NOOP last.
ACTION_DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))


class GenerationError(RuntimeError):
    """Raised when rejection sampling fails to produce a solvable level."""


@dataclass(frozen=True)
class LevelSpec:
    """A fully generated level: immutable grid plus start and goal cells."""

    env_id: str
    seed: int
    width: int
    height: int
    cells: np.ndarray  # (height, width) int8, read-only
    start: tuple[int, int]
    goal: tuple[int, int]

    def __post_init__(self):
        self.cells.setflags(write=False)

    def cell(self, pos) -> int:
        return int(self.cells[pos[0], pos[1]])


@dataclass(frozen=True)
class EnvState:
    level: LevelSpec
    agent: tuple[int, int]


@dataclass
class TrueGraph:
    """Exhaustive forward closure of a level from its start state.

    vertices are agent positions in BFS discovery order; edges maps
    (position, action) to the successor position for every vertex.
    """

    level: LevelSpec
    vertices: list[tuple[int, int]] = field(default_factory=list)
    edges: dict = field(default_factory=dict)

    def index(self) -> dict:
        return {pos: i for i, pos in enumerate(self.vertices)}


def _blocking(code: int) -> bool:
    return code == CELL_WALL or code == CELL_ROCK


def _in_bounds(level: LevelSpec, r: int, c: int) -> bool:
    return 0 <= r < level.height and 0 <= c < level.width


def step(state: EnvState, action: int) -> EnvState:
    """Apply one action. Total and deterministic; NOOP is the identity."""
    if action == Action.NOOP:
        return state
    level = state.level
    dr, dc = ACTION_DELTAS[action]
    r, c = state.agent

    if level.env_id == GRIDMAZE:
        nr, nc = r + dr, c + dc
        if not _in_bounds(level, nr, nc) or _blocking(level.cell((nr, nc))):
            return state
        return EnvState(level, (nr, nc))

    if level.env_id == DIGITJUMP:
        k = level.cell((r, c)) - CELL_DIGIT_BASE
        nr, nc = r + k * dr, c + k * dc
        if not _in_bounds(level, nr, nc):
            return state
        return EnvState(level, (nr, nc))

    if level.env_id == ICESLIDER:
        # Slide until the next cell is a rock or out of bounds; the goal
        # cell does not stop the slide.
        while True:
            nr, nc = r + dr, c + dc
            if not _in_bounds(level, nr, nc) or level.cell((nr, nc)) == CELL_ROCK:
                break
            r, c = nr, nc
        if (r, c) == state.agent:
            return state
        return EnvState(level, (r, c))

    raise ValueError(f"unknown env_id {level.env_id!r}")


def is_success(state: EnvState) -> bool:
    return state.agent == state.level.goal


def start_state(level: LevelSpec) -> EnvState:
    return EnvState(level, level.start)


def observe(state: EnvState) -> np.ndarray:
    """Symbolic observation: int8 channels [cell codes, agent mask, goal mask]."""
    level = state.level
    obs = np.zeros((3, level.height, level.width), dtype=np.int8)
    obs[0] = level.cells
    obs[1, state.agent[0], state.agent[1]] = 1
    obs[2, level.goal[0], level.goal[1]] = 1
    return obs


def goal_observation(level: LevelSpec) -> np.ndarray:
    return observe(EnvState(level, level.goal))


def agent_position(obs: np.ndarray) -> tuple[int, int]:
    """Invert the agent-mask channel of an observation."""
    r, c = np.unravel_index(int(np.argmax(obs[1])), obs[1].shape)
    return int(r), int(c)


def free_cells(level: LevelSpec) -> list[tuple[int, int]]:
    rows, cols = np.nonzero(~np.isin(level.cells, (CELL_WALL, CELL_ROCK)))
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


# ---------------------------------------------------------------------------
# Procedural generation
# ---------------------------------------------------------------------------


def _gen_rng(env_id: str, seed: int, attempt: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((_ENV_CODE[env_id], seed, attempt)))
    )


def _build_gridmaze(seed: int, rng: np.random.Generator) -> LevelSpec:
    n = int(rng.choice(np.arange(5, 16, 2)))
    cells = np.full((n, n), CELL_WALL, dtype=np.int8)
    # Randomized DFS over the odd-coordinate lattice, carving wall between
    # visited cells; iterative to avoid recursion limits.
    start = (n - 2, 1)
    stack = [start]
    cells[start] = CELL_FREE
    while stack:
        r, c = stack[-1]
        neighbours = []
        for dr, dc in ((-2, 0), (2, 0), (0, -2), (0, 2)):
            nr, nc = r + dr, c + dc
            if 0 < nr < n - 1 and 0 < nc < n - 1 and cells[nr, nc] == CELL_WALL:
                neighbours.append((nr, nc))
        if not neighbours:
            stack.pop()
            continue
        nr, nc = neighbours[int(rng.integers(len(neighbours)))]
        cells[(r + nr) // 2, (c + nc) // 2] = CELL_FREE
        cells[nr, nc] = CELL_FREE
        stack.append((nr, nc))
    frees = [p for p in zip(*np.nonzero(cells == CELL_FREE))]
    frees = [(int(r), int(c)) for r, c in frees if (int(r), int(c)) != start]
    goal = frees[int(rng.integers(len(frees)))]
    return LevelSpec(GRIDMAZE, seed, n, n, cells, start, goal)


def _build_digitjump(seed: int, rng: np.random.Generator) -> LevelSpec:
    digits = rng.integers(1, 7, size=(8, 8), dtype=np.int8)
    cells = (digits + CELL_DIGIT_BASE).astype(np.int8)
    return LevelSpec(DIGITJUMP, seed, 8, 8, cells, (0, 0), (7, 7))


ICESLIDER_SIZE = 8
ICESLIDER_ROCK_DENSITY = 0.2


def _build_iceslider(seed: int, rng: np.random.Generator) -> LevelSpec:
    n = ICESLIDER_SIZE
    cells = np.zeros((n, n), dtype=np.int8)
    interior = rng.random((n - 2, n - 2)) < ICESLIDER_ROCK_DENSITY
    cells[1 : n - 1, 1 : n - 1] = np.where(interior, CELL_ROCK, CELL_FREE)
    start = (0, int(rng.integers(n)))
    goal = (n - 1, int(rng.integers(n)))
    return LevelSpec(ICESLIDER, seed, n, n, cells, start, goal)


_BUILDERS = {
    GRIDMAZE: _build_gridmaze,
    DIGITJUMP: _build_digitjump,
    ICESLIDER: _build_iceslider,
}


def generate(env_id: str, seed: int) -> LevelSpec:
    """Generate a solvable level, rejection-resampling on a deterministic
    sub-seed sequence until the BFS oracle confirms solvability."""
    if env_id not in _BUILDERS:
        raise ValueError(f"unknown env_id {env_id!r}")
    for attempt in range(MAX_GENERATION_ATTEMPTS):
        level = _BUILDERS[env_id](seed, _gen_rng(env_id, seed, attempt))
        if oracle_shortest_path(level, start_state(level)) is not None:
            return level
    raise GenerationError(f"{env_id} seed {seed}: no solvable level after "
                          f"{MAX_GENERATION_ATTEMPTS} attempts")


def generate_batch(env_id: str, seeds) -> list[LevelSpec]:
    return [generate(env_id, int(s)) for s in seeds]


# ---------------------------------------------------------------------------
# Ground-truth graph and shortest-path oracle
# ---------------------------------------------------------------------------


def true_graph(level: LevelSpec) -> TrueGraph:
    """BFS forward closure from the start state; edges agree with step()."""
    graph = TrueGraph(level)
    root = level.start
    seen = {root}
    queue = deque([root])
    while queue:
        pos = queue.popleft()
        graph.vertices.append(pos)
        state = EnvState(level, pos)
        for a in range(NUM_ACTIONS):
            nxt = step(state, a).agent
            graph.edges[(pos, a)] = nxt
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return graph


def bfs_depths(level: LevelSpec) -> list[int]:
    """Number of states first reached at each BFS depth from the start."""
    widths = [1]
    frontier = [level.start]
    seen = {level.start}
    while frontier:
        nxt_frontier = []
        for pos in frontier:
            state = EnvState(level, pos)
            for a in range(NUM_ACTIONS):
                nxt = step(state, a).agent
                if nxt not in seen:
                    seen.add(nxt)
                    nxt_frontier.append(nxt)
        if nxt_frontier:
            widths.append(len(nxt_frontier))
        frontier = nxt_frontier
    return widths


def oracle_shortest_path(level: LevelSpec, from_state: EnvState | None = None):
    """Minimal action sequence reaching the goal, or None when unreachable.

    Ties break deterministically: BFS expands actions in encoding order, so
    the first path found is lexicographically smallest among the shortest.
    """
    if from_state is None:
        from_state = start_state(level)
    root = from_state.agent
    if root == level.goal:
        return []
    parent = {root: None}
    queue = deque([root])
    while queue:
        pos = queue.popleft()
        state = EnvState(level, pos)
        for a in range(NUM_ACTIONS):
            nxt = step(state, a).agent
            if nxt in parent:
                continue
            parent[nxt] = (pos, a)
            if nxt == level.goal:
                actions = []
                cur = nxt
                while parent[cur] is not None:
                    cur, act = parent[cur]
                    actions.append(act)
                actions.reverse()
                return actions
            queue.append(nxt)
    return None


# ---------------------------------------------------------------------------
# Level files (JSON lines)
# ---------------------------------------------------------------------------


def level_to_dict(level: LevelSpec) -> dict:
    return {
        "env": level.env_id,
        "seed": level.seed,
        "width": level.width,
        "height": level.height,
        "cells": [int(v) for v in level.cells.reshape(-1)],
        "start": list(level.start),
        "goal": list(level.goal),
    }


def level_from_dict(d: dict) -> LevelSpec:
    cells = np.asarray(d["cells"], dtype=np.int8).reshape(d["height"], d["width"])
    return LevelSpec(
        env_id=d["env"],
        seed=int(d["seed"]),
        width=int(d["width"]),
        height=int(d["height"]),
        cells=cells,
        start=tuple(d["start"]),
        goal=tuple(d["goal"]),
    )


def save_levels(levels, path) -> None:
    with open(path, "w") as f:
        for level in levels:
            f.write(json.dumps(level_to_dict(level)) + "\n")


def load_levels(path) -> list[LevelSpec]:
    levels = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                levels.append(level_from_dict(json.loads(line)))
    return levels
