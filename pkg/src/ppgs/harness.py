"""Experiment harness: data collection, latent metrics, evaluation runners,
ablations, the fringe-size experiment, and on-policy data collection.

Datasets store agent positions rather than raw observation arrays; a
trajectory regenerates its observations deterministically from the level,
which keeps dataset files small and makes replay checks trivial.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import envs, worldmodel
from .baseline import gs_on_images
from .oracle import FaultInjector, OracleModel
from .planner import (DEFAULT_TMAX, PlanResult, execute_plan,
                      full_plan_episode, one_shot_plan)
from .seeding import rng as make_rng

TRAIN_SEED_BASE = 0
TEST_SEED_BASE = 10**6


def train_seeds(n: int) -> range:
    return range(TRAIN_SEED_BASE, TRAIN_SEED_BASE + n)


def test_seeds(n: int = 100) -> range:
    return range(TEST_SEED_BASE, TEST_SEED_BASE + n)


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    positions: list  # H+1 agent positions
    actions: list    # H action codes

    @property
    def n_steps(self) -> int:
        return len(self.actions)


@dataclass
class LevelData:
    level: envs.LevelSpec
    trajectories: list = field(default_factory=list)


Dataset = list  # list[LevelData]


def n_transitions(dataset) -> int:
    return sum(t.n_steps for ld in dataset for t in ld.trajectories)


def collect(levels, trajectories_per_level: int, horizon: int, seed: int,
            random_starts: bool | None = None) -> Dataset:
    """Uniform-random rollouts. GridMaze episodes start at a uniformly
    random free cell (its start corner gives poor coverage); the other
    environments always start at the level start."""
    rng = make_rng(seed, "collect")
    dataset = []
    for level in levels:
        use_random_start = (level.env_id == envs.GRIDMAZE
                            if random_starts is None else random_starts)
        cells = envs.free_cells(level) if use_random_start else None
        trajs = []
        for _ in range(trajectories_per_level):
            if use_random_start:
                start = cells[int(rng.integers(len(cells)))]
            else:
                start = level.start
            state = envs.EnvState(level, start)
            positions = [state.agent]
            actions = []
            for _ in range(horizon):
                a = int(rng.integers(envs.NUM_ACTIONS))
                state = envs.step(state, a)
                actions.append(a)
                positions.append(state.agent)
            trajs.append(Trajectory(positions, actions))
        dataset.append(LevelData(level, trajs))
    return dataset


def save_dataset(dataset, path) -> None:
    with open(path, "w") as f:
        for ld in dataset:
            f.write(json.dumps({
                "env": ld.level.env_id,
                "seed": ld.level.seed,
                "trajectories": [
                    {"positions": [list(p) for p in t.positions],
                     "actions": [int(a) for a in t.actions]}
                    for t in ld.trajectories
                ],
            }) + "\n")


def load_dataset(path) -> Dataset:
    dataset = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            level = envs.generate(d["env"], int(d["seed"]))
            trajs = [
                Trajectory([tuple(p) for p in t["positions"]],
                           [int(a) for a in t["actions"]])
                for t in d["trajectories"]
            ]
            dataset.append(LevelData(level, trajs))
    return dataset


def pack_dataset(dataset) -> worldmodel.PackedData:
    """Deduplicate observations per level and index the transitions."""
    obs_rows = []
    offsets, counts = [], []
    h_idx, h1_idx, acts, level_ids = [], [], [], []
    for li, ld in enumerate(dataset):
        level = ld.level
        index: dict = {}
        offsets.append(len(obs_rows))
        for traj in ld.trajectories:
            for pos in traj.positions:
                if pos not in index:
                    index[pos] = len(obs_rows)
                    obs_rows.append(
                        worldmodel.obs_to_vec(envs.observe(envs.EnvState(level, pos)))
                    )
        counts.append(len(obs_rows) - offsets[-1])
        for traj in ld.trajectories:
            for h in range(traj.n_steps):
                h_idx.append(index[traj.positions[h]])
                h1_idx.append(index[traj.positions[h + 1]])
                acts.append(traj.actions[h])
                level_ids.append(li)
    return worldmodel.PackedData(
        obs_mat=np.stack(obs_rows).astype(np.float32),
        level_offsets=np.asarray(offsets, dtype=np.int64),
        level_counts=np.asarray(counts, dtype=np.int64),
        h_idx=np.asarray(h_idx, dtype=np.int64),
        h1_idx=np.asarray(h1_idx, dtype=np.int64),
        actions=np.asarray(acts, dtype=np.int64),
        level_ids=np.asarray(level_ids, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# Latent prediction metrics
# ---------------------------------------------------------------------------


def latent_metrics(model, levels, horizons=(1, 10), n_trajectories: int = 100,
                   traj_len: int = 20, seed: int = 0,
                   random_starts: bool | None = None) -> dict:
    """Hit rate and mean reciprocal rank of multi-step latent predictions.

    For each trajectory the model predicts the embedding K steps ahead,
    autoregressively, from the first embedding and the action prefix (the
    first observation is the standing prediction context). The prediction
    is scored by the rank of the true embedding among the trajectory's own
    embeddings ordered by distance to the prediction (strictly closer
    distractors push the rank up; ties do not).
    """
    horizons = sorted(horizons)
    if horizons[-1] >= traj_len:
        raise ValueError("horizon must be below the trajectory length")
    rng = make_rng(seed, "metrics")
    hits = {k: 0.0 for k in horizons}
    mrr = {k: 0.0 for k in horizons}
    for n in range(n_trajectories):
        level = levels[n % len(levels)]
        use_random_start = (level.env_id == envs.GRIDMAZE
                            if random_starts is None else random_starts)
        if use_random_start:
            cells = envs.free_cells(level)
            state = envs.EnvState(level, cells[int(rng.integers(len(cells)))])
        else:
            state = envs.start_state(level)
        observations = [envs.observe(state)]
        actions = []
        for _ in range(traj_len - 1):
            a = int(rng.integers(envs.NUM_ACTIONS))
            state = envs.step(state, a)
            actions.append(a)
            observations.append(envs.observe(state))
        emb = np.stack([model.encode(o) for o in observations]).astype(np.float64)
        context = observations[0]
        z = emb[0].astype(np.float32)
        for t, k in enumerate(range(1, horizons[-1] + 1)):
            z = model.predict_batch(z[None, :], [actions[t]], context)[0]
            if k in hits:
                d = emb - z.astype(np.float64)
                dists = (d * d).sum(axis=1)
                rank = 1 + int((dists < dists[k]).sum())
                hits[k] += 1.0 if rank == 1 else 0.0
                mrr[k] += 1.0 / rank
    return {
        k: {"h": hits[k] / n_trajectories, "mmr": mrr[k] / n_trajectories}
        for k in horizons
    }


def write_metrics_csv(metrics: dict, path) -> None:
    with open(path, "w") as f:
        f.write("horizon,h_at_k,mmr_at_k\n")
        for k in sorted(metrics):
            f.write(f"{k},{metrics[k]['h']:.6f},{metrics[k]['mmr']:.6f}\n")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class LevelResult:
    level_seed: int
    solved: bool
    steps: int
    replans: int


@dataclass
class EvalReport:
    mode: str
    results: list

    @property
    def success_rate(self) -> float:
        if not self.results:
            return 0.0
        return sum(1 for r in self.results if r.solved) / len(self.results)

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("level_seed,solved,steps,replans\n")
            for r in self.results:
                f.write(f"{r.level_seed},{int(r.solved)},{r.steps},{r.replans}\n")


PLANNER_MODES = ("oneshot", "oneshot-noreid", "full", "full-nolookup", "gs-images")


def run_level(model, level, mode: str, *, eps: float, seed: int,
              step_budget: int = 256, tmax: int = DEFAULT_TMAX,
              fault_p: float = 0.0) -> PlanResult:
    """Run one planner episode; randomness is keyed by (seed, level seed)."""
    rng = make_rng(seed, "plan", level.seed, envs._ENV_CODE[level.env_id])
    if mode == "gs-images":
        return gs_on_images(level, rng=rng, step_budget=step_budget)
    if model is None:
        model = OracleModel(level, eps=eps)
    if fault_p > 0.0:
        model = FaultInjector(model, fault_p, make_rng(seed, "fault", level.seed))
    if mode in ("oneshot", "oneshot-noreid"):
        res = one_shot_plan(model, envs.observe(envs.start_state(level)),
                            envs.goal_observation(level), eps=eps, rng=rng,
                            tmax=tmax, no_reid=(mode == "oneshot-noreid"))
        solved, steps = execute_plan(level, res.actions, step_budget)
        return PlanResult(res.actions, solved and res.solved, res.stats, steps)
    if mode in ("full", "full-nolookup"):
        return full_plan_episode(model, level, eps=eps, rng=rng,
                                 step_budget=step_budget, tmax=tmax,
                                 use_table=(mode == "full"))
    raise ValueError(f"unknown planner mode {mode!r}")


def evaluate(model, mode: str, levels, *, eps: float | None = None,
             step_budget: int = 256, seed: int = 0, tmax: int = DEFAULT_TMAX,
             fault_p: float = 0.0) -> EvalReport:
    """Run the selected planner on every level and aggregate results.

    model=None evaluates with the per-level exact oracle model."""
    if eps is None:
        eps = model.eps if model is not None else 0.1
    results = []
    for level in levels:
        res = run_level(model, level, mode, eps=eps, seed=seed,
                        step_budget=step_budget, tmax=tmax, fault_p=fault_p)
        results.append(LevelResult(level.seed, res.solved, res.steps,
                                   res.stats.replans))
    return EvalReport(mode, results)


# ---------------------------------------------------------------------------
# Fringe-size experiment
# ---------------------------------------------------------------------------


def fringe_experiment(model, levels, modes=("reid", "noreid"), *,
                      eps: float = 0.1, tmax: int = DEFAULT_TMAX,
                      seed: int = 0) -> dict:
    """Per-depth fringe sizes of one-shot search with and without
    reidentification. model=None uses the per-level oracle for the reid
    mode and the collision-free model for the noreid mode.

    Returns {mode: list over depths of per-level size lists}."""
    from .oracle import CollisionFreeModel

    out = {}
    for mode in modes:
        per_depth: list[list[int]] = [[] for _ in range(tmax)]
        for level in levels:
            if model is not None:
                m = model
            elif mode == "reid":
                m = OracleModel(level, eps=eps)
            else:
                m = CollisionFreeModel(seed=seed)
            rng = make_rng(seed, "fringe", mode, level.seed)
            res = one_shot_plan(m, envs.observe(envs.start_state(level)),
                                envs.goal_observation(level), eps=eps, rng=rng,
                                tmax=tmax, no_reid=(mode == "noreid"))
            for depth, size in enumerate(res.stats.fringe_sizes):
                per_depth[depth].append(size)
        out[mode] = per_depth
    return out


def write_fringe_csv(fringe: dict, path) -> None:
    modes = list(fringe)
    depth_count = max(len(fringe[m]) for m in modes)
    with open(path, "w") as f:
        cols = [f"{m}_{c}" for m in modes for c in ("mean", "p5", "p95", "n")]
        f.write("depth," + ",".join(cols) + "\n")
        for depth in range(depth_count):
            row = [str(depth + 1)]
            for m in modes:
                sizes = fringe[m][depth] if depth < len(fringe[m]) else []
                if sizes:
                    arr = np.asarray(sizes, dtype=np.float64)
                    row += [f"{arr.mean():.4f}", f"{np.percentile(arr, 5):.4f}",
                            f"{np.percentile(arr, 95):.4f}", str(arr.size)]
                else:
                    row += ["", "", "", "0"]
            f.write(",".join(row) + "\n")


# ---------------------------------------------------------------------------
# On-policy collection and ablations
# ---------------------------------------------------------------------------


def onpolicy_collect(model, levels, target_transitions: int, seed: int,
                     round_id: int, step_budget: int = 64) -> list:
    """Roll out the full planner over training levels until the requested
    number of transitions is recorded. Returns LevelData extensions."""
    eps = model.eps
    extensions: dict[int, LevelData] = {}
    got = 0
    li = 0
    while got < target_transitions:
        level = levels[li % len(levels)]
        rng = make_rng(seed, "onpolicy", round_id, li)
        res = full_plan_episode(model, level, eps=eps, rng=rng,
                                step_budget=step_budget)
        if res.steps > 0:
            state = envs.start_state(level)
            positions = [state.agent]
            for a in res.actions:
                state = envs.step(state, a)
                positions.append(state.agent)
            ext = extensions.setdefault(li % len(levels), LevelData(level))
            ext.trajectories.append(Trajectory(positions, list(res.actions)))
            got += res.steps
        li += 1
        if li > 100 * len(levels):  # safety net; unreachable in practice
            break
    return list(extensions.values())


def train_with_onpolicy(model, dataset, train_cfg: worldmodel.TrainConfig,
                        levels, *, round_interval: int = 5, rounds: int = 3,
                        extra_per_round: int = 0,
                        collect_budget: int = 64) -> list[dict]:
    """Train, appending planner-collected transitions every round_interval
    epochs (at most `rounds` times). Mutates `dataset` in place."""
    state = {"rounds_done": 0}

    def after_epoch(epoch, mdl):
        if (rounds <= 0 or extra_per_round <= 0
                or state["rounds_done"] >= rounds
                or epoch % round_interval != 0):
            return None
        state["rounds_done"] += 1
        ext = onpolicy_collect(mdl, levels, extra_per_round,
                               train_cfg.seed, state["rounds_done"],
                               step_budget=collect_budget)
        dataset.extend(ext)
        return pack_dataset(dataset)

    return worldmodel.train(model, pack_dataset(dataset), train_cfg,
                            after_epoch=after_epoch)


ABLATIONS = ("no-inverse", "latent-forward", "no-lookup",
             "oneshot-reid", "oneshot-noreid")


def run_ablation(which: str, *, dataset, eval_levels, obs_shape,
                 model: worldmodel.WorldModel | None = None,
                 model_cfg: worldmodel.WorldModelConfig | None = None,
                 train_cfg: worldmodel.TrainConfig | None = None,
                 step_budget: int = 256, seed: int = 0,
                 metric_horizons=(1, 10)) -> dict:
    """Run one ablation variant. World-model variants retrain from scratch;
    planner variants reuse the supplied trained model."""
    if which not in ABLATIONS:
        raise ValueError(f"unknown ablation {which!r}")
    model_cfg = model_cfg or worldmodel.WorldModelConfig()
    train_cfg = train_cfg or worldmodel.TrainConfig()

    if which in ("no-inverse", "latent-forward"):
        cfg = model_cfg
        if which == "no-inverse":
            cfg = worldmodel.WorldModelConfig(**{**cfg.__dict__, "beta": 0.0})
        else:
            cfg = worldmodel.WorldModelConfig(**{**cfg.__dict__, "hybrid": False})
        model = worldmodel.WorldModel(obs_shape, cfg, seed=train_cfg.seed)
        worldmodel.train(model, pack_dataset(dataset), train_cfg)
        mode = "full"
    elif which == "no-lookup":
        mode = "full-nolookup"
    else:
        mode = "oneshot" if which == "oneshot-reid" else "oneshot-noreid"

    if model is None:
        raise ValueError(f"ablation {which!r} needs a trained model")
    report = evaluate(model, mode, eval_levels, step_budget=step_budget, seed=seed)
    metrics = latent_metrics(model, eval_levels, horizons=metric_horizons,
                             seed=seed)
    return {"which": which, "report": report, "metrics": metrics, "model": model}
