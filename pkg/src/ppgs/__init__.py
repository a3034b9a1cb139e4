"""Latent-graph planning on procedurally generated puzzle environments.

The pipeline: generate solvable levels (`envs`), collect random
trajectories (`harness.collect`), train a unit-sphere world model jointly
on forward, inverse, and margin losses (`worldmodel`), then plan by
breadth-first search over the latent graph with margin-based state
reidentification (`planner`), optionally wrapped in replanning with an
observed-transition lookup table. `baseline.gs_on_images` is the
non-learned reference and `oracle` holds exact test-double models.
"""

from . import baseline, envs, harness, kernels, nn, oracle, planner, worldmodel
from .envs import Action, EnvState, LevelSpec, generate, observe, step
from .planner import PlanResult, full_plan_episode, one_shot_plan, reidentify
from .worldmodel import WorldModel, WorldModelConfig

__version__ = "0.1.0"

__all__ = [
    "Action",
    "EnvState",
    "LevelSpec",
    "PlanResult",
    "WorldModel",
    "WorldModelConfig",
    "baseline",
    "envs",
    "full_plan_episode",
    "generate",
    "harness",
    "kernels",
    "nn",
    "observe",
    "one_shot_plan",
    "oracle",
    "planner",
    "reidentify",
    "step",
    "worldmodel",
]
