"""Context-MDP environments behind one contract."""
from .base import EnvContract, EpisodeDone, RolloutBatch, episode_rng, run_episode
from .maze import (GuardedMaze, MazeConfig, MazeLayout, Strategy, default_layout, load_layout,
                   maze_classify, maze_validate_layout, parse_layout)
from .servers import ServersAllocation, ServersConfig, servers_observe
from .toy import BetaToy, beta_toy_score


def make_env(name, **options) -> EnvContract:
    """Build an environment from its config name and env-specific options."""
    if name == "maze":
        layout_path = options.pop("layout_path", None)
        cfg = MazeConfig(**options)
        if layout_path:
            cfg.layout = load_layout(layout_path)
        return GuardedMaze(cfg)
    if name == "servers":
        return ServersAllocation(ServersConfig(**options))
    if name == "beta_toy":
        return BetaToy(**options)
    raise ValueError(f"unknown environment {name!r}")


__all__ = [
    "EnvContract", "EpisodeDone", "RolloutBatch", "episode_rng", "run_episode",
    "GuardedMaze", "MazeConfig", "MazeLayout", "Strategy", "default_layout", "load_layout",
    "maze_classify", "maze_validate_layout", "parse_layout",
    "ServersAllocation", "ServersConfig", "servers_observe",
    "BetaToy", "beta_toy_score", "make_env",
]
