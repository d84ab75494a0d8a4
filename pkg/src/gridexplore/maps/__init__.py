"""Built-in curriculum levels (level1..level5) and test maps (test1..test3)."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from pathlib import Path

from gridexplore.gridworld import GroundTruthMap, load_map
from gridexplore.sensor import LidarConfig

LEVELS = ("level1", "level2", "level3", "level4", "level5")
TEST_MAPS = ("test1", "test2", "test3")


def canonical_name(map_id: str | int) -> str:
    """``1``, ``"1"``, ``"level-1"`` and ``"level1"`` all name the first level."""
    if isinstance(map_id, int) or str(map_id).isdigit():
        return f"level{int(map_id)}"
    return str(map_id).replace("-", "")


def map_text(map_id: str | int) -> str:
    name = canonical_name(map_id)
    if name in LEVELS or name in TEST_MAPS:
        return resources.files(__package__).joinpath(f"{name}.txt").read_text()
    path = Path(str(map_id))
    if path.is_file():
        return path.read_text()
    raise KeyError(f"unknown map {map_id!r}")


@lru_cache(maxsize=64)
def _cached(name: str, lidar: LidarConfig) -> GroundTruthMap:
    return load_map(map_text(name), lidar)


def load_builtin(map_id: str | int, lidar: LidarConfig | None = None) -> GroundTruthMap:
    """Load a built-in map by name/level number, or a map file by path."""
    return _cached(canonical_name(map_id) if not Path(str(map_id)).is_file() else str(map_id), lidar or LidarConfig())
