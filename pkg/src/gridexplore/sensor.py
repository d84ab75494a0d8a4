"""Ray-traced 2D lidar and belief-map integration.

Rays start at the centre of the agent's cell and walk the grid with an
Amanatides-Woo style traversal. When a ray passes exactly through a cell
corner, both edge-adjacent cells are touched before the diagonal cell is
entered; if either of them is occupied the ray stops there, so beams never
leak through diagonal wall joints.

Angles passed to :func:`cast_ray` are mathematical: 0 degrees points East
(increasing column) and angles grow counter-clockwise, so 90 degrees points
North (decreasing row). Headings and beam offsets elsewhere use compass
bearings; :func:`beam_angles` does the conversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

if TYPE_CHECKING:
    from gridexplore.gridworld import GroundTruthMap, Pose

UNKNOWN = 128
FREE = 0
OCCUPIED = 255

_TIE_EPS = 1e-9


@dataclass(frozen=True)
class LidarConfig:
    fov_degrees: float = 270.0
    resolution_degrees: float = 9.0
    max_range: float = 12.0

    def __post_init__(self) -> None:
        if self.resolution_degrees <= 0 or self.max_range <= 0:
            raise ValueError("resolution and max_range must be positive")
        ratio = self.fov_degrees / self.resolution_degrees
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(
                f"fov {self.fov_degrees} is not divisible by resolution {self.resolution_degrees}"
            )

    @property
    def beam_count(self) -> int:
        return int(round(self.fov_degrees / self.resolution_degrees)) + 1

    def beam_offsets(self) -> np.ndarray:
        """Compass offsets of each beam relative to the heading, left to right."""
        return -self.fov_degrees / 2 + self.resolution_degrees * np.arange(self.beam_count)


def beam_angles(heading_degrees: float, cfg: LidarConfig) -> list[float]:
    """Mathematical ray angles for every beam of a scan taken at a compass heading."""
    return [_normalize(90.0 - (heading_degrees + off)) for off in cfg.beam_offsets()]


def all_beam_angles(cfg: LidarConfig) -> list[float]:
    """Distinct ray angles over the four cardinal headings."""
    angles = {a for h in (0.0, 90.0, 180.0, 270.0) for a in beam_angles(h, cfg)}
    return sorted(angles)


def _normalize(angle: float) -> float:
    a = math.fmod(angle, 360.0)
    if a < 0:
        a += 360.0
    # snap float noise so that 359.9999999 and 0 share one traversal table
    r = round(a, 9)
    return 0.0 if r == 360.0 else r


def _direction(angle: float) -> tuple[float, float]:
    """(dcol, drow) unit vector; exact under quarter-turn rotation of the angle."""
    a = _normalize(angle)
    quarter = int(a // 90.0)
    rem = a - 90.0 * quarter
    c, s = math.cos(math.radians(rem)), math.sin(math.radians(rem))
    for _ in range(quarter):
        c, s = -s, c
    return c, -s


@lru_cache(maxsize=4096)
def traversal(angle: float, max_range: float) -> tuple[tuple[float, tuple[tuple[int, int], ...]], ...]:
    """Cell groups a ray crosses, as (entry distance, ((drow, dcol), ...)) in order.

    Offsets are relative to the origin cell, which is excluded. A corner
    crossing yields two groups at the same distance: the two edge-adjacent
    cells, then the diagonal cell.
    """
    dx, dy = _direction(angle)
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    inv_x = 1.0 / abs(dx) if abs(dx) > 1e-12 else math.inf
    inv_y = 1.0 / abs(dy) if abs(dy) > 1e-12 else math.inf
    nx = ny = 0
    cx = cy = 0
    groups = []
    limit = max_range - _TIE_EPS
    while True:
        tx = (nx + 0.5) * inv_x
        ty = (ny + 0.5) * inv_y
        t = min(tx, ty)
        if t >= limit:
            break
        if abs(tx - ty) <= _TIE_EPS * max(1.0, t):
            groups.append((t, ((cy, cx + step_x), (cy + step_y, cx))))
            cx += step_x
            cy += step_y
            nx += 1
            ny += 1
            groups.append((t, ((cy, cx),)))
        elif tx < ty:
            cx += step_x
            nx += 1
            groups.append((tx, ((cy, cx),)))
        else:
            cy += step_y
            ny += 1
            groups.append((ty, ((cy, cx),)))
    return tuple(groups)


class RayResult(NamedTuple):
    distance: float
    hit: bool
    visited: list[tuple[int, int]]
    hit_cells: list[tuple[int, int]]


def cast_ray(gmap: GroundTruthMap, origin: Pose | tuple[int, int], angle: float, max_range: float) -> RayResult:
    """Trace one ray from the centre of ``origin``'s cell.

    ``visited`` lists the free cells crossed, in order; ``hit_cells`` the
    occupied cell(s) that stopped the ray (two at a blocked corner).
    """
    if isinstance(origin, tuple):
        row, col = origin
    else:
        row, col = origin.row, origin.col
    occ = gmap.occupied
    h, w = occ.shape
    visited: list[tuple[int, int]] = []
    for t, cells in traversal(_normalize(angle), float(max_range)):
        hits = []
        for dr, dc in cells:
            r, c = row + dr, col + dc
            if not (0 <= r < h and 0 <= c < w):
                return RayResult(t, True, visited, hits)
            if occ[r, c]:
                hits.append((r, c))
            else:
                visited.append((r, c))
        if hits:
            return RayResult(t, True, visited, hits)
    return RayResult(float(max_range), False, visited, [])


@dataclass(frozen=True)
class LidarScan:
    ranges: np.ndarray
    hit_mask: np.ndarray
    # flat indices into the map, used by integrate_scan
    free_idx: tuple[int, ...] = field(default=(), repr=False)
    hit_idx: tuple[int, ...] = field(default=(), repr=False)


def scan(gmap: GroundTruthMap, pose: Pose, cfg: LidarConfig) -> LidarScan:
    """Sweep all beams of the lidar from ``pose``."""
    flat = gmap.flat
    width = gmap.width
    origin = pose.row * width + pose.col
    n = cfg.beam_count
    ranges = np.empty(n)
    hit_mask = np.zeros(n, dtype=bool)
    free_idx: list[int] = []
    hit_idx: list[int] = []
    for i, angle in enumerate(beam_angles(pose.heading.degrees, cfg)):
        rng = float(cfg.max_range)
        for t, offsets in gmap.flat_traversal(angle, cfg.max_range):
            blocked = False
            for off in offsets:
                idx = origin + off
                if flat[idx]:
                    hit_idx.append(idx)
                    blocked = True
                else:
                    free_idx.append(idx)
            if blocked:
                rng = t
                hit_mask[i] = True
                break
        ranges[i] = rng
    return LidarScan(ranges, hit_mask, tuple(free_idx), tuple(hit_idx))


class BeliefMap:
    """The agent's occupancy knowledge, stored with the 0/128/255 pixel encoding."""

    def __init__(self, height: int, width: int):
        self.height = height
        self.width = width
        self.cells = np.full((height, width), UNKNOWN, dtype=np.uint8)
        self.known_count = 0

    def copy(self) -> BeliefMap:
        other = BeliefMap(self.height, self.width)
        other.cells = self.cells.copy()
        other.known_count = self.known_count
        return other

    @property
    def known_mask(self) -> np.ndarray:
        return self.cells != UNKNOWN

    def mark(self, free: list[int] | tuple[int, ...], occupied: list[int] | tuple[int, ...] = ()) -> int:
        """Mark flat indices as free / occupied; returns how many were newly known."""
        flat = self.cells.reshape(-1)
        added = 0
        for idx in free:
            if flat[idx] == UNKNOWN:
                flat[idx] = FREE
                added += 1
        for idx in occupied:
            if flat[idx] == UNKNOWN:
                flat[idx] = OCCUPIED
                added += 1
        self.known_count += added
        return added

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BeliefMap):
            return NotImplemented
        return self.known_count == other.known_count and np.array_equal(self.cells, other.cells)

    def to_pgm(self) -> str:
        return _pgm(self.cells)


def integrate_scan(belief: BeliefMap, gmap: GroundTruthMap, pose: Pose, lidar_scan: LidarScan) -> BeliefMap:
    """Fold a scan into ``belief`` in place (and return it)."""
    if (belief.height, belief.width) != (gmap.height, gmap.width):
        raise ValueError("belief and map dimensions differ")
    own = pose.row * gmap.width + pose.col
    belief.mark((own,) + lidar_scan.free_idx, lidar_scan.hit_idx)
    return belief


def observable_mask(occupied: np.ndarray, cfg: LidarConfig) -> np.ndarray:
    """Cells some beam reaches from some free cell under any cardinal heading.

    Vectorised over origins: every free cell walks the same traversal table
    at once, dropping out as its ray is blocked. Free cells themselves are
    always included, since the agent can stand there. The map border must be
    occupied (rays never leave the grid).
    """
    occupied = np.asarray(occupied, dtype=bool)
    h, w = occupied.shape
    occ_flat = occupied.reshape(-1)
    seen = (~occupied).reshape(-1).copy()
    origins0 = np.flatnonzero(~occ_flat)
    for angle in all_beam_angles(cfg):
        origins = origins0
        for _, cells in traversal(angle, float(cfg.max_range)):
            if origins.size == 0:
                break
            if len(cells) == 1:
                dr, dc = cells[0]
                idx = origins + (dr * w + dc)
                seen[idx] = True
                origins = origins[~occ_flat[idx]]
            else:
                blocked = np.zeros(origins.shape, dtype=bool)
                for dr, dc in cells:
                    idx = origins + (dr * w + dc)
                    seen[idx] = True
                    blocked |= occ_flat[idx]
                origins = origins[~blocked]
    return seen.reshape(h, w)


def _pgm(pixels: np.ndarray) -> str:
    h, w = pixels.shape
    lines = ["P2", f"{w} {h}", "255"]
    lines.extend(" ".join(str(int(v)) for v in row) for row in pixels)
    return "\n".join(lines) + "\n"
