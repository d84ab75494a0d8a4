"""Ground-truth grid maps, map files, agent kinematics and episode randomisation."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy import ndimage

from gridexplore.sensor import LidarConfig, _pgm, observable_mask, traversal


class MapFormatError(ValueError):
    """Raised for malformed map files; the message names the offending line/column."""

    def __init__(self, kind: str, line: int, column: int | None = None, detail: str = ""):
        where = f"line {line}" if column is None else f"line {line}, column {column}"
        super().__init__(f"{kind} at {where}" + (f": {detail}" if detail else ""))
        self.kind = kind
        self.line = line
        self.column = column


class PlacementError(RuntimeError):
    pass


class Cell(IntEnum):
    FREE = 0
    OCCUPIED = 255


class Heading(IntEnum):
    NORTH = 0
    EAST = 1
    SOUTH = 2
    WEST = 3

    @property
    def degrees(self) -> int:
        return 90 * int(self)

    @property
    def delta(self) -> tuple[int, int]:
        return _DELTAS[self]


_DELTAS = {
    Heading.NORTH: (-1, 0),
    Heading.EAST: (0, 1),
    Heading.SOUTH: (1, 0),
    Heading.WEST: (0, -1),
}


class Action(IntEnum):
    FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2


@dataclass(frozen=True)
class Pose:
    row: int
    col: int
    heading: Heading = Heading.NORTH


@dataclass(frozen=True)
class MoveOutcome:
    new_pose: Pose
    collided: bool


@dataclass(frozen=True, eq=False)
class GroundTruthMap:
    """Immutable wall-bounded occupancy grid.

    ``occupied`` is a read-only boolean array (row 0 at the top).
    ``observable_count`` counts the cells the lidar can ever see from a free
    cell; it is the denominator of the exploration rate.
    """

    occupied: np.ndarray
    lidar: LidarConfig = field(default_factory=LidarConfig)
    observable: np.ndarray = field(init=False, repr=False)
    flat: bytes = field(init=False, repr=False)

    def __post_init__(self) -> None:
        occ = np.array(self.occupied, dtype=bool)
        if occ.ndim != 2 or min(occ.shape) < 3:
            raise ValueError(f"map must be a 2-D grid of at least 3x3, got shape {occ.shape}")
        if not (occ[0].all() and occ[-1].all() and occ[:, 0].all() and occ[:, -1].all()):
            raise ValueError("map border must be fully occupied")
        occ.setflags(write=False)
        obs = observable_mask(occ, self.lidar)
        obs.setflags(write=False)
        object.__setattr__(self, "occupied", occ)
        object.__setattr__(self, "observable", obs)
        object.__setattr__(self, "flat", occ.astype(np.uint8).tobytes())
        object.__setattr__(self, "_tables", {})

    @property
    def height(self) -> int:
        return self.occupied.shape[0]

    @property
    def width(self) -> int:
        return self.occupied.shape[1]

    @property
    def observable_count(self) -> int:
        return int(self.observable.sum())

    @property
    def free_count(self) -> int:
        return int((~self.occupied).sum())

    def is_free(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width and not self.occupied[row, col]

    def flat_traversal(self, angle: float, max_range: float) -> tuple:
        """``sensor.traversal`` with (drow, dcol) offsets flattened for this width."""
        key = (angle, max_range)
        table = self._tables.get(key)
        if table is None:
            w = self.width
            table = tuple(
                (t, tuple(dr * w + dc for dr, dc in cells))
                for t, cells in traversal(angle, float(max_range))
            )
            self._tables[key] = table
        return table

    def with_obstacles(self, cells: list[tuple[int, int]]) -> GroundTruthMap:
        occ = self.occupied.copy()
        for r, c in cells:
            occ[r, c] = True
        return GroundTruthMap(occ, self.lidar)

    def rotated(self, k: int) -> GroundTruthMap:
        """Rotate the map ``k`` quarter-turns clockwise."""
        return GroundTruthMap(np.rot90(self.occupied, -k), self.lidar)

    def to_text(self) -> str:
        lines = ["GRIDMAP v1", f"{self.height} {self.width}"]
        lines.extend("".join("#" if v else "." for v in row) for row in self.occupied)
        return "\n".join(lines) + "\n"

    def to_pgm(self) -> str:
        return _pgm(np.where(self.occupied, Cell.OCCUPIED.value, Cell.FREE.value))


def load_map(text: str, lidar: LidarConfig | None = None) -> GroundTruthMap:
    """Parse a ``GRIDMAP v1`` file.

    Comment lines start with ``;``. Line numbers in errors refer to the raw
    text, comments included.
    """
    lines = [(i + 1, ln.rstrip("\r\n")) for i, ln in enumerate(text.splitlines())]
    lines = [(n, ln) for n, ln in lines if not ln.lstrip().startswith(";")]
    if not lines or lines[0][1].strip() != "GRIDMAP v1":
        raise MapFormatError("malformed header", lines[0][0] if lines else 1, detail="expected 'GRIDMAP v1'")
    if len(lines) < 2:
        raise MapFormatError("malformed header", lines[0][0] + 1, detail="missing '<height> <width>'")
    size_line, size_text = lines[1]
    parts = size_text.split()
    if len(parts) != 2 or not all(p.isdigit() for p in parts):
        raise MapFormatError("malformed header", size_line, detail=f"bad size line {size_text!r}")
    height, width = int(parts[0]), int(parts[1])
    if height < 3 or width < 3:
        raise MapFormatError("malformed header", size_line, detail="map must be at least 3x3")
    rows = lines[2:]
    if len(rows) != height:
        last = rows[-1][0] if rows else size_line
        raise MapFormatError("non-rectangular", last, detail=f"expected {height} rows, got {len(rows)}")
    occ = np.zeros((height, width), dtype=bool)
    for r, (line_no, row) in enumerate(rows):
        if len(row) != width:
            raise MapFormatError("non-rectangular", line_no, detail=f"row length {len(row)} != width {width}")
        for c, ch in enumerate(row):
            if ch == "#":
                occ[r, c] = True
            elif ch != ".":
                raise MapFormatError("unknown cell symbol", line_no, c + 1, detail=repr(ch))
    for r, (line_no, row) in enumerate(rows):
        for c in range(width):
            on_border = r in (0, height - 1) or c in (0, width - 1)
            if on_border and not occ[r, c]:
                raise MapFormatError("unbounded border", line_no, c + 1)
    return GroundTruthMap(occ, lidar or LidarConfig())


def apply_action(gmap: GroundTruthMap, pose: Pose, action: Action) -> MoveOutcome:
    if action == Action.TURN_LEFT:
        return MoveOutcome(Pose(pose.row, pose.col, Heading((pose.heading - 1) % 4)), False)
    if action == Action.TURN_RIGHT:
        return MoveOutcome(Pose(pose.row, pose.col, Heading((pose.heading + 1) % 4)), False)
    dr, dc = pose.heading.delta
    r, c = pose.row + dr, pose.col + dc
    if gmap.is_free(r, c):
        return MoveOutcome(Pose(r, c, pose.heading), False)
    return MoveOutcome(pose, True)


def free_connected(occupied: np.ndarray, start: tuple[int, int] | None = None) -> bool:
    """True when all free cells form one 4-connected component."""
    labels, n = ndimage.label(~occupied)
    if start is not None and labels[start] == 0:
        return False
    return n <= 1


def place_obstacles(
    gmap: GroundTruthMap,
    count: int,
    start: Pose,
    rng: np.random.Generator,
    max_attempts: int = 1000,
) -> GroundTruthMap:
    """Turn ``count`` free cells into 1x1 obstacles away from ``start``.

    Candidates lie at Chebyshev distance >= 2 from the start cell; samples
    that split the free region are rejected.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return gmap
    rows, cols = np.nonzero(~gmap.occupied)
    far = np.maximum(np.abs(rows - start.row), np.abs(cols - start.col)) >= 2
    cand = np.stack([rows[far], cols[far]], axis=1)
    if len(cand) < count:
        raise PlacementError(f"placement infeasible: {count} obstacles, {len(cand)} eligible cells")
    for _ in range(max_attempts):
        pick = cand[rng.choice(len(cand), size=count, replace=False)]
        occ = gmap.occupied.copy()
        occ[pick[:, 0], pick[:, 1]] = True
        if free_connected(occ, (start.row, start.col)):
            return GroundTruthMap(occ, gmap.lidar)
    raise PlacementError(f"placement infeasible after {max_attempts} attempts")


def random_free_pose(gmap: GroundTruthMap, rng: np.random.Generator) -> Pose:
    rows, cols = np.nonzero(~gmap.occupied)
    if rows.size == 0:
        raise ValueError("map has no free cells")
    k = int(rng.integers(rows.size * 4))
    cell, heading = divmod(k, 4)
    return Pose(int(rows[cell]), int(cols[cell]), Heading(heading))


def rotate_pose(pose: Pose, height: int, width: int, k: int) -> Pose:
    """Pose after rotating a ``height`` x ``width`` map ``k`` quarter-turns clockwise."""
    r, c, hd = pose.row, pose.col, int(pose.heading)
    for _ in range(k % 4):
        r, c = c, height - 1 - r
        height, width = width, height
        hd = (hd + 1) % 4
    return Pose(r, c, Heading(hd))
