"""Fixed-size observation: local egocentric map, global exploration map, lidar/heading vector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gridexplore.gridworld import Pose
from gridexplore.sensor import OCCUPIED, UNKNOWN, BeliefMap, LidarConfig, LidarScan, _pgm

MARKER = 128


@dataclass(frozen=True)
class EncoderConfig:
    H: int = 24
    W: int = 24
    D: int = 3

    def __post_init__(self) -> None:
        if not (self.H >= self.D >= 1 and self.W >= self.D):
            raise ValueError(f"need H, W >= D >= 1, got H={self.H} W={self.W} D={self.D}")


@dataclass(frozen=True, eq=False)
class Observation:
    """``maps`` is (2, H, W): channel 0 the LEM, channel 1 the GEM. ``aux`` holds
    normalised lidar ranges followed by heading / 360. Everything lies in [0, 1]."""

    maps: np.ndarray
    aux: np.ndarray

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Observation):
            return NotImplemented
        return np.array_equal(self.maps, other.maps) and np.array_equal(self.aux, other.aux)


def extract_lem(belief: BeliefMap, pose: Pose, cfg: EncoderConfig) -> np.ndarray:
    """H x W window of the belief with the agent at (H // 2, W // 2); outside the map reads as occupied."""
    H, W = cfg.H, cfg.W
    r0 = pose.row - H // 2
    c0 = pose.col - W // 2
    out = np.full((H, W), OCCUPIED, dtype=np.uint8)
    rs, re = max(r0, 0), min(r0 + H, belief.height)
    cs, ce = max(c0, 0), min(c0 + W, belief.width)
    if rs < re and cs < ce:
        out[rs - r0 : re - r0, cs - c0 : ce - c0] = belief.cells[rs:re, cs:ce]
    return out / 255.0


def explored_bbox(belief: BeliefMap) -> tuple[int, int, int, int]:
    """Tightest (row_min, col_min, row_max, col_max) box around all known cells."""
    known = belief.cells != UNKNOWN
    rows = np.flatnonzero(known.any(axis=1))
    if rows.size == 0:
        raise ValueError("nothing explored")
    cols = np.flatnonzero(known.any(axis=0))
    return int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1])


def nearest_resize(image: np.ndarray, H: int, W: int) -> np.ndarray:
    h, w = image.shape
    ri = (np.arange(H) * h) // H
    ci = (np.arange(W) * w) // W
    return image[ri[:, None], ci[None, :]]


def extract_gem(belief: BeliefMap, pose: Pose, cfg: EncoderConfig) -> np.ndarray:
    r0, c0, r1, c1 = explored_bbox(belief)
    bh, bw = r1 - r0 + 1, c1 - c0 + 1
    explored = np.where(belief.cells[r0 : r1 + 1, c0 : c1 + 1] != UNKNOWN, 255, 0).astype(np.uint8)
    gem = nearest_resize(explored, cfg.H, cfg.W)
    mr = ((pose.row - r0) * cfg.H) // bh
    mc = ((pose.col - c0) * cfg.W) // bw
    top = min(max(mr - cfg.D // 2, 0), cfg.H - cfg.D)
    left = min(max(mc - cfg.D // 2, 0), cfg.W - cfg.D)
    gem[top : top + cfg.D, left : left + cfg.D] = MARKER
    return gem / 255.0


def build_observation(
    belief: BeliefMap,
    pose: Pose,
    lidar_scan: LidarScan,
    enc: EncoderConfig,
    lidar: LidarConfig,
) -> Observation:
    maps = np.stack([extract_lem(belief, pose, enc), extract_gem(belief, pose, enc)])
    aux = np.empty(lidar_scan.ranges.size + 1)
    aux[:-1] = lidar_scan.ranges / lidar.max_range
    aux[-1] = pose.heading.degrees / 360.0
    return Observation(maps, aux)


def rotate_observation(obs: Observation, k: int) -> Observation:
    """Rotate both map channels ``k`` quarter-turns clockwise and advance the heading entry.

    Lidar ranges are egocentric and stay as they are.
    """
    k %= 4
    if k == 0:
        return obs
    maps = np.ascontiguousarray(np.rot90(obs.maps, -k, axes=(1, 2)))
    aux = obs.aux.copy()
    aux[-1] = (aux[-1] + 0.25 * k) % 1.0
    return Observation(maps, aux)


def rotate_batch(maps: np.ndarray, aux: np.ndarray, ks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample rotation of a (B, 2, H, W) / (B, A) batch; ``ks`` are clockwise quarter-turns."""
    out_maps = np.empty_like(maps)
    out_aux = aux.copy()
    for k in range(4):
        sel = ks % 4 == k
        if sel.any():
            out_maps[sel] = np.rot90(maps[sel], -k, axes=(2, 3))
            out_aux[sel, -1] = (aux[sel, -1] + 0.25 * k) % 1.0
    return out_maps, out_aux


def dump_observation(obs: Observation) -> tuple[str, str, str]:
    """PGM text of the LEM and GEM plus one line of aux values, for eyeballing."""
    to_px = lambda ch: np.rint(ch * 255).astype(int)  # noqa: E731
    aux_line = " ".join(f"{v:.6g}" for v in obs.aux)
    return _pgm(to_px(obs.maps[0])), _pgm(to_px(obs.maps[1])), aux_line + "\n"
