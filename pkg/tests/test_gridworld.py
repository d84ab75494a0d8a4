import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import chi_square_uniform, flood_fill_reaches_all_free, random_bounded_map, supercover_ray

from gridexplore.gridworld import (
    Action,
    Cell,
    GroundTruthMap,
    Heading,
    MapFormatError,
    PlacementError,
    Pose,
    apply_action,
    load_map,
    place_obstacles,
    random_free_pose,
    rotate_pose,
)
from gridexplore.maps import LEVELS, TEST_MAPS, load_builtin, map_text
from gridexplore.sensor import LidarConfig, all_beam_angles

ROOM5 = "GRIDMAP v1\n5 5\n#####\n#...#\n#...#\n#...#\n#####\n"


def test_cell_and_action_codes():
    assert (Cell.FREE, Cell.OCCUPIED) == (0, 255)
    assert [int(a) for a in Action] == [0, 1, 2]
    assert [h.degrees for h in Heading] == [0, 90, 180, 270]


def test_load_small_room():
    m = load_map(ROOM5)
    assert (m.height, m.width, m.free_count) == (5, 5, 9)
    assert m.observable_count >= m.free_count


def test_comments_are_ignored():
    m = load_map("; a comment\nGRIDMAP v1\n; another\n3 3\n###\n#.#\n###\n")
    assert m.free_count == 1


@pytest.mark.parametrize(
    "text, kind, line",
    [
        ("GRIDMAP v2\n3 3\n###\n#.#\n###\n", "malformed header", 1),
        ("GRIDMAP v1\n3 x\n###\n#.#\n###\n", "malformed header", 2),
        ("GRIDMAP v1\n3 3\n###\n#.##\n###\n", "non-rectangular", 4),
        ("GRIDMAP v1\n3 3\n###\n#.#\n", "non-rectangular", 4),
        ("GRIDMAP v1\n3 3\n###\n#x#\n###\n", "unknown cell symbol", 4),
        ("GRIDMAP v1\n3 3\n###\n..#\n###\n", "unbounded border", 4),
    ],
)
def test_parse_errors(text, kind, line):
    with pytest.raises(MapFormatError) as err:
        load_map(text)
    assert err.value.kind == kind
    assert err.value.line == line
    assert kind in str(err.value)


def test_unknown_symbol_names_column():
    with pytest.raises(MapFormatError) as err:
        load_map("GRIDMAP v1\n3 4\n####\n#.x#\n####\n")
    assert err.value.column == 3


def test_text_round_trip():
    m = load_builtin("level3")
    again = load_map(m.to_text())
    assert np.array_equal(again.occupied, m.occupied)


def test_pgm_export_is_exact():
    m = load_map(ROOM5)
    lines = m.to_pgm().split()
    assert lines[:4] == ["P2", "5", "5", "255"]
    pixels = np.array([int(v) for v in lines[4:]]).reshape(5, 5)
    assert np.array_equal(pixels, np.where(m.occupied, 255, 0))


def test_builtin_sizes():
    sizes = [load_builtin(name).occupied.shape for name in LEVELS]
    assert sizes == [(20, 20), (24, 24), (30, 30), (30, 30), (40, 40)]
    for name in LEVELS + TEST_MAPS:
        m = load_builtin(name)
        assert flood_fill_reaches_all_free(m.occupied, tuple(np.argwhere(~m.occupied)[0]))
        assert map_text(name).startswith(";")


def test_level1_observable_count_matches_brute_force():
    m = load_builtin("level1")
    occ = m.occupied
    seen = set()
    for r, c in zip(*np.nonzero(~occ)):
        seen.add((int(r), int(c)))
        for a in all_beam_angles(LidarConfig()):
            _, _, visited, hits = supercover_ray(occ, int(r), int(c), a, 12)
            seen |= visited | hits
    assert m.observable_count == len(seen)


def test_turn_and_move_examples():
    m = load_map(ROOM5)
    assert apply_action(m, Pose(2, 2, Heading.NORTH), Action.TURN_LEFT).new_pose == Pose(2, 2, Heading.WEST)
    out = apply_action(m, Pose(2, 2, Heading.NORTH), Action.FORWARD)
    assert out.new_pose == Pose(1, 2, Heading.NORTH) and not out.collided
    out = apply_action(m, Pose(1, 2, Heading.NORTH), Action.FORWARD)
    assert out.new_pose == Pose(1, 2, Heading.NORTH) and out.collided


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.sampled_from(list(Action)), min_size=1, max_size=60))
def test_kinematic_safety_and_forward_dichotomy(seed, actions):
    rng = np.random.default_rng(seed)
    m = GroundTruthMap(random_bounded_map(rng, 8, 9, 0.2))
    if m.free_count == 0:
        return
    pose = random_free_pose(m, rng)
    for a in actions:
        out = apply_action(m, pose, a)
        assert m.is_free(out.new_pose.row, out.new_pose.col)
        if a == Action.FORWARD:
            dr, dc = pose.heading.delta
            moved = out.new_pose == Pose(pose.row + dr, pose.col + dc, pose.heading)
            assert moved != out.collided
            if out.collided:
                assert out.new_pose == pose
        else:
            assert not out.collided
        pose = out.new_pose


@given(st.integers(0, 3), st.integers(1, 3), st.integers(1, 3))
def test_turns_are_reversible(h, r, c):
    m = load_map(ROOM5)
    pose = Pose(r, c, Heading(h))
    there = apply_action(m, pose, Action.TURN_LEFT).new_pose
    assert apply_action(m, there, Action.TURN_RIGHT).new_pose == pose


def test_place_obstacles_zero_is_identity():
    m = load_builtin("level1")
    assert place_obstacles(m, 0, Pose(1, 1), np.random.default_rng(0)) is m


@pytest.mark.parametrize("seed", range(20))
def test_place_four_obstacles_keeps_connectivity(seed):
    m = load_builtin("level1")
    rng = np.random.default_rng(seed)
    start = random_free_pose(m, rng)
    placed = place_obstacles(m, 4, start, rng)
    new = placed.occupied & ~m.occupied
    assert new.sum() == 4
    rows, cols = np.nonzero(new)
    assert np.all(np.maximum(np.abs(rows - start.row), np.abs(cols - start.col)) >= 2)
    assert flood_fill_reaches_all_free(placed.occupied, (start.row, start.col))
    assert placed.observable_count == int(placed.observable.sum())


def test_placement_infeasible():
    m = load_map(ROOM5)
    with pytest.raises(PlacementError, match="placement infeasible"):
        place_obstacles(m, 9, Pose(2, 2), np.random.default_rng(0))


def test_single_free_cell_pose():
    m = load_map("GRIDMAP v1\n3 3\n###\n#.#\n###\n")
    rng = np.random.default_rng(1)
    poses = [random_free_pose(m, rng) for _ in range(200)]
    assert {(p.row, p.col) for p in poses} == {(1, 1)}
    assert {p.heading for p in poses} == set(Heading)


def test_random_pose_deterministic():
    m = load_builtin("level2")
    assert random_free_pose(m, np.random.default_rng(5)) == random_free_pose(m, np.random.default_rng(5))


def test_random_pose_uniform():
    m = load_map(ROOM5)
    rng = np.random.default_rng(0)
    counts = np.zeros((5, 5, 4))
    n = 10_000
    for _ in range(n):
        p = random_free_pose(m, rng)
        counts[p.row, p.col, p.heading] += 1
    cells = counts[1:4, 1:4].reshape(-1)
    expected = n / 36
    sigma = np.sqrt(expected * (1 - 1 / 36))
    assert np.all(np.abs(cells - expected) <= 5 * sigma)
    # 35 degrees of freedom; 99.9th percentile is about 66.6
    assert chi_square_uniform(cells) < 66.6


@given(st.integers(0, 3), st.integers(0, 2**16))
def test_rotate_pose_tracks_map_rotation(k, seed):
    rng = np.random.default_rng(seed)
    m = GroundTruthMap(random_bounded_map(rng, 6, 9, 0.1))
    if m.free_count == 0:
        return
    pose = random_free_pose(m, rng)
    rm = m.rotated(k)
    rp = rotate_pose(pose, m.height, m.width, k)
    assert rm.is_free(rp.row, rp.col)
    ahead = apply_action(m, pose, Action.FORWARD)
    rahead = apply_action(rm, rp, Action.FORWARD)
    assert ahead.collided == rahead.collided
    assert rotate_pose(ahead.new_pose, m.height, m.width, k) == rahead.new_pose
