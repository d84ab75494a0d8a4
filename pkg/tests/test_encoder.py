import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import resize_by_formula, supercover_ray

from gridexplore.encoder import (
    EncoderConfig,
    Observation,
    build_observation,
    dump_observation,
    explored_bbox,
    extract_gem,
    extract_lem,
    nearest_resize,
    rotate_batch,
    rotate_observation,
)
from gridexplore.env import EnvConfig, ExplorationEnv
from gridexplore.gridworld import GroundTruthMap, Heading, Pose, random_free_pose, rotate_pose
from gridexplore.maps import LEVELS, TEST_MAPS, load_builtin
from gridexplore.sensor import UNKNOWN, BeliefMap, LidarConfig, LidarScan, beam_angles, integrate_scan, scan

ENC = EncoderConfig()
MARK = 128 / 255


def known_belief(cells: np.ndarray) -> BeliefMap:
    b = BeliefMap(*cells.shape)
    b.cells = cells.astype(np.uint8)
    b.known_count = int((b.cells != UNKNOWN).sum())
    return b


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(H=2, W=24, D=3)


def test_lem_is_whole_map_when_centred():
    rng = np.random.default_rng(0)
    cells = rng.choice([0, 128, 255], size=(24, 24))
    lem = extract_lem(known_belief(cells), Pose(12, 12), ENC)
    assert np.array_equal(lem, cells / 255)


def test_lem_corner_is_padded_with_occupied():
    b = known_belief(np.zeros((30, 30)))
    lem = extract_lem(b, Pose(1, 1), ENC)
    assert np.all(lem[:11, :] == 1.0) and np.all(lem[:, :11] == 1.0)
    assert np.all(lem[11:, 11:] == 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_lem_unknown_fraction_after_first_scan(seed):
    m = load_builtin("level5")
    rng = np.random.default_rng(seed)
    while True:
        pose = random_free_pose(m, rng)
        if 12 <= pose.row <= 28 and 12 <= pose.col <= 28:
            break
    b = integrate_scan(BeliefMap(m.height, m.width), m, pose, scan(m, pose, LidarConfig()))
    covered = {(pose.row, pose.col)}
    for a in beam_angles(pose.heading.degrees, LidarConfig()):
        _, _, visited, hits = supercover_ray(m.occupied, pose.row, pose.col, a, 12)
        covered |= visited | hits
    in_window = [(r, c) for r, c in covered if -12 <= r - pose.row < 12 and -12 <= c - pose.col < 12]
    lem = extract_lem(b, pose, ENC)
    assert np.mean(lem == MARK) == pytest.approx(1 - len(in_window) / (24 * 24), abs=1e-12)


def test_bbox_examples():
    b = BeliefMap(8, 8)
    b.mark([3 * 8 + 5])
    assert explored_bbox(b) == (3, 5, 3, 5)
    b = BeliefMap(8, 8)
    b.mark([1 * 8 + 1, 4 * 8 + 6])
    assert explored_bbox(b) == (1, 1, 4, 6)
    with pytest.raises(ValueError, match="nothing explored"):
        explored_bbox(BeliefMap(4, 4))


def test_bbox_after_full_exploration():
    m = load_builtin("level1")
    b = BeliefMap(m.height, m.width)
    for r, c in zip(*np.nonzero(~m.occupied)):
        for h in Heading:
            p = Pose(int(r), int(c), h)
            integrate_scan(b, m, p, scan(m, p, LidarConfig()))
    rows, cols = np.nonzero(m.observable)
    assert explored_bbox(b) == (rows.min(), cols.min(), rows.max(), cols.max())


def test_resize_examples():
    img = np.arange(144).reshape(12, 12)
    up = nearest_resize(img, 24, 24)
    assert np.array_equal(up, np.kron(img, np.ones((2, 2), dtype=int)))
    img = np.arange(576).reshape(24, 24)
    assert np.array_equal(nearest_resize(img, 24, 24), img)
    img = np.random.default_rng(1).integers(0, 256, size=(7, 13))
    assert np.array_equal(nearest_resize(img, 24, 24), resize_by_formula(img, 24, 24))


@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 5), st.integers(1, 5))
def test_integer_upscale_duplicates_blocks(h, w, fy, fx):
    img = np.arange(h * w).reshape(h, w)
    assert np.array_equal(nearest_resize(img, h * fy, w * fx), np.kron(img, np.ones((fy, fx), dtype=int)))


def test_gem_fully_explored_centre():
    gem = extract_gem(known_belief(np.zeros((24, 24))), Pose(12, 12), ENC)
    want = np.ones((24, 24))
    want[11:14, 11:14] = MARK
    assert np.array_equal(gem, want)


@pytest.mark.parametrize("pose, rows, cols", [(Pose(0, 0), slice(0, 3), slice(0, 3)), (Pose(23, 23), slice(21, 24), slice(21, 24))])
def test_gem_marker_clipped_at_corner(pose, rows, cols):
    gem = extract_gem(known_belief(np.zeros((24, 24))), pose, ENC)
    assert np.all(gem[rows, cols] == MARK)
    assert (gem == MARK).sum() == 9


def test_gem_marker_scaling():
    cells = np.full((20, 20), UNKNOWN)
    cells[4:16, 2:14] = 0
    gem = extract_gem(known_belief(cells), Pose(4 + 3, 2 + 3), ENC)
    # relative (3, 3) in a 12x12 box lands on pixel (6, 6)
    assert np.all(gem[5:8, 5:8] == MARK)
    assert (gem == MARK).sum() == 9


def test_gem_binarizes_known_cells():
    cells = np.full((10, 10), UNKNOWN)
    cells[2, 2] = 255
    cells[7, 8] = 0
    gem = extract_gem(known_belief(cells), Pose(7, 8), ENC)
    assert set(np.unique(gem)) <= {0.0, MARK, 1.0}
    assert gem[0, 0] == 1.0


def test_aux_examples():
    occ = np.zeros((30, 30), dtype=bool)
    occ[0, :] = occ[-1, :] = occ[:, 0] = occ[:, -1] = True
    m = GroundTruthMap(occ)
    for heading, last in [(Heading.NORTH, 0.0), (Heading.WEST, 0.75)]:
        pose = Pose(15, 15, heading)
        s = scan(m, pose, LidarConfig())
        b = integrate_scan(BeliefMap(30, 30), m, pose, s)
        obs = build_observation(b, pose, s, ENC, LidarConfig())
        assert np.array_equal(obs.aux, np.array([1.0] * 31 + [last]))


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(LEVELS + TEST_MAPS), st.integers(0, 2**31 - 1), st.integers(0, 30))
def test_observation_shape_and_range(map_id, seed, steps):
    env = ExplorationEnv(EnvConfig(map_id=map_id))
    obs = env.reset(seed)
    rng = np.random.default_rng(seed)
    for _ in range(steps):
        res = env.step(int(rng.integers(1, 3)) if rng.random() < 0.3 else 0)
        obs = res.obs
        if res.terminated or res.truncated:
            break
    assert obs.maps.shape == (2, 24, 24) and obs.aux.shape == (32,)
    assert obs.maps.min() >= 0 and obs.maps.max() <= 1 and obs.aux.min() >= 0 and obs.aux.max() <= 1
    assert set(np.unique(obs.maps)) <= {0.0, MARK, 1.0}
    assert obs.aux[-1] in (0.0, 0.25, 0.5, 0.75)
    assert (obs.maps[1] == MARK).sum() == 9


def test_rotation_group():
    rng = np.random.default_rng(0)
    obs = Observation(rng.random((2, 24, 24)), np.append(rng.random(31), 0.25))
    assert rotate_observation(obs, 0) == obs
    r = obs
    for _ in range(4):
        r = rotate_observation(r, 1)
    assert r == obs


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_rotation_consistency(seed, k):
    # exact for odd H with a 1:1 GEM scale: the bounding box spans the whole map
    enc = EncoderConfig(H=25, W=25, D=3)
    rng = np.random.default_rng(seed)
    cells = rng.choice([0, 128, 255], size=(25, 25))
    cells[0, 0] = cells[-1, -1] = 255
    pose = Pose(int(rng.integers(25)), int(rng.integers(25)), Heading(int(rng.integers(4))))
    s = LidarScan(rng.uniform(0.5, 12, size=31), np.zeros(31, dtype=bool))
    obs = build_observation(known_belief(cells), pose, s, enc, LidarConfig())
    rcells = np.rot90(cells, -k)
    rpose = rotate_pose(pose, 25, 25, k)
    robs = build_observation(known_belief(rcells), rpose, s, enc, LidarConfig())
    assert rotate_observation(obs, k) == robs


def test_rotate_batch_matches_single():
    rng = np.random.default_rng(2)
    maps = rng.random((6, 2, 24, 24))
    aux = rng.random((6, 32))
    aux[:, -1] = rng.choice([0, 0.25, 0.5, 0.75], size=6)
    ks = np.array([0, 1, 2, 3, 1, 2])
    rm, ra = rotate_batch(maps, aux, ks)
    for i, k in enumerate(ks):
        want = rotate_observation(Observation(maps[i], aux[i]), int(k))
        assert np.array_equal(rm[i], want.maps) and np.array_equal(ra[i], want.aux)


def test_dump_observation():
    env = ExplorationEnv(EnvConfig())
    lem, gem, aux = dump_observation(env.reset(1))
    assert lem.startswith("P2\n24 24\n255\n") and gem.startswith("P2\n24 24\n255\n")
    assert len(aux.split()) == 32
