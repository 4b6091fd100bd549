import numpy as np
import pytest

from oogkit.errors import DidNotConverge
from oogkit.geometry import Pose, rotation_angle
from oogkit.recording import Grip, HandObservation
from oogkit.se3opt import (ActionSequence, OptimizerConfig, augment_with_grip, objective, optimize_actions,
                           step_gradient, step_objective)
from scenes import motion_tracks


def fd_gradient(q, t, P, Y, W, h=1e-6):
    gq, gt = np.zeros_like(q), np.zeros_like(t)
    for arr, out in ((q, gq), (t, gt)):
        for j in range(arr.shape[1]):
            d = np.zeros_like(arr)
            d[:, j] = h
            plus = (q + d, t) if arr is q else (q, t + d)
            minus = (q - d, t) if arr is q else (q, t - d)
            out[:, j] = (step_objective(*plus, P, Y, W) - step_objective(*minus, P, Y, W)) / (2 * h)
    return gq, gt


def random_config(rng, n=5, k=4):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q, rng.normal(0, 0.1, (n, 3)), rng.normal(size=(n, k, 3)), rng.normal(size=(n, k, 3)), np.ones((n, k))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(20):
        q, t, P, Y, W = random_config(rng)
        gq, gt = step_gradient(q, t, P, Y, W)
        fq, ft = fd_gradient(q, t, P, Y, W)
        g, f = np.concatenate([gq, gt], 1), np.concatenate([fq, ft], 1)
        assert np.linalg.norm(g - f) / np.linalg.norm(f) < 1e-4


def test_gradient_respects_mask():
    rng = np.random.default_rng(1)
    q, t, P, Y, W = random_config(rng)
    W[:, 0] = 0
    Y2 = Y.copy()
    Y2[:, 0] += 100.0
    for a, b in zip(step_gradient(q, t, P, Y, W), step_gradient(q, t, P, Y2, W)):
        np.testing.assert_allclose(a, b)


def test_static_tracks_give_identity():
    rng = np.random.default_rng(2)
    kp = rng.uniform(-0.05, 0.05, (3, 3))
    tracks = np.repeat(kp[:, None], 11, axis=1)
    seq = optimize_actions(list(tracks))
    assert len(seq) == 10
    for X in seq.poses:
        assert np.degrees(rotation_angle(X, Pose())) < 0.1
        assert np.linalg.norm(X.translation) < 1e-3
    assert seq.residual < 1e-8


def test_single_keypoint_translation():
    rng = np.random.default_rng(3)
    path = np.cumsum(rng.normal(0, 0.01, (12, 3)), axis=0)
    seq = optimize_actions([path])
    assert seq.residual < 1e-8
    for X, a, b in zip(seq.poses, path[:-1], path[1:]):
        np.testing.assert_allclose(X.apply(a), b, atol=1e-4)


@pytest.mark.parametrize("seed", range(8))
def test_recovers_known_motion(seed):
    rng = np.random.default_rng(1000 + seed)
    tracks, truth = motion_tracks(rng)
    seq = optimize_actions(list(tracks), OptimizerConfig(seed=seed))
    for X, Xs in zip(seq.poses, truth):
        assert np.degrees(rotation_angle(X, Xs)) < 1
        assert np.linalg.norm(X.translation - Xs.translation) < 1e-3


def test_cost_never_increases():
    rng = np.random.default_rng(4)
    tracks, _ = motion_tracks(rng, n_steps=6)
    seq = optimize_actions(list(tracks), OptimizerConfig(seed=1))
    h = np.asarray(seq.history)
    assert len(h) > 1
    assert np.all(np.diff(h) <= 1e-12 * np.maximum(1.0, h[:-1]))


def test_occluded_samples_ignored():
    rng = np.random.default_rng(5)
    tracks, truth = motion_tracks(rng, n_steps=5, max_angle=0.5)
    extra = np.full((1, 6, 3), np.nan)
    extra[0, 2] = [9, 9, 9]
    full = np.concatenate([tracks, extra])
    a = optimize_actions(list(tracks), OptimizerConfig(seed=3))
    b = optimize_actions(list(full), OptimizerConfig(seed=3))
    for x, y in zip(a.poses, b.poses):
        assert x.allclose(y, atol=1e-12)


def test_gauge_invariance():
    rng = np.random.default_rng(6)
    tracks, _ = motion_tracks(rng, n_steps=6, max_angle=1.0)
    seq = optimize_actions(list(tracks), OptimizerConfig(seed=2))
    Q = Pose.random(rng, np.pi, 0.5)
    moved = np.stack([Q.apply(tr) for tr in tracks])
    conj = [Q @ X @ Q.inverse() for X in seq.poses]
    assert objective(conj, moved) < 1e-6


def test_two_stage_beats_joint_from_scratch():
    wins = 0
    for seed in range(20):
        tracks, _ = motion_tracks(np.random.default_rng(2000 + seed), n_steps=10)
        two = optimize_actions(list(tracks), OptimizerConfig(seed=seed), check=False)
        one = optimize_actions(list(tracks), OptimizerConfig(seed=seed, rot_stage_steps=0, joint_stage_steps=400),
                               check=False)
        wins += two.residual <= one.residual
    assert wins >= 16


def test_did_not_converge_carries_result():
    rng = np.random.default_rng(7)
    tracks, _ = motion_tracks(rng, n_steps=4)
    cfg = OptimizerConfig(rot_stage_steps=1, joint_stage_steps=1, tolerance=1e-12)
    with pytest.raises(DidNotConverge) as ei:
        optimize_actions(list(tracks), cfg)
    assert isinstance(ei.value.result, ActionSequence) and len(ei.value.result) == 4


def test_deterministic():
    tracks, _ = motion_tracks(np.random.default_rng(8), n_steps=5)
    a = optimize_actions(list(tracks), OptimizerConfig(seed=4))
    b = optimize_actions(list(tracks), OptimizerConfig(seed=4))
    assert all(np.array_equal(x.rotation, y.rotation) and np.array_equal(x.translation, y.translation)
               for x, y in zip(a.poses, b.poses))


def test_bad_config():
    with pytest.raises(ValueError):
        OptimizerConfig(joint_stage_steps=0)


# --- grip augmentation ----------------------------------------------------------------

def hand(grip, at=(0.0, 0.0, 0.0)):
    at = np.asarray(at, float)
    return HandObservation(at - [0.01, 0, 0], at + [0.01, 0, 0], grip)


@pytest.mark.parametrize("g0, g1", [(Grip.OPEN, Grip.CLOSED), (Grip.CLOSED, Grip.CLOSED), (Grip.CLOSED, Grip.OPEN)])
def test_grip_commands(g0, g1):
    seq = augment_with_grip([Pose()] * 5, hand(g0), hand(g1))
    assert seq.grip_commands == [g0] * 4 + [g1]


def test_interaction_point_from_closed_keyframe():
    seq = augment_with_grip([Pose()] * 3, hand(Grip.OPEN, [1, 0, 0]), hand(Grip.CLOSED, [2, 0, 0]))
    np.testing.assert_allclose(seq.interaction_point, [2, 0, 0])
    seq = augment_with_grip([Pose()] * 3, hand(Grip.CLOSED, [1, 0, 0]), hand(Grip.OPEN, [2, 0, 0]),
                            Pose.from_translation([0, 0, 1]))
    np.testing.assert_allclose(seq.interaction_point, [1, 0, 1])
    with pytest.raises(ValueError):
        augment_with_grip([], hand(Grip.OPEN), hand(Grip.OPEN))
