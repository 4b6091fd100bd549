import warnings
from dataclasses import replace

import numpy as np
import pytest

from oogkit.errors import AmbiguousReference, MergeWarning, NoMotion, NoVisibleKeypoints, SchemaError
from oogkit.geometry import PointCloud, Pose
from oogkit.oog import HAND, PointNode, build_oog, contact_set, with_contacts
from oogkit.plangen import (ManipulationPlan, PlanConfig, detect_keyframes, dumps_plan, generate_plan,
                            keypoint_velocity_series, loads_plan, segment_roles, select_reference_object,
                            select_target_object, smooth_series)
from oogkit.recording import Frame, Grip, HandObservation, KeypointTrack, ObjectObservation, Recording, \
    transform_recording
from oogkit.synthetic import BLOCK, COASTER, DemoLayout, make_demo

HAND_OPEN = HandObservation([1, 1, 1], [1.02, 1, 1], Grip.OPEN)


def tiny_recording(tracks, n_frames, fps=30.0, n_objects=1):
    frames = tuple(
        Frame(t, tuple(ObjectObservation(i, PointCloud([[i, 0, 0], [i + 0.01, 0, 0]])) for i in range(n_objects)),
              HAND_OPEN)
        for t in range(n_frames)
    )
    kts = tuple(KeypointTrack(oid, pos) for oid, pos in tracks)
    return Recording(fps, tuple(f"o{i}" for i in range(n_objects)), frames, kts)


def line(step, n, start=(0.0, 0.0, 0.0)):
    return np.asarray(start) + np.arange(n)[:, None] * np.asarray(step)


# --- velocity statistics -----------------------------------------------------------

def test_static_scene_zero_series():
    rec = tiny_recording([(0, np.zeros((10, 3)))], 10)
    overall, per = keypoint_velocity_series(rec)
    assert len(overall) == 9
    assert np.all(overall == 0) and np.all(per[0] == 0)


def test_constant_speed():
    rec = tiny_recording([(0, line([0.01, 0, 0], 12))], 12)
    np.testing.assert_allclose(keypoint_velocity_series(rec)[0], 0.3)


def test_mean_of_two_keypoints():
    a = line([0.1 / 30, 0, 0], 8)
    b = line([0, 0.3 / 30, 0], 8)
    rec = tiny_recording([(0, a), (0, b)], 8)
    np.testing.assert_allclose(keypoint_velocity_series(rec)[0], 0.2)


def test_occluded_samples_are_excluded():
    a = line([0.01, 0, 0], 6)
    b = line([0.02, 0, 0], 6)
    b[2] = np.nan
    rec = tiny_recording([(0, a), (0, b)], 6)
    s = keypoint_velocity_series(rec)[0]
    np.testing.assert_allclose(s, [0.45, 0.3, 0.3, 0.45, 0.45])


def test_gap_copies_previous_value():
    a = line([0.01, 0, 0], 6)
    a[3] = np.nan
    rec = tiny_recording([(0, a)], 6)
    np.testing.assert_allclose(keypoint_velocity_series(rec)[0], 0.3)


def test_no_visible_keypoints():
    with pytest.raises(NoVisibleKeypoints):
        keypoint_velocity_series(tiny_recording([], 5))


def test_smoothing_window():
    s = np.array([0, 0, 3, 0, 0], float)
    np.testing.assert_allclose(smooth_series(s, 3), [0, 1, 1, 1, 0])
    np.testing.assert_array_equal(smooth_series(s, 1), s)


# --- plan generation --------------------------------------------------------------

@pytest.fixture(scope="module")
def demo():
    return make_demo()


@pytest.fixture(scope="module")
def plan(demo):
    return generate_plan(demo)


def test_demo_plan_structure(plan, demo):
    assert plan.F == 3 and len(plan.oogs) == 4
    assert plan.keyframes[0] == 0 and plan.keyframes[-1] == demo.n_frames - 1
    assert all(a < b for a, b in zip(plan.keyframes, plan.keyframes[1:]))
    sets = plan.contact_sets()
    assert sets == [frozenset(), {(BLOCK, HAND)}, {(BLOCK, HAND), (BLOCK, COASTER)}, {(BLOCK, COASTER)}]
    assert all(a != b for a, b in zip(sets, sets[1:]))


def test_point_nodes_cover_segment(plan, demo):
    for j, g in enumerate(plan.oogs[:-1]):
        span = plan.keyframes[j + 1] - plan.keyframes[j] + 1
        assert len(g.point_nodes) == len(demo.keypoint_tracks)
        assert all(len(pn.trajectory) == span for pn in g.point_nodes)
        np.testing.assert_array_equal(g.point_nodes[0].trajectory[0], demo.keypoint_tracks[0].positions[g.keyframe_index])
    assert all(len(pn.trajectory) == 0 for pn in plan.oogs[-1].point_nodes)


def test_plan_json_round_trip(plan):
    text = dumps_plan(plan)
    back = loads_plan(text)
    assert dumps_plan(back) == text
    assert back.contact_sets() == plan.contact_sets()
    assert isinstance(back, ManipulationPlan)


def test_plan_json_rejects_bad_version(plan):
    d = plan.to_dict()
    d["version"] = "0.1"
    with pytest.raises(SchemaError):
        ManipulationPlan.from_dict(d)


def test_static_recording_merges_to_two(demo):
    frames = tuple(demo.frames[0] for _ in range(30))
    frames = tuple(Frame(i, f.objects, f.hand) for i, f in enumerate(frames))
    tracks = tuple(KeypointTrack(t.object_id, np.tile(t.positions[0], (30, 1))) for t in demo.keypoint_tracks)
    static = replace(demo, frames=frames, keypoint_tracks=tracks)
    with pytest.warns(MergeWarning):
        p = generate_plan(static)
    assert p.keyframes == [0, 29]
    assert len(p.warnings) == 1


def _insert_pause(rec, at, length):
    frames = list(rec.frames[:at]) + [rec.frames[at]] * length + list(rec.frames[at:])
    frames = tuple(Frame(i, f.objects, f.hand) for i, f in enumerate(frames))
    tracks = tuple(
        KeypointTrack(t.object_id, np.concatenate([t.positions[:at], np.repeat(t.positions[at:at + 1], length, 0),
                                                   t.positions[at:]]))
        for t in rec.keypoint_tracks
    )
    return replace(rec, frames=frames, keypoint_tracks=tracks)


def test_midflight_pause_is_merged(demo):
    # the block hovers mid-transport: velocity drops but contacts do not change
    paused = _insert_pause(demo, 45, 15)
    overall = smooth_series(keypoint_velocity_series(paused)[0])
    raw = detect_keyframes(overall)
    assert len(raw) > 2
    p = generate_plan(paused)
    assert p.F == 3
    assert set(p.keyframes) < {0, *raw, paused.n_frames - 1}


def test_per_object_option(demo):
    p = generate_plan(demo, PlanConfig(per_object=True))
    assert p.F == 3


def test_resolved_config_recorded(plan, demo):
    assert plan.config["penalty"] == pytest.approx(np.log(demo.n_frames - 1))
    assert plan.config["bandwidth"] > 0


def test_upsampling_keeps_keyframe_count(plan):
    L2 = DemoLayout(fps=60, approach_frames=30, hold_before=20, transport_frames=80, ramp_frames=6,
                    hold_after=20, retreat_frames=30)
    p2 = generate_plan(make_demo(L2))
    assert len(p2.keyframes) == len(plan.keyframes)
    for a, b in zip(plan.keyframes, p2.keyframes):
        assert abs(2 * a - b) <= 2


# --- roles ---------------------------------------------------------------------------

def graph(speeds, n=11, contacts=frozenset()):
    clouds = {i: PointCloud([[i, 0, 0]]) for i in range(len(speeds))}
    nodes = [PointNode(i, line([v / 30, 0, 0], n, (i, 0, 0))) for i, v in enumerate(speeds)]
    return with_contacts(build_oog(0, clouds, HAND_OPEN, nodes), contacts)


def test_target_examples():
    assert select_target_object(graph([0.2, 0.0])) == 0
    assert select_target_object(graph([0.1, 0.2])) == 1
    with pytest.raises(NoMotion):
        select_target_object(graph([0.0, 0.001]))


def test_target_invariant_under_rigid_motion(demo):
    moved = transform_recording(demo, Pose.random(np.random.default_rng(0), trans_scale=1.0))
    p0, p1 = generate_plan(demo), generate_plan(moved)
    assert p0.keyframes == p1.keyframes
    assert select_target_object(p0.oogs[1]) == select_target_object(p1.oogs[1]) == BLOCK


def test_reference_examples():
    g0 = graph([0.2, 0, 0])
    g_touch = graph([0.2, 0, 0], contacts=frozenset({(0, 1)}))
    assert select_reference_object(g0, g_touch, 0) == 1
    g_grasp = graph([0, 0, 0], contacts=frozenset({(0, HAND)}))
    assert select_reference_object(g0, g_grasp, 0) is None
    g_both = graph([0.2, 0, 0], contacts=frozenset({(0, 1), (0, 2)}))
    with pytest.warns(AmbiguousReference):
        assert select_reference_object(g0, g_both, 0) == 1


def test_reference_ignores_unrelated_changes():
    g0 = graph([0.2, 0, 0])
    g1 = graph([0.2, 0, 0], contacts=frozenset({(1, 2)}))
    assert select_reference_object(g0, g1, 0) is None


def test_roles_fall_back_to_hand_flip():
    g0 = graph([0, 0])
    g1 = graph([0, 0], contacts=frozenset({(1, HAND)}))
    r = segment_roles(g0, g1)
    assert r.target_object == 1 and r.reference_object is None
    with pytest.raises(NoMotion):
        segment_roles(g0, graph([0, 0]))


def test_demo_roles(plan):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        roles = [segment_roles(a, b) for a, b in zip(plan.oogs, plan.oogs[1:])]
    assert [(r.target_object, r.reference_object) for r in roles] == [(BLOCK, None), (BLOCK, COASTER), (BLOCK, None)]
