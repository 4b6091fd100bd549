"""Synthetic pick-and-place demonstration: an L-shaped block carried onto a coaster.

The generated recording has three contact transitions::

    {}  ->  {block-hand}  ->  {block-hand, block-coaster}  ->  {block-coaster}

and is used by the test-suite, the acceptance benchmark and ``oogkit synth``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, Pose
from .recording import Frame, Grip, HandObservation, KeypointTrack, ObjectObservation, Recording

BLOCK, COASTER = 0, 1

# L footprint (counter-clockwise), metres
L_FOOTPRINT = np.array([
    [0.0, 0.0], [0.06, 0.0], [0.06, 0.025], [0.025, 0.025], [0.025, 0.05], [0.0, 0.05],
])
BLOCK_HEIGHT = 0.04
COASTER_SIZE = (0.10, 0.08)
COASTER_HEIGHT = 0.015


@dataclass(frozen=True)
class DemoLayout:
    block_xy: tuple = (0.42, -0.12)
    coaster_xy: tuple = (0.50, 0.12)
    block_yaw: float = 0.0
    place_yaw: float = np.pi / 3
    lift: float = 0.08
    fps: float = 30.0
    approach_frames: int = 15
    hold_before: int = 10
    transport_frames: int = 40
    ramp_frames: int = 3
    hold_after: int = 10
    retreat_frames: int = 15


def _inside(poly: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test."""
    x, y = xy[:, 0], xy[:, 1]
    inside = np.zeros(len(xy), dtype=bool)
    for (x0, y0), (x1, y1) in zip(poly, np.roll(poly, -1, axis=0)):
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < xc)
    return inside


def prism_cloud(footprint: np.ndarray, height: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Points on the top face and side walls of a vertical prism (no bottom face)."""
    footprint = np.asarray(footprint, dtype=float)
    edges = np.roll(footprint, -1, axis=0) - footprint
    lengths = np.linalg.norm(edges, axis=1)
    lo, hi = footprint.min(axis=0), footprint.max(axis=0)
    top_area = 0.5 * abs(np.dot(footprint[:, 0], np.roll(footprint[:, 1], -1))
                         - np.dot(footprint[:, 1], np.roll(footprint[:, 0], -1)))
    side_area = lengths.sum() * height
    n_top = int(round(n * top_area / (top_area + side_area)))
    top = np.empty((0, 2))
    while len(top) < n_top:
        cand = rng.uniform(lo, hi, size=(2 * n_top, 2))
        top = np.concatenate([top, cand[_inside(footprint, cand)]])
    top = np.column_stack([top[:n_top], np.full(n_top, height)])
    n_side = n - n_top
    s = rng.uniform(0, lengths.sum(), n_side)
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    e = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(edges) - 1)
    frac = (s - cum[e]) / lengths[e]
    xy = footprint[e] + frac[:, None] * edges[e]
    side = np.column_stack([xy, rng.uniform(0, height, n_side)])
    return np.concatenate([top, side])


def block_geometry(n_points: int = 500, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Block cloud centred on its footprint centroid (bottom at z = 0) and 6 keypoints."""
    rng = np.random.default_rng(seed)
    fp = L_FOOTPRINT - L_FOOTPRINT.mean(axis=0)
    pts = prism_cloud(fp, BLOCK_HEIGHT, n_points, rng)
    kp = np.array([
        [fp[0, 0], fp[0, 1], BLOCK_HEIGHT],
        [fp[1, 0], fp[1, 1], BLOCK_HEIGHT],
        [fp[5, 0], fp[5, 1], BLOCK_HEIGHT],
        [fp[2, 0], fp[2, 1], 0.01],
        [fp[4, 0], fp[4, 1], 0.01],
        [fp[3, 0], fp[3, 1], BLOCK_HEIGHT],
    ])
    return pts, kp


def coaster_geometry(n_points: int = 500, seed: int = 1) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    w, d = COASTER_SIZE
    fp = np.array([[-w / 2, -d / 2], [w / 2, -d / 2], [w / 2, d / 2], [-w / 2, d / 2]])
    pts = prism_cloud(fp, COASTER_HEIGHT, n_points, rng)
    kp = np.column_stack([fp * 0.8, np.full(4, COASTER_HEIGHT)])
    return pts, kp


def _trapezoid_progress(n: int, ramp: int) -> np.ndarray:
    """Progress 0..1 over ``n`` steps with a constant-speed middle and short linear ramps."""
    v = np.ones(n)
    r = min(ramp, n // 2)
    v[:r] = (np.arange(r) + 1) / (r + 1)
    v[n - r:] = v[:r][::-1]
    return np.concatenate([[0.0], np.cumsum(v) / v.sum()])


def block_top_centre(pts: np.ndarray) -> np.ndarray:
    fp = L_FOOTPRINT - L_FOOTPRINT.mean(axis=0)
    # grasp over the larger arm of the L, where the top face is solid
    return np.array([0.5 * (fp[0, 0] + fp[1, 0]), 0.5 * (fp[0, 1] + fp[2, 1]), BLOCK_HEIGHT])


def make_demo(layout: DemoLayout | None = None, n_points: int = 500, seed: int = 0,
              occlude: bool = False) -> Recording:
    """Build the block-onto-coaster recording (already table-aligned).

    With ``occlude`` one block keypoint is hidden for a few transport frames.
    """
    L = layout or DemoLayout()
    block_pts, block_kp = block_geometry(n_points, seed)
    coaster_pts, coaster_kp = coaster_geometry(n_points, seed + 1)

    start = Pose.from_axis_angle([0, 0, 1], L.block_yaw, [*L.block_xy, 0.0])
    goal = Pose.from_axis_angle([0, 0, 1], L.place_yaw, [*L.coaster_xy, COASTER_HEIGHT])
    coaster_pose = Pose.from_translation([*L.coaster_xy, 0.0])

    t_grasp = L.approach_frames
    t_move = t_grasp + L.hold_before
    t_stop = t_move + L.transport_frames
    t_release = t_stop + L.hold_after
    T = t_release + L.retreat_frames + 1

    prog = _trapezoid_progress(t_stop - t_move, L.ramp_frames)
    block_poses = []
    for t in range(T):
        u = float(prog[min(max(t - t_move, 0), t_stop - t_move)])
        pos = (1 - u) * start.translation + u * goal.translation
        pos = pos + np.array([0.0, 0.0, L.lift * np.sin(np.pi * u)])
        yaw = (1 - u) * L.block_yaw + u * L.place_yaw
        block_poses.append(Pose.from_axis_angle([0, 0, 1], yaw, pos))

    grip_local = block_top_centre(block_pts)
    x_axis = np.array([1.0, 0.0, 0.0])
    home = np.array([0.35, 0.0, 0.30])
    frames = []
    for t in range(T):
        bp = block_poses[t]
        if t < t_grasp:
            target = bp.apply(grip_local)
            a = t / t_grasp
            mid = (1 - a) * home + a * (target + np.array([0, 0, 0.002]))
            grip, half = Grip.OPEN, 0.03
        elif t < t_release:
            mid = bp.apply(grip_local)
            grip, half = Grip.CLOSED, 0.004
        else:
            a = (t - t_release + 1) / L.retreat_frames
            mid = block_poses[t_release].apply(grip_local) + np.array([0, 0, 0.15 * a])
            grip, half = Grip.OPEN, 0.03
        off = half * (bp.R @ x_axis)
        hand = HandObservation(mid - off, mid + off, grip)
        objs = (
            ObjectObservation(BLOCK, PointCloud(bp.apply(block_pts))),
            ObjectObservation(COASTER, PointCloud(coaster_pose.apply(coaster_pts))),
        )
        frames.append(Frame(t, objs, hand))

    tracks = []
    for k in block_kp:
        pos = np.stack([p.apply(k) for p in block_poses])
        tracks.append(KeypointTrack(BLOCK, pos))
    for k in coaster_kp:
        tracks.append(KeypointTrack(COASTER, np.tile(coaster_pose.apply(k), (T, 1))))
    if occlude:
        pos = tracks[1].positions.copy()
        pos[t_move + 10:t_move + 14] = np.nan
        tracks[1] = KeypointTrack(BLOCK, pos)

    gx, gy = np.meshgrid(np.linspace(0.2, 0.7, 12), np.linspace(-0.3, 0.3, 12))
    table = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])
    return Recording(L.fps, ("block", "coaster"), tuple(frames), tuple(tracks), table)
