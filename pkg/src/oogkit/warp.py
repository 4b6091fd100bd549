"""Start/goal trajectory warping.

A demonstrated keypoint trajectory is normalized per axis by its own start
and end, then stretched onto new anchors ``X_start * p_start`` and
``X_end * p_end``. Axes whose demonstrated span is (near) zero fall back to
anchoring the linear start-goal interpolation and keeping the demonstrated
deviation from it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateAxis, DegenerateTrajectory
from .geometry import PointCloud, Pose
from .oog import OOG
from .plangen import SegmentRoles
from .recording import fill_gaps
from .registration import RegistrationParams, RegistrationResult, global_register

EPS = 1e-6


@dataclass(frozen=True)
class WarpSpec:
    X_start: Pose = field(default_factory=Pose)
    X_end: Pose = field(default_factory=Pose)


def _check(traj: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    traj = np.asarray(traj, dtype=float).reshape(-1, 3)
    if len(traj) < 2:
        raise DegenerateTrajectory("trajectory needs at least 2 samples")
    if np.isnan(traj).any():
        raise ValueError("trajectory has occluded (NaN) samples; fill gaps first")
    if np.linalg.norm(traj[-1] - traj[0]) < eps:
        raise DegenerateTrajectory("end point coincides with start point")
    return traj, traj[-1] - traj[0]


def normalize_trajectory(traj, eps: float = EPS) -> np.ndarray:
    """Per-axis progress ``(tau(t) - p_start) / (p_end - p_start)``; runs (0,0,0) -> (1,1,1)."""
    traj, span = _check(traj, eps)
    for k in range(3):
        if abs(span[k]) < eps:
            raise DegenerateAxis(k)
    out = (traj - traj[0]) / span
    out[0], out[-1] = 0.0, 1.0
    return out


def warp_trajectory(traj, spec: WarpSpec, eps: float = EPS, allow_degenerate: bool = False) -> np.ndarray:
    """Warp one trajectory ``(T+1, 3)`` onto the anchors of ``spec``.

    Output starts exactly at ``X_start * p_start`` and ends at ``X_end * p_end``.
    ``allow_degenerate`` also accepts start == end, using the per-axis
    fallback on every axis.
    """
    traj = np.asarray(traj, dtype=float).reshape(-1, 3)
    try:
        traj, span = _check(traj, eps)
    except DegenerateTrajectory:
        if not allow_degenerate or len(traj) < 2 or np.isnan(traj).any():
            raise
        span = traj[-1] - traj[0]
    a = spec.X_start.apply(traj[0])
    b = spec.X_end.apply(traj[-1])
    n = len(traj) - 1
    s = (np.arange(n + 1) / n)[:, None]
    out = np.empty_like(traj)
    for k in range(3):
        if abs(span[k]) >= eps:
            prog = (traj[:, k] - traj[0, k]) / span[k]
            out[:, k] = prog * (b[k] - a[k]) + a[k]
        else:
            lerp = (1 - s[:, 0]) * traj[0, k] + s[:, 0] * traj[-1, k]
            out[:, k] = (1 - s[:, 0]) * a[k] + s[:, 0] * b[k] + (traj[:, k] - lerp)
    out[0], out[-1] = a, b
    return out


@dataclass(eq=False)
class SegmentPrediction:
    trajectories: list
    spec: WarpSpec
    start_registration: RegistrationResult
    end_registration: Optional[RegistrationResult] = None
    occluded: list = field(default_factory=list)


def predict_segment_trajectories(
    g_f: OOG,
    g_next: OOG,
    roles: SegmentRoles,
    target_cloud: PointCloud,
    ref_cloud: Optional[PointCloud] = None,
    params: RegistrationParams | None = None,
    eps: float = EPS,
) -> SegmentPrediction:
    """Warp the target's demonstrated keypoint trajectories into the observed scene.

    ``X_start`` registers the demo target cloud at keyframe ``f`` to the observed
    target; with a reference object, ``X_end`` registers the demo reference
    cloud at keyframe ``f + 1`` to the observed reference. Without one,
    ``X_end = X_start``. Occluded samples are filled for warping and reported
    back as NaN rows.
    """
    reg_start = global_register(g_f.cloud(roles.target_object), target_cloud, params)
    reg_end = None
    X_end = reg_start.transform
    if roles.reference_object is not None:
        if ref_cloud is None:
            raise ValueError("segment has a reference object but no observed reference cloud")
        reg_end = global_register(g_next.cloud(roles.reference_object), ref_cloud, params)
        X_end = reg_end.transform
    spec = WarpSpec(reg_start.transform, X_end)

    trajs, masks = [], []
    for raw in g_f.trajectories(roles.target_object):
        occ = np.isnan(raw).any(axis=1)
        if occ.all() or len(raw) < 2:
            continue
        w = warp_trajectory(fill_gaps(raw), spec, eps, allow_degenerate=True)
        w[occ] = np.nan
        trajs.append(w)
        masks.append(occ)
    return SegmentPrediction(trajs, spec, reg_start, reg_end, masks)
