"""Keyframe discovery from keypoint speeds and construction of the graph sequence."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.ndimage import uniform_filter1d

from .changepoint import default_penalty, detect_changepoints, median_bandwidth
from .errors import AmbiguousReference, MergeWarning, NoMotion, NoVisibleKeypoints, SchemaError
from .oog import HAND, OOG, PointNode, build_oog, contact_set, format_contacts, oog_from_dict, oog_to_dict
from .recording import Recording

log = logging.getLogger(__name__)

PLAN_VERSION = "1.0"


@dataclass
class PlanConfig:
    contact_thresh: float = 0.01
    penalty: Optional[float] = None
    bandwidth: Optional[float] = None
    min_segment: int = 5
    motion_floor: float = 0.005
    smoothing_window: int = 3
    per_object: bool = False


@dataclass(frozen=True)
class SegmentRoles:
    target_object: int
    reference_object: Optional[int] = None

    def __post_init__(self):
        if self.reference_object is not None and self.reference_object == self.target_object:
            raise ValueError("target and reference must differ")


@dataclass(eq=False)
class ManipulationPlan:
    oogs: list
    keyframes: list
    object_names: list
    fps: float
    velocity_series: list = field(default_factory=list)
    breakpoints: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def F(self) -> int:
        return len(self.oogs) - 1

    def contact_sets(self) -> list:
        return [contact_set(g) for g in self.oogs]

    def to_dict(self) -> dict:
        return {
            "version": PLAN_VERSION,
            "fps": float(self.fps),
            "object_names": list(self.object_names),
            "keyframes": [int(k) for k in self.keyframes],
            "breakpoints": [int(b) for b in self.breakpoints],
            "velocity_series": [float(v) for v in self.velocity_series],
            "warnings": list(self.warnings),
            "config": self.config,
            "oogs": [oog_to_dict(g) for g in self.oogs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ManipulationPlan":
        if not isinstance(d, dict) or d.get("version") != PLAN_VERSION:
            raise SchemaError("version", f"unsupported or missing plan version {d.get('version') if isinstance(d, dict) else None!r}")
        try:
            oogs = [oog_from_dict(g) for g in d["oogs"]]
            return cls(oogs, list(d["keyframes"]), list(d["object_names"]), float(d["fps"]),
                       list(d.get("velocity_series", [])), list(d.get("breakpoints", [])),
                       list(d.get("warnings", [])), dict(d.get("config", {})))
        except KeyError as exc:
            raise SchemaError(str(exc.args[0]), "missing field") from exc


def dumps_plan(plan: ManipulationPlan) -> str:
    return json.dumps(plan.to_dict(), separators=(",", ":"))


def loads_plan(text) -> ManipulationPlan:
    from .errors import ParseError

    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed plan JSON: {exc}") from exc
    return ManipulationPlan.from_dict(doc)


# --- velocity statistics ------------------------------------------------------

def _track_speeds(positions: np.ndarray, fps: float) -> np.ndarray:
    """Per-step speeds; NaN where either endpoint is occluded."""
    return np.linalg.norm(np.diff(positions, axis=0), axis=1) * fps


def _mean_series(speeds: np.ndarray) -> np.ndarray:
    """Column-wise mean over visible entries; gaps copy the previous value."""
    n_steps = speeds.shape[1]
    vis = ~np.isnan(speeds)
    counts = vis.sum(axis=0)
    if not counts.any():
        raise NoVisibleKeypoints("no step has a visible keypoint pair")
    sums = np.where(vis, speeds, 0.0).sum(axis=0)
    out = np.full(n_steps, np.nan)
    out[counts > 0] = sums[counts > 0] / counts[counts > 0]
    first = np.flatnonzero(counts > 0)[0]
    out[:first] = out[first]
    for t in range(first + 1, n_steps):
        if counts[t] == 0:
            out[t] = out[t - 1]
    return out


def keypoint_velocity_series(rec: Recording) -> tuple[np.ndarray, dict]:
    """Overall mean keypoint speed per step (m/s) and the same per object id."""
    if rec.n_frames < 2:
        raise NoVisibleKeypoints("need at least 2 frames")
    if not rec.keypoint_tracks:
        raise NoVisibleKeypoints("recording has no keypoint tracks")
    speeds = np.stack([_track_speeds(t.positions, rec.fps) for t in rec.keypoint_tracks])
    overall = _mean_series(speeds)
    per_object = {}
    ids = np.array([t.object_id for t in rec.keypoint_tracks])
    for oid in sorted(set(ids.tolist())):
        try:
            per_object[oid] = _mean_series(speeds[ids == oid])
        except NoVisibleKeypoints:
            per_object[oid] = np.zeros(rec.n_frames - 1)
    return overall, per_object


def smooth_series(series: np.ndarray, window: int = 3) -> np.ndarray:
    if window <= 1:
        return np.asarray(series, dtype=float).copy()
    return uniform_filter1d(np.asarray(series, dtype=float), size=window, mode="nearest")


def detect_keyframes(series, penalty: float | None = None, bandwidth: float | None = None,
                     min_segment: int = 5) -> list[int]:
    """Changepoints of a speed series under a penalized RBF-kernel segmentation cost.

    Defaults: ``penalty = log T`` and the median pairwise distance as
    bandwidth. The returned indices exclude ``0`` and the series end.
    """
    return detect_changepoints(series, penalty, bandwidth, min_segment)


# --- plan construction ----------------------------------------------------------

def _build_graph(rec: Recording, start: int, end: Optional[int], contact_thresh: float) -> OOG:
    frame = rec.frames[start]
    clouds = {o.object_id: o.cloud for o in frame.objects}
    if end is None:
        nodes = [PointNode(t.object_id, np.empty((0, 3))) for t in rec.keypoint_tracks]
    else:
        nodes = [PointNode(t.object_id, t.positions[start:end + 1]) for t in rec.keypoint_tracks]
    return build_oog(start, clouds, frame.hand, nodes, contact_thresh, rec.fps)


def _merge_keyframes(frames: list[int], sets: list, notes: list) -> list[int]:
    kept = [0]
    for j in range(1, len(frames) - 1):
        if sets[j] != sets[kept[-1]]:
            kept.append(j)
        else:
            log.debug("merging keyframe %d into %d (same contacts)", frames[j], frames[kept[-1]])
    last = len(frames) - 1
    if sets[last] == sets[kept[-1]]:
        if len(kept) > 1:
            # the final frame always closes the plan; drop its equal predecessor
            kept[-1] = last
        else:
            msg = (f"contact set {format_contacts(sets[0])} never changes; plan keeps only the first "
                   f"and last frames")
            warnings.warn(msg, MergeWarning, stacklevel=3)
            notes.append(msg)
            kept.append(last)
    else:
        kept.append(last)
    return [frames[j] for j in kept]


def generate_plan(rec: Recording, config: PlanConfig | None = None) -> ManipulationPlan:
    """Segment an (already table-aligned) recording into a graph per keyframe.

    Keyframes come from changepoints of the smoothed mean keypoint speed;
    adjacent keyframes with equal contact sets are merged so every consecutive
    pair of graphs differs in contacts.
    """
    cfg = config or PlanConfig()
    overall, per_object = keypoint_velocity_series(rec)
    smoothed = smooth_series(overall, cfg.smoothing_window)
    T = rec.n_frames - 1

    if cfg.per_object:
        bkps = set()
        for series in per_object.values():
            s = smooth_series(series, cfg.smoothing_window)
            if np.ptp(s) > 0:
                bkps.update(detect_keyframes(s, cfg.penalty, cfg.bandwidth, cfg.min_segment))
        bkps = sorted(bkps)
    else:
        bkps = detect_keyframes(smoothed, cfg.penalty, cfg.bandwidth, cfg.min_segment)

    frames = [0, *[b for b in bkps if 0 < b < T], T]
    graphs = {f: _build_graph(rec, f, None, cfg.contact_thresh) for f in frames}
    sets = [contact_set(graphs[f]) for f in frames]
    notes: list = []
    keyframes = _merge_keyframes(frames, sets, notes)

    oogs = []
    for j, f in enumerate(keyframes):
        nxt = keyframes[j + 1] if j + 1 < len(keyframes) else None
        oogs.append(_build_graph(rec, f, nxt, cfg.contact_thresh))

    resolved = asdict(cfg)
    resolved["penalty"] = cfg.penalty if cfg.penalty is not None else default_penalty(len(smoothed))
    resolved["bandwidth"] = cfg.bandwidth if cfg.bandwidth is not None else median_bandwidth(smoothed)
    return ManipulationPlan(oogs, keyframes, list(rec.object_names), rec.fps,
                            [float(v) for v in overall], [int(b) for b in bkps], notes, resolved)


# --- segment roles ----------------------------------------------------------------

def object_speeds(g: OOG) -> dict:
    """Mean keypoint speed (m/s) per object over the graph's segment."""
    per = {}
    for pn in g.point_nodes:
        if len(pn.trajectory) < 2:
            continue
        sp = _track_speeds(pn.trajectory, g.fps)
        sp = sp[~np.isnan(sp)]
        if sp.size:
            per.setdefault(pn.object_id, []).append(float(sp.mean()))
    return {oid: float(np.mean(v)) for oid, v in per.items()}


def select_target_object(g: OOG, motion_floor: float = 0.005) -> int:
    speeds = object_speeds(g)
    if not speeds:
        raise NoMotion(f"keyframe {g.keyframe_index} has no keypoint motion")
    oid = max(sorted(speeds), key=lambda k: speeds[k])
    if speeds[oid] < motion_floor:
        raise NoMotion(f"fastest object {oid} moves at {speeds[oid]:.4g} m/s, below floor {motion_floor}")
    return oid


def changed_contacts(g_f: OOG, g_next: OOG) -> frozenset:
    return contact_set(g_f) ^ contact_set(g_next)


def select_reference_object(g_f: OOG, g_next: OOG, target: int) -> Optional[int]:
    cands = set()
    for i, k in changed_contacts(g_f, g_next):
        if k == HAND:
            continue
        if i == target:
            cands.add(k)
        elif k == target:
            cands.add(i)
    if not cands:
        return None
    if len(cands) > 1:
        warnings.warn(f"several reference candidates {sorted(cands)} for target {target}; using {min(cands)}",
                      AmbiguousReference, stacklevel=2)
    return min(cands)


def segment_roles(g_f: OOG, g_next: OOG, motion_floor: float = 0.005) -> SegmentRoles:
    """Target and reference objects for the segment ``g_f -> g_next``.

    A segment where nothing moves (pure grasp or release) takes as target the
    object whose hand contact flips.
    """
    try:
        target = select_target_object(g_f, motion_floor)
    except NoMotion:
        flipped = sorted(i for i, k in changed_contacts(g_f, g_next) if k == HAND)
        if not flipped:
            raise
        target = flipped[0]
    return SegmentRoles(target, select_reference_object(g_f, g_next, target))
