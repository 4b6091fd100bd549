"""Demonstration recording: JSON format, validation, and tabletop alignment.

A recording stands in for the outputs of an upstream perception stack: per
frame object point clouds, fingertip locations with a grip flag, and tracked
keypoints (``null`` where a keypoint is occluded).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ParseError, SchemaError, VersionError
from .geometry import PointCloud, Pose, fit_plane_ransac, plane_alignment_transform

SUPPORTED_VERSIONS = ("1.0",)


class Grip(str, enum.Enum):
    OPEN = "open"
    CLOSED = "closed"


@dataclass(frozen=True, eq=False)
class HandObservation:
    thumb_tip: np.ndarray
    index_tip: np.ndarray
    grip: Grip = Grip.OPEN

    def __post_init__(self):
        object.__setattr__(self, "thumb_tip", np.array(self.thumb_tip, dtype=float).reshape(3))
        object.__setattr__(self, "index_tip", np.array(self.index_tip, dtype=float).reshape(3))
        object.__setattr__(self, "grip", Grip(self.grip))

    @property
    def fingertips(self) -> np.ndarray:
        return np.stack([self.thumb_tip, self.index_tip])

    @property
    def interaction_point(self) -> np.ndarray:
        return 0.5 * (self.thumb_tip + self.index_tip)

    def transformed(self, pose: Pose) -> "HandObservation":
        return HandObservation(pose.apply(self.thumb_tip), pose.apply(self.index_tip), self.grip)

    def to_dict(self) -> dict:
        return {
            "thumb_tip": _vec(self.thumb_tip),
            "index_tip": _vec(self.index_tip),
            "grip": self.grip.value,
        }


@dataclass(frozen=True, eq=False)
class ObjectObservation:
    object_id: int
    cloud: PointCloud


@dataclass(frozen=True, eq=False)
class Frame:
    index: int
    objects: tuple
    hand: HandObservation

    def cloud(self, object_id: int) -> PointCloud:
        for obs in self.objects:
            if obs.object_id == object_id:
                return obs.cloud
        raise KeyError(object_id)


@dataclass(frozen=True, eq=False)
class KeypointTrack:
    """Positions of one tracked keypoint; occluded samples are NaN rows."""

    object_id: int
    positions: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "positions", np.array(self.positions, dtype=float).reshape(-1, 3))

    @property
    def occluded(self) -> np.ndarray:
        return np.isnan(self.positions).any(axis=1)

    def filled(self) -> np.ndarray:
        """Positions with occluded gaps linearly interpolated (ends held)."""
        return fill_gaps(self.positions)


def fill_gaps(positions: np.ndarray) -> np.ndarray:
    positions = np.asarray(positions, dtype=float)
    vis = ~np.isnan(positions).any(axis=1)
    if vis.all() or not vis.any():
        return positions.copy()
    t = np.arange(len(positions))
    return np.stack([np.interp(t, t[vis], positions[vis, k]) for k in range(3)], axis=1)


@dataclass(frozen=True, eq=False)
class Recording:
    fps: float
    object_names: tuple
    frames: tuple
    keypoint_tracks: tuple
    table_points: Optional[np.ndarray] = None
    version: str = "1.0"

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def to_dict(self) -> dict:
        out = {"version": self.version, "fps": float(self.fps), "object_names": list(self.object_names)}
        if self.table_points is not None:
            out["table_points"] = [_vec(p) for p in self.table_points]
        frames = []
        for fr in self.frames:
            objs = []
            for obs in fr.objects:
                o = {"object_id": obs.object_id, "points": [_vec(p) for p in obs.cloud.points]}
                if obs.cloud.colors is not None:
                    o["colors"] = [_vec(c) for c in obs.cloud.colors]
                objs.append(o)
            frames.append({"index": fr.index, "objects": objs, "hand": fr.hand.to_dict()})
        out["frames"] = frames
        out["keypoint_tracks"] = [
            {"object_id": tr.object_id, "positions": [None if np.isnan(p).any() else _vec(p) for p in tr.positions]}
            for tr in self.keypoint_tracks
        ]
        return out

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


def _vec(v) -> list:
    return [float(c) for c in v]


# --- serialization ----------------------------------------------------------

def dumps_recording(rec: Recording) -> str:
    # json emits repr() floats, which round-trip exactly (17 significant digits)
    return json.dumps(rec.to_dict(), separators=(",", ":"))


def save_recording(rec: Recording, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_recording(rec))


def load_recording(data) -> Recording:
    """Parse and validate a recording from ``bytes``/``str`` JSON text."""
    if isinstance(data, (bytes, bytearray)):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"recording is not UTF-8: {exc}") from exc
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from exc
    return recording_from_dict(doc)


def read_recording(path) -> Recording:
    with open(path, "rb") as fh:
        return load_recording(fh.read())


def _require(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise SchemaError(path, msg)


def _points(value, path: str, allow_null: bool = False, min_len: int = 0) -> np.ndarray:
    _require(isinstance(value, list), path, "expected a list of [x, y, z]")
    _require(len(value) >= min_len, path, f"expected at least {min_len} entries")
    out = np.empty((len(value), 3))
    for i, p in enumerate(value):
        if p is None and allow_null:
            out[i] = np.nan
            continue
        _require(
            isinstance(p, list) and len(p) == 3
            and all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in p),
            f"{path}[{i}]", "expected [x, y, z] numbers",
        )
        _require(all(np.isfinite(c) for c in p), f"{path}[{i}]", "non-finite coordinate")
        out[i] = p
    return out


def recording_from_dict(doc) -> Recording:
    _require(isinstance(doc, dict), "$", "top level must be an object")
    version = doc.get("version")
    _require(isinstance(version, str), "version", "missing or not a string")
    if version not in SUPPORTED_VERSIONS:
        raise VersionError(f"unsupported recording version {version!r}; supported: {SUPPORTED_VERSIONS}")

    fps = doc.get("fps")
    _require(isinstance(fps, (int, float)) and not isinstance(fps, bool), "fps", "missing or not a number")
    _require(np.isfinite(fps) and fps > 0, "fps", "must be positive")

    names = doc.get("object_names")
    _require(isinstance(names, list) and len(names) > 0, "object_names", "expected a non-empty list")
    for i, n in enumerate(names):
        _require(isinstance(n, str), f"object_names[{i}]", "expected a string")
    n_obj = len(names)

    table = None
    if doc.get("table_points") is not None:
        table = _points(doc["table_points"], "table_points")

    frames_doc = doc.get("frames")
    _require(isinstance(frames_doc, list), "frames", "expected a list")
    _require(len(frames_doc) >= 2, "frames", "need at least 2 frames")
    frames = []
    for fi, fd in enumerate(frames_doc):
        fp = f"frames[{fi}]"
        _require(isinstance(fd, dict), fp, "expected an object")
        idx = fd.get("index")
        _require(isinstance(idx, int) and not isinstance(idx, bool), f"{fp}.index", "expected an integer")
        objs_doc = fd.get("objects")
        _require(isinstance(objs_doc, list), f"{fp}.objects", "expected a list")
        _require(len(objs_doc) == n_obj, f"{fp}.objects", f"expected {n_obj} observations, got {len(objs_doc)}")
        seen = set()
        objs = []
        for oi, od in enumerate(objs_doc):
            op = f"{fp}.objects[{oi}]"
            _require(isinstance(od, dict), op, "expected an object")
            oid = od.get("object_id")
            _require(isinstance(oid, int) and not isinstance(oid, bool) and 0 <= oid < n_obj,
                     f"{op}.object_id", "must index object_names")
            _require(oid not in seen, f"{op}.object_id", f"duplicate object_id {oid}")
            seen.add(oid)
            pts = _points(od.get("points"), f"{op}.points", min_len=1)
            cols = None
            if od.get("colors") is not None:
                cols = _points(od["colors"], f"{op}.colors")
                _require(len(cols) == len(pts), f"{op}.colors", "length differs from points")
            objs.append(ObjectObservation(oid, PointCloud(pts, cols)))
        objs.sort(key=lambda o: o.object_id)
        hd = fd.get("hand")
        hp = f"{fp}.hand"
        _require(isinstance(hd, dict), hp, "expected an object")
        thumb = _points([hd.get("thumb_tip")], f"{hp}.thumb_tip")[0]
        index = _points([hd.get("index_tip")], f"{hp}.index_tip")[0]
        _require(hd.get("grip") in ("open", "closed"), f"{hp}.grip", "expected 'open' or 'closed'")
        frames.append(Frame(idx, tuple(objs), HandObservation(thumb, index, Grip(hd["grip"]))))

    tracks_doc = doc.get("keypoint_tracks")
    _require(isinstance(tracks_doc, list), "keypoint_tracks", "expected a list")
    tracks = []
    for ti, td in enumerate(tracks_doc):
        tp = f"keypoint_tracks[{ti}]"
        _require(isinstance(td, dict), tp, "expected an object")
        oid = td.get("object_id")
        _require(isinstance(oid, int) and not isinstance(oid, bool) and 0 <= oid < n_obj,
                 f"{tp}.object_id", "must index object_names")
        pos = _points(td.get("positions"), f"{tp}.positions", allow_null=True)
        _require(len(pos) == len(frames), f"{tp}.positions",
                 f"track length {len(pos)} != frame count {len(frames)}")
        _require(not np.isnan(pos).all(), f"{tp}.positions", "track has no visible sample")
        tracks.append(KeypointTrack(oid, pos))

    return Recording(float(fps), tuple(names), tuple(frames), tuple(tracks), table, version)


# --- tabletop alignment -------------------------------------------------------

def table_proxy_points(rec: Recording) -> np.ndarray:
    """Declared table points, or the lowest-z decile of all frame-0 cloud points."""
    if rec.table_points is not None and len(rec.table_points) >= 3:
        return rec.table_points
    pts = np.concatenate([o.cloud.points for o in rec.frames[0].objects])
    k = max(3, int(np.ceil(0.1 * len(pts))))
    order = np.argsort(pts[:, 2], kind="stable")
    return pts[order[:k]]


def transform_recording(rec: Recording, pose: Pose) -> Recording:
    frames = tuple(
        Frame(
            fr.index,
            tuple(ObjectObservation(o.object_id, o.cloud.transformed(pose)) for o in fr.objects),
            fr.hand.transformed(pose),
        )
        for fr in rec.frames
    )
    tracks = tuple(KeypointTrack(t.object_id, pose.apply(t.positions)) for t in rec.keypoint_tracks)
    table = None if rec.table_points is None else pose.apply(rec.table_points)
    return replace(rec, frames=frames, keypoint_tracks=tracks, table_points=table)


def table_alignment_pose(
    rec: Recording,
    dist_thresh: float = 0.01,
    iterations: int = 1000,
    seed: int = 0,
) -> Pose:
    plane, _ = fit_plane_ransac(table_proxy_points(rec), dist_thresh, iterations, seed)
    return plane_alignment_transform(plane)


def table_align(
    rec: Recording,
    dist_thresh: float = 0.01,
    iterations: int = 1000,
    seed: int = 0,
) -> Recording:
    """Rigidly move the recording so the table plane is ``z = 0`` with normal ``+z``."""
    return transform_recording(rec, table_alignment_pose(rec, dist_thresh, iterations, seed))
