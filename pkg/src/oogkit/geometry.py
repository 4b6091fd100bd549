"""Rigid-body primitives (quaternion poses, point clouds) and tabletop plane handling.

Quaternions are stored scalar-first ``(w, x, y, z)``. Every constructed
:class:`Pose` is renormalized and canonicalized to ``w >= 0`` so two poses
describing the same rotation compare equal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateCloud, TooFewPoints

__all__ = [
    "Pose",
    "PointCloud",
    "PlaneModel",
    "compose",
    "apply",
    "quat_mul",
    "quat_to_matrix",
    "matrix_to_quat",
    "rotation_angle",
    "fit_plane_ransac",
    "plane_alignment_transform",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def quat_mul(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hamilton product of scalar-first quaternions; broadcasts over leading axes."""
    pw, px, py, pz = np.moveaxis(np.asarray(p, dtype=float), -1, 0)
    qw, qx, qy, qz = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.stack(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ],
        axis=-1,
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion (or a stack of them, shape (..., 4))."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (yy + zz)
    R[..., 0, 1] = 2 * (xy - wz)
    R[..., 0, 2] = 2 * (xz + wy)
    R[..., 1, 0] = 2 * (xy + wz)
    R[..., 1, 1] = 1 - 2 * (xx + zz)
    R[..., 1, 2] = 2 * (yz - wx)
    R[..., 2, 0] = 2 * (xz - wy)
    R[..., 2, 1] = 2 * (yz + wx)
    R[..., 2, 2] = 1 - 2 * (xx + yy)
    return R


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion of a rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    diag = np.array([tr, R[0, 0], R[1, 1], R[2, 2]])
    k = int(np.argmax(diag))
    if k == 0:
        s = 2.0 * np.sqrt(max(1.0 + tr, 0.0))
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif k == 1:
        s = 2.0 * np.sqrt(max(1.0 + R[0, 0] - R[1, 1] - R[2, 2], 0.0))
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif k == 2:
        s = 2.0 * np.sqrt(max(1.0 - R[0, 0] + R[1, 1] - R[2, 2], 0.0))
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(max(1.0 - R[0, 0] - R[1, 1] + R[2, 2], 0.0))
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return np.asarray(q)


def _canonical_quat(q) -> np.ndarray:
    q = np.array(q, dtype=float).reshape(4)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError(f"invalid quaternion {q!r}")
    q = q / n
    # double cover: prefer w > 0, break w == 0 ties on the first non-zero component
    for c in q:
        if c != 0.0:
            if c < 0.0:
                q = -q
            break
    return q


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``v -> R v + t`` with ``R`` held as a unit quaternion."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError(f"non-finite translation {t!r}")
        object.__setattr__(self, "rotation", _frozen(_canonical_quat(self.rotation)))
        object.__setattr__(self, "translation", _frozen(t))

    # constructors
    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_translation(cls, t) -> "Pose":
        return cls(translation=t)

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        h = 0.5 * angle
        return cls(np.concatenate([[np.cos(h)], np.sin(h) * axis]), translation)

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(matrix_to_quat(T[:3, :3]), T[:3, 3])

    @classmethod
    def from_rt(cls, R: np.ndarray, t) -> "Pose":
        return cls(matrix_to_quat(R), t)

    @classmethod
    def random(cls, rng: np.random.Generator, max_angle: float = np.pi, trans_scale: float = 1.0) -> "Pose":
        axis = rng.normal(size=3)
        angle = rng.uniform(0.0, max_angle)
        return cls.from_axis_angle(axis, angle, rng.uniform(-trans_scale, trans_scale, size=3))

    # accessors
    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    # algebra
    def apply(self, v) -> np.ndarray:
        """Transform a point ``(3,)`` or an array of points ``(N, 3)``."""
        v = np.asarray(v, dtype=float)
        return v @ self.R.T + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        q = quat_mul(self.rotation, other.rotation)
        t = self.R @ other.translation + self.translation
        return Pose(q, t)

    __matmul__ = compose

    def inverse(self) -> "Pose":
        qc = self.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        return Pose(qc, -(quat_to_matrix(qc) @ self.translation))

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0)
        )

    def to_list(self) -> list:
        return [float(c) for c in self.rotation] + [float(c) for c in self.translation]

    @classmethod
    def from_list(cls, values) -> "Pose":
        return cls(values[:4], values[4:7])

    def __repr__(self) -> str:
        q = np.array2string(self.rotation, precision=6)
        t = np.array2string(self.translation, precision=6)
        return f"Pose(q={q}, t={t})"


def compose(p: Pose, q: Pose) -> Pose:
    return p.compose(q)


def apply(p: Pose, v) -> np.ndarray:
    return p.apply(v)


def rotation_angle(a: Pose, b: Pose) -> float:
    """Angle in radians of the relative rotation between two poses."""
    d = abs(float(np.dot(a.rotation, b.rotation)))
    return 2.0 * float(np.arccos(min(1.0, d)))


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.isfinite(pts).all():
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", _frozen(pts))
        if self.colors is not None:
            cols = np.array(self.colors, dtype=float).reshape(-1, 3)
            if len(cols) != len(pts):
                raise ValueError(f"colors length {len(cols)} != points length {len(pts)}")
            object.__setattr__(self, "colors", _frozen(cols))

    def __len__(self) -> int:
        return len(self.points)

    def transformed(self, pose: Pose) -> "PointCloud":
        return PointCloud(pose.apply(self.points), self.colors)

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def diameter(self) -> float:
        ext = self.points.max(axis=0) - self.points.min(axis=0)
        return float(np.linalg.norm(ext))

    def equals(self, other: "PointCloud") -> bool:
        if not np.array_equal(self.points, other.points):
            return False
        if (self.colors is None) != (other.colors is None):
            return False
        return self.colors is None or np.array_equal(self.colors, other.colors)


@dataclass(frozen=True)
class PlaneModel:
    """Plane ``a x + b y + c z = d`` with unit normal ``(a, b, c)``."""

    a: float
    b: float
    c: float
    d: float

    @property
    def normal(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal - self.d

    @classmethod
    def from_normal(cls, normal, d: float) -> "PlaneModel":
        n = np.asarray(normal, dtype=float)
        norm = np.linalg.norm(n)
        n, d = n / norm, d / norm
        # c >= 0, then b >= 0, then a >= 0; components below 1e-12 count as zero
        for comp in (n[2], n[1], n[0]):
            if abs(comp) > 1e-12:
                if comp < 0:
                    n, d = -n, -d
                break
        return cls(float(n[0]), float(n[1]), float(n[2]), float(d))


def _lstsq_plane(points: np.ndarray) -> PlaneModel:
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
    n = vt[-1]
    return PlaneModel.from_normal(n, float(n @ centroid))


def fit_plane_ransac(
    cloud: PointCloud | np.ndarray,
    dist_thresh: float = 0.01,
    iterations: int = 1000,
    seed: int = 0,
) -> tuple[PlaneModel, np.ndarray]:
    """Fit a dominant plane with 3-point RANSAC followed by an orthogonal least-squares refit.

    Returns the plane and the sorted indices of points within ``dist_thresh`` of
    the refit plane.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)
    n = len(pts)
    if n < 3:
        raise TooFewPoints(f"plane fit needs at least 3 points, got {n}")
    sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    if sv[0] == 0.0 or sv[1] <= 1e-12 * sv[0]:
        raise DegenerateCloud("points are collinear or coincident")

    rng = np.random.default_rng(seed)
    samples = rng.integers(0, n, size=(iterations, 3))
    best_count, best = -1, None
    chunk = 256
    for lo in range(0, iterations, chunk):
        s = samples[lo:lo + chunk]
        p0, p1, p2 = pts[s[:, 0]], pts[s[:, 1]], pts[s[:, 2]]
        normals = np.cross(p1 - p0, p2 - p0)
        norms = np.linalg.norm(normals, axis=1)
        valid = norms > 1e-12 * sv[0] ** 2
        normals[valid] /= norms[valid, None]
        ds = np.einsum("ij,ij->i", normals, p0)
        counts = (np.abs(pts @ normals.T - ds) <= dist_thresh).sum(axis=0)
        counts[~valid] = -1
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count, best = int(counts[k]), (normals[k], ds[k])
    if best_count < 3:
        raise DegenerateCloud("no non-degenerate plane hypothesis found")

    normal, d = best
    hyp_inliers = np.flatnonzero(np.abs(pts @ normal - d) <= dist_thresh)
    plane = _lstsq_plane(pts[hyp_inliers])
    inliers = np.flatnonzero(np.abs(plane.signed_distance(pts)) <= dist_thresh)
    return plane, inliers


def plane_alignment_transform(plane: PlaneModel) -> Pose:
    """Pose taking the plane onto ``z = 0`` with its normal along ``+z``.

    The rotation is the minimal-angle rotation between the normals; an
    antiparallel normal gets a half turn about the x axis.
    """
    n = plane.normal / np.linalg.norm(plane.normal)
    z = np.array([0.0, 0.0, 1.0])
    c = float(n @ z)
    if c < -1.0 + 1e-12:
        q = np.array([0.0, 1.0, 0.0, 0.0])
    else:
        q = np.concatenate([[1.0 + c], np.cross(n, z)])
    rot = Pose(q)
    # rotated plane points satisfy z = d
    return Pose(rot.rotation, [0.0, 0.0, -plane.d / np.linalg.norm(plane.normal)])
