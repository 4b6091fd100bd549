"""Global point-cloud registration: local geometric histograms, feature-matched RANSAC, ICP.

The descriptor follows the fast point-feature-histogram construction (33 bins:
three 11-bin angle histograms, each point's histogram augmented with its
neighbours' histograms weighted by inverse distance). The angle features use
absolute values, which makes them independent of the sign of the PCA normals
and therefore exactly invariant to rigid motion of the cloud.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import RegistrationFailed, TooFewPoints
from .geometry import PointCloud, Pose

N_BINS = 11
FEATURE_DIM = 3 * N_BINS


@dataclass(frozen=True)
class RegistrationParams:
    voxel_size: float = 0.005
    ransac_iters: int = 1000
    corr_dist: float | None = None  # defaults to 1.5 * voxel_size
    normal_radius: float | None = None  # 2 * voxel_size
    feature_radius: float | None = None  # 5 * voxel_size
    icp_iters: int = 30
    min_fitness: float = 0.25
    edge_ratio: float = 0.9
    seed: int = 0

    def resolved(self) -> "RegistrationParams":
        v = self.voxel_size
        return RegistrationParams(
            v, self.ransac_iters,
            self.corr_dist if self.corr_dist is not None else 1.5 * v,
            self.normal_radius if self.normal_radius is not None else 2.0 * v,
            self.feature_radius if self.feature_radius is not None else 5.0 * v,
            self.icp_iters, self.min_fitness, self.edge_ratio, self.seed,
        )


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    transform: Pose
    fitness: float
    inlier_rmse: float
    n_correspondences: int = 0


def _points(cloud) -> np.ndarray:
    return cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)


def voxel_downsample(points: np.ndarray, voxel: float) -> np.ndarray:
    """Centroid of the points falling in each occupied voxel, ordered by voxel key."""
    if voxel <= 0:
        return points
    keys = np.floor(points / voxel).astype(np.int64)
    _, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    counts = np.bincount(inv)
    out = np.zeros((len(counts), 3))
    np.add.at(out, inv, points)
    return out / counts[:, None]


def _neighbourhoods(tree: cKDTree, points: np.ndarray, radius: float, min_nn: int, max_nn: int):
    """kNN lists masked to ``radius`` but always keeping ``min_nn`` nearest (self included)."""
    k = min(max_nn, len(points))
    d, idx = tree.query(points, k=k)
    d, idx = d.reshape(len(points), k), idx.reshape(len(points), k)
    rank = np.arange(k)[None, :]
    mask = (d <= radius) | (rank < min(min_nn, k))
    return d, idx, mask


def estimate_normals(points: np.ndarray, radius: float, min_nn: int = 8, max_nn: int = 30,
                     tree: cKDTree | None = None) -> np.ndarray:
    """Unit normals from the smallest principal axis of each local neighbourhood (sign arbitrary)."""
    tree = tree or cKDTree(points)
    _, idx, mask = _neighbourhoods(tree, points, radius, min_nn, max_nn)
    w = mask.astype(float)
    nb = points[idx]
    cnt = w.sum(axis=1, keepdims=True)
    mean = (nb * w[..., None]).sum(axis=1) / cnt
    c = (nb - mean[:, None, :]) * w[..., None]
    cov = np.einsum("nki,nkj->nij", c, c)
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, :, 0]


def _pair_features(ps, ns, pt, nt):
    """Sign-invariant Darboux-frame angles for source/target point pairs."""
    d = pt - ps
    dist = np.linalg.norm(d, axis=-1, keepdims=True)
    dhat = d / np.where(dist > 0, dist, 1.0)
    u = ns
    v = np.cross(u, dhat)
    vn = np.linalg.norm(v, axis=-1, keepdims=True)
    v = v / np.where(vn > 1e-12, vn, 1.0)
    w = np.cross(u, v)
    f_alpha = np.abs(np.einsum("...i,...i", v, nt))
    f_phi = np.abs(np.einsum("...i,...i", u, dhat))
    f_theta = np.arctan2(np.abs(np.einsum("...i,...i", w, nt)), np.abs(np.einsum("...i,...i", u, nt)))
    return f_alpha, f_phi, f_theta


def _bin(values, upper):
    return np.clip((values / upper * N_BINS).astype(int), 0, N_BINS - 1)


def compute_features(
    cloud,
    normal_radius: float,
    feature_radius: float,
    min_nn: int = 8,
    max_nn: int = 40,
    normals: np.ndarray | None = None,
) -> np.ndarray:
    """Per-point 33-bin descriptors, each L1-normalized to sum 1. Shape ``(N, 33)``."""
    pts = _points(cloud)
    if len(pts) < 10:
        raise TooFewPoints(f"feature computation needs at least 10 points, got {len(pts)}")
    if normal_radius <= 0 or feature_radius <= 0:
        raise ValueError("radii must be positive")
    tree = cKDTree(pts)
    if normals is None:
        normals = estimate_normals(pts, normal_radius, min_nn, max_nn, tree)
    d, idx, mask = _neighbourhoods(tree, pts, feature_radius, min_nn + 1, max_nn)
    # drop self and exact duplicates
    mask &= d > 0
    n = len(pts)

    fa, fp, ft = _pair_features(pts[:, None, :], normals[:, None, :], pts[idx], normals[idx])
    rows = np.broadcast_to(np.arange(n)[:, None], idx.shape)
    spfh = np.zeros((n, FEATURE_DIM))
    wm = mask.astype(float)
    for off, vals, upper in ((0, fa, 1.0), (N_BINS, fp, 1.0), (2 * N_BINS, ft, np.pi / 2)):
        np.add.at(spfh, (rows[mask], off + _bin(vals, upper)[mask]), 1.0)
    cnt = wm.sum(axis=1, keepdims=True)
    spfh /= np.where(cnt > 0, cnt, 1.0)

    inv_d = np.where(mask, 1.0 / np.where(d > 0, d, 1.0), 0.0)
    agg = np.einsum("nk,nkf->nf", inv_d, spfh[idx]) / np.where(cnt > 0, cnt, 1.0)
    fpfh = spfh + agg
    total = fpfh.sum(axis=1, keepdims=True)
    return fpfh / np.where(total > 0, total, 1.0)


def mutual_matches(feat_src: np.ndarray, feat_dst: np.ndarray) -> np.ndarray:
    """``(M, 2)`` index pairs that are each other's nearest neighbour in descriptor space."""
    _, s2d = cKDTree(feat_dst).query(feat_src, k=1)
    _, d2s = cKDTree(feat_src).query(feat_dst, k=1)
    src = np.arange(len(feat_src))
    keep = d2s[s2d] == src
    return np.stack([src[keep], s2d[keep]], axis=1)


def kabsch(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rotation/translation ``dst ~ R src + t``; batched over leading axes."""
    cs, cd = src.mean(axis=-2, keepdims=True), dst.mean(axis=-2, keepdims=True)
    H = np.swapaxes(src - cs, -1, -2) @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    V = np.swapaxes(Vt, -1, -2)
    det = np.linalg.det(V @ np.swapaxes(U, -1, -2))
    D = np.zeros(H.shape)
    D[..., 0, 0] = 1.0
    D[..., 1, 1] = 1.0
    D[..., 2, 2] = np.sign(np.where(det == 0, 1.0, det))
    R = V @ D @ np.swapaxes(U, -1, -2)
    t = cd[..., 0, :] - np.einsum("...ij,...j->...i", R, cs[..., 0, :])
    return R, t


def evaluate(src: np.ndarray, dst_tree: cKDTree, R: np.ndarray, t: np.ndarray, corr_dist: float):
    """Fitness (inlier fraction of ``src``) and inlier RMSE for ``x -> R x + t``."""
    d, _ = dst_tree.query(src @ R.T + t, k=1, distance_upper_bound=corr_dist)
    inl = np.isfinite(d)
    fitness = float(inl.mean())
    rmse = float(np.sqrt(np.mean(d[inl] ** 2))) if inl.any() else 0.0
    return fitness, rmse


def icp(src: np.ndarray, dst: np.ndarray, R: np.ndarray, t: np.ndarray, max_dist: float,
        iters: int = 30, dst_tree: cKDTree | None = None):
    """Point-to-point ICP; a fixed number of iterations."""
    tree = dst_tree or cKDTree(dst)
    for _ in range(iters):
        d, j = tree.query(src @ R.T + t, k=1, distance_upper_bound=max_dist)
        ok = np.isfinite(d)
        if ok.sum() < 3:
            break
        R, t = kabsch(src[ok], dst[j[ok]])
    return R, t


def _ransac(src_k, dst_k, corr, corr_dist, iters, edge_ratio, rng):
    """Best transform from 3-correspondence hypotheses scored by correspondence inliers."""
    m = len(corr)
    if m < 3:
        return None
    cs, cd = src_k[corr[:, 0]], dst_k[corr[:, 1]]
    # all random draws happen up front so the result does not depend on batching
    draws = np.stack([rng.choice(m, 3, replace=False) for _ in range(iters)])
    a, b = cs[draws], cd[draws]
    ea = np.linalg.norm(a - np.roll(a, 1, axis=1), axis=-1)
    eb = np.linalg.norm(b - np.roll(b, 1, axis=1), axis=-1)
    lo, hi = np.minimum(ea, eb), np.maximum(ea, eb)
    ok = np.all(lo >= edge_ratio * hi, axis=1) & np.all(hi > 0, axis=1)
    if not ok.any():
        return None
    R, t = kabsch(a[ok], b[ok])
    moved = np.einsum("hij,mj->hmi", R, cs) + t[:, None, :]
    score = (np.linalg.norm(moved - cd[None], axis=-1) <= corr_dist).sum(axis=1)
    return R, t, score


def global_register(src, dst, params: RegistrationParams | None = None, **overrides) -> RegistrationResult:
    """Estimate the pose taking ``src`` onto ``dst``.

    Pipeline: voxel downsample, descriptors, mutual nearest-neighbour matching,
    RANSAC over 3-correspondence samples (edge-length pre-check, correspondence
    inlier scoring; the best few hypotheses are re-scored on the full clouds),
    then point-to-point ICP on the full clouds. Raises
    :class:`RegistrationFailed` if the final fitness is below ``min_fitness``.
    """
    p = (params or RegistrationParams())
    if overrides:
        p = RegistrationParams(**{**p.__dict__, **overrides})
    p = p.resolved()
    src_pts, dst_pts = _points(src), _points(dst)
    if len(src_pts) < 10 or len(dst_pts) < 10:
        raise TooFewPoints("registration needs at least 10 points per cloud")

    src_k = voxel_downsample(src_pts, p.voxel_size)
    dst_k = voxel_downsample(dst_pts, p.voxel_size)
    if len(src_k) < 10 or len(dst_k) < 10:
        src_k, dst_k = src_pts, dst_pts
    f_src = compute_features(src_k, p.normal_radius, p.feature_radius)
    f_dst = compute_features(dst_k, p.normal_radius, p.feature_radius)
    corr = mutual_matches(f_src, f_dst)

    rng = np.random.default_rng(p.seed)
    dst_tree = cKDTree(dst_pts)
    out = _ransac(src_k, dst_k, corr, p.corr_dist, p.ransac_iters, p.edge_ratio, rng)
    candidates = []
    if out is not None:
        R_h, t_h, score = out
        order = np.argsort(-score, kind="stable")[:8]
        for h in order:
            fit, _ = evaluate(src_pts, dst_tree, R_h[h], t_h[h], p.corr_dist)
            candidates.append((fit, int(score[h]), R_h[h], t_h[h]))
    if not candidates:
        raise RegistrationFailed(f"no valid RANSAC hypothesis ({len(corr)} feature correspondences)",
                                 RegistrationResult(Pose(), 0.0, 0.0, len(corr)))
    # highest full-cloud fitness, ties by correspondence score then RANSAC order
    best = max(range(len(candidates)), key=lambda i: (candidates[i][0], candidates[i][1], -i))
    _, _, R, t = candidates[best]
    R, t = icp(src_pts, dst_pts, R, t, 2.0 * p.corr_dist, p.icp_iters, dst_tree)
    fitness, rmse = evaluate(src_pts, dst_tree, R, t, p.corr_dist)
    result = RegistrationResult(Pose.from_rt(R, t), fitness, rmse, len(corr))
    if fitness < p.min_fitness:
        raise RegistrationFailed(f"fitness {fitness:.3f} below min_fitness {p.min_fitness}", result)
    return result
