"""Per-step rigid transports fitted to keypoint trajectories, plus gripper commands.

For a segment of ``N`` steps the unknowns are ``X_0 .. X_{N-1}`` with
``X_i`` carrying every keypoint from step ``i`` to step ``i + 1``::

    J = sum_i sum_j || tau_j(i+1) - (R_i tau_j(i) + t_i) ||^2

Each ``X_i`` is a translation plus a quaternion. The optimizer is projected
gradient descent (quaternions renormalized after every step) with a per-pose
backtracking line search, run in two stages: rotation only, with the
translation held at its closed-form optimum, then rotation and translation
jointly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DidNotConverge, NonFiniteGradient
from .geometry import Pose, quat_to_matrix
from .recording import Grip, HandObservation


@dataclass(frozen=True)
class OptimizerConfig:
    rot_stage_steps: int = 200
    joint_stage_steps: int = 200
    step_size: float = 1e-2
    shrink: float = 0.5
    grow: float = 2.0  # used when the curvature estimate is unusable
    max_backtracks: int = 30
    init_trans_std: float = 0.01
    seed: int = 0
    tolerance: float = 1e-4
    grad_tol: float = 1e-9

    def __post_init__(self):
        if self.rot_stage_steps < 0 or self.joint_stage_steps <= 0:
            raise ValueError("stage step counts must be positive")


@dataclass(eq=False)
class ActionSequence:
    poses: list
    grip_commands: list = field(default_factory=list)
    interaction_point: Optional[np.ndarray] = None
    residual: float = 0.0
    history: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.poses)

    def absolute_poses(self, start: Pose) -> list:
        """End-effector poses in the world frame when the first pose is ``start``."""
        out = [start]
        for X in self.poses:
            out.append(X @ out[-1])
        return out


# --- objective and analytic gradient ------------------------------------------------

def _dR_dq(q: np.ndarray) -> np.ndarray:
    """Partial derivatives of the rotation matrix w.r.t. (w, x, y, z); shape (..., 4, 3, 3)."""
    w, x, y, z = np.moveaxis(q, -1, 0)
    o = np.zeros_like(w)
    dw = [[o, -z, y], [z, o, -x], [-y, x, o]]
    dx = [[o, y, z], [y, -2 * x, -w], [z, w, -2 * x]]
    dy = [[-2 * y, x, w], [x, o, z], [-w, z, -2 * y]]
    dz = [[-2 * z, -w, x], [w, -2 * z, y], [x, y, o]]
    mats = [np.moveaxis(np.array(m), (0, 1), (-2, -1)) for m in (dw, dx, dy, dz)]
    return 2.0 * np.stack(mats, axis=-3)


def _rotate(q, P):
    return P @ np.swapaxes(quat_to_matrix(q), -1, -2)


def _cost(RP, t, Y, W):
    r = RP + t[:, None, :] - Y
    return (W * (r * r).sum(-1)).sum(-1)


def step_objective(q: np.ndarray, t: np.ndarray, P: np.ndarray, Y: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Per-step cost ``J_i``; ``q`` (N,4), ``t`` (N,3), ``P``/``Y`` (N,K,3), ``W`` (N,K)."""
    return _cost(_rotate(q, P), t, Y, W)


def step_gradient(q, t, P, Y, W):
    """Analytic ``dJ_i/dq_i`` (N,4) and ``dJ_i/dt_i`` (N,3), treating the rotation
    formula as a polynomial in unconstrained ``q``."""
    R = quat_to_matrix(q)
    r = np.einsum("nij,nkj->nki", R, P) + t[:, None, :] - Y
    Wr = W[..., None] * r
    g_t = 2.0 * Wr.sum(axis=1)
    M = np.einsum("nki,nkj->nij", Wr, P)
    g_q = 2.0 * np.einsum("nmij,nij->nm", _dR_dq(q), M)
    return g_q, g_t


def objective(poses: Sequence[Pose], tracks: np.ndarray) -> float:
    """Total cost of per-step poses on stacked tracks ``(K, N+1, 3)`` (NaN = occluded)."""
    P, Y, W = _pairs(tracks)
    q = np.stack([p.rotation for p in poses])
    t = np.stack([p.translation for p in poses])
    return float(step_objective(q, t, P, Y, W).sum())


def _pairs(tracks: np.ndarray):
    tracks = np.asarray(tracks, dtype=float)
    P = np.swapaxes(tracks[:, :-1], 0, 1)
    Y = np.swapaxes(tracks[:, 1:], 0, 1)
    W = (~(np.isnan(P).any(-1) | np.isnan(Y).any(-1))).astype(float)
    return np.nan_to_num(P), np.nan_to_num(Y), W


def _closed_form_t(q, P, Y, W, RP=None):
    if RP is None:
        RP = _rotate(q, P)
    cnt = np.maximum(W.sum(axis=1), 1e-300)[:, None]
    return (W[..., None] * (Y - RP)).sum(axis=1) / cnt


def _normalize(q):
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def _descend(q, t, P, Y, W, steps, cfg: OptimizerConfig, rotation_only: bool, history: list):
    """Projected gradient descent with a per-pose Armijo backtracking search.

    The trial step is the Barzilai-Borwein length from the previous move
    (``cfg.step_size`` on the first iteration); it is halved until the
    sufficient-decrease test passes, so every accepted step lowers ``J``.
    """
    if rotation_only:
        t = _closed_form_t(q, P, Y, W)
    J = step_objective(q, t, P, Y, W)
    n = len(q)
    alpha = np.full(n, cfg.step_size)
    prev_x = prev_g = None
    # poses whose line search fails outright sit at round-off level; freeze them
    stalled = np.zeros(n, dtype=bool)
    for _ in range(steps):
        g_q, g_t = step_gradient(q, t, P, Y, W)
        if not (np.all(np.isfinite(g_q)) and np.all(np.isfinite(g_t))):
            raise NonFiniteGradient("gradient has non-finite entries")
        # tangent component only; the radial part is undone by renormalization
        g_q = g_q - np.einsum("ni,ni->n", g_q, q)[:, None] * q
        if rotation_only:
            g_t = np.zeros_like(g_t)
        g = np.concatenate([g_q, g_t], axis=1)
        x = np.concatenate([q, t], axis=1)
        gnorm2 = np.einsum("ni,ni->n", g, g)
        active = (gnorm2 > cfg.grad_tol ** 2) & ~stalled
        if not active.any():
            history.append(float(J.sum()))
            break
        if prev_x is not None:
            s, y = x - prev_x, g - prev_g
            sy, ss = np.einsum("ni,ni->n", s, y), np.einsum("ni,ni->n", s, s)
            bb = np.where(sy > 0, ss / np.where(sy > 0, sy, 1.0), alpha * cfg.grow)
            alpha = np.clip(bb, 1e-12, 1e8)
        prev_x, prev_g = x, g
        a = alpha.copy()
        accepted = np.zeros(n, dtype=bool)
        q_new, t_new, J_new = q.copy(), t.copy(), J.copy()
        for _ in range(cfg.max_backtracks):
            todo = active & ~accepted
            if not todo.any():
                break
            qc = _normalize(q - a[:, None] * g_q)
            RP = _rotate(qc, P)
            tc = _closed_form_t(qc, P, Y, W, RP) if rotation_only else t - a[:, None] * g_t
            Jc = _cost(RP, tc, Y, W)
            ok = todo & (Jc <= J - 1e-4 * a * gnorm2)
            q_new[ok], t_new[ok], J_new[ok] = qc[ok], tc[ok], Jc[ok]
            accepted |= ok
            a = np.where(todo & ~ok, a * cfg.shrink, a)
        stalled |= active & ~accepted
        alpha = a
        q, t, J = q_new, t_new, J_new
        history.append(float(J.sum()))
    return q, t


def optimize_actions(tracks, config: OptimizerConfig | None = None, check: bool = True) -> ActionSequence:
    """Fit ``N`` per-step transports to keypoint tracks sharing ``N + 1`` samples.

    ``tracks`` is a list of ``(N+1, 3)`` arrays (NaN rows are ignored). Raises
    :class:`DidNotConverge` (carrying the result) when the final cost exceeds
    ``tolerance * N * len(tracks)`` and ``check`` is set.
    """
    cfg = config or OptimizerConfig()
    arr = np.stack([np.asarray(tr, dtype=float).reshape(-1, 3) for tr in tracks])
    if arr.shape[1] < 2:
        raise ValueError("tracks need at least 2 samples")
    P, Y, W = _pairs(arr)
    n = P.shape[0]

    rng = np.random.default_rng(cfg.seed)
    q = _normalize(rng.standard_normal((n, 4)))
    t = rng.normal(0.0, cfg.init_trans_std, size=(n, 3))

    history: list = []
    if cfg.rot_stage_steps:
        q, t = _descend(q, t, P, Y, W, cfg.rot_stage_steps, cfg, True, history)
    q, t = _descend(q, t, P, Y, W, cfg.joint_stage_steps, cfg, False, history)

    residual = float(step_objective(q, t, P, Y, W).sum())
    poses = [Pose(qi, ti) for qi, ti in zip(q, t)]
    seq = ActionSequence(poses, residual=residual, history=history)
    if check and residual > cfg.tolerance * n * len(arr):
        raise DidNotConverge(f"final cost {residual:.3g} above tolerance", seq)
    return seq


def augment_with_grip(
    actions: ActionSequence | Sequence[Pose],
    hand_at_f: HandObservation,
    hand_at_next: HandObservation,
    X_start: Pose | None = None,
) -> ActionSequence:
    """Attach per-step grip commands and the interaction point.

    Commands hold the grip of keyframe ``f`` and switch to that of keyframe
    ``f + 1`` on the last step. The interaction point is the fingertip midpoint
    of whichever keyframe has the hand closed (``f`` preferred), mapped
    through ``X_start``.
    """
    if not isinstance(actions, ActionSequence):
        actions = ActionSequence(list(actions))
    n = len(actions.poses)
    if n == 0:
        raise ValueError("empty action sequence")
    cmds = [hand_at_f.grip] * (n - 1) + [hand_at_next.grip]
    hand = hand_at_f if hand_at_f.grip == Grip.CLOSED or hand_at_next.grip != Grip.CLOSED else hand_at_next
    point = hand.interaction_point
    if X_start is not None:
        point = X_start.apply(point)
    return ActionSequence(actions.poses, cmds, point, actions.residual, actions.history)
