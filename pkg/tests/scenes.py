"""Seeded scene generators shared by the unit and acceptance tests."""

import numpy as np

from oogkit.geometry import Pose

# two boxes forming an L; no rotational symmetry
L_BOXES = [(np.array([0, 0, 0.]), np.array([.12, .04, .03])), (np.array([0, .04, 0.]), np.array([.04, .10, .03]))]


def l_block(n, rng):
    """n points sampled on the outer surface of an L-shaped union of two boxes."""
    pts = []
    while len(pts) < n:
        b = rng.integers(2)
        lo, hi = L_BOXES[b]
        face = rng.integers(6)
        ax, side = face // 2, face % 2
        p = lo + rng.uniform(size=3) * (hi - lo)
        p[ax] = lo[ax] if side == 0 else hi[ax]
        # skip the faces shared by the two boxes
        if b == 0 and ax == 1 and side == 1 and p[0] < .04:
            continue
        if b == 1 and ax == 1 and side == 0:
            continue
        pts.append(p)
    return np.array(pts)


def motion_tracks(rng, n_steps=20, max_angle=np.pi, trans_scale=0.05):
    """Four non-coplanar keypoints moved by a random rigid step sequence.

    Returns (tracks of shape (4, n_steps + 1, 3), list of per-step poses).
    """
    kp = rng.uniform(-0.05, 0.05, (4, 3)) + np.array([0.4, 0.1, 0.05])
    steps = [Pose.random(rng, max_angle, trans_scale) for _ in range(n_steps)]
    tr = [kp]
    for X in steps:
        tr.append(X.apply(tr[-1]))
    return np.stack(tr, 1), steps
