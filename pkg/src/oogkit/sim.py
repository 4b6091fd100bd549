"""Kinematic tabletop world and the closed-loop plan execution policy.

The world teleports a two-finger gripper between poses. Closing the gripper
near an object attaches it; attached objects follow the gripper rigidly.
``run_rollout`` repeatedly observes contacts, retrieves the matching plan
graph, predicts and fits the segment motion and executes it.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (AtFinal, DidNotConverge, NoMatch, NoMotion, PlacementFailure,
                     RegistrationFailed)
from .geometry import PointCloud, Pose
from .oog import OOG, compute_contacts, contact_set, format_contacts, match_oog
from .plangen import ManipulationPlan, segment_roles
from .recording import Grip, HandObservation
from .registration import RegistrationParams
from .se3opt import OptimizerConfig, augment_with_grip, optimize_actions
from .warp import predict_segment_trajectories

log = logging.getLogger(__name__)

HOME = Pose.from_translation([0.35, 0.0, 0.30])


class FailureMode(str, enum.Enum):
    MISSED_TRACKING = "MissedTracking"
    MISSED_GRASPING = "MissedGrasping"
    UNSATISFIED_CONTACTS = "UnsatisfiedContacts"


@dataclass(frozen=True, eq=False)
class SimObject:
    object_id: int
    canonical: PointCloud
    pose: Pose = field(default_factory=Pose)

    @property
    def cloud(self) -> PointCloud:
        return self.canonical.transformed(self.pose)


@dataclass(frozen=True, eq=False)
class World:
    """Immutable world state; :func:`step` returns a new one."""

    objects: tuple
    gripper: Pose = HOME
    grip: Grip = Grip.OPEN
    attached: Optional[int] = None
    open_half_gap: float = 0.04

    def __post_init__(self):
        if self.attached is not None:
            if self.grip != Grip.CLOSED:
                raise ValueError("an attached object requires a closed grip")
            if self.attached not in self.object_ids:
                raise ValueError(f"attached object {self.attached} not in world")

    @property
    def object_ids(self) -> list[int]:
        return [o.object_id for o in self.objects]

    def get(self, object_id: int) -> SimObject:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise KeyError(object_id)

    def clouds(self) -> dict:
        return {o.object_id: o.cloud for o in self.objects}

    @property
    def hand(self) -> HandObservation:
        half = 0.0 if self.grip == Grip.CLOSED else self.open_half_gap
        return HandObservation(self.gripper.apply([-half, 0.0, 0.0]), self.gripper.apply([half, 0.0, 0.0]), self.grip)

    def without(self, object_id: int) -> "World":
        if self.attached == object_id:
            raise ValueError("cannot remove the attached object")
        return replace(self, objects=tuple(o for o in self.objects if o.object_id != object_id))

    def contacts(self, contact_thresh: float = 0.01):
        return compute_contacts(self.clouds(), self.hand, contact_thresh)


def step(w: World, target: Pose, grip_cmd, grasp_eps: float = 0.01) -> World:
    """Teleport the gripper to ``target``, then apply ``grip_cmd``.

    An attached object is moved by the gripper's delta. Closing an open
    gripper attaches the object nearest to the gripper point if it is within
    ``grasp_eps``; otherwise the gripper closes on air.
    """
    grip_cmd = Grip(grip_cmd)
    delta = target @ w.gripper.inverse()
    objects = w.objects
    if w.attached is not None:
        objects = tuple(replace(o, pose=delta @ o.pose) if o.object_id == w.attached else o for o in objects)
    attached = w.attached
    if grip_cmd == Grip.OPEN:
        attached = None
    elif w.grip == Grip.OPEN:
        tip = target.translation
        best, best_d = None, np.inf
        for o in objects:
            d, _ = cKDTree(o.cloud.points).query(tip)
            if d < best_d:
                best, best_d = o.object_id, d
        attached = best if best_d <= grasp_eps else None
    return replace(w, objects=objects, gripper=target, grip=grip_cmd, attached=attached)


def check_success(w: World, final_oog: OOG, thresh: float = 0.01) -> bool:
    return w.contacts(thresh) == contact_set(final_oog)


# --- scenarios ---------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Random layout: each object is yawed about its centroid and shifted in xy.

    Offsets are uniform in ``[-xy_range/2, xy_range/2]`` per axis and yaw in
    ``[-yaw_range/2, yaw_range/2]``; ``object_names`` must match the plan.
    """

    seed: int = 0
    xy_range: float = 0.3
    yaw_range: float = 2 * np.pi
    object_names: Optional[tuple] = None
    max_attempts: int = 1000
    clearance: float = 0.02


def _min_gap(a: np.ndarray, b: np.ndarray) -> float:
    return float(cKDTree(b).query(a)[0].min())


def spawn_scenario(plan: ManipulationPlan, scenario: Scenario) -> World:
    """Objects from the plan's first graph at seeded random poses, gripper at home and open."""
    if scenario.object_names is not None and tuple(scenario.object_names) != tuple(plan.object_names):
        raise ValueError(f"scenario objects {list(scenario.object_names)} != plan objects {plan.object_names}")
    g0 = plan.oogs[0]
    rng = np.random.default_rng(scenario.seed)
    ids = g0.object_ids
    for _ in range(scenario.max_attempts):
        objs = []
        for oid in ids:
            cloud = g0.cloud(oid)
            c = cloud.centroid()
            yaw = rng.uniform(-0.5, 0.5) * scenario.yaw_range
            off = rng.uniform(-0.5, 0.5, size=2) * scenario.xy_range
            about = Pose.from_translation(c) @ Pose.from_axis_angle([0, 0, 1], yaw) @ Pose.from_translation(-c)
            objs.append(SimObject(oid, cloud, Pose.from_translation([off[0], off[1], 0.0]) @ about))
        clouds = [o.cloud.points for o in objs]
        if all(_min_gap(clouds[i], clouds[k]) > scenario.clearance
               for i in range(len(objs)) for k in range(i + 1, len(objs))) or len(objs) < 2:
            return World(tuple(objs))
        if scenario.xy_range == 0 and scenario.yaw_range == 0:
            # the demo layout itself; accepted as is
            return World(tuple(objs))
    raise PlacementFailure(f"no non-overlapping layout after {scenario.max_attempts} attempts")


# --- rollout -------------------------------------------------------------------

@dataclass(frozen=True)
class RolloutConfig:
    contact_thresh: float = 0.01
    grasp_eps: float = 0.01
    motion_floor: float = 0.005
    max_segments_factor: int = 3
    registration: RegistrationParams = field(default_factory=RegistrationParams)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)


@dataclass
class RolloutReport:
    success: bool
    failure_mode: Optional[FailureMode] = None
    steps_executed: int = 0
    residuals: list = field(default_factory=list)
    segments: list = field(default_factory=list)
    seed: Optional[int] = None
    detail: str = ""

    def __post_init__(self):
        if self.success == (self.failure_mode is not None):
            raise ValueError("exactly one of success / failure_mode must hold")
        if self.failure_mode is not None:
            self.failure_mode = FailureMode(self.failure_mode)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "success": self.success,
            "failure_mode": None if self.failure_mode is None else self.failure_mode.value,
            "steps_executed": self.steps_executed,
            "residuals": [float(r) for r in self.residuals],
            "segments": [int(s) for s in self.segments],
            "detail": self.detail,
        }


def _fail(mode: FailureMode, steps: int, residuals, segments, detail: str) -> RolloutReport:
    log.info("rollout failed: %s (%s)", mode.value, detail)
    return RolloutReport(False, mode, steps, residuals, segments, detail=detail)


def run_rollout(plan: ManipulationPlan, w: World, config: RolloutConfig | None = None) -> RolloutReport:
    """Execute ``plan`` in ``w`` until the final graph's contacts hold or a failure occurs."""
    cfg = config or RolloutConfig()
    oogs = plan.oogs
    F = len(oogs) - 1
    steps, residuals, segments = 0, [], []
    last_f = None
    for _ in range(cfg.max_segments_factor * max(F, 1)):
        observed = w.contacts(cfg.contact_thresh)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                f = match_oog(oogs, observed)
            except AtFinal:
                return RolloutReport(True, None, steps, residuals, segments)
            except NoMatch:
                mode = FailureMode.MISSED_TRACKING if last_f is None else FailureMode.UNSATISFIED_CONTACTS
                return _fail(mode, steps, residuals, segments, f"no keyframe matches {format_contacts(observed)}")
            try:
                roles = segment_roles(oogs[f], oogs[f + 1], cfg.motion_floor)
            except NoMotion as exc:
                return _fail(FailureMode.UNSATISFIED_CONTACTS, steps, residuals, segments, str(exc))
        segments.append(f)
        last_f = f
        ids = w.object_ids
        missing = [o for o in (roles.target_object, roles.reference_object) if o is not None and o not in ids]
        if missing:
            return _fail(FailureMode.MISSED_TRACKING, steps, residuals, segments, f"objects {missing} not observed")

        ref_cloud = None if roles.reference_object is None else w.get(roles.reference_object).cloud
        try:
            pred = predict_segment_trajectories(oogs[f], oogs[f + 1], roles, w.get(roles.target_object).cloud,
                                                ref_cloud, cfg.registration)
        except RegistrationFailed as exc:
            return _fail(FailureMode.MISSED_TRACKING, steps, residuals, segments, str(exc))
        if not pred.trajectories:
            return _fail(FailureMode.MISSED_TRACKING, steps, residuals, segments, "target has no keypoints")
        try:
            actions = optimize_actions(pred.trajectories, cfg.optimizer)
        except DidNotConverge as exc:
            log.warning("segment %d: %s; executing best estimate", f, exc)
            actions = exc.result
        actions = augment_with_grip(actions, oogs[f].hand, oogs[f + 1].hand, pred.spec.X_start)
        residuals.append(actions.residual)

        if w.attached is None:
            # reset between segments, then move to the predicted interaction point
            w = step(w, HOME, w.grip, cfg.grasp_eps)
            w = step(w, Pose.from_translation(actions.interaction_point), actions.grip_commands[0], cfg.grasp_eps)
            steps += 2
        for X, cmd in zip(actions.poses, actions.grip_commands):
            was_open = w.grip == Grip.OPEN
            w = step(w, X @ w.gripper, cmd, cfg.grasp_eps)
            steps += 1
            if was_open and Grip(cmd) == Grip.CLOSED and w.attached is None:
                return _fail(FailureMode.MISSED_GRASPING, steps, residuals, segments,
                             f"grasp failed at step {steps}")
        if f + 1 == F and not check_success(w, oogs[F], cfg.contact_thresh):
            return _fail(FailureMode.UNSATISFIED_CONTACTS, steps, residuals, segments,
                         f"final contacts {format_contacts(w.contacts(cfg.contact_thresh))} "
                         f"!= {format_contacts(contact_set(oogs[F]))}")
    return _fail(FailureMode.UNSATISFIED_CONTACTS, steps, residuals, segments, "segment limit reached")


# --- batches -----------------------------------------------------------------

def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])


def _one_trial(args) -> RolloutReport:
    plan, scenario, config, remove = args
    w = spawn_scenario(plan, scenario)
    for oid in remove:
        w = w.without(oid)
    report = run_rollout(plan, w, config)
    report.seed = scenario.seed
    return report


def run_batch(plan: ManipulationPlan, trials: int, seed: int = 0, scenario: Scenario | None = None,
              config: RolloutConfig | None = None, workers: int = 1,
              remove_objects: Sequence[int] = ()) -> list[RolloutReport]:
    """``trials`` independent rollouts; results are ordered by trial index whatever ``workers`` is."""
    base = scenario or Scenario()
    cfg = config or RolloutConfig()
    jobs = [(plan, replace(base, seed=trial_seed(seed, i)), cfg, tuple(remove_objects)) for i in range(trials)]
    if workers <= 1 or trials <= 1:
        return [_one_trial(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_one_trial, jobs))


def summarize(reports: Sequence[RolloutReport]) -> dict:
    n = len(reports)
    hist = {m.value: 0 for m in FailureMode}
    for r in reports:
        if r.failure_mode is not None:
            hist[r.failure_mode.value] += 1
    return {
        "trials": n,
        "successes": sum(r.success for r in reports),
        "success_rate": (sum(r.success for r in reports) / n) if n else 0.0,
        "failure_modes": hist,
    }


def reports_to_csv(reports: Sequence[RolloutReport]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["trial", "seed", "success", "failure_mode", "steps_executed", "residuals"])
    for i, r in enumerate(reports):
        wr.writerow([i, r.seed, int(r.success), "" if r.failure_mode is None else r.failure_mode.value,
                     r.steps_executed, ";".join(repr(float(x)) for x in r.residuals)])
    return buf.getvalue()


def reports_to_json(reports: Sequence[RolloutReport]) -> str:
    doc = {"summary": summarize(reports), "trials": [r.to_dict() for r in reports]}
    return json.dumps(doc, indent=2, sort_keys=True)
