"""Command-line front-end: ``oogkit {plan,rollout,inspect,eval,synth}``.

Exit codes: 0 success, 2 invalid input, 3 algorithmic failure. On failure a
single JSON object describing the error is written to stderr. ``OOG_LOG``
sets the log level (default ``ERROR``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import warnings
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

from .errors import AlgorithmError, NoMotion, OOGError, ParseError, SchemaError, ValidationError
from .oog import contact_set, format_contacts
from .plangen import ManipulationPlan, PlanConfig, dumps_plan, generate_plan, loads_plan, segment_roles
from .recording import read_recording, save_recording, table_align
from .registration import RegistrationParams
from .se3opt import OptimizerConfig
from .sim import RolloutConfig, Scenario, reports_to_csv, reports_to_json, run_batch, summarize

log = logging.getLogger("oogkit")


@dataclass
class RunConfig:
    seed: int = 0
    trials: int = 100
    workers: int = 1
    out: str = "out"
    # plan generation
    contact_thresh: float = 0.01
    penalty: Optional[float] = None
    bandwidth: Optional[float] = None
    min_segment: int = 5
    motion_floor: float = 0.005
    table_dist_thresh: float = 0.01
    table_iters: int = 1000
    # registration
    voxel_size: float = 0.005
    ransac_iters: int = 1000
    min_fitness: float = 0.25
    # optimizer
    rot_stage_steps: int = 200
    joint_stage_steps: int = 200
    step_size: float = 1e-2
    # simulation
    grasp_eps: float = 0.01
    xy_range: float = 0.3
    yaw_range: float = 2 * math.pi
    max_segments_factor: int = 3

    def validate(self) -> "RunConfig":
        positive = ["contact_thresh", "voxel_size", "step_size", "grasp_eps", "table_dist_thresh"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise SchemaError(name, f"must be > 0, got {getattr(self, name)!r}")
        at_least_one = ["trials", "workers", "min_segment", "ransac_iters", "table_iters", "joint_stage_steps",
                        "max_segments_factor"]
        for name in at_least_one:
            if getattr(self, name) < 1:
                raise SchemaError(name, f"must be >= 1, got {getattr(self, name)!r}")
        for name in ["rot_stage_steps", "xy_range", "yaw_range", "motion_floor"]:
            if getattr(self, name) < 0:
                raise SchemaError(name, f"must be >= 0, got {getattr(self, name)!r}")
        if self.penalty is not None and self.penalty < 0:
            raise SchemaError("penalty", "must be >= 0")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise SchemaError("bandwidth", "must be > 0")
        if not 0 <= self.min_fitness <= 1:
            raise SchemaError("min_fitness", "must lie in [0, 1]")
        return self

    @classmethod
    def from_mapping(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise SchemaError("config", "expected a JSON object")
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise SchemaError(unknown[0], "unknown config key")
        out = cls()
        for k, v in d.items():
            setattr(out, k, _coerce(k, v, known[k].type))
        return out

    def plan_config(self) -> PlanConfig:
        return PlanConfig(contact_thresh=self.contact_thresh, penalty=self.penalty, bandwidth=self.bandwidth,
                          min_segment=self.min_segment, motion_floor=self.motion_floor)

    def rollout_config(self) -> RolloutConfig:
        reg = RegistrationParams(voxel_size=self.voxel_size, ransac_iters=self.ransac_iters,
                                 min_fitness=self.min_fitness, seed=self.seed)
        opt = OptimizerConfig(rot_stage_steps=self.rot_stage_steps, joint_stage_steps=self.joint_stage_steps,
                              step_size=self.step_size, seed=self.seed)
        return RolloutConfig(contact_thresh=self.contact_thresh, grasp_eps=self.grasp_eps,
                             motion_floor=self.motion_floor, max_segments_factor=self.max_segments_factor,
                             registration=reg, optimizer=opt)

    def scenario(self) -> Scenario:
        return Scenario(seed=self.seed, xy_range=self.xy_range, yaw_range=self.yaw_range)


def _coerce(name: str, value, annotation: str):
    if value is None:
        if "Optional" not in annotation:
            raise SchemaError(name, "must not be null")
        return None
    if annotation == "str":
        if not isinstance(value, str):
            raise SchemaError(name, f"expected a string, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(name, f"expected a number, got {value!r}")
    if annotation == "int":
        if not float(value).is_integer():
            raise SchemaError(name, f"expected an integer, got {value!r}")
        return int(value)
    return float(value)


# flag name -> RunConfig field
_FLAGS = {
    "seed": int, "trials": int, "workers": int, "out": str,
    "contact_thresh": float, "penalty": float, "bandwidth": float, "min_segment": int, "motion_floor": float,
    "ransac_iters": int, "voxel_size": float, "grasp_eps": float, "xy_range": float, "yaw_range": float,
    "rot_stage_steps": int, "joint_stage_steps": int,
}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    for name, typ in _FLAGS.items():
        common.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    common.add_argument("--config", default=None, help="JSON file with RunConfig fields")
    common.add_argument("--show-config", action="store_true", help="print the resolved configuration and exit")

    p = argparse.ArgumentParser(prog="oogkit", description="Plan generation and simulated rollouts from demonstrations.")
    sub = p.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("plan", parents=[common], help="recording -> plan JSON")
    sp.add_argument("recording", nargs="?")
    sp = sub.add_parser("rollout", parents=[common], help="run seeded rollouts of a plan")
    sp.add_argument("plan", nargs="?")
    sp = sub.add_parser("inspect", parents=[common], help="dump a plan and export plot data")
    sp.add_argument("plan", nargs="?")
    sp = sub.add_parser("eval", parents=[common], help="plan + rollout in one go")
    sp.add_argument("recording", nargs="?")
    sp = sub.add_parser("synth", parents=[common], help="write the synthetic block-onto-coaster recording")
    sp.add_argument("--occlude", action="store_true")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ParseError(f"cannot read config {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed config {args.config}: {exc}") from exc
        cfg = RunConfig.from_mapping(doc)
    overrides = {k: getattr(args, k) for k in _FLAGS if getattr(args, k, None) is not None}
    return replace(cfg, **overrides).validate()


def _require(value, what: str):
    if value is None:
        raise ParseError(f"missing {what} argument")
    return value


def _load_plan(path: str) -> ManipulationPlan:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read plan {path}: {exc.strerror}") from exc
    try:
        return loads_plan(text)
    except ValidationError as exc:
        exc.file = path
        raise


def _roles_line(plan: ManipulationPlan, j: int, motion_floor: float) -> str:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            r = segment_roles(plan.oogs[j], plan.oogs[j + 1], motion_floor)
        except NoMotion:
            return f"segment {j}: no moving object"
    names = plan.object_names
    ref = "none" if r.reference_object is None else names[r.reference_object]
    return f"segment {j}: target={names[r.target_object]} reference={ref}"


def _build_plan(rec_path: str, cfg: RunConfig) -> ManipulationPlan:
    try:
        rec = read_recording(rec_path)
    except OSError as exc:
        raise ParseError(f"cannot read recording {rec_path}: {exc.strerror}") from exc
    except ValidationError as exc:
        exc.file = rec_path
        raise
    rec = table_align(rec, cfg.table_dist_thresh, cfg.table_iters, cfg.seed)
    return generate_plan(rec, cfg.plan_config())


def _print_plan_summary(plan: ManipulationPlan, cfg: RunConfig, out) -> None:
    print(f"F = {plan.F}", file=out)
    print(f"keyframes: {' '.join(str(k) for k in plan.keyframes)}", file=out)
    for j in range(plan.F):
        print(_roles_line(plan, j, cfg.motion_floor), file=out)
    for w in plan.warnings:
        print(f"warning: {w}", file=out)


def cmd_plan(args, cfg: RunConfig, out=sys.stdout) -> int:
    plan = _build_plan(_require(args.recording, "recording"), cfg)
    path = Path(cfg.out if cfg.out.endswith(".json") else os.path.join(cfg.out, "plan.json"))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_plan(plan))
    print(f"plan: {path}", file=out)
    _print_plan_summary(plan, cfg, out)
    return 0


def _rollout(plan: ManipulationPlan, cfg: RunConfig, out_dir: Path, out) -> dict:
    reports = run_batch(plan, cfg.trials, cfg.seed, cfg.scenario(), cfg.rollout_config(), cfg.workers)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "rollouts.csv").write_text(reports_to_csv(reports))
    (out_dir / "rollouts.json").write_text(reports_to_json(reports))
    summary = summarize(reports)
    print(json.dumps(summary, sort_keys=True), file=out)
    return summary


def cmd_rollout(args, cfg: RunConfig, out=sys.stdout) -> int:
    plan = _load_plan(_require(args.plan, "plan"))
    _rollout(plan, cfg, Path(cfg.out), out)
    return 0


def cmd_eval(args, cfg: RunConfig, out=sys.stdout) -> int:
    plan = _build_plan(_require(args.recording, "recording"), cfg)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "plan.json").write_text(dumps_plan(plan))
    _print_plan_summary(plan, cfg, out)
    _rollout(plan, cfg, out_dir, out)
    return 0


def cmd_inspect(args, cfg: RunConfig, out=sys.stdout) -> int:
    plan = _load_plan(_require(args.plan, "plan"))
    _print_plan_summary(plan, cfg, out)
    for j, g in enumerate(plan.oogs):
        ids = ", ".join(f"{i}:{plan.object_names[i]}" if i < len(plan.object_names) else str(i) for i in g.object_ids)
        print(f"G{j} keyframe={g.keyframe_index} objects=[{ids}] hand={g.hand.grip.value} "
              f"contacts={format_contacts(contact_set(g))} keypoints={len(g.point_nodes)}", file=out)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    bk = set(plan.breakpoints)
    with open(out_dir / "velocity.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["step", "speed", "changepoint"])
        for i, v in enumerate(plan.velocity_series):
            wr.writerow([i, repr(float(v)), int(i in bk)])
    with open(out_dir / "trajectories.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["segment", "object_id", "keypoint", "step", "x", "y", "z"])
        for j, g in enumerate(plan.oogs[:-1]):
            for k, pn in enumerate(g.point_nodes):
                for s, p in enumerate(pn.trajectory):
                    wr.writerow([j, pn.object_id, k, s, *(repr(float(c)) for c in p)])
    print(f"plot data: {out_dir / 'velocity.csv'} {out_dir / 'trajectories.csv'}", file=out)
    return 0


def cmd_synth(args, cfg: RunConfig, out=sys.stdout) -> int:
    from .synthetic import make_demo

    rec = make_demo(seed=cfg.seed, occlude=args.occlude)
    path = Path(cfg.out if cfg.out.endswith(".json") else os.path.join(cfg.out, "demo.json"))
    path.parent.mkdir(parents=True, exist_ok=True)
    save_recording(rec, path)
    print(f"recording: {path} ({rec.n_frames} frames)", file=out)
    return 0


COMMANDS = {"plan": cmd_plan, "rollout": cmd_rollout, "inspect": cmd_inspect, "eval": cmd_eval, "synth": cmd_synth}


def _diagnostic(exc: BaseException, code: int, command: Optional[str]) -> str:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code, "command": command}
    if isinstance(exc, SchemaError):
        doc["path"] = exc.path
    if getattr(exc, "file", None):
        doc["file"] = str(exc.file)
    return json.dumps(doc, sort_keys=True)


def _setup_logging() -> None:
    level = os.environ.get("OOG_LOG", "ERROR").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)


def main(argv=None) -> int:
    _setup_logging()
    args = _parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.show_config:
            print(json.dumps(asdict(cfg), indent=2, sort_keys=True))
            return 0
        return COMMANDS[args.command](args, cfg, sys.stdout)
    except ValidationError as exc:
        print(_diagnostic(exc, 2, args.command), file=sys.stderr)
        return 2
    except AlgorithmError as exc:
        print(_diagnostic(exc, 3, args.command), file=sys.stderr)
        return 3
    except OOGError as exc:
        print(_diagnostic(exc, 3, args.command), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
