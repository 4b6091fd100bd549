"""Object graphs at keyframes: nodes, binary contact edges, and contact-set retrieval."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree

from .errors import AmbiguousMatchWarning, AtFinal, NoMatch, SchemaError
from .geometry import PointCloud
from .recording import Grip, HandObservation

HAND = -1
"""Stand-in id for the hand in a contact pair ``(object_id, HAND)``."""

ContactSet = frozenset


def obj_pair(i: int, k: int) -> tuple[int, int]:
    if i == k:
        raise ValueError(f"an object cannot contact itself ({i})")
    return (i, k) if i < k else (k, i)


def hand_pair(i: int) -> tuple[int, int]:
    return (i, HAND)


def format_contacts(cs) -> str:
    parts = []
    for i, k in sorted(cs):
        parts.append(f"({i},hand)" if k == HAND else f"({i},{k})")
    return "{" + ", ".join(parts) + "}"


def contacts_to_json(cs) -> list:
    return [[i, "hand" if k == HAND else k] for i, k in sorted(cs)]


def contacts_from_json(items) -> ContactSet:
    out = set()
    for i, k in items:
        out.add(hand_pair(int(i)) if k == "hand" else obj_pair(int(i), int(k)))
    return frozenset(out)


def _as_mapping(objects) -> dict:
    if isinstance(objects, Mapping):
        items = objects.items()
    else:
        items = enumerate(objects)
    return {int(i): (c.points if isinstance(c, PointCloud) else np.asarray(c, dtype=float)) for i, c in items}


def min_distance_within(a: np.ndarray, b: np.ndarray, thresh: float, tree_b: cKDTree | None = None) -> bool:
    """Exact test ``min ||a_i - b_j|| <= thresh``."""
    if tree_b is None:
        tree_b = cKDTree(b)
    d, _ = tree_b.query(a, k=1, distance_upper_bound=thresh * (1 + 1e-12))
    return bool(np.any(d <= thresh))


def compute_contacts(
    objects: Union[Sequence[PointCloud], Mapping[int, PointCloud]],
    hand: HandObservation | None,
    contact_thresh: float = 0.01,
) -> ContactSet:
    """Contact pairs between object clouds and between each object and a closed hand.

    ``objects`` is a list (ids are positions) or a mapping from object id to cloud.
    """
    if contact_thresh <= 0:
        raise ValueError("contact_thresh must be positive")
    clouds = _as_mapping(objects)
    trees = {i: cKDTree(p) for i, p in clouds.items()}
    out = set()
    for i, k in itertools.combinations(sorted(clouds), 2):
        # query the smaller cloud against the larger one's tree
        a, b = (i, k) if len(clouds[i]) <= len(clouds[k]) else (k, i)
        if min_distance_within(clouds[a], clouds[b], contact_thresh, trees[b]):
            out.add(obj_pair(i, k))
    if hand is not None and hand.grip == Grip.CLOSED:
        tips = hand.fingertips
        for i in sorted(clouds):
            if min_distance_within(tips, clouds[i], contact_thresh, trees[i]):
                out.add(hand_pair(i))
    return frozenset(out)


@dataclass(frozen=True, eq=False)
class ObjectNode:
    object_id: int
    cloud: PointCloud


@dataclass(frozen=True, eq=False)
class PointNode:
    """A keypoint's trajectory over one segment; NaN rows are occluded samples."""

    object_id: int
    trajectory: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "trajectory", np.array(self.trajectory, dtype=float).reshape(-1, 3))


@dataclass(frozen=True, eq=False)
class OOG:
    keyframe_index: int
    object_nodes: tuple
    hand: HandObservation
    point_nodes: tuple = ()
    object_edges: dict = field(default_factory=dict)
    hand_edges: dict = field(default_factory=dict)
    fps: float = 30.0

    def __post_init__(self):
        ids = [n.object_id for n in self.object_nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate object node ids")
        for pn in self.point_nodes:
            if pn.object_id not in ids:
                raise ValueError(f"point node references missing object {pn.object_id}")
        for i, k in itertools.combinations(sorted(ids), 2):
            if (i, k) not in self.object_edges:
                raise ValueError(f"object-object edge ({i},{k}) missing; graph must be fully connected")
        for i in ids:
            if i not in self.hand_edges:
                raise ValueError(f"object-hand edge for {i} missing")

    @property
    def object_ids(self) -> list[int]:
        return [n.object_id for n in self.object_nodes]

    def cloud(self, object_id: int) -> PointCloud:
        for n in self.object_nodes:
            if n.object_id == object_id:
                return n.cloud
        raise KeyError(object_id)

    def trajectories(self, object_id: int) -> list[np.ndarray]:
        return [pn.trajectory for pn in self.point_nodes if pn.object_id == object_id]

    def object_point_edges(self) -> list[tuple[int, int]]:
        """Belonging edges as ``(object_id, point_node_index)``."""
        return [(pn.object_id, j) for j, pn in enumerate(self.point_nodes)]


def build_oog(
    keyframe_index: int,
    clouds: Mapping[int, PointCloud],
    hand: HandObservation,
    point_nodes: Sequence[PointNode] = (),
    contact_thresh: float = 0.01,
    fps: float = 30.0,
) -> OOG:
    """Build a fully connected graph with contact flags from :func:`compute_contacts`."""
    contacts = compute_contacts(clouds, hand, contact_thresh)
    ids = sorted(clouds)
    obj_edges = {(i, k): (i, k) in contacts for i, k in itertools.combinations(ids, 2)}
    hand_edges = {i: hand_pair(i) in contacts for i in ids}
    nodes = tuple(ObjectNode(i, clouds[i]) for i in ids)
    return OOG(keyframe_index, nodes, hand, tuple(point_nodes), obj_edges, hand_edges, fps)


def contact_set(g: OOG) -> ContactSet:
    out = {obj_pair(i, k) for (i, k), c in g.object_edges.items() if c}
    out |= {hand_pair(i) for i, c in g.hand_edges.items() if c}
    return frozenset(out)


def with_contacts(g: OOG, contacts: ContactSet) -> OOG:
    """Copy of ``g`` whose edge flags are rewritten to ``contacts``."""
    obj_edges = {pair: obj_pair(*pair) in contacts for pair in g.object_edges}
    hand_edges = {i: hand_pair(i) in contacts for i in g.hand_edges}
    return OOG(g.keyframe_index, g.object_nodes, g.hand, g.point_nodes, obj_edges, hand_edges, g.fps)


def match_oog(plan: Sequence[OOG], observed: ContactSet) -> int:
    """Index ``f`` of the first plan graph whose contact set equals ``observed``.

    Raises :class:`NoMatch` when nothing matches and :class:`AtFinal` when the
    match is the last graph (there is no next keyframe to act towards).
    """
    if not plan:
        raise ValueError("plan is empty")
    observed = frozenset(observed)
    hits = [f for f, g in enumerate(plan) if contact_set(g) == observed]
    if not hits:
        raise NoMatch(f"no keyframe has contact set {format_contacts(observed)}")
    if len(hits) > 1:
        warnings.warn(f"contact set {format_contacts(observed)} matches keyframes {hits}; using {hits[0]}",
                      AmbiguousMatchWarning, stacklevel=2)
    f = hits[0]
    if f == len(plan) - 1:
        raise AtFinal(f)
    return f


# --- JSON ---------------------------------------------------------------------

def _pts(a: np.ndarray) -> list:
    return [None if np.isnan(p).any() else [float(c) for c in p] for p in a]


def oog_to_dict(g: OOG) -> dict:
    nodes = []
    for n in g.object_nodes:
        d = {"object_id": n.object_id, "points": _pts(n.cloud.points)}
        if n.cloud.colors is not None:
            d["colors"] = _pts(n.cloud.colors)
        nodes.append(d)
    return {
        "keyframe_index": g.keyframe_index,
        "fps": float(g.fps),
        "object_nodes": nodes,
        "hand_node": g.hand.to_dict(),
        "point_nodes": [{"object_id": pn.object_id, "trajectory": _pts(pn.trajectory)} for pn in g.point_nodes],
        "object_object_edges": [{"i": i, "k": k, "contact": bool(c)} for (i, k), c in sorted(g.object_edges.items())],
        "object_hand_edges": [{"i": i, "contact": bool(c)} for i, c in sorted(g.hand_edges.items())],
    }


def _arr(items) -> np.ndarray:
    return np.array([[np.nan] * 3 if p is None else p for p in items], dtype=float).reshape(-1, 3)


def oog_from_dict(d: dict) -> OOG:
    try:
        nodes = tuple(
            ObjectNode(n["object_id"], PointCloud(_arr(n["points"]), None if n.get("colors") is None else _arr(n["colors"])))
            for n in d["object_nodes"]
        )
        hd = d["hand_node"]
        hand = HandObservation(hd["thumb_tip"], hd["index_tip"], Grip(hd["grip"]))
        pns = tuple(PointNode(p["object_id"], _arr(p["trajectory"])) for p in d["point_nodes"])
        obj_edges = {(e["i"], e["k"]): bool(e["contact"]) for e in d["object_object_edges"]}
        hand_edges = {e["i"]: bool(e["contact"]) for e in d["object_hand_edges"]}
        return OOG(int(d["keyframe_index"]), nodes, hand, pns, obj_edges, hand_edges, float(d.get("fps", 30.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError("oog", f"invalid graph: {exc}") from exc
