"""View discretization, traversability labels, and 3D-jigsaw neighbour machinery."""
from __future__ import annotations

import json
import math
from typing import NamedTuple

import numpy as np

from .errors import ValidationError
from .pose import NUM_ELEVATIONS, NUM_HEADINGS, Pose, pose_indices_valid
from .world import World, bearing_deg

TRAVERSABLE_RADIUS_M = 5.0
NUM_JIGSAW_LABELS = 27
IDENTITY_LABEL = 14
# angles and distances are compared at this many decimals so the boundary
# cases (delta == hfov/2, distance == 5 m) are decided the same way everywhere
_ROUND = 9


class JigsawOffset(NamedTuple):
    dp: int
    de: int
    dh: int


def offset_to_label(offset) -> int:
    dp, de, dh = offset
    if not all(v in (-1, 0, 1) for v in (dp, de, dh)):
        raise ValidationError(f"jigsaw offset components must be in {{-1,0,1}}: {offset!r}")
    return (dp + 1) * 9 + (de + 1) * 3 + (dh + 1) + 1


def label_to_offset(label: int) -> JigsawOffset:
    if not 1 <= label <= NUM_JIGSAW_LABELS:
        raise ValidationError(f"jigsaw label must be in [1, 27]: {label!r}")
    k = label - 1
    return JigsawOffset(k // 9 - 1, (k // 3) % 3 - 1, k % 3 - 1)


ALL_OFFSETS = tuple(label_to_offset(k) for k in range(1, NUM_JIGSAW_LABELS + 1))


class SamplePair(NamedTuple):
    anchor: Pose
    query: Pose
    label: int


def circular_distance(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def _check_pose(world: World, pose) -> Pose:
    if not pose_indices_valid(pose):
        raise ValidationError(f"invalid pose {pose!r}")
    pose = Pose(*(int(v) for v in pose))
    world.node(pose.node_id)
    return pose


def traversable_bearings(world: World, node_id: int) -> list[tuple[float, int, float]]:
    node = world.node(node_id)
    out = []
    for nb in world.adjacency[node.id]:
        other = world.nodes[nb]
        dist = math.hypot(other.position[0] - node.position[0], other.position[1] - node.position[1])
        if round(dist, _ROUND) <= TRAVERSABLE_RADIUS_M:
            out.append((bearing_deg(node.position, other.position), nb, dist))
    return out


def _within_fov(bearing, heading, hfov) -> bool:
    return round(circular_distance(bearing, heading), _ROUND) <= hfov / 2.0


def traversability_label(world: World, pose) -> bool:
    pose = _check_pose(world, pose)
    hfov = world.config.hfov_deg
    return any(_within_fov(b, pose.heading_deg, hfov) for b, _, _ in traversable_bearings(world, pose.node_id))


def forward_node(world: World, pose) -> int | None:
    """Neighbour nearest the view heading inside the horizontal FOV, if any."""
    pose = _check_pose(world, pose)
    hfov = world.config.hfov_deg
    best = None
    for bearing, nb, _ in traversable_bearings(world, pose.node_id):
        if not _within_fov(bearing, pose.heading_deg, hfov):
            continue
        key = (round(circular_distance(bearing, pose.heading_deg), _ROUND), bearing)
        if best is None or key < best[0]:
            best = (key, nb)
    return None if best is None else best[1]


def jigsaw_neighbors(world: World, anchor) -> dict[int, Pose]:
    """Map each available jigsaw label to its query pose.

    Position steps move to the forward node (dp=+1) or to the forward node of
    the view turned around (dp=-1); unavailable labels are left out.
    """
    anchor = _check_pose(world, anchor)
    fwd = forward_node(world, anchor)
    back = forward_node(world, Pose(anchor.node_id, (anchor.heading_idx + 6) % NUM_HEADINGS, anchor.elevation_idx))
    step_node = {0: anchor.node_id, 1: fwd, -1: back}
    out = {}
    for label, (dp, de, dh) in enumerate(ALL_OFFSETS, start=1):
        e = anchor.elevation_idx + de
        node = step_node[dp]
        if not 0 <= e < NUM_ELEVATIONS or node is None:
            continue
        out[label] = Pose(node, (anchor.heading_idx + dh) % NUM_HEADINGS, e)
    return out


def availability_mask(world: World, anchor) -> np.ndarray:
    """Boolean mask over class indices 0..26 (label - 1)."""
    mask = np.zeros(NUM_JIGSAW_LABELS, dtype=bool)
    for label in jigsaw_neighbors(world, anchor):
        mask[label - 1] = True
    return mask


def enumerate_views(world: World) -> list[Pose]:
    return [
        Pose(n.id, h, e)
        for n in world.nodes
        for e in range(NUM_ELEVATIONS)
        for h in range(NUM_HEADINGS)
    ]


def sample_label(world: World, anchor, rng: np.random.Generator) -> SamplePair:
    neighbours = jigsaw_neighbors(world, anchor)
    labels = sorted(neighbours)
    label = labels[int(rng.integers(len(labels)))]
    return SamplePair(Pose(*anchor), neighbours[label], label)


def sample_pair(world: World, rng: np.random.Generator, anchors=None) -> SamplePair:
    """Draw an anchor uniformly over poses, then a label uniformly over its available ones."""
    if anchors is None:
        anchors = enumerate_views(world)
    anchor = anchors[int(rng.integers(len(anchors)))]
    return sample_label(world, anchor, rng)


def export_manifest(world: World, path) -> int:
    """Write one JSON line per pose with its traversability and available labels."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for pose in enumerate_views(world):
            rec = {
                "node": pose.node_id,
                "h_idx": pose.heading_idx,
                "e_idx": pose.elevation_idx,
                "traversable": traversability_label(world, pose),
                "available_jigsaw_labels": sorted(jigsaw_neighbors(world, pose)),
            }
            fh.write(json.dumps(rec) + "\n")
            count += 1
    return count
