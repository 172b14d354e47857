import numbers
from typing import NamedTuple

NUM_HEADINGS = 12
NUM_ELEVATIONS = 3
HEADING_STEP_DEG = 30.0
ELEVATION_STEP_DEG = 30.0
VIEWS_PER_NODE = NUM_HEADINGS * NUM_ELEVATIONS


class Pose(NamedTuple):
    """A discretized camera state: node, heading index (30 deg steps), elevation index."""

    node_id: int
    heading_idx: int
    elevation_idx: int

    @property
    def heading_deg(self) -> float:
        return HEADING_STEP_DEG * self.heading_idx

    @property
    def elevation_deg(self) -> float:
        # 0 -> -30, 1 -> 0, 2 -> +30
        return ELEVATION_STEP_DEG * (self.elevation_idx - 1)


def heading_deg(pose: Pose) -> float:
    return pose.heading_deg


def elevation_deg(pose: Pose) -> float:
    return pose.elevation_deg


def pose_indices_valid(pose) -> bool:
    try:
        node, h, e = pose
    except (TypeError, ValueError):
        return False
    return (
        all(isinstance(v, numbers.Integral) for v in (node, h, e))
        and node >= 0
        and 0 <= h < NUM_HEADINGS
        and 0 <= e < NUM_ELEVATIONS
    )
