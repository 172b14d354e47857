"""Brute-force reference implementations for tests.

Nothing here imports the sampler, nncore, or tasks modules; worlds are read
only through their raw fields (node coordinates, edges, config).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np


@dataclass
class OracleReport:
    cases: int = 0
    mismatches: int = 0
    first_mismatch: dict | None = field(default=None)

    def check(self, inputs, expected, got):
        self.cases += 1
        if expected != got:
            self.mismatches += 1
            if self.first_mismatch is None:
                self.first_mismatch = {"inputs": inputs, "expected": expected, "got": got}

    @property
    def ok(self) -> bool:
        return self.mismatches == 0


def _angle_between_deg(heading_deg, dx, dy) -> float:
    # unsigned angle between the heading direction and (dx, dy), via cross/dot
    hx, hy = math.sin(math.radians(heading_deg)), math.cos(math.radians(heading_deg))
    cross = hx * dy - hy * dx
    dot = hx * dx + hy * dy
    return abs(math.degrees(math.atan2(cross, dot)))


def _edge_list(world, node_id):
    out = []
    for a, b in world.edges:
        if a == node_id:
            out.append(b)
        elif b == node_id:
            out.append(a)
    return sorted(out)


def _in_view_neighbours(world, node_id, heading_deg):
    """(angle, bearing, neighbour) for every neighbour within 5 m and half the FOV."""
    half = world.config.hfov_deg / 2.0
    x0, y0 = world.nodes[node_id].position
    found = []
    for nb in _edge_list(world, node_id):
        x1, y1 = world.nodes[nb].position
        dx, dy = x1 - x0, y1 - y0
        if round(math.sqrt(dx * dx + dy * dy), 9) > 5.0:
            continue
        ang = round(_angle_between_deg(heading_deg, dx, dy), 9)
        if ang <= half:
            bearing = math.degrees(math.atan2(dx, dy))
            if bearing < 0:
                bearing += 360.0
            found.append((ang, bearing, nb))
    return found


def oracle_traversability(world, pose) -> bool:
    node, h, _ = pose
    return len(_in_view_neighbours(world, node, 30.0 * h)) > 0


def oracle_forward(world, node, h):
    cands = _in_view_neighbours(world, node, 30.0 * h)
    if not cands:
        return None
    return min(cands)[2]


def oracle_jigsaw_map(world, anchor) -> dict[int, tuple[int, int, int]]:
    """Label -> query pose, by enumerating the 3x3x3 offsets literally."""
    node, h, e = anchor
    fwd = oracle_forward(world, node, h)
    back = oracle_forward(world, node, (h + 6) % 12)
    out = {}
    label = 0
    for dp, de, dh in product((-1, 0, 1), repeat=3):
        label += 1
        if e + de < 0 or e + de > 2:
            continue
        if dp == 1:
            q_node = fwd
        elif dp == -1:
            q_node = back
        else:
            q_node = node
        if q_node is None:
            continue
        out[label] = (q_node, (h + dh) % 12, e + de)
    return out


def oracle_available_labels(has_forward, has_backward, elevation_idx) -> set[int]:
    """Available label set from the availability rules alone (no world needed)."""
    labels = set()
    label = 0
    for dp, de, dh in product((-1, 0, 1), repeat=3):
        label += 1
        if not 0 <= elevation_idx + de <= 2:
            continue
        if dp == 1 and not has_forward:
            continue
        if dp == -1 and not has_backward:
            continue
        labels.add(label)
    return labels


def oracle_grad(loss_fn, params, h=1e-5) -> list[np.ndarray]:
    """Central differences of ``loss_fn()`` with respect to each array in ``params`` (in place)."""
    grads = []
    for p in params:
        g = np.zeros(p.shape, dtype=np.float64)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = float(loss_fn())
            p[idx] = orig - h
            down = float(loss_fn())
            p[idx] = orig
            g[idx] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads
