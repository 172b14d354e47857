"""Procedural navigable worlds and their discretized panoramic views.

A world is a grid of viewpoint nodes split into rectangular rooms. Nodes in
the same room are linked to their 4-neighbours; adjacent rooms are linked
through one door crossing each. Walls separate rooms everywhere else, which
gives the rendered panoramas a visible cue for which directions are
traversable.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ValidationError
from .imaging import apply_bilinear, bilinear_weights, hsv
from .pose import Pose, pose_indices_valid

CAMERA_HEIGHT = 1.5
WALL_HEIGHT = 3.0
OBJECT_PX_SCALE = 60.0
MAX_OBJECT_PX = 120
MIN_OBJECT_DISTANCE = 0.1
PANORAMA_WIDTH = 360


@dataclass(frozen=True)
class WorldConfig:
    rows: int = 6
    cols: int = 6
    node_spacing: float = 2.5
    rooms: int = 4
    objects: int = 40
    object_classes: int = 8
    panorama_height_px: int = 120
    view_px: int = 32
    hfov_deg: float = 60.0
    vfov_deg: float = 60.0
    seed: int = 0

    def validate(self):
        problems = []
        if self.rows < 1 or self.cols < 1 or self.rows * self.cols < 4:
            problems.append(f"rows*cols must be >= 4 (got {self.rows}x{self.cols})")
        if not self.node_spacing > 0:
            problems.append(f"node_spacing must be > 0 (got {self.node_spacing})")
        if self.node_spacing > 5.0:
            problems.append(
                f"node_spacing must be <= 5.0 so neighbours stay traversable (got {self.node_spacing})"
            )
        if not 0 < self.hfov_deg <= 120:
            problems.append(f"hfov_deg must be in (0, 120] (got {self.hfov_deg})")
        if not 0 < self.vfov_deg <= 120:
            problems.append(f"vfov_deg must be in (0, 120] (got {self.vfov_deg})")
        if self.rooms < 1:
            problems.append(f"rooms must be >= 1 (got {self.rooms})")
        if self.objects < 0:
            problems.append(f"objects must be >= 0 (got {self.objects})")
        if self.object_classes < 1:
            problems.append(f"object_classes must be >= 1 (got {self.object_classes})")
        if self.panorama_height_px < 2:
            problems.append("panorama_height_px must be >= 2")
        if self.view_px < 1:
            problems.append("view_px must be >= 1")
        if problems:
            raise ValidationError("invalid world config: " + "; ".join(problems))
        if _room_grid(self.rooms, self.rows, self.cols) is None:
            raise ValidationError(
                f"cannot split a {self.rows}x{self.cols} grid into {self.rooms} rectangular rooms"
            )


@dataclass(frozen=True)
class Node:
    id: int
    position: tuple[float, float]
    room: int
    base_hue: float


@dataclass(frozen=True)
class SceneObject:
    id: int
    position: tuple[float, float]
    size: float
    height: float
    color: tuple[float, float, float]
    class_id: int


@dataclass(frozen=True)
class Wall:
    """Axis-aligned wall segment.

    ``axis`` is "x" for a wall on the line x=const (spanning lo..hi in y) and
    "y" for a wall on y=const. ``hue_lo``/``hue_hi`` colour the faces seen from
    the smaller/larger side of the line; None means no room on that side.
    """

    axis: str
    coord: float
    lo: float
    hi: float
    hue_lo: float | None
    hue_hi: float | None


@dataclass(frozen=True)
class ViewImage:
    pixels: np.ndarray
    pose: Pose


@dataclass(frozen=True)
class World:
    config: WorldConfig
    nodes: tuple[Node, ...]
    objects: tuple[SceneObject, ...]
    room_of: dict
    edges: tuple[tuple[int, int], ...]
    room_hues: tuple[float, ...] = ()
    doors: tuple[tuple[int, int], ...] = ()
    walls: tuple[Wall, ...] = ()
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def adjacency(self) -> dict[int, list[int]]:
        adj = self._cache.get("adjacency")
        if adj is None:
            adj = {n.id: [] for n in self.nodes}
            for a, b in self.edges:
                adj[a].append(b)
                adj[b].append(a)
            for v in adj.values():
                v.sort()
            self._cache["adjacency"] = adj
        return adj

    def node(self, node_id) -> Node:
        if not isinstance(node_id, (int, np.integer)) or not 0 <= node_id < len(self.nodes):
            raise ValidationError(f"unknown node id {node_id!r}")
        return self.nodes[node_id]

    @property
    def num_rooms(self) -> int:
        return len(set(self.room_of.values()))

    def to_json(self) -> str:
        doc = {
            "config": asdict(self.config),
            "nodes": [
                {"id": n.id, "position": list(n.position), "room": n.room, "base_hue": n.base_hue}
                for n in self.nodes
            ],
            "objects": [
                {
                    "id": o.id,
                    "position": list(o.position),
                    "size": o.size,
                    "height": o.height,
                    "color": list(o.color),
                    "class_id": o.class_id,
                }
                for o in self.objects
            ],
            "room_of": {str(k): v for k, v in sorted(self.room_of.items())},
            "room_hues": list(self.room_hues),
            "edges": [list(e) for e in self.edges],
            "doors": [list(d) for d in self.doors],
            "walls": [asdict(w) for w in self.walls],
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "World":
        try:
            doc = json.loads(text)
            config = WorldConfig(**doc["config"])
            nodes = tuple(
                Node(d["id"], tuple(d["position"]), d["room"], d["base_hue"]) for d in doc["nodes"]
            )
            objects = tuple(
                SceneObject(
                    d["id"], tuple(d["position"]), d["size"], d["height"], tuple(d["color"]), d["class_id"]
                )
                for d in doc["objects"]
            )
            room_of = {int(k): v for k, v in doc["room_of"].items()}
            return cls(
                config=config,
                nodes=nodes,
                objects=objects,
                room_of=room_of,
                edges=tuple(tuple(e) for e in doc["edges"]),
                room_hues=tuple(doc.get("room_hues", ())),
                doors=tuple(tuple(d) for d in doc.get("doors", ())),
                walls=tuple(Wall(**w) for w in doc.get("walls", ())),
            )
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ValidationError(f"malformed world document: {exc}") from exc

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "World":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _room_grid(rooms, rows, cols):
    best = None
    for rr in range(1, rooms + 1):
        if rooms % rr:
            continue
        rc = rooms // rr
        if rr > rows or rc > cols:
            continue
        key = (abs(rr - rc), rr)
        if best is None or key < best[0]:
            best = (key, (rr, rc))
    return None if best is None else best[1]


def _cut_bounds(n, parts, rng):
    cuts = sorted(int(c) for c in rng.choice(np.arange(1, n), size=parts - 1, replace=False)) if parts > 1 else []
    return [0, *cuts, n]


def generate_world(config: WorldConfig) -> World:
    config.validate()
    rng = np.random.default_rng(config.seed)
    rows, cols, s = config.rows, config.cols, float(config.node_spacing)
    rr, rc = _room_grid(config.rooms, rows, cols)
    row_b = _cut_bounds(rows, rr, rng)
    col_b = _cut_bounds(cols, rc, rng)

    def block(i, j):
        bi = next(k for k in range(rr) if row_b[k] <= i < row_b[k + 1])
        bj = next(k for k in range(rc) if col_b[k] <= j < col_b[k + 1])
        return bi * rc + bj

    room_hues = tuple(float(h) for h in rng.random(config.rooms))
    node_hues = rng.random(rows * cols)
    nodes = []
    room_of = {}
    for i in range(rows):
        for j in range(cols):
            nid = i * cols + j
            room = block(i, j)
            room_of[nid] = room
            nodes.append(Node(nid, (j * s, i * s), room, float(node_hues[nid])))

    # one door crossing per pair of adjacent rooms
    doors = []
    for bi in range(rr):
        for bj in range(rc):
            if bj + 1 < rc:
                i = int(rng.integers(row_b[bi], row_b[bi + 1]))
                j = col_b[bj + 1] - 1
                doors.append((i * cols + j, i * cols + j + 1))
            if bi + 1 < rr:
                j = int(rng.integers(col_b[bj], col_b[bj + 1]))
                i = row_b[bi + 1] - 1
                doors.append((i * cols + j, (i + 1) * cols + j))
    door_set = set(doors)

    edges = []
    walls = []
    for i in range(rows):
        for j in range(cols):
            a = i * cols + j
            for b, axis in ((a + 1 if j + 1 < cols else None, "x"), (a + cols if i + 1 < rows else None, "y")):
                if b is None:
                    continue
                if room_of[a] == room_of[b] or (a, b) in door_set:
                    edges.append((a, b))
                    continue
                if axis == "x":
                    walls.append(Wall("x", (j + 0.5) * s, (i - 0.5) * s, (i + 0.5) * s,
                                      room_hues[room_of[a]], room_hues[room_of[b]]))
                else:
                    walls.append(Wall("y", (i + 0.5) * s, (j - 0.5) * s, (j + 0.5) * s,
                                      room_hues[room_of[a]], room_hues[room_of[b]]))
            hue = room_hues[room_of[a]]
            if j == 0:
                walls.append(Wall("x", -0.5 * s, (i - 0.5) * s, (i + 0.5) * s, None, hue))
            if j == cols - 1:
                walls.append(Wall("x", (cols - 0.5) * s, (i - 0.5) * s, (i + 0.5) * s, hue, None))
            if i == 0:
                walls.append(Wall("y", -0.5 * s, (j - 0.5) * s, (j + 0.5) * s, None, hue))
            if i == rows - 1:
                walls.append(Wall("y", (rows - 0.5) * s, (j - 0.5) * s, (j + 0.5) * s, hue, None))

    positions = np.array([n.position for n in nodes])
    objects = []
    for oid in range(config.objects):
        room = int(rng.integers(config.rooms))
        bi, bj = divmod(room, rc)
        x_lo, x_hi = (col_b[bj] - 0.5) * s + 0.3, (col_b[bj + 1] - 0.5) * s - 0.3
        y_lo, y_hi = (row_b[bi] - 0.5) * s + 0.3, (row_b[bi + 1] - 0.5) * s - 0.3
        for _ in range(50):
            x, y = float(rng.uniform(x_lo, x_hi)), float(rng.uniform(y_lo, y_hi))
            if np.min(np.hypot(positions[:, 0] - x, positions[:, 1] - y)) >= 0.6:
                break
        size = float(rng.uniform(0.3, 1.5))
        height = float(rng.uniform(0.3, 2.2))
        class_id = int(rng.integers(config.object_classes))
        base = hsv(class_id / config.object_classes, 0.85, 0.9)
        color = np.clip(base + rng.uniform(-0.05, 0.05, size=3), 0.0, 1.0)
        objects.append(SceneObject(oid, (x, y), size, height, tuple(float(c) for c in color), class_id))

    return World(
        config=config,
        nodes=tuple(nodes),
        objects=tuple(objects),
        room_of=room_of,
        edges=tuple(sorted(edges)),
        room_hues=room_hues,
        doors=tuple(doors),
        walls=tuple(walls),
    )


def bearing_deg(src, dst) -> float:
    """Bearing from src to dst: 0 along +y, clockwise positive, in [0, 360)."""
    b = math.degrees(math.atan2(dst[0] - src[0], dst[1] - src[1])) % 360.0
    return 0.0 if b == 360.0 else b


def wall_distances(world: World, position, bearings_deg) -> tuple[np.ndarray, np.ndarray]:
    """Distance to the nearest wall along each bearing, and the hue of the face hit."""
    b = np.radians(np.asarray(bearings_deg, dtype=np.float64))
    dx, dy = np.sin(b), np.cos(b)
    px, py = position
    best = np.full(b.shape, np.inf)
    hue = np.full(b.shape, np.nan)
    for w in world.walls:
        if w.axis == "x":
            d_perp, d_par, p_perp, p_par = dx, dy, px, py
        else:
            d_perp, d_par, p_perp, p_par = dy, dx, py, px
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (w.coord - p_perp) / d_perp
        along = p_par + t * d_par
        hit = (t > 1e-9) & (along >= w.lo) & (along <= w.hi) & (t < best)
        face = w.hue_lo if p_perp < w.coord else w.hue_hi
        best = np.where(hit, t, best)
        hue = np.where(hit, np.nan if face is None else face, hue)
    return best, hue


def render_panorama(world: World, node_id: int) -> np.ndarray:
    """Render the (panorama_height_px, 360, 3) equirectangular raster at a node.

    Column c looks along bearing c degrees; row r looks at elevation H/2 - r.
    """
    node = world.node(node_id)
    cached = world._cache.get(("pano", node.id))
    if cached is not None:
        return cached
    cfg = world.config
    h = cfg.panorama_height_px
    cols = np.arange(PANORAMA_WIDTH, dtype=np.float64)
    elev = h / 2.0 - np.arange(h, dtype=np.float64)
    room_hue = world.room_hues[node.room] if world.room_hues else node.base_hue

    # low-frequency background: sky from the node hue, floor from the room hue
    t = (np.arange(h) / (h - 1))[:, None, None]
    sky, floor = hsv(node.base_hue, 0.25, 0.95), hsv(room_hue, 0.5, 0.45)
    ripple = 1.0 + 0.08 * np.cos(np.radians(cols) - 2.0 * math.pi * node.base_hue)
    pano = ((1.0 - t) * sky + t * floor) * ripple[None, :, None]

    wall_d, wall_hue = wall_distances(world, node.position, cols)
    if world.walls:
        top = np.degrees(np.arctan2(WALL_HEIGHT - CAMERA_HEIGHT, wall_d))
        bottom = np.degrees(np.arctan2(-CAMERA_HEIGHT, wall_d))
        on_wall = (elev[:, None] <= top[None, :]) & (elev[:, None] >= bottom[None, :])
        shade = 0.45 + 0.55 * np.exp(-wall_d / 6.0)
        wall_rgb = np.stack(
            [hsv(x, 0.55, 0.85) if np.isfinite(x) else np.full(3, 0.5) for x in wall_hue]
        ) * shade[:, None]
        pano = np.where(on_wall[:, :, None], wall_rgb[None, :, :], pano)

    px, py = node.position
    visible = []
    for obj in world.objects:
        d = math.hypot(obj.position[0] - px, obj.position[1] - py)
        if d < MIN_OBJECT_DISTANCE:
            continue
        visible.append((d, obj))
    # painter's order: far first so nearer objects overwrite
    visible.sort(key=lambda item: (-item[0], item[1].id))
    for d, obj in visible:
        width = int(min(max(round(OBJECT_PX_SCALE * obj.size / d), 1), MAX_OBJECT_PX))
        center_col = int(round(bearing_deg(node.position, obj.position))) % PANORAMA_WIDTH
        center_row = int(round(h / 2.0 - math.degrees(math.atan2(obj.height - CAMERA_HEIGHT, d))))
        c = (center_col - width // 2 + np.arange(width)) % PANORAMA_WIDTH
        c = c[d < wall_d[c]]
        r0 = max(center_row - width // 2, 0)
        r1 = min(center_row - width // 2 + width, h)
        if r0 >= r1 or c.size == 0:
            continue
        pano[r0:r1, c] = obj.color

    pano = np.clip(pano, 0.0, 1.0).astype(np.float32)
    pano.setflags(write=False)
    world._cache[("pano", node.id)] = pano
    return pano


@lru_cache(maxsize=256)
def view_sample_grid(pano_h, hfov, vfov, view_px, heading_idx, elevation_idx):
    """Panorama (x, y) sample coordinates for every output pixel of a view window."""
    pose = Pose(0, heading_idx, elevation_idx)
    frac = (np.arange(view_px) + 0.5) / view_px
    bearings = pose.heading_deg - hfov / 2.0 + frac * hfov
    elevations = pose.elevation_deg + vfov / 2.0 - frac * vfov
    xs = np.broadcast_to(bearings[None, :], (view_px, view_px))
    ys = np.broadcast_to((pano_h / 2.0 - elevations)[:, None], (view_px, view_px))
    return xs, ys


@lru_cache(maxsize=256)
def _view_weights(pano_h, hfov, vfov, view_px, heading_idx, elevation_idx):
    xs, ys = view_sample_grid(pano_h, hfov, vfov, view_px, heading_idx, elevation_idx)
    return bilinear_weights((pano_h, PANORAMA_WIDTH), xs, ys, wrap_x=True)


def render_view(world: World, pose) -> ViewImage:
    if not pose_indices_valid(pose):
        raise ValidationError(f"invalid pose {pose!r}")
    pose = Pose(*(int(v) for v in pose))
    pano = render_panorama(world, pose.node_id)
    cfg = world.config
    idx, wts = _view_weights(cfg.panorama_height_px, float(cfg.hfov_deg), float(cfg.vfov_deg),
                             cfg.view_px, pose.heading_idx, pose.elevation_idx)
    pixels = apply_bilinear(pano, idx, wts).astype(np.float32)
    return ViewImage(pixels, pose)
