"""Frozen per-view features and linear probes on top of them."""
from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..nncore.functional import bce_with_logits_loss, cross_entropy_loss, log_softmax, mse_loss, sigmoid
from ..nncore.layers import Dense
from ..nncore.model import preprocess
from ..nncore.optim import cosine_lr, sgd_step
from ..nncore.tensor import backward, no_grad
from ..pose import NUM_ELEVATIONS, NUM_HEADINGS, Pose
from ..sampler import NUM_JIGSAW_LABELS, availability_mask, enumerate_views, jigsaw_neighbors, traversable_bearings
from ..world import (
    CAMERA_HEIGHT, MAX_OBJECT_PX, MIN_OBJECT_DISTANCE, OBJECT_PX_SCALE, PANORAMA_WIDTH,
    bearing_deg, render_view, wall_distances,
)

MAGIC = b"SEAF"
VERSION = 1
_HEADER = struct.Struct("<4sIII")
_RECORD_KEY = struct.Struct("<IBBH")

PROBE_KINDS = ("relative_pose", "object_presence", "scene_id", "traversable_count")
PROBE_METRICS = {
    "relative_pose": "accuracy",
    "object_presence": "mAP",
    "scene_id": "accuracy",
    "traversable_count": "rmse",
}


class FeatureStore:
    """One float32 vector per pose, kept in (node, elevation, heading) order."""

    def __init__(self, poses, features):
        self.poses = [Pose(*(int(v) for v in p)) for p in poses]
        self.features = np.ascontiguousarray(features, dtype=np.float32)
        if self.features.ndim != 2 or len(self.poses) != self.features.shape[0]:
            raise ValidationError("features must be (num_poses, d)")
        if len(set(self.poses)) != len(self.poses):
            raise ValidationError("duplicate pose in feature store")
        if self.poses != sorted(self.poses, key=lambda p: (p.node_id, p.elevation_idx, p.heading_idx)):
            raise ValidationError("feature store records must be sorted by (node, elevation, heading)")
        self.index = {p: i for i, p in enumerate(self.poses)}

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, pose) -> np.ndarray:
        return self.features[self.index[Pose(*pose)]]

    def __eq__(self, other):
        if not isinstance(other, FeatureStore):
            return NotImplemented
        return self.poses == other.poses and self.features.tobytes() == other.features.tobytes()

    def to_bytes(self) -> bytes:
        parts = [_HEADER.pack(MAGIC, VERSION, self.dim, len(self))]
        for pose, vec in zip(self.poses, self.features):
            parts.append(_RECORD_KEY.pack(pose.node_id, pose.heading_idx, pose.elevation_idx, 0))
            parts.append(vec.astype("<f4").tobytes())
        body = b"".join(parts)
        return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)

    @classmethod
    def from_bytes(cls, blob: bytes, expected_dim: int | None = None) -> "FeatureStore":
        if len(blob) < _HEADER.size + 4:
            raise ValidationError("feature file is truncated")
        body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
        if zlib.crc32(body) & 0xFFFFFFFF != crc:
            raise ValidationError("feature file CRC mismatch")
        magic, version, dim, count = _HEADER.unpack_from(body)
        if magic != MAGIC:
            raise ValidationError(f"not a feature file (magic {magic!r})")
        if version != VERSION:
            raise ValidationError(f"unsupported feature file version {version}")
        if expected_dim is not None and dim != expected_dim:
            raise ValidationError(f"feature dim {dim} does not match expected {expected_dim}")
        rec = _RECORD_KEY.size + 4 * dim
        if len(body) != _HEADER.size + count * rec:
            raise ValidationError("feature file length does not match its record count")
        poses, feats = [], np.empty((count, dim), dtype=np.float32)
        off = _HEADER.size
        for i in range(count):
            node, h, e, _ = _RECORD_KEY.unpack_from(body, off)
            poses.append(Pose(node, h, e))
            feats[i] = np.frombuffer(body, dtype="<f4", count=dim, offset=off + _RECORD_KEY.size)
            off += rec
        return cls(poses, feats)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path, expected_dim: int | None = None) -> "FeatureStore":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), expected_dim)


def export_features(state, world, path=None, chunk=256) -> FeatureStore:
    """Encode every view of ``world`` once with the frozen online encoder."""
    poses = enumerate_views(world)
    feats = []
    with no_grad():
        for i in range(0, len(poses), chunk):
            pixels = np.stack([render_view(world, p).pixels for p in poses[i:i + chunk]])
            feats.append(state.encode(preprocess(pixels, state.dtype), record=False).data)
    store = FeatureStore(poses, np.concatenate(feats).astype(np.float32))
    if path is not None:
        store.save(path)
    return store


@dataclass(frozen=True)
class ProbeTask:
    kind: str

    def __post_init__(self):
        if self.kind not in PROBE_KINDS:
            raise ValidationError(f"unknown probe task {self.kind!r}; expected one of {', '.join(PROBE_KINDS)}")

    @property
    def metric(self) -> str:
        return PROBE_METRICS[self.kind]


def visible_object_classes(world, pose) -> set[int]:
    """Classes whose drawn square overlaps the view window and is not behind a wall.

    Mirrors the renderer's footprint: a width-w square centred at the rounded
    bearing column and the elevation row of the object centre. Occlusion by
    other objects is ignored.
    """
    cfg = world.config
    h = cfg.panorama_height_px
    node = world.node(pose[0])
    heading = 30.0 * pose[1]
    elev = 30.0 * (pose[2] - 1)
    top = h / 2.0 - (elev + cfg.vfov_deg / 2.0)
    bottom = h / 2.0 - (elev - cfg.vfov_deg / 2.0)
    out = set()
    for obj, d, col, row, width, clear in _object_footprints(world, node):
        if not clear:
            continue
        r0, r1 = row - width // 2, row - width // 2 + width
        if r1 <= top or r0 >= bottom:
            continue
        lo = col - width // 2
        # circular overlap between [lo, lo + width) and the window of hfov degrees
        start = (heading - cfg.hfov_deg / 2.0 - lo) % PANORAMA_WIDTH
        if start < width or start + cfg.hfov_deg > PANORAMA_WIDTH:
            out.add(obj.class_id)
    return out


def _object_footprints(world, node):
    key = ("footprints", node.id)
    cached = world._cache.get(key)
    if cached is not None:
        return cached
    h = world.config.panorama_height_px
    rows = []
    for obj in world.objects:
        d = math.hypot(obj.position[0] - node.position[0], obj.position[1] - node.position[1])
        if d < MIN_OBJECT_DISTANCE:
            continue
        width = int(min(max(round(OBJECT_PX_SCALE * obj.size / d), 1), MAX_OBJECT_PX))
        col = int(round(bearing_deg(node.position, obj.position))) % PANORAMA_WIDTH
        row = int(round(h / 2.0 - math.degrees(math.atan2(obj.height - CAMERA_HEIGHT, d))))
        wall_d, _ = wall_distances(world, node.position, np.array([float(col)]))
        rows.append((obj, d, col, row, width, bool(d < wall_d[0])))
    world._cache[key] = rows
    return rows


def traversable_count(world, pose) -> int:
    half = world.config.hfov_deg / 2.0
    heading = 30.0 * pose[1]
    n = 0
    for bearing, _, _ in traversable_bearings(world, pose[0]):
        diff = abs((bearing - heading + 180.0) % 360.0 - 180.0)
        n += round(diff, 9) <= half
    return n


@dataclass
class ProbeData:
    x: np.ndarray          # (M, d_in)
    y: np.ndarray          # class ids, multi-hot rows, or regression targets
    mask: np.ndarray | None
    group: np.ndarray      # index of the pose each row belongs to, for the split


def probe_dataset(store: FeatureStore, task: ProbeTask, world) -> ProbeData:
    """Rows, targets, and split groups for ``task``; labels come from the world alone."""
    poses = enumerate_views(world)
    if store.poses != poses:
        raise ValidationError(
            f"feature store has {len(store)} records but the world has {len(poses)} views; "
            "features were exported from a different world")
    f = store.features
    idx = np.arange(len(poses))
    if task.kind == "relative_pose":
        xs, ys, masks, groups = [], [], [], []
        for i, p in enumerate(poses):
            neigh = jigsaw_neighbors(world, p)
            mask = availability_mask(world, p)
            for label, q in neigh.items():
                xs.append(np.concatenate([f[i], store[q]]))
                ys.append(label - 1)
                masks.append(mask)
                groups.append(i)
        return ProbeData(np.stack(xs), np.array(ys), np.stack(masks), np.array(groups))
    if task.kind == "object_presence":
        y = np.zeros((len(poses), world.config.object_classes), dtype=np.float32)
        for i, p in enumerate(poses):
            for c in visible_object_classes(world, p):
                y[i, c] = 1.0
        return ProbeData(f, y, None, idx)
    if task.kind == "scene_id":
        return ProbeData(f, np.array([world.room_of[p.node_id] for p in poses]), None, idx)
    y = np.array([traversable_count(world, p) for p in poses], dtype=np.float32)
    return ProbeData(f, y, None, idx)


class _AffineProbe:
    """Single affine layer with the state layout sgd_step expects.

    Zero-initialized: the objective is convex, so this loses nothing and
    keeps the probe independent of any init seed.
    """

    def __init__(self, d_in, d_out):
        self.layer = Dense(d_in, d_out, None, dtype=np.float64, name="probe")
        self.velocity = {k: np.zeros_like(p.data) for k, p in self.theta.items()}

    @property
    def theta(self):
        return self.layer.named_parameters()


@dataclass
class ProbeResult:
    task: str
    metric: str
    value: float
    train_size: int
    test_size: int

    def to_dict(self):
        return {"task": self.task, "metric": self.metric, "value": self.value,
                "train_size": self.train_size, "test_size": self.test_size}


def _split(groups, seed, train_frac=0.8):
    uniq = np.unique(groups)
    perm = np.random.default_rng([seed, 7]).permutation(uniq)
    n_train = int(round(train_frac * len(uniq)))
    train_groups = np.zeros(uniq.max() + 1, dtype=bool)
    train_groups[perm[:n_train]] = True
    return train_groups[groups]


def mean_average_precision(y_true, scores) -> float:
    from sklearn.metrics import average_precision_score

    aps = [average_precision_score(y_true[:, c], scores[:, c])
           for c in range(y_true.shape[1]) if 0 < y_true[:, c].sum() < len(y_true)]
    return float(np.mean(aps)) if aps else float("nan")


def train_probe(store: FeatureStore, task: ProbeTask, world, split_seed=0, iterations=500,
                lr0=0.01, momentum=0.95, weight_decay=1e-4) -> ProbeResult:
    """Fit one affine head on standardized frozen features with an 80/20 pose split.

    Full-batch SGD with Nesterov momentum, weight decay, and a cosine schedule.
    Returns accuracy (relative_pose, scene_id), mAP in percent (object_presence),
    or RMSE (traversable_count), all measured on the held-out 20%.
    """
    data = probe_dataset(store, task, world)
    train = _split(data.group, split_seed)
    test = ~train
    if not train.any() or not test.any():
        raise ValidationError("probe split left an empty side")
    x = data.x.astype(np.float64)
    mu = x[train].mean(axis=0)
    sd = x[train].std(axis=0)
    x = (x - mu) / np.where(sd > 1e-8, sd, 1.0)

    if task.kind in ("relative_pose",):
        d_out = NUM_JIGSAW_LABELS
    elif task.kind == "scene_id":
        d_out = int(max(world.room_of.values())) + 1
    elif task.kind == "object_presence":
        d_out = data.y.shape[1]
    else:
        d_out = 1
    y_offset = float(data.y[train].mean()) if task.kind == "traversable_count" else 0.0

    probe = _AffineProbe(x.shape[1], d_out)
    xt, yt = x[train], data.y[train]
    mt = data.mask[train] if data.mask is not None else None
    for t in range(iterations):
        for p in probe.theta.values():
            p.grad = None
        out = probe.layer(xt)
        if task.kind in ("relative_pose", "scene_id"):
            loss = cross_entropy_loss(out, yt, mt)
        elif task.kind == "object_presence":
            loss = bce_with_logits_loss(out, yt)
        else:
            loss = mse_loss(out, (yt - y_offset).reshape(-1, 1))
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"probe loss diverged at iteration {t}")
        backward(loss)
        grads = {k: p.grad for k, p in probe.theta.items()}
        sgd_step(probe, grads, cosine_lr(t, iterations, lr0), momentum, weight_decay, nesterov=True)

    with no_grad():
        out = probe.layer(x[test]).data
    ytest = data.y[test]
    if task.kind in ("relative_pose", "scene_id"):
        mask = data.mask[test] if data.mask is not None else None
        pred = np.argmax(log_softmax(out, mask, axis=1), axis=1)
        value = 100.0 * float(np.mean(pred == ytest))
    elif task.kind == "object_presence":
        value = 100.0 * mean_average_precision(ytest, sigmoid(out))
    else:
        value = float(np.sqrt(np.mean((out.reshape(-1) + y_offset - ytest) ** 2)))
    return ProbeResult(task.kind, task.metric, value, int(train.sum()), int(test.sum()))


def pose_count(world) -> int:
    return len(world.nodes) * NUM_HEADINGS * NUM_ELEVATIONS
