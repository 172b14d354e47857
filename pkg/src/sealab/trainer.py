"""Data-reuse batching, the combined auxiliary loss, and the training loop."""
from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .augment import AugmentConfig, augment
from .errors import NonFiniteLossError, ValidationError
from .evalprobe.aux import build_eval_set, eval_aux
from .nncore import checkpoint
from .nncore.functional import l2_normalize, normalize_rows
from .nncore.model import ArchConfig, EncoderState, preprocess
from .nncore.optim import cosine_lr, ema_update, sgd_step
from .nncore.tensor import backward, tape_node_count, weighted_sum
from .sampler import availability_mask, enumerate_views, sample_pair, traversability_label
from .tasks import MemoryBank, instance_loss, jigsaw_loss, traversability_loss
from .world import World, render_view

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    iterations: int = 3000
    lambda_jig: float = 1.0
    lambda_trav: float = 1.0
    lambda_ins: float = 1.0
    ema_m: float = 0.999
    tau: float = 0.07
    lr0: float = 0.002
    sgd_momentum: float = 0.95
    nesterov: bool = True
    weight_decay: float = 1e-4
    bank_K: int = 1024
    seed: int = 0
    eval_every: int = 200
    eval_size: int = 512
    holdout: str = "world"
    holdout_fraction: float = 0.1
    train_worlds: int = 1
    augment_online_view: bool = True

    def validate(self):
        problems = []
        for name in ("batch_size", "iterations", "tau", "lr0", "bank_K", "eval_every", "eval_size", "train_worlds"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        for name in ("lambda_jig", "lambda_trav", "lambda_ins", "weight_decay"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        if not 0 <= self.ema_m <= 1:
            problems.append("ema_m must be in [0, 1]")
        if not 0 <= self.sgd_momentum < 1:
            problems.append("sgd_momentum must be in [0, 1)")
        if self.holdout not in ("world", "poses"):
            problems.append("holdout must be 'world' or 'poses'")
        if not 0 < self.holdout_fraction < 1:
            problems.append("holdout_fraction must be in (0, 1)")
        if problems:
            raise ValidationError("invalid train config: " + "; ".join(problems))

    @property
    def lambdas(self):
        return self.lambda_jig, self.lambda_trav, self.lambda_ins


@dataclass
class Counters:
    renders: int = 0
    samples: int = 0
    grad_forwards: int = 0
    momentum_tape_nodes: int = 0


@dataclass
class TrainBatch:
    anchors: np.ndarray      # x_i, rendered
    queries: np.ndarray      # x_{i,q}, rendered
    labels: np.ndarray       # 1-based jigsaw labels
    masks: np.ndarray        # (N, 27) availability
    trav: np.ndarray         # traversability of the anchor pose
    aug_query: np.ndarray    # x_i', online instance query (and shared online input)
    keys: np.ndarray         # x_{i,k}, momentum instance key
    pairs: list = field(default_factory=list)

    def __len__(self):
        return len(self.labels)


@dataclass
class MetricsRecord:
    iteration: int
    lr: float
    loss_total: float | None = None
    loss_jig: float | None = None
    loss_trav: float | None = None
    loss_ins: float | None = None
    acc_jig: float | None = None
    acc_trav: float | None = None
    acc_ins_top1: float | None = None
    wall_ms: float | None = None

    def to_json(self) -> str:
        # wall-clock time goes to a separate timing log so metrics stay byte-stable
        d = {k: v for k, v in asdict(self).items() if k != "wall_ms"}
        return json.dumps(d)


class TrainingData:
    """Training worlds plus the anchor poses each may draw from."""

    def __init__(self, worlds, anchors=None, counters=None):
        self.worlds = list(worlds)
        self.anchors = anchors or [enumerate_views(w) for w in self.worlds]
        self.counters = counters if counters is not None else Counters()
        sizes = np.array([len(a) for a in self.anchors], dtype=np.float64)
        self.cum = np.cumsum(sizes) / sizes.sum()

    def render(self, world_idx, pose) -> np.ndarray:
        self.counters.renders += 1
        return render_view(self.worlds[world_idx], pose).pixels

    def pick_world(self, rng) -> int:
        if len(self.worlds) == 1:
            return 0
        return int(np.searchsorted(self.cum, rng.random(), side="right"))


def build_batch(data: TrainingData, rng, n, aug_cfg=AugmentConfig()) -> TrainBatch:
    """Two renders per sample: the anchor x_i and its jigsaw query x_{i,q}.

    x_i is reused as traversability input and as the source of both
    instance views (two independent augmentations).
    """
    rows = []
    for _ in range(n):
        wi = data.pick_world(rng)
        world = data.worlds[wi]
        pair = sample_pair(world, rng, data.anchors[wi])
        x = data.render(wi, pair.anchor)
        xq = data.render(wi, pair.query)
        rows.append((
            (wi, pair), x, xq, pair.label, availability_mask(world, pair.anchor),
            traversability_label(world, pair.anchor), augment(x, rng, aug_cfg), augment(x, rng, aug_cfg),
        ))
        data.counters.samples += 1
    cols = list(zip(*rows))
    return TrainBatch(
        anchors=np.stack(cols[1]),
        queries=np.stack(cols[2]),
        labels=np.array(cols[3]),
        masks=np.stack(cols[4]),
        trav=np.array(cols[5], dtype=bool),
        aug_query=np.stack(cols[6]),
        keys=np.stack(cols[7]),
        pairs=list(cols[0]),
    )


def train_step(state: EncoderState, batch: TrainBatch, bank: MemoryBank, cfg: TrainConfig, t: int,
               counters: Counters | None = None):
    counters = counters if counters is not None else Counters()
    model = state.model
    lr = cosine_lr(t, cfg.iterations, cfg.lr0)
    state.zero_grad()

    online_input = batch.aug_query if cfg.augment_online_view else batch.anchors
    f_a = state.encode(preprocess(online_input, state.dtype), record=True)
    counters.grad_forwards += len(batch)

    before = tape_node_count()
    f_q = state.encode_momentum(preprocess(batch.queries, state.dtype))
    k = l2_normalize(state.project_momentum(preprocess(batch.keys, state.dtype)).data)
    counters.momentum_tape_nodes += tape_node_count() - before

    l_jig, _ = jigsaw_loss(model.jig, f_a, f_q, batch.labels, batch.masks)
    l_trav, _ = traversability_loss(model.trav, f_a, batch.trav)
    q = normalize_rows(model.ins(f_a))
    l_ins, _ = instance_loss(q, k, bank, cfg.tau)
    lj, lt, li = cfg.lambdas
    total = weighted_sum([(lj, l_jig), (lt, l_trav), (li, l_ins)])

    parts = (float(l_jig.data), float(l_trav.data), float(l_ins.data))
    loss_total = lj * parts[0] + lt * parts[1] + li * parts[2]
    if not all(math.isfinite(v) for v in (*parts, loss_total)):
        diag = {"iteration": t, "lr": lr, "loss_jig": parts[0], "loss_trav": parts[1], "loss_ins": parts[2]}
        raise NonFiniteLossError(f"non-finite loss at iteration {t}: {diag}", diag)

    backward(total)
    grads = {name: p.grad for name, p in state.theta.items()}
    if any(p.grad is not None for p in state.theta_hat.values()):
        raise AssertionError("momentum parameters received a gradient")
    sgd_step(state, grads, lr, cfg.sgd_momentum, cfg.weight_decay, cfg.nesterov)
    ema_update(state, cfg.ema_m)
    # the loss above used the bank as it was before this batch's keys
    bank.enqueue(k)

    record = MetricsRecord(t, lr, loss_total, *parts)
    return state, bank, record


@dataclass
class TrainResult:
    state: EncoderState
    bank: MemoryBank
    metrics: list
    checkpoints: dict
    aux_table: dict
    counters: Counters


def _world_seeds(seed, n):
    # the held-out world uses seed + 1; extra training worlds skip past it
    return [seed] + [seed + 100 + i for i in range(1, n)]


def make_worlds(world_cfg, train_cfg: TrainConfig):
    """Training worlds and the disjoint held-out world for a run."""
    from dataclasses import replace

    from .world import generate_world

    train = [generate_world(replace(world_cfg, seed=s)) for s in _world_seeds(world_cfg.seed, train_cfg.train_worlds)]
    holdout = generate_world(replace(world_cfg, seed=world_cfg.seed + 1))
    return train, holdout


def _split_anchors(worlds, cfg: TrainConfig, holdout_world):
    """Training anchors per world and the (world, poses) used for held-out eval."""
    if cfg.holdout == "world":
        if holdout_world is None:
            raise ValidationError("holdout='world' needs a held-out world")
        return [enumerate_views(w) for w in worlds], holdout_world, None
    rng = np.random.default_rng([cfg.seed, 3])
    poses = enumerate_views(worlds[0])
    order = rng.permutation(len(poses))
    n_hold = max(1, int(round(cfg.holdout_fraction * len(poses))))
    held = sorted(order[:n_hold])
    held_set = set(held)
    train0 = [p for i, p in enumerate(poses) if i not in held_set]
    anchors = [train0] + [enumerate_views(w) for w in worlds[1:]]
    return anchors, worlds[0], [poses[i] for i in held]


def _extra_block(t, rng, bank, cfg, arch, aug_cfg):
    doc = {
        "format": "sealab-train",
        "iteration": t,
        "rng": rng.bit_generator.state,
        "bank": bank.state_dict(),
        "train_config": asdict(cfg),
        "arch": arch.to_dict(),
        "augment": aug_cfg.to_dict(),
    }
    return json.dumps(doc, sort_keys=True).encode("utf-8")


def save_checkpoint(path, state, bank, rng, t, cfg, arch, aug_cfg=AugmentConfig()):
    tensors = state.named_arrays() + [("bank/entries", bank.entries)]
    checkpoint.save(path, tensors, _extra_block(t, rng, bank, cfg, arch, aug_cfg))


def load_checkpoint(path):
    """Return (state, bank, rng, iteration, train_config, arch)."""
    tensors, extra = checkpoint.load(path)
    try:
        doc = json.loads(extra.decode("utf-8"))
        if doc.get("format") != "sealab-train":
            raise KeyError("format")
        arch = ArchConfig.from_dict(doc["arch"])
        cfg = TrainConfig(**doc["train_config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise checkpoint.CheckpointError(f"checkpoint has no valid training block: {exc}") from exc
    state = EncoderState(arch, cfg.seed)
    state.load_arrays(tensors)
    b = doc["bank"]
    bank = MemoryBank(b["capacity"], b["dim"])
    bank.entries[...] = tensors["bank/entries"]
    bank.cursor, bank.filled = b["cursor"], b["filled"]
    rng = np.random.default_rng()
    rng.bit_generator.state = doc["rng"]
    return state, bank, rng, doc["iteration"], cfg, arch


def train(worlds, cfg: TrainConfig, holdout_world: World | None = None, out_dir=None,
          arch: ArchConfig = ArchConfig(), aug_cfg: AugmentConfig = AugmentConfig(),
          resume_from=None, stop_at: int | None = None) -> TrainResult:
    """Run ``cfg.iterations`` steps with held-out evaluation and checkpoints.

    Checkpoints are written before steps 0 and T/2 and after the last step;
    ``resume_from`` continues a run from one of them exactly. ``stop_at``
    ends the loop early (used to simulate interruption).
    """
    cfg.validate()
    if isinstance(worlds, World):
        worlds = [worlds]
    T = cfg.iterations
    anchors, eval_world, eval_poses = _split_anchors(worlds, cfg, holdout_world)
    counters = Counters()
    data = TrainingData(worlds, anchors, counters)
    evalset = build_eval_set(eval_world, np.random.default_rng([cfg.seed, 2]), cfg.eval_size,
                             cfg.bank_K, eval_poses, aug_cfg)

    if resume_from is not None:
        state, bank, rng, start, saved_cfg, arch = load_checkpoint(resume_from)
        if saved_cfg != cfg:
            raise ValidationError("resume checkpoint was written with a different train config")
    else:
        state = EncoderState(arch, cfg.seed)
        bank = MemoryBank(cfg.bank_K, arch.proj_dim)
        rng = np.random.default_rng([cfg.seed, 1])
        start = 0

    metrics_fh = timing_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_fh = open(os.path.join(out_dir, "metrics.jsonl"), "w", encoding="utf-8")
        timing_fh = open(os.path.join(out_dir, "timing.jsonl"), "w", encoding="utf-8")

    ckpt_at = {0, T // 2, T}
    checkpoints, metrics, aux_table = {}, [], {}

    def maybe_checkpoint(t):
        if out_dir is not None and t in ckpt_at and t not in checkpoints:
            path = os.path.join(out_dir, f"ckpt_{t:06d}.sea1")
            save_checkpoint(path, state, bank, rng, t, cfg, arch, aug_cfg)
            checkpoints[t] = path

    def emit(rec):
        metrics.append(rec)
        if metrics_fh:
            metrics_fh.write(rec.to_json() + "\n")
            timing_fh.write(json.dumps({"iteration": rec.iteration, "wall_ms": rec.wall_ms}) + "\n")

    end = T if stop_at is None else min(stop_at, T)
    try:
        for t in range(start, end):
            t0 = time.perf_counter()
            maybe_checkpoint(t)
            acc = eval_aux(state, evalset) if t % cfg.eval_every == 0 else None
            if t == 0 and acc:
                aux_table["initial"] = acc
            batch = build_batch(data, rng, cfg.batch_size, aug_cfg)
            state, bank, rec = train_step(state, batch, bank, cfg, t, counters)
            if acc:
                rec.acc_jig, rec.acc_trav, rec.acc_ins_top1 = acc["acc_jig"], acc["acc_trav"], acc["acc_ins_top1"]
            rec.wall_ms = 1000.0 * (time.perf_counter() - t0)
            emit(rec)
            if acc:
                log.info("iter %d loss %.4f acc %s", t, rec.loss_total, acc)
        if end == T:
            maybe_checkpoint(T)
            acc = eval_aux(state, evalset)
            aux_table["final"] = acc
            emit(MetricsRecord(T, cosine_lr(T, T, cfg.lr0), acc_jig=acc["acc_jig"], acc_trav=acc["acc_trav"],
                               acc_ins_top1=acc["acc_ins_top1"], wall_ms=0.0))
    finally:
        if metrics_fh:
            metrics_fh.close()
            timing_fh.close()

    if out_dir is not None and aux_table:
        write_aux_csv(os.path.join(out_dir, "aux_accuracy.csv"), aux_table)
    return TrainResult(state, bank, metrics, checkpoints, aux_table, counters)


AUX_COLUMNS = (("acc_jig", "3D Jigsaw"), ("acc_trav", "Traversability"), ("acc_ins_top1", "Instance Classif."))


def write_aux_csv(path, table: dict):
    """Rows like 'Initial accuracy'/'Final accuracy', columns per task, values in percent."""
    lines = ["," + ",".join(name for _, name in AUX_COLUMNS)]
    for row, acc in table.items():
        label = {"initial": "Initial accuracy", "final": "Final accuracy"}.get(row, row)
        lines.append(label + "," + ",".join(f"{acc[k]:.2f}" for k, _ in AUX_COLUMNS))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

