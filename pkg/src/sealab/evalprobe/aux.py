"""Held-out accuracy of the three auxiliary tasks (initial vs final table)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..augment import AugmentConfig, augment
from ..nncore.functional import l2_normalize, sigmoid
from ..nncore.model import preprocess
from ..nncore.tensor import concat, no_grad
from ..sampler import availability_mask, enumerate_views, sample_pair, traversability_label
from ..world import render_view


@dataclass
class EvalSet:
    jig_anchor: np.ndarray
    jig_query: np.ndarray
    jig_labels: np.ndarray
    jig_masks: np.ndarray
    trav_images: np.ndarray
    trav_labels: np.ndarray
    ins_queries: np.ndarray
    ins_pool: np.ndarray
    ins_target: np.ndarray

    @property
    def trav_majority_baseline(self) -> float:
        frac = float(np.mean(self.trav_labels))
        return 100.0 * max(frac, 1.0 - frac)


def build_eval_set(world, rng, size=512, bank_k=1024, poses=None, aug_cfg=AugmentConfig()) -> EvalSet:
    """Render a fixed held-out evaluation set.

    Traversability is rebalanced to equal positives and negatives. Instance
    queries each pick their own key out of a pool of up to K+1 keys from
    distinct poses, so chance top-1 is 1/(K+1).
    """
    poses = list(enumerate_views(world) if poses is None else poses)
    if not poses:
        raise ValueError("empty holdout")

    def img(p):
        return render_view(world, p).pixels

    pairs = [sample_pair(world, rng, poses) for _ in range(size)]
    jig_anchor = np.stack([img(p.anchor) for p in pairs])
    jig_query = np.stack([img(p.query) for p in pairs])
    jig_labels = np.array([p.label for p in pairs])
    jig_masks = np.stack([availability_mask(world, p.anchor) for p in pairs])

    labels = np.array([traversability_label(world, p) for p in poses])
    pos_idx = rng.permutation(np.flatnonzero(labels))
    neg_idx = rng.permutation(np.flatnonzero(~labels))
    n = min(len(pos_idx), len(neg_idx), size // 2)
    if n == 0:
        trav_idx = rng.permutation(len(poses))[:size]
    else:
        trav_idx = np.sort(np.concatenate([pos_idx[:n], neg_idx[:n]]))
    trav_images = np.stack([img(poses[i]) for i in trav_idx])
    trav_labels = labels[trav_idx]

    pool_n = min(bank_k + 1, len(poses))
    pool_idx = np.sort(rng.choice(len(poses), size=pool_n, replace=False))
    base = [img(poses[i]) for i in pool_idx]
    ins_pool = np.stack([augment(b, rng, aug_cfg) for b in base])
    q_n = min(size, pool_n)
    ins_target = np.sort(rng.choice(pool_n, size=q_n, replace=False))
    ins_queries = np.stack([augment(base[i], rng, aug_cfg) for i in ins_target])

    return EvalSet(jig_anchor, jig_query, jig_labels, jig_masks, trav_images, trav_labels,
                   ins_queries, ins_pool, ins_target)


def _batched(fn, x, chunk=256):
    return np.concatenate([fn(x[i:i + chunk]) for i in range(0, len(x), chunk)])


def eval_aux(state, evalset: EvalSet) -> dict:
    """Accuracies in percent: masked jigsaw argmax, traversability at p>=0.5, instance top-1."""
    model = state.model
    with no_grad():
        enc = lambda x: model.enc(preprocess(x, state.dtype)).data  # noqa: E731
        f_a = _batched(enc, evalset.jig_anchor)
        f_q = _batched(lambda x: state.encode_momentum(preprocess(x, state.dtype)).data, evalset.jig_query)
        logits = model.jig(concat([f_a, f_q], axis=1)).data
        logits = np.where(evalset.jig_masks, logits, -np.inf)
        acc_jig = 100.0 * np.mean(np.argmax(logits, axis=1) + 1 == evalset.jig_labels)

        f_t = _batched(enc, evalset.trav_images)
        p = sigmoid(model.trav(f_t).data).reshape(-1)
        acc_trav = 100.0 * np.mean((p >= 0.5) == evalset.trav_labels)

        q = l2_normalize(model.ins(_batched(enc, evalset.ins_queries)).data)
        k = l2_normalize(_batched(lambda x: state.project_momentum(preprocess(x, state.dtype)).data,
                                  evalset.ins_pool))
        sims = q @ k.T
        pos = sims[np.arange(len(q)), evalset.ins_target]
        sims[np.arange(len(q)), evalset.ins_target] = -np.inf
        acc_ins = 100.0 * np.mean(pos > sims.max(axis=1))
    return {"acc_jig": float(acc_jig), "acc_trav": float(acc_trav), "acc_ins_top1": float(acc_ins)}
