"""Task-subset ablation: one encoder per subset, all probes on each, deltas vs all tasks."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from itertools import combinations

from ..nncore.model import ArchConfig, EncoderState
from .probes import PROBE_KINDS, PROBE_METRICS, ProbeTask, export_features, train_probe

log = logging.getLogger(__name__)

TASKS = ("jig", "trav", "ins")
BASELINE = "random-frozen"
FULL = "jig+trav+ins"


@dataclass(frozen=True)
class AblationPlan:
    rows: tuple = ()

    @classmethod
    def default(cls) -> "AblationPlan":
        subsets = [c for k in (1, 2, 3) for c in combinations(TASKS, k)]
        return cls(tuple(subsets) + (BASELINE,))

    @staticmethod
    def row_name(row) -> str:
        return row if isinstance(row, str) else "+".join(row)


def _lambdas_for(subset):
    return {f"lambda_{t}": (1.0 if t in subset else 0.0) for t in TASKS}


def run_row(row, world_cfg, train_cfg, probe_cfg, arch=ArchConfig(), out_dir=None) -> dict:
    """Train (or skip training for the baseline), export held-out features, run every probe."""
    from ..trainer import make_worlds, train

    name = AblationPlan.row_name(row)
    worlds, holdout = make_worlds(world_cfg, train_cfg)
    if row == BASELINE:
        state = EncoderState(arch, train_cfg.seed)
    else:
        cfg = replace(train_cfg, **_lambdas_for(row))
        row_dir = os.path.join(out_dir, "rows", name) if out_dir else None
        state = train(worlds, cfg, holdout, row_dir, arch).state
    store = export_features(state, holdout)
    values = {}
    for kind in probe_cfg.get("tasks", PROBE_KINDS):
        res = train_probe(store, ProbeTask(kind), holdout, probe_cfg.get("split_seed", 0),
                          probe_cfg.get("iterations", 500), probe_cfg.get("lr0", 0.01))
        values[kind] = res.value
    return {"row": name, "values": values, "error": None}


def _safe_row(args):
    row = args[0]
    try:
        return run_row(*args)
    except Exception as exc:  # a failed row is reported, the rest still run
        log.error("ablation row %s failed: %s", AblationPlan.row_name(row), exc)
        return {"row": AblationPlan.row_name(row), "values": {}, "error": f"{type(exc).__name__}: {exc}"}


def run_ablation(plan: AblationPlan, world_cfg, train_cfg, probe_cfg=None, arch=ArchConfig(),
                 out_dir=None, jobs=1) -> list[dict]:
    probe_cfg = dict(probe_cfg or {})
    args = [(row, world_cfg, train_cfg, probe_cfg, arch, out_dir) for row in plan.rows]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_safe_row, args))
    else:
        results = [_safe_row(a) for a in args]
    return results


def format_report(results: list[dict], tasks=PROBE_KINDS) -> str:
    """CSV with one column per probe; cells read 'value (delta vs all tasks)'."""
    full = next((r for r in results if r["row"] == FULL and not r["error"]), None)
    header = ["encoder"] + [f"{t} ({PROBE_METRICS[t]})" for t in tasks] + ["status"]
    lines = [",".join(header)]
    for r in results:
        cells = [r["row"]]
        for t in tasks:
            if r["error"] or t not in r["values"]:
                cells.append("")
                continue
            v = r["values"][t]
            if full is None or r is full:
                cells.append(f"{v:.2f}")
            else:
                cells.append(f"{v:.2f} ({v - full['values'][t]:+.2f})")
        cells.append("failed: " + r["error"].replace(",", ";") if r["error"] else "ok")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_report(path, results, tasks=PROBE_KINDS):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_report(results, tasks))
