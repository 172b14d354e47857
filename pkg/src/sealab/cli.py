"""Command-line entry point: sealab <command> [options].

Exit codes: 0 success, 1 invalid input (config, files, checkpoints), 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from .config import RunConfig, load_config
from .errors import ValidationError
from .nncore.checkpoint import CheckpointError

log = logging.getLogger("sealab")


def _parse_sets(pairs):
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value
    return out


def _config(args) -> RunConfig:
    return load_config(getattr(args, "config", None), _parse_sets(getattr(args, "set", None)))


def _require_file(path, what):
    if path is None or not os.path.isfile(path):
        raise ValidationError(f"{what} not found: {path}")
    return path


def _load_world(path):
    from .world import World

    return World.load(_require_file(path, "world file"))


def _load_state(path):
    from .trainer import load_checkpoint

    state, _, _, it, cfg, _ = load_checkpoint(_require_file(path, "checkpoint"))
    return state, it, cfg


def cmd_gen_world(args):
    from .imaging import save_png
    from .sampler import export_manifest
    from .world import generate_world, render_panorama

    cfg = _config(args)
    os.makedirs(args.out, exist_ok=True)
    cfg.snapshot(args.out)
    world = generate_world(cfg.world)
    world.save(os.path.join(args.out, "world.json"))
    export_manifest(world, os.path.join(args.out, "manifest.jsonl"))
    if args.dump_panoramas:
        pano_dir = os.path.join(args.out, "panoramas")
        os.makedirs(pano_dir, exist_ok=True)
        for node in world.nodes:
            save_png(os.path.join(pano_dir, f"node_{node.id:03d}.png"), render_panorama(world, node.id))
    print(f"wrote world with {len(world.nodes)} nodes and {len(world.objects)} objects to {args.out}")


def cmd_pretrain(args):
    from .trainer import make_worlds, train
    from .world import generate_world

    cfg = _config(args)
    os.makedirs(args.out, exist_ok=True)
    cfg.snapshot(args.out)
    generated, holdout = make_worlds(cfg.world, cfg.train)
    worlds = generated
    if args.world:
        worlds = [_load_world(args.world)] + generated[1:]
    if args.holdout_world:
        holdout = _load_world(args.holdout_world)
    elif args.world:
        holdout = generate_world(replace(worlds[0].config, seed=worlds[0].config.seed + 1))
    result = train(worlds, cfg.train, holdout, args.out, aug_cfg=cfg.augment)
    final = result.aux_table.get("final", {})
    print(json.dumps({"out": args.out, "final": final}, sort_keys=True))


def cmd_eval_aux(args):
    import numpy as np

    from .evalprobe.aux import build_eval_set, eval_aux
    from .trainer import write_aux_csv

    state, it, tcfg = _load_state(args.checkpoint)
    world = _load_world(args.holdout_world or args.world)
    cfg = _config(args)
    os.makedirs(args.out, exist_ok=True)
    cfg.snapshot(args.out)
    evalset = build_eval_set(world, np.random.default_rng([tcfg.seed, 2]), tcfg.eval_size, tcfg.bank_K,
                             aug_cfg=cfg.augment)
    acc = eval_aux(state, evalset)
    write_aux_csv(os.path.join(args.out, "aux_accuracy.csv"), {f"iteration {it}": acc})
    print(json.dumps(acc, sort_keys=True))


def cmd_export_features(args):
    from .evalprobe.probes import export_features

    state, _, _ = _load_state(args.checkpoint)
    world = _load_world(args.world)
    cfg = _config(args)
    os.makedirs(args.out, exist_ok=True)
    cfg.snapshot(args.out)
    path = os.path.join(args.out, "features.seaf")
    store = export_features(state, world, path)
    print(f"wrote {len(store)} feature records (d={store.dim}) to {path}")


def cmd_probe(args):
    from .evalprobe.probes import FeatureStore, ProbeTask, train_probe

    task = ProbeTask(args.task)
    store = FeatureStore.load(_require_file(args.features, "feature file"))
    world = _load_world(args.world)
    cfg = _config(args)
    os.makedirs(args.out, exist_ok=True)
    cfg.snapshot(args.out)
    res = train_probe(store, task, world, cfg.probe.split_seed, cfg.probe.iterations, cfg.probe.lr0)
    with open(os.path.join(args.out, f"probe_{task.kind}.json"), "w", encoding="utf-8") as fh:
        json.dump(res.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(json.dumps(res.to_dict(), sort_keys=True))


def cmd_ablate(args):
    from dataclasses import asdict

    from .evalprobe.ablation import AblationPlan, format_report, run_ablation

    cfg = _config(args)
    if args.jobs < 1:
        raise ValidationError("--jobs must be >= 1")
    os.makedirs(args.out, exist_ok=True)
    cfg.snapshot(args.out)
    probe_cfg = asdict(cfg.probe)
    results = run_ablation(AblationPlan.default(), cfg.world, cfg.train, probe_cfg, out_dir=args.out,
                           jobs=args.jobs)
    report = format_report(results, cfg.probe.tasks)
    with open(os.path.join(args.out, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write(report)
    sys.stdout.write(report)
    if any(r["error"] for r in results):
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sealab", description="Procedural-world auxiliary pre-training toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--out", required=True, help="output directory")
        if config:
            sp.add_argument("--config", help="JSON file of dotted keys, e.g. {\"train.tau\": 0.07}")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    sp = sub.add_parser("gen-world", help="generate a world, its pose manifest, and optional panoramas")
    common(sp)
    sp.add_argument("--dump-panoramas", action="store_true")
    sp.set_defaults(func=cmd_gen_world)

    sp = sub.add_parser("pretrain", help="train the encoder with the three auxiliary tasks")
    common(sp)
    sp.add_argument("--world", help="world JSON (default: generate from world.* keys)")
    sp.add_argument("--holdout-world", help="held-out world JSON (default: world seed + 1)")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("eval-aux", help="held-out auxiliary accuracies of a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--world", required=True)
    sp.add_argument("--holdout-world", help="evaluate here instead of --world")
    sp.set_defaults(func=cmd_eval_aux)

    sp = sub.add_parser("export-features", help="encode every view of a world to a feature file")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--world", required=True)
    sp.set_defaults(func=cmd_export_features)

    sp = sub.add_parser("probe", help="fit a linear probe on exported features")
    common(sp)
    sp.add_argument("--features", required=True)
    sp.add_argument("--world", required=True)
    sp.add_argument("--task", required=True, help="relative_pose, object_presence, scene_id, traversable_count")
    sp.set_defaults(func=cmd_probe)

    sp = sub.add_parser("ablate", help="train every task subset and probe each encoder")
    common(sp)
    sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; bad usage is an input problem here
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = args.func(args)
    except (ValidationError, CheckpointError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
