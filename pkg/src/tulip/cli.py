"""Command-line interface.

Subcommands: gen-data, train, eval (retrieval|zeroshot|group|probe),
grad-check, export-attn, ablate. Exit codes: 0 success, 1 failed run,
2 usage error.
"""

import argparse
import json
import os
import sys

import numpy as np

from .errors import TulipError
from .scenes import SceneDataset, generate_dataset
from .train.config import TrainConfig, canonical_keys, load_config
from .util import data_dir_default

ABLATION_RUNGS = [
    # (name, overrides relative to the full configuration)
    ("base_siglip", {"w_ii": 0.0, "w_tt": 0.0, "lambda_r": 0.0, "geco": False,
                     "n_local": 0}),
    ("ii_tt", {"lambda_r": 0.0, "geco": False}),
    ("recons", {"geco": False}),
    ("geco", {}),
]


def _config_from_args(args):
    cfg = TrainConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    overrides = {}
    for key in ("seed", "steps", "batch_size"):
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "geco", None) is not None:
        overrides["geco"] = args.geco == "on"
    return cfg.replace(**overrides) if overrides else cfg


def _data_dir(args):
    d = getattr(args, "data", None) or data_dir_default()
    if not d:
        raise TulipError("no dataset directory: pass --data or set TULIP_DATA_DIR")
    return d


def cmd_gen_data(args):
    path = generate_dataset(args.out, n_scenes=args.n, size=args.size,
                            seed=args.seed, val_frac=args.val_frac,
                            test_frac=args.test_frac)
    print(f"wrote {args.n} scenes to {path}")
    return 0


def cmd_train(args):
    from .train.loop import run_training
    from .train import evals
    cfg = _config_from_args(args)
    dataset = SceneDataset(_data_dir(args))
    state = run_training(cfg, dataset, args.out, resume=args.resume)
    summary = {"steps": state.step, "config": cfg.to_text()}
    if args.eval:
        summary["retrieval"] = evals.evaluate_retrieval(state.model, dataset)
        summary["zero_shot"] = evals.evaluate_zero_shot(state.model, dataset)
    with open(os.path.join(args.out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    print(f"finished {state.step} steps; outputs in {args.out}")
    return 0


def cmd_eval(args):
    from .train import evals
    from .train.loop import load_checkpoint
    dataset = SceneDataset(_data_dir(args))
    state = load_checkpoint(args.ckpt, dataset)
    model = state.model
    if args.suite == "retrieval":
        result = evals.evaluate_retrieval(model, dataset)
    elif args.suite == "zeroshot":
        result = evals.evaluate_zero_shot(model, dataset)
    elif args.suite == "group":
        scenes = [dataset.records[i].scene for i in dataset.indices("test")]
        quads = evals.build_group_quadruples(scenes, seed=(state.cfg.seed, "quad"),
                                             render_size=dataset.size)
        result = evals.evaluate_group_score(model, quads)
    else:
        result = evals.evaluate_linear_probe(model, dataset)
    print(json.dumps(result, indent=2, sort_keys=True))
    if args.out:
        with open(args.out, "w") as f:
            json.dump(result, f, indent=2, sort_keys=True)
    return 0


def cmd_grad_check(args):
    from .train.verify import run_grad_check
    worst, _sections = run_grad_check(n_per_primitive=args.n)
    ok = worst < args.tolerance
    print(f"grad-check {'PASS' if ok else 'FAIL'}: "
          f"max relative error {worst:.3e} (tolerance {args.tolerance:.1e})")
    return 0 if ok else 1


def cmd_export_attn(args):
    from .models.vision import export_attention
    from .train.loop import load_checkpoint
    state = load_checkpoint(args.ckpt)
    dataset = SceneDataset(_data_dir(args))
    os.makedirs(args.out, exist_ok=True)
    idx = dataset.indices("test")[:args.n]
    images = np.stack([dataset.image_f32(i) for i in idx])
    maps, _ = export_attention(state.model.vision, images)
    count = 0
    for i, sample_maps in zip(idx, maps):
        for h, m in enumerate(sample_maps):
            lo, hi = float(m.min()), float(m.max())
            norm = (m - lo) / (hi - lo) if hi > lo else np.zeros_like(m)
            path = os.path.join(args.out, f"attn_{int(i):05d}_head{h}.pgm")
            _write_pgm(path, (norm * 255).astype(np.uint8))
            count += 1
    print(f"wrote {count} attention maps to {args.out}")
    return 0


def _write_pgm(path, arr):
    with open(path, "wb") as f:
        f.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def cmd_ablate(args):
    from .train.loop import run_training
    from .train import evals
    base = _config_from_args(args)
    dataset = SceneDataset(_data_dir(args))
    combined = {}
    for k, (name, overrides) in enumerate(ABLATION_RUNGS, 1):
        cfg = base.replace(**overrides)
        rung_dir = os.path.join(args.out, f"rung{k}_{name}")
        print(f"== rung {k}: {name} ==")
        state = run_training(cfg, dataset, rung_dir)
        scenes = [dataset.records[i].scene for i in dataset.indices("test")]
        quads = evals.build_group_quadruples(scenes, seed=(cfg.seed, "quad"),
                                             render_size=dataset.size)
        summary = {
            "rung": name,
            "overrides": {k2: overrides[k2] for k2 in sorted(overrides)},
            "config": cfg.to_text(),
            "retrieval": evals.evaluate_retrieval(state.model, dataset),
            "zero_shot": evals.evaluate_zero_shot(state.model, dataset),
            "group": evals.evaluate_group_score(state.model, quads),
        }
        with open(os.path.join(rung_dir, "summary.json"), "w") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
        combined[name] = summary
    with open(os.path.join(args.out, "ablation.json"), "w") as f:
        json.dump(combined, f, indent=2, sort_keys=True)
    print(f"ablation ladder written to {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="tulip",
        description="Desk-scale unified image-text contrastive pretraining.",
        epilog="Config keys: " + ", ".join(canonical_keys()))
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-data", help="emit a synthetic scene dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=5000)
    g.add_argument("--size", type=int, default=48)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--val-frac", type=float, default=0.1)
    g.add_argument("--test-frac", type=float, default=0.1)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="run training from a config file")
    t.add_argument("--config", help="flat key = value config file")
    t.add_argument("--data", help="dataset dir (default: TULIP_DATA_DIR)")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--geco", choices=["on", "off"])
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--eval", action="store_true",
                   help="run retrieval/zero-shot evals after training")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("suite", choices=["retrieval", "zeroshot", "group", "probe"])
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data")
    e.add_argument("--out", help="optional JSON output path")
    e.set_defaults(fn=cmd_eval)

    c = sub.add_parser("grad-check", help="finite-difference gradient suite")
    c.add_argument("--n", type=int, default=100,
                   help="random inputs per primitive")
    c.add_argument("--tolerance", type=float, default=1e-5)
    c.set_defaults(fn=cmd_grad_check)

    a = sub.add_parser("export-attn", help="write attention heatmaps as PGM")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--data")
    a.add_argument("--out", required=True)
    a.add_argument("--n", type=int, default=8)
    a.set_defaults(fn=cmd_export_attn)

    b = sub.add_parser("ablate", help="run the 4-rung ablation ladder")
    b.add_argument("--config")
    b.add_argument("--data")
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int)
    b.add_argument("--steps", type=int)
    b.add_argument("--batch-size", type=int, dest="batch_size")
    b.set_defaults(fn=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        return args.fn(args)
    except (TulipError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
