"""Command line interface.

Subcommands: train, eval, inspect, verify, profile.  Report-producing paths
write delimited text (CSV) and render a matplotlib figure next to it.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, profile, report, scan, train, verify
from .data import load_data
from .model import ModelSpec, build_model, resolve_variant, spec_from_json
from .tensor import Tensor, no_grad, set_precision


def _resolve_spec(value: str, layout: str | None = None) -> ModelSpec:
    """A variant name (tiny/small/base, aliases T/S/B) or a JSON file path."""
    p = Path(value)
    if p.suffix == ".json" or p.exists():
        spec = spec_from_json(p.read_text())
    else:
        spec = resolve_variant(value)
    if layout is not None:
        spec = ModelSpec(**{**spec.__dict__, "layout": layout})
    return spec


def _add_common(sp, *flags):
    if "spec" in flags:
        sp.add_argument("--spec", default="tiny",
                        help="variant name (tiny/small/base or T/S/B) or JSON config path")
    if "layout" in flags:
        sp.add_argument("--layout", default=None,
                        choices=["inverted", "previous", "all-evss", "all-inres"],
                        help="override the stage layout of the spec")
    if "data" in flags:
        sp.add_argument("--data", default="synthetic",
                        help="dataset directory or synthetic:count=..,classes=..,size=..,seed=..")
    if "out" in flags:
        sp.add_argument("--out", default=None, help="output directory")
    sp.add_argument("--precision", type=int, choices=[32, 64], default=64)
    sp.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="evmamba")
    sub = ap.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("train", help="train a model and write metrics + checkpoint")
    _add_common(sp, "spec", "layout", "data", "out")
    sp.add_argument("--epochs", type=int, default=50)
    sp.add_argument("--batch", type=int, default=16)
    sp.add_argument("--lr", type=float, default=3e-3)
    sp.add_argument("--warmup", type=int, default=2, help="warmup epochs")
    sp.add_argument("--stop-at-acc", type=float, default=None,
                    help="stop once training accuracy reaches this value")

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    sp.add_argument("ckpt", help="checkpoint file")
    _add_common(sp, "spec", "layout", "data", "out")

    sp = sub.add_parser("inspect", help="describe a model or a scan plan")
    sp.add_argument("target", nargs="*", default=[],
                    help="'scan-plan H W p' or a variant name / config path")
    _add_common(sp, "spec", "layout")

    sp = sub.add_parser("verify", help="run the verification suite")
    sp.add_argument("--skip-gradchecks", action="store_true")
    _add_common(sp)

    sp = sub.add_parser("profile", help="analytic parameter/MAC profile")
    sp.add_argument("target", nargs="?", default=None,
                    help="variant name or config path (defaults to --spec)")
    _add_common(sp, "spec", "layout", "out")
    sp.add_argument("--hw", type=int, default=224, help="input resolution")
    sp.add_argument("--detailed", action="store_true",
                    help="per-layer rows instead of per-module subtotals")
    return ap


def cmd_train(args) -> int:
    spec = _resolve_spec(args.spec, args.layout)
    ds = load_data(args.data)
    if ds.num_classes != spec.num_classes:
        spec = ModelSpec(**{**spec.__dict__, "num_classes": ds.num_classes})
    model = build_model(spec, seed=args.seed)
    cfg = train.TrainConfig(epochs=args.epochs, batch_size=args.batch,
                            lr=args.lr, warmup_epochs=args.warmup,
                            seed=args.seed, stop_at_acc=args.stop_at_acc)
    out = Path(args.out) if args.out else Path("run")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(spec.to_json() + "\n")
    history = train.train(model, ds, cfg, out_dir=out, log=print)
    checkpoint.save_checkpoint(model, out / "model.ckpt")
    report.save_training_curves(history, out / "training_curves.png")
    final = history[-1]
    print(f"done: {len(history)} epochs, final acc {final['acc']:.3f}; "
          f"wrote {out}/metrics.csv, model.ckpt, training_curves.png")
    return 0


def cmd_eval(args) -> int:
    spec = _resolve_spec(args.spec, args.layout)
    ds = load_data(args.data)
    if ds.num_classes != spec.num_classes:
        spec = ModelSpec(**{**spec.__dict__, "num_classes": ds.num_classes})
    model = build_model(spec, seed=args.seed)
    checkpoint.apply_state(model, checkpoint.load_checkpoint(args.ckpt))
    acc, confusion = train.evaluate(model, ds)
    print(f"accuracy: {acc:.4f} over {len(ds)} samples")
    print("confusion (rows true, cols predicted):")
    for i, row in enumerate(confusion):
        print(f"  {ds.class_names[i]:>8}: " + " ".join(f"{v:5d}" for v in row))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        lines = ["true\\pred," + ",".join(ds.class_names)]
        for i, row in enumerate(confusion):
            lines.append(ds.class_names[i] + "," + ",".join(str(v) for v in row))
        (out / "confusion.csv").write_text("\n".join(lines) + "\n")
        report.save_confusion(confusion, ds.class_names, out / "confusion.png")
        print(f"wrote {out}/confusion.csv and confusion.png")
    return 0


def cmd_inspect(args) -> int:
    if args.target and args.target[0] == "scan-plan":
        if len(args.target) != 4:
            print("usage: evmamba inspect scan-plan H W p", file=sys.stderr)
            return 2
        h, w, p = (int(v) for v in args.target[1:])
        plan = scan.build_plan(h, w, p)
        print(scan.plan_grid_text(plan))
        print()
        print(scan.plan_summary_text(plan))
        return 0
    target = args.target[0] if args.target else args.spec
    spec = _resolve_spec(target, args.layout)
    model = build_model(spec, seed=args.seed)
    rep = profile.profile_model(model, 224, 224)
    kinds = spec.stage_kinds()
    print(f"model {spec.name}: dims {list(spec.dims)}, depths {list(spec.depths)}, "
          f"layout {spec.layout}, {spec.num_classes} classes")
    print("stage kinds: " + " ".join(kinds))
    res = model.stage_resolutions(224, 224)
    print(f"resolutions at 224x224: stem {res[0]}, stages "
          + "/".join(str(r) for r in res[1:]))
    print()
    print("stage,kind,blocks,width,resolution@224")
    for i in range(4):
        print(f"{i + 1},{kinds[i]},{spec.depths[i]},{spec.dims[i]},{res[i + 1]}")
    print()
    print(f"parameters: {rep.total_params:,} ({rep.total_params / 1e6:.3f}M)")
    print(f"macs@224: {rep.total_macs:,} ({rep.total_macs / 1e9:.3f}G)")
    for line in profile.budget_lines(model, rep):
        print(line)
    return 0


def cmd_verify(args) -> int:
    results = verify.run_suite(seed=args.seed,
                               include_gradchecks=not args.skip_gradchecks)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_profile(args) -> int:
    target = args.target or args.spec
    spec = _resolve_spec(target, args.layout)
    model = build_model(spec, seed=args.seed)
    rep = profile.profile_model(model, args.hw, args.hw)
    table = rep.table(detailed=args.detailed)
    print(table)
    for line in profile.budget_lines(model, rep):
        print(line)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "profile.csv").write_text(table + "\n")
        budgets = None
        if spec.name in profile.PARAM_BUDGET:
            budgets = (profile.PARAM_BUDGET[spec.name], profile.FLOP_BUDGET[spec.name])
        report.save_profile_chart(rep.grouped(), rep.total_params,
                                  rep.total_macs, budgets, out / "profile.png")
        print(f"wrote {out}/profile.csv and profile.png")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    set_precision(args.precision)
    handlers = {"train": cmd_train, "eval": cmd_eval, "inspect": cmd_inspect,
                "verify": cmd_verify, "profile": cmd_profile}
    return handlers[args.cmd](args)


if __name__ == "__main__":
    sys.exit(main())
