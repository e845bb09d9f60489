"""Command-line entry point: ``graphpillars <command> [options]``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from threadpoolctl import threadpool_limits

from .config import VARIANTS, RunConfig, load_config
from .errors import GraphPillarsError, NonFiniteLossError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _write_effective_config(cfg: RunConfig, path: Path, extra: dict | None = None) -> None:
    payload = {"config": cfg.to_dict(), "config_hash": cfg.digest()}
    if extra:
        payload.update(extra)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _executor(threads: int):
    return ThreadPoolExecutor(max_workers=threads) if threads > 1 else None


def cmd_generate(args, cfg: RunConfig) -> int:
    from .scene import generate_scenes, save_scenes

    if args.scenes < 0:
        raise argparse.ArgumentTypeError("--scenes must be >= 0")
    seed = cfg.train.seed if args.seed is None else args.seed
    pool = _executor(args.threads)
    try:
        scenes = generate_scenes(args.scenes, seed, cfg.scene.generator(), executor=pool)
    finally:
        if pool is not None:
            pool.shutdown()
    out = Path(args.out)
    save_scenes(scenes, out)
    _write_effective_config(cfg, out.with_name(out.name + ".config.json"),
                            {"command": "generate", "scenes": args.scenes, "seed": seed})
    print(f"wrote {len(scenes)} scenes to {out}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    from .model import build_model
    from .scene import load_scenes
    from .train import train, write_run

    if args.variant:
        cfg = cfg.replace("model", variant=args.variant)
    extent = cfg.model.extent
    scenes = load_scenes(args.data, extent)
    val = load_scenes(args.val, extent) if args.val else None
    model = build_model(cfg)

    def log(record):
        val_text = "" if record.val_loss is None else f" val {record.val_loss:.6f}"
        print(f"epoch {record.epoch:3d} train {record.train_loss:.6f}{val_text}", flush=True)

    result = train(model, scenes, cfg, val, log=None if args.quiet else log)
    ckpt = write_run(result, cfg, args.out)
    print(f"best epoch {result.best_epoch}; checkpoint {ckpt}")
    return EXIT_OK


def cmd_infer(args, cfg: RunConfig) -> int:
    from .model import infer, load_checkpoint
    from .scene import load_scenes, save_detections

    model, meta = load_checkpoint(args.checkpoint)
    scenes = load_scenes(args.data, model.spec.extent)
    detections = infer(model, scenes, cfg.eval.score_threshold, cfg.eval.nms_iou, cfg.train.batch_size)
    header = {"score_threshold": cfg.eval.score_threshold, "nms_iou": cfg.eval.nms_iou,
              "variant": meta["variant"], "checkpoint_config_hash": meta["config_hash"],
              "epoch": meta["epoch"], "config_hash": cfg.digest()}
    save_detections(detections, args.out, header)
    out = Path(args.out)
    _write_effective_config(cfg, out.with_name(out.name + ".config.json"),
                            {"command": "infer", "checkpoint": str(args.checkpoint), "checkpoint_meta": meta})
    total = sum(len(d) for d in detections.values())
    print(f"wrote {total} detections for {len(detections)} scenes to {args.out}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    from .metrics import evaluate, format_table, write_report

    report = evaluate(args.detections, args.scenes)
    out = Path(args.out)
    write_report(report, out)
    table = format_table(report)
    out.with_suffix(".txt").write_text(table + "\n")
    _write_effective_config(cfg, out.with_name(out.name + ".config.json"), {"command": "eval"})
    print(table)
    return EXIT_OK


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    from .gradsuite import run_suite

    results = run_suite(seed=args.seed)
    for r in results:
        print(r)
    failed = [r for r in results if not r.passed]
    if failed:
        print("gradient check failed for: " + ", ".join(f"{r.name} ({r.max_rel_error:.2e})" for r in failed),
              file=sys.stderr)
        return EXIT_NUMERIC
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def cmd_plot(args, cfg: RunConfig) -> int:
    from .plots import plot_loss_curves, plot_pr_curves
    from .train import read_loss_curve

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.loss:
        curves = {Path(p).parent.name or Path(p).stem: read_loss_curve(p) for p in args.loss}
        written.append(plot_loss_curves(curves, out / "loss.svg"))
    if args.detections or args.scenes:
        if not (args.detections and args.scenes):
            raise argparse.ArgumentTypeError("PR curves need both --detections and --scenes")
        from .scene import load_detections, load_scenes

        detections, _ = load_detections(args.detections)
        written.append(plot_pr_curves(detections, load_scenes(args.scenes), out / "pr.svg"))
    if not written:
        raise argparse.ArgumentTypeError("nothing to plot: pass --loss and/or --detections with --scenes")
    _write_effective_config(cfg, out / "plot.config.json", {"command": "plot"})
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphpillars", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=1,
                        help="cap on worker and BLAS threads; 1 gives the bit-reproducible path")
    parser.add_argument("--config", help="config file with [scene] [model] [loss] [train] [eval] sections")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic scenes")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--data", required=True)
    p.add_argument("--val")
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="write post-NMS detections for a scene file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score detections against labels")
    p.add_argument("--detections", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("plot", help="render loss and PR curves as SVG")
    p.add_argument("--loss", nargs="*", default=[])
    p.add_argument("--detections")
    p.add_argument("--scenes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    # allow the global options after the subcommand as well
    for action in list(sub.choices.values()):
        action.add_argument("--threads", type=int, default=argparse.SUPPRESS)
        action.add_argument("--config", default=argparse.SUPPRESS)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        cfg = load_config(args.config)
        with threadpool_limits(limits=args.threads):
            return args.func(args, cfg)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except argparse.ArgumentTypeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GraphPillarsError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
