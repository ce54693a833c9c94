"""``selfcritic`` command line: train, eval, gradcheck, inspect.

Exit codes: 0 success, 1 runtime failure (divergence, unreadable
checkpoint, failed gradient check), 2 usage or config error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .config import MetaConfig
from .errors import CheckpointFormatError, ConfigError, SelfCriticError

CHECKPOINT_NAME = "checkpoint.ckpt"
METRICS_NAME = "metrics.csv"
CONFIG_NAME = "config.txt"

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _err(msg: str) -> None:
    print(f"selfcritic: {msg}", file=sys.stderr)


def cmd_train(args) -> int:
    from .harness import save_checkpoint, train

    config = MetaConfig.from_file(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(row):
        if not args.quiet:
            print(f"step {row['outer_step']:>5}  train_loss {row['train_loss']:.4f}  "
                  f"val pre {row['val_acc_pre']:.4f} post {row['val_acc_post']:.4f}", flush=True)

    result = train(config, progress=progress)
    save_checkpoint(result.best, out / CHECKPOINT_NAME)
    (out / METRICS_NAME).write_text(result.metrics_csv())
    (out / CONFIG_NAME).write_text(config.to_text())
    if result.error is not None:
        _err(f"training diverged: {result.error}; kept checkpoint from step {result.best.outer_step}")
        return EXIT_RUNTIME
    print(f"best checkpoint at step {result.best.outer_step} -> {out / CHECKPOINT_NAME}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .harness import build_pool, evaluate, load_checkpoint

    ckpt = load_checkpoint(args.ckpt)
    pool = build_pool(ckpt.config)
    report = evaluate(ckpt, pool, args.episodes, args.seed, args.split)
    print(f"pre-target  {report.mean_pre:.4f} ± {report.hw_pre:.4f}")
    print(f"post-target {report.mean_post:.4f} ± {report.hw_post:.4f}")
    csv = Path(args.csv) if args.csv else Path(args.ckpt).with_name(f"eval-{args.split}-seed{args.seed}.csv")
    csv.write_text(report.to_csv())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    start = time.perf_counter()
    results = run_suite(args.scale, args.seed, args.instances)
    worst: dict = {}
    for r in results:
        kind = r.name.split("[")[0] if r.name.startswith("meta") else "primitive"
        if r.name.startswith("meta"):
            kind = "meta." + r.name.rsplit(".", 1)[1]
        elif r.name.startswith("second_order"):
            kind = "second_order"
        if kind not in worst or r.error / r.tol > worst[kind].error / worst[kind].tol:
            worst[kind] = r
        if args.verbose or not r.ok:
            print(f"{'ok  ' if r.ok else 'FAIL'} {r.name:<28} {r.error:.3e} (tol {r.tol:.0e})")
    for kind, r in sorted(worst.items()):
        print(f"max relative error {kind:<16} {r.error:.3e} (tol {r.tol:.0e}, {r.name})")
    failed = sum(not r.ok for r in results)
    print(f"{len(results)} checks, {failed} failed, {time.perf_counter() - start:.1f}s")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_inspect(args) -> int:
    from .harness import build_pool, load_checkpoint
    from .report import interrogate, interrogation_csv, interrogation_svg

    ckpt = load_checkpoint(args.ckpt)
    pool = build_pool(ckpt.config)
    result = interrogate(ckpt, pool, args.episode_seed, args.steps, args.mode, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "inspect.csv").write_text(interrogation_csv(result))
    (out / "inspect.svg").write_text(interrogation_svg(result))
    shift = result.argmax_shift()
    pre, post = result.accuracy()
    print(f"{len(shift)} examples, accuracy {pre:.3f} -> {post:.3f}, "
          f"largest argmax-probability change {shift.max():+.4f}, row-sum error {result.max_row_sum_error():.1e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selfcritic", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="meta-train and write checkpoint, metrics and resolved config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="pre/post target-phase accuracy with 95%% intervals")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="meta-test", choices=("meta-train", "meta-val", "meta-test"))
    p.add_argument("--episodes", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", default=None, help="per-episode CSV path (default: next to the checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="analytic versus finite-difference gradients")
    p.add_argument("--scale", default="small", choices=("small", "medium"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=None)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="before/after class probabilities under critic steps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--episode-seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="aggregate", choices=("aggregate", "per-row"))
    p.add_argument("--split", default="meta-test", choices=("meta-train", "meta-val", "meta-test"))
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_USAGE
    except (CheckpointFormatError, SelfCriticError, OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
