"""Command-line entry point: ``physichm <command> ...``.

Every command exits 0 on success.  Failures print one ``error: ...`` line on
stderr and exit 1 (argument errors exit 2, as argparse does).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, gradcheck, harness, plots, synth
from .config import load_synth_config, load_train_config
from .dataset import Dataset, generate_dataset, load_split, resolve
from .model import VARIANTS
from .report import write_pgm, write_report
from .tensorfile import write_tensor

log = logging.getLogger("physichm")


def _split(data: str, split: str) -> Dataset:
    """A manifest path is used as given; a dataset directory picks ``split``."""
    p = Path(data)
    return load_split(p if p.is_file() else resolve(p, split))


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from None


def _variants(values: list[str]) -> list[str]:
    out = [v for item in values for v in item.split(",") if v]
    bad = [v for v in out if v not in VARIANTS]
    if bad:
        raise ValueError(f"unknown variant '{bad[0]}' (choose from {', '.join(VARIANTS)})")
    return out


def _sample_table(rep: harness.EvalReport):
    rows = [(i, k, int(l), float(s)) for i, (s, l, k) in enumerate(zip(rep.scores, rep.labels, rep.kinds))]
    return ("index", "kind", "label", "score"), rows


def cmd_gen_data(args) -> None:
    cfg = load_synth_config(args.config)
    for split, path in generate_dataset(cfg, args.out).items():
        print(f"{split}\t{path}")


def cmd_train(args) -> None:
    cfg = load_train_config(args.config)
    if args.variant:
        cfg = replace(cfg, variant=args.variant)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    train_data, val_data = _split(args.data, "train"), load_split(resolve(args.data, "val"))
    ckpt = harness.train(cfg, train_data, val_data, args.out)
    out = Path(args.out)
    plots.loss_figure(ckpt.trace, out / "loss.png")
    first, last = ckpt.trace[0][2], ckpt.trace[-1][2]
    write_report(out / "train_report.txt", "train",
                 {"data": args.data, "variant": cfg.variant, "seed": cfg.seed, "best_epoch": ckpt.best_epoch},
                 {"train_loss_first": first, "train_loss_last": last,
                  "val_loss_best": min(t[3] for t in ckpt.trace)},
                 {"trace": (("epoch", "lr", "train_loss", "val_loss"), ckpt.trace)})
    print(f"trained {cfg.variant}: loss {first:.4g} -> {last:.4g}, best epoch {ckpt.best_epoch}; saved {out}")


def cmd_eval(args) -> None:
    ckpt = harness.load_checkpoint(args.ckpt)
    data = _split(args.data, "test")
    rep = harness.evaluate(ckpt, data)
    if args.bench_iters:
        rep.latency_ms, rep.fps = harness.latency_bench(ckpt, data, iters=args.bench_iters)
    path = write_report(args.report, "eval", {"checkpoint": args.ckpt, "data": args.data,
                                              "variant": ckpt.config.variant, "samples": len(data)},
                        rep.metrics_block(), {"samples": _sample_table(rep)})
    plots.score_figure(rep.scores, rep.labels, rep.kinds, path.with_name(path.stem + "_scores.png"),
                       title=ckpt.config.variant)
    print(f"I-AUROC {rep.auroc:.4f}  AP {rep.ap:.4f}  F1-max {rep.f1_max:.4f}; report {path}")


def cmd_ablate(args) -> None:
    base = load_train_config(args.config)
    variants = _variants(args.variant)
    seeds = harness.replicate_seeds(base.seed, args.replicates)
    train_data, val_data, test_data = (load_split(resolve(args.data, s)) for s in synth.SPLITS)
    runs, means = [], {}
    for v in variants:
        per_seed = []
        for seed in seeds:
            out = None if args.out is None else Path(args.out) / f"{v}_seed{seed}"
            _, rep = harness.run_ablation(v, replace(base, seed=seed), train_data, val_data, test_data, out)
            block = rep.metrics_block()
            per_seed.append(block)
            runs.append((v, seed, *block.values()))
            log.info("%s seed %d: %s", v, seed, block)
        means[v] = {k: float(np.mean([b[k] for b in per_seed])) for k in per_seed[0]}
    cols = ("variant", "seed", *next(iter(means.values())))
    metrics = {f"{v}.{k}": x for v, m in means.items() for k, x in m.items()}
    path = write_report(args.report, "ablate", {"data": args.data, "seeds": ",".join(map(str, seeds))},
                        metrics, {"runs": (cols, runs)})
    plots.ablation_figure(means, path.with_name(path.stem + "_ablation.png"))
    for v, m in means.items():
        print(f"{v:>22}  I-AUROC {m['i_auroc']:.4f}  process_hidden {m.get('auroc_process_hidden', float('nan')):.4f}")


def cmd_robust(args) -> None:
    ckpt = harness.load_checkpoint(args.ckpt)
    data = _split(args.data, "test")
    sweep = harness.robustness_sweep(ckpt, data, args.sigmas, seed=args.seed)
    rows = {s: r.metrics_block() for s, r in sweep.items()}
    cols = ("sigma", *next(iter(rows.values())))
    metrics = {f"sigma_{s:g}.{k}": x for s, m in rows.items() for k, x in m.items()}
    path = write_report(args.report, "robust", {"checkpoint": args.ckpt, "data": args.data, "noise_seed": args.seed},
                        metrics, {"sweep": (cols, [(s, *m.values()) for s, m in rows.items()])})
    plots.robustness_figure(rows, path.with_name(path.stem + "_robustness.png"))
    for s, r in sweep.items():
        print(f"sigma {s:<5g} I-AUROC {r.auroc:.4f}")


def cmd_bench(args) -> None:
    ckpt = harness.load_checkpoint(args.ckpt)
    ms, fps = harness.latency_bench(ckpt, _split(args.data, "test"), warmup=args.warmup, iters=args.iters)
    if args.report:
        write_report(args.report, "bench", {"checkpoint": args.ckpt, "iters": args.iters},
                     {"latency_ms": ms, "fps": fps})
    print(f"{ms:.3f} ms/sample  {fps:.1f} fps")


def cmd_gradcheck(args) -> None:
    worst = gradcheck.run(args.module)
    for name, err in worst.items():
        print(f"{name:>18}  max rel err {err:.3e}  {'ok' if err < args.tol else 'FAIL'}")
    failed = [n for n, e in worst.items() if not e < args.tol]
    if failed:
        raise RuntimeError(f"gradient check above {args.tol:g} for: {', '.join(failed)}")


def cmd_heatmap(args) -> None:
    ckpt = harness.load_checkpoint(args.ckpt)
    data = _split(args.data, "test")
    maps = harness.sample_heatmap(ckpt, data, args.sample)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / "heatmap.phmt", maps)
    for a, m in enumerate(maps):
        write_pgm(out / f"angle_{a}.pgm", m)
    plots.heatmap_figure(maps, out / "heatmap.png", data.feat_image[args.sample])
    print(f"sample {args.sample} ({data.kinds[args.sample]}): {len(maps)} maps in {out}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="physichm", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic train/val/test splits")
    p.add_argument("--config", help="key-value config (synth.* keys)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--config")
    p.add_argument("--data", required=True, help="dataset directory or a split manifest")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a split and write a report")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--bench-iters", type=int, default=20, help="latency iterations, 0 to skip")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate variants")
    p.add_argument("--variant", action="append", required=True, help="tag, repeatable or comma-separated")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--out", help="keep checkpoints under this directory")
    p.add_argument("--replicates", type=int, default=1, help="seeds base..base+n-1, metrics averaged")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("robust", help="sensor-noise sweep")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sigmas", type=_csv_floats, default=[0.0, 0.1, 0.2, 0.3])
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_robust)

    p = sub.add_parser("bench", help="single-sample scoring latency")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--report")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--module", choices=gradcheck.MODULES)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("heatmap", help="saliency maps for one sample")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sample", type=int, required=True, help="sample index in the split")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_heatmap)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # one-line reason, no traceback
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
