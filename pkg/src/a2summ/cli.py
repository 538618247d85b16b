"""Command-line entry point: ``a2summ {gen-data,train,eval,summarize,selfcheck}``.

Failures print one line ``error: CODE: message`` to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import RunConfig, load_config, preset
from .data import DataError, generate_dataset, load_and_validate, manifest_path, read_sample
from .evaluate import evaluate_scores, predict, score_source, summary_length, write_report
from .model import ConfigError, load_checkpoint
from .summarize import budgeted_summary, segment_scores, topk_select
from .train import TrainingError, train

EXIT_USAGE, EXIT_FAIL = 2, 1


class CliError(Exception):
    def __init__(self, code: str, msg: str, status: int = EXIT_FAIL):
        super().__init__(msg)
        self.code, self.status = code, status


def _load_cfg(args) -> RunConfig:
    if args.config and args.preset:
        raise CliError("USAGE", "give either --config or --preset, not both", EXIT_USAGE)
    if args.config:
        cfg = load_config(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        cfg = RunConfig()
    over = _overrides(args)
    if getattr(args, "out", None):
        over["out"] = args.out
    cfg = replace(cfg, **over)
    cfg.validate()
    return cfg


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    gcfg = cfg.gen_config()
    gcfg.validate()
    root = Path(args.out or cfg.data or "data/synthetic")
    m = generate_dataset(gcfg, cfg.seed, root)
    print(f"wrote {gcfg.samples} samples to {m}")
    return 0


def _require_data(cfg: RunConfig) -> Path:
    if not cfg.data:
        raise CliError("USAGE", "no dataset: set 'data' in the config or pass --data", EXIT_USAGE)
    return manifest_path(cfg.data)


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    mpath = _require_data(cfg)
    # test-split samples are never read during training
    train_s = load_and_validate(mpath, splits=["train"])
    val_s = load_and_validate(mpath, splits=["val"])
    if not train_s:
        raise CliError("DATA", f"manifest {mpath}: no training samples")
    out = Path(cfg.out)

    def progress(rec):
        val = rec.get("val") or {}
        f1v, f1s = val.get("f1_video"), val.get("f1_sentence")
        msg = f"epoch {rec['epoch']:3d}"
        if rec["total"] is not None:
            msg += f" loss {rec['total']:.4f}"
        if f1v is not None:
            msg += f" val_f1_video {f1v:.3f}"
        if f1s is not None:
            msg += f" val_f1_sentence {f1s:.3f}"
        print(msg, flush=True)

    res = train(cfg, train_s, val_s, out_dir=out, on_epoch=None if args.quiet else progress)
    print(f"best epoch {res.best_epoch} (score {res.best_score:.4f}); checkpoints in {out}")
    return 0


def _checkpoint_config(args, ckpt_path: Path, meta: dict) -> RunConfig:
    if args.config or args.preset:
        cfg = _load_cfg(args)
    else:
        side = ckpt_path.parent / "config.json"
        base = load_config(side) if side.exists() else RunConfig(align=bool(meta.get("align", True)))
        cfg = replace(base, **_overrides(args))
        cfg.validate()
    if "align" in meta and bool(meta["align"]) != cfg.align:
        raise CliError("MISMATCH", f"config align={cfg.align} but checkpoint was trained with align={meta['align']}")
    return cfg


def _overrides(args) -> dict:
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if getattr(args, "data", None):
        over["data"] = args.data
    if getattr(args, "mode", None):
        over["select_mode"] = args.mode
    return over


def _check_model_config(cfg: RunConfig, mcfg) -> None:
    for k in ("dim", "heads", "layers"):
        if getattr(cfg, k) != getattr(mcfg, k):
            raise CliError("MISMATCH", f"config {k}={getattr(cfg, k)} but checkpoint has {k}={getattr(mcfg, k)}")


def cmd_eval(args) -> int:
    if args.scores == "model" and not args.checkpoint:
        raise CliError("USAGE", "--checkpoint is required unless --scores is oracle or random", EXIT_USAGE)
    if args.checkpoint:
        params, mcfg, meta = load_checkpoint(args.checkpoint)
        cfg = _checkpoint_config(args, Path(args.checkpoint), meta)
        _check_model_config(cfg, mcfg)
    else:
        cfg = _load_cfg(args)
    samples = load_and_validate(_require_data(cfg), splits=[args.split])
    if not samples:
        raise CliError("DATA", f"split {args.split!r} is empty")
    if args.scores == "model":
        if (mcfg.video_dim, mcfg.text_dim) != samples[0].frame_features.shape[1:] + samples[0].sentence_features.shape[1:]:
            raise CliError("MISMATCH", "feature widths of the dataset differ from the checkpoint")
        scores = predict(params, mcfg, samples, cfg.align)
    else:
        scores = score_source(samples, args.scores, cfg.seed)
    rows, agg = evaluate_scores(samples, scores, cfg)
    out = Path(args.out or cfg.out)
    table, log = write_report(rows, agg, out, stem=f"eval_{args.split}")
    for k, v in agg.items():
        print(f"{k}\t{'NA' if v is None else (f'{v:.6f}' if isinstance(v, float) else v)}")
    print(f"report: {table} {log}")
    return 0


def cmd_summarize(args) -> int:
    if not args.checkpoint or not args.sample:
        raise CliError("USAGE", "summarize needs --checkpoint and --sample", EXIT_USAGE)
    params, mcfg, meta = load_checkpoint(args.checkpoint)
    cfg = _checkpoint_config(args, Path(args.checkpoint), meta)
    _check_model_config(cfg, mcfg)
    sample = read_sample(Path(args.sample), Path(args.sample).stem)
    sample.validate(mcfg.video_dim, mcfg.text_dim)
    (p, q), = predict(params, mcfg, [sample], cfg.align)
    out = {"id": sample.id, "mode": cfg.select_mode, "frame_scores": p.round(6).tolist(), "sentence_scores": q.round(6).tolist()}
    out["sentences"] = topk_select(q, summary_length(sample.sentence_labels, cfg.topk_fraction))
    if cfg.select_mode == "budget":
        sel, bounds = budgeted_summary(p, sample.segmentation, sample.frame_features, cfg.budget_fraction, cfg.kts_penalty)
        out.update(
            frames=sel.frames,
            segments=sel.segments,
            boundaries=[int(b) for b in bounds],
            segment_scores=segment_scores(p, bounds).round(6).tolist(),
            duration=sel.duration,
        )
    else:
        frames = topk_select(p, summary_length(sample.frame_labels, cfg.topk_fraction))
        out.update(frames=frames, segments=[], duration=len(frames))
    text = json.dumps(out, sort_keys=True)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / f"{sample.id}.summary.json").write_text(text + "\n")
    print(text)
    return 0


def cmd_selfcheck(args) -> int:
    from . import selfcheck

    results = selfcheck.run(corrupt=args.corrupt_grad)
    print(selfcheck.report(results))
    failed = [name for name, ok, _ in results if not ok]
    if failed:
        raise CliError("SELFCHECK", f"{len(failed)} check(s) failed: {', '.join(failed)}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # one machine-parsable line instead of argparse's usage dump
        self.exit(EXIT_USAGE, f"error: USAGE: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="a2summ", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="flat JSON run config")
        p.add_argument("--preset", help="named preset instead of --config")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", help="output directory")
        if data:
            p.add_argument("--data", help="dataset directory or manifest (overrides config)")

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    common(p, data=False)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--mode", choices=("budget", "topk"), help="video selection used for validation F1")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a split and write a metric report")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--mode", choices=("budget", "topk"))
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--scores", choices=("model", "oracle", "random"), default="model")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("summarize", help="summarize one sample file")
    common(p, data=False)
    p.add_argument("--checkpoint")
    p.add_argument("--sample", help="path to a .a2ds sample file")
    p.add_argument("--mode", choices=("budget", "topk"))
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("selfcheck", help="numeric self-checks")
    p.add_argument("--corrupt-grad", metavar="OP", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selfcheck)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e.code}: {e}", file=sys.stderr)
        return e.status
    except ConfigError as e:
        print(f"error: CONFIG: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"error: DATA: {e}", file=sys.stderr)
        return EXIT_FAIL
    except TrainingError as e:
        print(f"error: TRAINING: {e}", file=sys.stderr)
        return EXIT_FAIL
    except (FileNotFoundError, IsADirectoryError, PermissionError) as e:
        print(f"error: IO: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
