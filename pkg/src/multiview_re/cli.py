"""Command-line entry point: synth, train, eval, ablate, compare-fusion, inspect-gates."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import SPLITS, load_jsonl, load_splits
from .errors import ConfigError, DataValidationError, MultiViewError
from .fusion import FUSIONS, VIEW_ORDER
from .lexicon import load_lexicon
from .model import VERSION, ModelConfig, MultiViewModel
from .radical import load_dictionary
from .synth import LEXICON_FILE, RADICAL_FILE, SIGNALS, oracle_accuracy, synth_generate, write_corpus
from .training import (
    TrainConfig,
    ablate_views,
    ablation_table,
    compare_fusion,
    evaluate,
    gate_rows,
    predict_dataset,
    train,
)

logger = logging.getLogger("multiview_re")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5
MANIFEST_FILE = "manifest.json"
CHECKPOINT_FILE = "model.ckpt"
FINAL_CHECKPOINT_FILE = "final.ckpt"
LOG_FILE = "train_log.csv"
METRICS_FILE = "metrics.json"

# keys a config file or manifest may set; everything else is a usage error
TRAIN_KEYS = (
    "data", "lexicon", "radical_dict", "fusion", "seed", "epochs", "lr", "batch_size", "hidden",
    "views", "biword", "gate_topk", "warmup_ratio", "weight_decay", "expert_input", "pooling",
    "debug_simplex",
)


class UsageError(ConfigError):
    pass


def _csv_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _views(text: str | Sequence[str]) -> list[str]:
    views = _csv_list(text) if isinstance(text, str) else list(text)
    bad = [v for v in views if v not in VIEW_ORDER]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown views {bad}; choose from {','.join(VIEW_ORDER)}")
    if not views:
        raise argparse.ArgumentTypeError("at least one view is required")
    return views


def _on_off(text: str | bool) -> bool:
    if isinstance(text, bool):
        return text
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# argument parsing


class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def _add_training_flags(p: argparse.ArgumentParser, with_fusion: bool = True) -> None:
    p.add_argument("--config", type=Path, default=None, help="TOML file of flag defaults (flags override it)")
    p.add_argument("--manifest", type=Path, default=None, help="re-run with the resolved settings of a previous run manifest")
    p.add_argument("--data", type=Path, default=None, help="directory holding train/dev[/test].jsonl")
    p.add_argument("--lexicon", type=Path, default=None, help=f"lexicon file (default: DATA/{LEXICON_FILE} if present)")
    p.add_argument("--radical-dict", type=Path, default=None, help=f"radical TSV (default: DATA/{RADICAL_FILE} if present)")
    if with_fusion:
        p.add_argument("--fusion", choices=FUSIONS, default="move", help="view fusion strategy")
    p.add_argument("--seed", type=int, default=0, help="seed for initialization and shuffling")
    p.add_argument("--epochs", type=int, default=50, help="training epochs")
    p.add_argument("--lr", type=float, default=1e-3, help="peak learning rate")
    p.add_argument("--batch-size", type=int, default=32, help="sentences per batch")
    p.add_argument("--hidden", type=int, default=100, help="LSTM hidden size per direction")
    p.add_argument("--views", type=_views, default=list(VIEW_ORDER), help="comma-separated subset of semantic,lexicon,radical")
    p.add_argument("--biword", type=_on_off, default=False, help="bigram channel in the semantic view {on|off}")
    p.add_argument("--gate-topk", type=int, default=None, help="keep only the top-k gate weights at evaluation (move only)")
    p.add_argument("--warmup-ratio", type=float, default=0.10, help="fraction of steps spent ramping up")
    p.add_argument("--weight-decay", type=float, default=0.01, help="decoupled AdamW decay")
    p.add_argument("--expert-input", choices=("full", "view"), default="full",
                   help="experts read all of h^m (full) or only their own view slice (view)")
    p.add_argument("--pooling", choices=("max", "mean"), default="max", help="sentence pooling")
    p.add_argument("--debug-simplex", action="store_true", help="audit every softmax output against the simplex")
    p.add_argument("--out", type=Path, required=False, default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multiview-re", description=__doc__, formatter_class=_Formatter)
    parser.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"), help="stderr log level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus with planted cues", formatter_class=_Formatter)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--sentences", type=int, default=200, help="total sentences over train/dev/test")
    p.add_argument("--relations", type=int, default=4, help="number of relation labels")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--signal", choices=SIGNALS, default="lexicon", help="view whose cue determines the label")
    p.add_argument("--noise-views", type=_csv_list, default=[], help="comma-separated views whose cues carry no label information")
    p.add_argument("--force", action="store_true", help="write into a non-empty directory")

    p = sub.add_parser("train", help="train one model", formatter_class=_Formatter)
    _add_training_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a JSON-lines file", formatter_class=_Formatter)
    p.add_argument("--checkpoint", type=Path, required=True, help="model checkpoint")
    p.add_argument("--data", type=Path, required=True, help="JSON-lines file, or a directory (uses --split)")
    p.add_argument("--split", choices=SPLITS, default="test", help="split read from a --data directory")
    p.add_argument("--gate-topk", type=int, default=None, help="sparsify the MoVE gate to the top-k experts")
    p.add_argument("--batch-size", type=int, default=32, help="sentences per batch")
    p.add_argument("--out", type=Path, default=None, help="directory for report.json and predictions.jsonl")

    p = sub.add_parser("ablate", help="full model plus one run per removed view", formatter_class=_Formatter)
    _add_training_flags(p)

    p = sub.add_parser("compare-fusion", help="train move, concat and attention on identical batches", formatter_class=_Formatter)
    _add_training_flags(p, with_fusion=False)
    p.add_argument("--strategies", type=_csv_list, default=list(FUSIONS), help="comma-separated fusion strategies")

    p = sub.add_parser("inspect-gates", help="per-token gate weights of a MoVE checkpoint", formatter_class=_Formatter)
    p.add_argument("--checkpoint", type=Path, required=True, help="MoVE checkpoint")
    p.add_argument("--data", type=Path, required=True, help="JSON-lines file")
    p.add_argument("--out", type=Path, required=True, help="CSV path")
    return parser


def _apply_file_defaults(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    """Parse twice: config/manifest values become defaults, explicit flags win."""
    args = parser.parse_args(argv)
    if args.command not in ("train", "ablate", "compare-fusion"):
        return args
    values: dict = {}
    if args.manifest is not None:
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        if not isinstance(manifest, dict) or "settings" not in manifest:
            raise UsageError(f"{args.manifest} is not a run manifest")
        values.update(manifest["settings"])
    if args.config is not None:
        with Path(args.config).open("rb") as fh:
            cfg = tomllib.load(fh)
        values.update({k.replace("-", "_"): v for k, v in cfg.items()})
    if not values:
        return args
    unknown = sorted(set(values) - set(TRAIN_KEYS) - {"strategies"})
    if unknown:
        raise UsageError(f"unknown settings {unknown}")
    sp = parser._subparsers._group_actions[0].choices[args.command]
    if "views" in values:
        values["views"] = _views(values["views"])
    if "biword" in values:
        values["biword"] = _on_off(values["biword"])
    sp.set_defaults(**{k: v for k, v in values.items() if k in {a.dest for a in sp._actions}})
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# resolution helpers


def _resolve_resources(args) -> tuple[Path | None, Path | None]:
    lex = args.lexicon
    rad = args.radical_dict
    if lex is None and "lexicon" in args.views and (args.data / LEXICON_FILE).exists():
        lex = args.data / LEXICON_FILE
    if rad is None and "radical" in args.views and (args.data / RADICAL_FILE).exists():
        rad = args.data / RADICAL_FILE
    if "lexicon" in args.views and lex is None:
        raise UsageError("the lexicon view needs --lexicon")
    if "radical" in args.views and rad is None:
        raise UsageError("the radical view needs --radical-dict")
    return lex, rad


def train_config_from_args(args, fusion: str | None = None) -> TrainConfig:
    model = ModelConfig(
        views=tuple(args.views),
        fusion=fusion or getattr(args, "fusion", "move"),
        hidden=args.hidden,
        biword=args.biword,
        expert_input=args.expert_input,
        pooling=args.pooling,
    )
    return TrainConfig(
        lr=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        warmup_ratio=args.warmup_ratio,
        weight_decay=args.weight_decay,
        seed=args.seed,
        debug_simplex=args.debug_simplex,
        model=model,
    )


def _settings(args) -> dict:
    out = {}
    for key in TRAIN_KEYS + ("strategies",):
        if hasattr(args, key):
            v = getattr(args, key)
            out[key] = str(v) if isinstance(v, Path) else v
    return out


def _check_topk(args, fusion: str) -> None:
    if args.gate_topk is None:
        return
    if fusion != "move":
        raise UsageError(f"--gate-topk only applies to --fusion move (got {fusion})")


def _prepare(args):
    if args.data is None:
        raise UsageError("--data is required")
    if args.out is None:
        raise UsageError("--out is required")
    lex_path, rad_path = _resolve_resources(args)
    splits = load_splits(args.data)
    lexicon = load_lexicon(lex_path) if lex_path else None
    radical = load_dictionary(rad_path) if rad_path else None
    inputs = {f"{s}.jsonl": args.data / f"{s}.jsonl" for s in SPLITS if (args.data / f"{s}.jsonl").exists()}
    if lex_path:
        inputs["lexicon"] = lex_path
    if rad_path:
        inputs["radical_dict"] = rad_path
    digests = {k: sha256_file(p) for k, p in inputs.items()}
    if args.manifest is not None:
        recorded = json.loads(Path(args.manifest).read_text(encoding="utf-8")).get("input_digests", {})
        changed = sorted(k for k in recorded if digests.get(k) != recorded[k])
        if changed:
            raise DataValidationError(f"inputs differ from the manifest: {changed}")
    args.out.mkdir(parents=True, exist_ok=True)
    return splits, lexicon, radical, digests


def write_manifest(args, cfg: TrainConfig, digests: dict, artifacts: dict) -> Path:
    manifest = {
        "tool_version": VERSION,
        "command": args.command,
        "seed": cfg.seed,
        "settings": _settings(args),
        "resolved_config": cfg.to_dict(),
        "input_digests": digests,
        "artifacts": artifacts,
    }
    path = args.out / MANIFEST_FILE
    _write_json(path, manifest)
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    out: Path = args.out
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"{out} is not empty; pass --force to write into it")
    corpus = synth_generate(args.sentences, args.relations, args.seed, args.signal, args.noise_views)
    write_corpus(corpus, out)
    acc = oracle_accuracy(corpus.splits["train"], corpus.cue_table, corpus.radical_dict)
    logger.info("wrote %s (split sizes %s, cue oracle accuracy %.3f)", out,
                {k: len(v) for k, v in corpus.splits.items()}, acc)
    return EXIT_OK


def cmd_train(args) -> int:
    _check_topk(args, args.fusion)
    cfg = train_config_from_args(args)
    splits, lexicon, radical, digests = _prepare(args)
    artifacts = {k: str(args.out / f) for k, f in (
        ("checkpoint", CHECKPOINT_FILE), ("final_checkpoint", FINAL_CHECKPOINT_FILE),
        ("log", LOG_FILE), ("metrics", METRICS_FILE))}
    write_manifest(args, cfg, digests, artifacts)
    result = train(cfg, splits["train"], splits.get("dev"), lexicon, radical)
    (args.out / CHECKPOINT_FILE).write_bytes(result.best_checkpoint)
    result.model.save(args.out / FINAL_CHECKPOINT_FILE, {"epoch": cfg.epochs})
    (args.out / LOG_FILE).write_text(result.log_csv(), encoding="utf-8")
    best = result.best_model()
    metrics: dict = {"best_epoch": result.best_epoch, "best": {}, "final": {}}
    for split, items in splits.items():
        metrics["best"][split] = evaluate(best, items, cfg.batch_size, args.gate_topk)[0].to_dict()
        metrics["final"][split] = evaluate(result.model, items, cfg.batch_size, args.gate_topk)[0].to_dict()
    if cfg.debug_simplex:
        metrics["simplex_audit"] = {"checks": result.simplex_checks, "max_deviation": result.simplex_max_deviation}
    _write_json(args.out / METRICS_FILE, metrics)
    dev = metrics["best"].get("dev")
    logger.info("best epoch %d, dev macro-F1 %s", result.best_epoch, f"{dev['macro']['f1']:.4f}" if dev else "n/a")
    return EXIT_OK


def _eval_items(args):
    path: Path = args.data
    return load_jsonl(path / f"{args.split}.jsonl" if path.is_dir() else path)


def cmd_eval(args) -> int:
    model = MultiViewModel.load(args.checkpoint)
    _check_topk(args, model.config.fusion)
    items = _eval_items(args)
    report, preds = evaluate(model, items, args.batch_size, args.gate_topk)
    result = {"report": report.to_dict(), "n": len(items), "gate_topk": args.gate_topk}
    if args.gate_topk is not None:
        _, dense = predict_dataset(model, items, args.batch_size)
        sparse = np.array([model.label_vocab.id(p.pred) for p in preds], dtype=np.int64)
        changed = np.flatnonzero(dense != sparse)
        result["changed_predictions"] = int(len(changed))
        result["changed_indices"] = changed.tolist()
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        _write_json(args.out / "report.json", result)
        with (args.out / "predictions.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
            for p in preds:
                fh.write(json.dumps(p.to_json(), ensure_ascii=False) + "\n")
    summary = {"macro_f1": report.macro_f1, "micro_f1": report.micro_f1}
    if "changed_predictions" in result:
        summary["changed_predictions"] = result["changed_predictions"]
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_ablate(args) -> int:
    _check_topk(args, args.fusion)
    if args.gate_topk is not None:
        raise UsageError("--gate-topk is an evaluation flag; use it with eval")
    cfg = train_config_from_args(args)
    splits, lexicon, radical, digests = _prepare(args)
    write_manifest(args, cfg, digests, {"report": str(args.out / "ablation.json"), "table": str(args.out / "ablation.txt")})
    rows = ablate_views(cfg, splits, lexicon, radical)
    _write_json(args.out / "ablation.json", {"rows": rows})
    table = ablation_table(rows, "test" if "test" in splits else "dev")
    (args.out / "ablation.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


def cmd_compare_fusion(args) -> int:
    if args.gate_topk is not None:
        raise UsageError("--gate-topk is an evaluation flag; use it with eval")
    bad = [s for s in args.strategies if s not in FUSIONS]
    if bad:
        raise UsageError(f"unknown strategies {bad}")
    cfg = train_config_from_args(args, fusion="move")
    splits, lexicon, radical, digests = _prepare(args)
    write_manifest(args, cfg, digests, {"report": str(args.out / "compare_fusion.json"),
                                        "loss_curves": str(args.out / "loss_curves.csv")})
    report = compare_fusion(cfg, splits, lexicon, radical, args.strategies)
    (args.out / "loss_curves.csv").write_text(report.pop("loss_curves_csv"), encoding="utf-8")
    _write_json(args.out / "compare_fusion.json", report)
    for name, run in report["runs"].items():
        dev = run.get("dev", {}).get("f1", float("nan"))
        print(f"{name:<10} dev macro-F1 {dev:.4f}  params {run['parameters']}  "
              f"{1000 * run['inference_seconds_per_batch']:.2f} ms/batch")
    print(f"seed audit {'passed' if report['seed_audit_passed'] else 'FAILED'}")
    return EXIT_OK


def cmd_inspect_gates(args) -> int:
    model = MultiViewModel.load(args.checkpoint)
    items = load_jsonl(args.data)
    rows = gate_rows(model, items)
    views = list(model.config.views)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with args.out.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sentence_id", "position", "char"] + [f"alpha_{v}" for v in views])
        for sid, pos, ch, alpha in rows:
            w.writerow([sid, pos, ch] + [repr(a) for a in alpha])
        mean = np.mean(np.array([r[3] for r in rows]), axis=0) if rows else np.zeros(len(views))
        w.writerow(["mean", "", ""] + [repr(float(m)) for m in mean])
    print(json.dumps({f"alpha_{v}": float(m) for v, m in zip(views, mean)}, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "compare-fusion": cmd_compare_fusion,
    "inspect-gates": cmd_inspect_gates,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_file_defaults(parser, argv)
        logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    except MultiViewError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        print(f"error: unreadable config or manifest: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
