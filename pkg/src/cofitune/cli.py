"""``cofitune`` command line.

Precedence: built-in defaults < ``--config`` JSON file < command-line flags.
Every command exits 0 on success; on failure it prints a single line
``error: <Kind>: <message>`` to stderr and exits 1.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import SuiteSizes, generate_suite, load_suite, save_suite
from .errors import BadScope, CofiError, ConfigError
from .evaluation import evaluate
from .methods import CLI_METHODS, run_method
from .metrics import EmbeddingProvider, ScoreBreakdown
from .model import EMBED_ID
from .schemas import validate
from .search import SearchState, coarse_search, search_report, write_best_config, write_search_csv
from .pipeline import make_search_evaluator, pretrain_base
from .softmask import compute_importance, default_scope, modules_for_scope, normalize_importance
from .trainer import TuningScope, write_log


def _write_json(path: Path, obj: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _load_cfg(args) -> RunConfig:
    cfg = RunConfig.load(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "data", None):
        cfg = cfg.replace(data_dir=args.data)
    if getattr(args, "out", None):
        cfg = cfg.replace(out_dir=args.out)
    return cfg


def parse_sizes(text: str | None, base: SuiteSizes) -> SuiteSizes:
    """``spec_train=100,facts=20`` -> SuiteSizes with those fields replaced."""
    if not text:
        return base
    kw = {}
    for part in text.split(","):
        k, _, v = part.partition("=")
        if k.strip() not in SuiteSizes.__dataclass_fields__ or not v.strip().isdigit():
            raise ConfigError(f"bad --sizes entry {part!r}")
        kw[k.strip()] = int(v)
    return replace(base, **kw)


def resolve_scope(text: str | None) -> TuningScope | None:
    """``a:b:MODS`` or ``@file.json`` (a search best-config file)."""
    if text is None:
        return None
    if text.startswith("@"):
        try:
            d = json.loads(Path(text[1:]).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise BadScope(f"cannot read scope file {text[1:]}: {e}") from None
        if "scope" not in d:
            raise BadScope(f"{text[1:]} has no 'scope' entry")
        text = d["scope"]
    return TuningScope.parse(text)


def eval_report(kind: str, params, suite, cfg: RunConfig, checkpoint: str, embeddings=None) -> dict:
    res = evaluate(params, suite, cfg.eval, embeddings)
    return {
        "kind": kind,
        "config_hash": cfg.hash(),
        "checkpoint": checkpoint,
        "scores": res.scores.to_dict(),
        "eval_options": cfg.eval.to_dict(),
        "details": res.details,
    }


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    sizes = parse_sizes(args.sizes, cfg.sizes)
    suite = generate_suite(cfg.seed, sizes, cfg.task)
    written = save_suite(suite, cfg.data_dir)
    for name, path in written.items():
        print(f"{name}\t{path}")
    return 0


def cmd_pretrain(args) -> int:
    if args.resume:
        raise ConfigError("pretraining is single-shot; --resume is not supported")
    cfg = _load_cfg(args)
    suite = load_suite(cfg.data_dir)
    params, log = pretrain_base(suite, cfg.model, cfg.pretrain, cfg.seed, cfg.pretrain_dropout)
    out = Path(cfg.out_dir)
    ckpt = save_checkpoint(params, out / "base.coft")
    write_log(log, out / "pretrain_log.jsonl")
    print(f"checkpoint\t{ckpt}")
    return 0


def cmd_sft(args) -> int:
    cfg = _load_cfg(args)
    train_cfg = cfg.train
    if args.alpha is not None:
        train_cfg = replace(train_cfg, wiseft_alpha=args.alpha)
    if args.rank is not None:
        train_cfg = replace(train_cfg, lora_rank=args.rank)
    if args.l1 is not None:
        train_cfg = replace(train_cfg, l1_strength=args.l1)
    if args.l2 is not None:
        train_cfg = replace(train_cfg, l2_strength=args.l2)
    train_cfg = replace(train_cfg, seed=cfg.seed)
    cfg = cfg.replace(train=train_cfg)
    scope = resolve_scope(args.scope)
    base_path = args.base or str(Path(cfg.out_dir) / "base.coft")
    base = load_checkpoint(base_path)
    suite = load_suite(cfg.data_dir)
    run = run_method(args.method, base, suite.speciality_train, train_cfg, scope, use_mask=not args.no_mask)
    out = Path(args.run_dir or Path(cfg.out_dir) / run.method)
    ckpt = save_checkpoint(run.params, out / "model.coft")
    write_log(run.log, out / "train_log.jsonl")
    if run.masks is not None:
        run.masks.save(out / "importance.json")
    report = eval_report("sft", run.params, suite, cfg, str(ckpt), EmbeddingProvider(base[EMBED_ID]))
    report.update(method=run.method, scope=None if run.scope is None else str(run.scope),
                  train_config=train_cfg.to_dict(), steps=len(run.log),
                  final_loss=run.log[-1]["loss"] if run.log else None)
    validate(report, "sft")
    _write_json(out / "report.json", report)
    s = run_scores(report)
    print(f"{run.method}\tspec={s.spec:.4f}\tvers={s.vers:.4f}\tuni={s.uni:.4f}")
    return 0


def run_scores(report: dict) -> ScoreBreakdown:
    return ScoreBreakdown.from_dict(report["scores"])


def cmd_search(args) -> int:
    cfg = _load_cfg(args)
    base = load_checkpoint(args.base or str(Path(cfg.out_dir) / "base.coft"))
    suite = load_suite(cfg.data_dir)
    evaluator = make_search_evaluator(base, suite, replace(cfg.train, seed=cfg.seed), cfg.eval, cfg.seed)
    result = coarse_search(base.config.num_layers, evaluator, SearchState(base.config.num_layers))
    out = Path(cfg.out_dir) / "search"
    report = search_report(result, {"config_hash": cfg.hash()})
    validate(report, "search")
    _write_json(out / "search.json", report)
    write_search_csv(result, out / "search.csv")
    write_best_config(result, out / "best.json")
    b = result.best
    print(f"best\t{b.candidate.key()}\tuni={b.uni:.4f}\tevaluations={result.state.calls}")
    return 0


def cmd_importance(args) -> int:
    cfg = _load_cfg(args)
    base = load_checkpoint(args.base or str(Path(cfg.out_dir) / "base.coft"))
    suite = load_suite(cfg.data_dir)
    scope = resolve_scope(args.scope) or default_scope(base.config.num_layers)
    raw = compute_importance(base, suite.speciality_train[: cfg.train.importance_samples],
                             cfg.train.importance_dropout, modules_for_scope(scope), cfg.seed)
    raw.scope = str(scope)
    masks = normalize_importance(raw)
    report = masks.to_json()
    report["config_hash"] = cfg.hash()
    validate(report, "importance")
    path = Path(args.output or Path(cfg.out_dir) / "importance.json")
    _write_json(path, report)
    print(f"importance\t{path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    params = load_checkpoint(args.checkpoint)
    suite = load_suite(args.suite or cfg.data_dir)
    emb = EmbeddingProvider(load_checkpoint(args.embed_ref)[EMBED_ID]) if args.embed_ref else None
    report = eval_report("eval", params, suite, cfg, args.checkpoint, emb)
    validate(report, "eval")
    out = Path(args.output or Path(args.checkpoint).with_suffix(".eval.json"))
    _write_json(out, report)
    scores = run_scores(report)
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(scores.csv_header())
            w.writerow(["" if v is None else f"{v:.4f}" for v in scores.csv_row()])
    print(f"eval\tspec={scores.spec:.4f}\tvers={scores.vers:.4f}\tuni={scores.uni:.4f}\t{out}")
    return 0


REPORT_COLUMNS = ["method", "Spec", "Vers", "Uni", "Uni-wo-instruct"]


def collect_reports(runs_dir: str | Path) -> dict[str, dict]:
    found = {}
    for p in sorted(Path(runs_dir).glob("*/report.json")):
        d = json.loads(p.read_text())
        if d.get("kind") == "sft":
            found[d["method"]] = d
    return found


def comparison_rows(found: dict[str, dict], methods=CLI_METHODS) -> list[list[str]]:
    rows = []
    for m in sorted(set(methods) | set(found)):
        if m not in found:
            rows.append([m, "", "", "", ""])
            continue
        s = found[m]["scores"]
        rows.append([m, f"{s['spec']:.4f}", f"{s['vers']:.4f}", f"{s['spec'] + s['vers']:.4f}",
                     f"{s['uni_wo_instruct']:.4f}"])
    return rows


def cmd_report(args) -> int:
    found = collect_reports(args.runs)
    rows = comparison_rows(found)
    out = Path(args.output or Path(args.runs) / "comparison.csv")
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        w.writerows(rows)
    for r in rows:
        print("\t".join(r))
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cofitune", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run config (flags override its values)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--data", help="dataset directory")
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("gen-data", help="write the synthetic task suite")
    common(sp)
    sp.add_argument("--sizes", help="comma list, e.g. spec_train=120,facts=20")
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("pretrain", help="train the base model on the versatility mixture")
    common(sp)
    sp.add_argument("--resume", action="store_true", help="not supported; pretraining is single-shot")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("sft", help="fine-tune the base model on the speciality task")
    common(sp)
    sp.add_argument("--method", required=True, choices=CLI_METHODS)
    sp.add_argument("--scope", help="a:b:MODS (e.g. 2:4:FFN) or @best.json; cofitune only")
    sp.add_argument("--alpha", type=float, help="Wise-FT interpolation weight")
    sp.add_argument("--rank", type=int, help="LoRA rank (4, 8 or 16)")
    sp.add_argument("--l1", type=float, help="L1 strength")
    sp.add_argument("--l2", type=float, help="L2 strength")
    sp.add_argument("--no-mask", action="store_true", help="cofitune without the soft mask")
    sp.add_argument("--base", help="base checkpoint (default <out>/base.coft)")
    sp.add_argument("--run-dir", help="where to write this run (default <out>/<method>)")
    sp.set_defaults(func=cmd_sft)

    sp = sub.add_parser("search", help="coarse search over layer ranges and modules")
    common(sp)
    sp.add_argument("--base")
    sp.set_defaults(func=cmd_search)

    sp = sub.add_parser("importance", help="unit importances for a scope")
    common(sp)
    sp.add_argument("--scope")
    sp.add_argument("--base")
    sp.add_argument("--output")
    sp.set_defaults(func=cmd_importance)

    sp = sub.add_parser("eval", help="score a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--suite", help="dataset directory (default from config)")
    sp.add_argument("--embed-ref", help="checkpoint whose embeddings drive the embedding-match F1")
    sp.add_argument("--output")
    sp.add_argument("--csv", help="also write a one-row CSV")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("report", help="methods x {Spec, Vers, Uni} table from sft runs")
    sp.add_argument("--runs", required=True)
    sp.add_argument("--output")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CofiError, OSError, ValueError, KeyError) as e:
        kind = type(e).__name__
        msg = str(e).replace("\n", " ")
        print(f"error: {kind}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
