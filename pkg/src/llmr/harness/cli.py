"""Command-line entry point: ``llmr <subcommand> [options]``.

Exit codes: 0 success, 1 failed check, 2 configuration error, 3 capacity
error, 4 numeric error, 5 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from ..distill import METHODS
from ..errors import CorpusIOError, EmptyInputError, LLMRError
from ..metrics import distinct_n, exerror_csv, exerror_sweep
from ..policy import load_policy, require_shared_vocab
from .config import ExperimentConfig, load_config
from .data import build_task, tokenize
from .experiment import (
    ExperimentError,
    _dump,
    evaluate_model,
    model_files,
    run_experiment,
    stage_seed,
    train_methods,
    write_artifacts,
)
from .verify import run_checks

log = logging.getLogger("llmr")


def _config(args) -> ExperimentConfig:
    overrides = {
        "seed": getattr(args, "seed", None),
        "output_dir": getattr(args, "out", None),
        "exerror_mode": getattr(args, "mode", None),
        "samples": getattr(args, "samples", None),
    }
    methods = getattr(args, "method", None)
    if methods:
        overrides["methods"] = methods if isinstance(methods, list) else [methods]
    return load_config(args.config, overrides)


def _task(cfg: ExperimentConfig):
    try:
        return build_task(cfg.task, cfg.teacher, cfg.seed, cfg.eval.max_len, cfg.eval.beam_width)
    except LLMRError as exc:
        raise ExperimentError("task", exc) from exc


def _write_text(path: Optional[str], text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CorpusIOError(f"cannot write {path}: {exc}") from exc


def cmd_train(args) -> int:
    cfg = _config(args)
    task = _task(cfg)
    models, reports = train_methods(cfg, task, [args.method])
    models = {"teacher": task.teacher, **models}
    meta = {"config_hash": cfg.config_hash(), "seed": cfg.seed}
    files = model_files(models, reports, meta)
    files["config.json"] = _dump(cfg.to_dict(include_output=False))
    write_artifacts(Path(cfg.output_dir), files)
    last = reports[args.method].records[-1] if reports[args.method].records else None
    if last is not None:
        print(f"{args.method}: {len(reports[args.method].records)} steps, final objective {last.objective:.6g}")
    print(f"wrote {cfg.output_dir}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    task = _task(cfg)
    rows = {}
    for path in args.model:
        model = load_policy(path)
        require_shared_vocab(model, task.teacher)
        row, _ = evaluate_model(model, task, cfg.eval, cfg.seed)
        rows[Path(path).stem] = row
    text = _dump({"rows": rows, "config_hash": cfg.config_hash(), "seed": cfg.seed})
    _write_text(args.out, text)
    return 0


def cmd_exerror(args) -> int:
    cfg = _config(args)
    task = _task(cfg)
    model = load_policy(args.model)
    require_shared_vocab(model, task.teacher)
    mode = "exact" if cfg.eval.exerror_mode in ("auto", "exact") else "mc"
    rng = np.random.default_rng(stage_seed(cfg.seed, "exerror"))
    reports = exerror_sweep(task.teacher, model, task.heldout_inputs, args.max_length or cfg.eval.exerror_max_length,
                            mode, cfg.eval.samples, rng)
    _write_text(args.out, exerror_csv(reports, f"config_hash={cfg.config_hash()} seed={cfg.seed}"))
    return 0


def cmd_distinct(args) -> int:
    try:
        text = Path(args.input).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusIOError(f"cannot read {args.input}: {exc}") from exc
    outputs = [tokenize(line, args.tokenization) for line in text.splitlines()]
    ids: dict = {}
    seqs = [tuple(ids.setdefault(tok, len(ids)) for tok in toks) for toks in outputs]
    values = {}
    for n in args.n:
        try:
            values[f"distinct{n}"] = distinct_n(seqs, n)
        except EmptyInputError:
            values[f"distinct{n}"] = "undefined"
    print(json.dumps(values, sort_keys=True))
    return 0


def cmd_experiment(args) -> int:
    cfg = _config(args)
    result = run_experiment(cfg, write=True)
    for name, row in result.rows.items():
        cells = " ".join(f"{k}={_fmt(row[k])}" for k in ("bleu2", "rougeL", "distinct2", "mean_reward") if k in row)
        print(f"{name:14s} {cells}")
    print(f"wrote {cfg.output_dir}")
    return 0


def _fmt(v) -> str:
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def cmd_verify(args) -> int:
    results = run_checks(args.seed if args.seed is not None else 0)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="llmr", description="Distillation with a teacher-induced reward.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, method=False, multi_method=False):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--mode", choices=["exact", "mc"], help="ExError computation")
        p.add_argument("--samples", type=int, help="Monte-Carlo samples per input")
        if method:
            p.add_argument("--method", choices=METHODS, required=True)
        if multi_method:
            p.add_argument("--method", choices=METHODS, action="append",
                           help="restrict to these methods (repeatable)")
        return p

    common(sub.add_parser("train", help="pre-distill and train one method"), method=True).set_defaults(fn=cmd_train)
    p = common(sub.add_parser("evaluate", help="metrics for saved models on held-out inputs"))
    p.add_argument("--model", action="append", required=True, help="model JSON (repeatable)")
    p.set_defaults(fn=cmd_evaluate)
    p = common(sub.add_parser("exerror", help="ExError%% length sweep as CSV"))
    p.add_argument("--model", required=True)
    p.add_argument("--max-length", type=int)
    p.set_defaults(fn=cmd_exerror)
    p = sub.add_parser("distinct", help="Distinct-n of a file of generations, one per line")
    p.add_argument("input")
    p.add_argument("-n", type=int, action="append", help="n-gram order (repeatable, default 1 and 2)")
    p.add_argument("--tokenization", choices=["whitespace", "char"], default="whitespace")
    p.set_defaults(fn=cmd_distinct)
    common(sub.add_parser("experiment", help="full pipeline"), multi_method=True).set_defaults(fn=cmd_experiment)
    p = sub.add_parser("verify", help="oracle cross-checks")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_verify)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "distinct" and not args.n:
        args.n = [1, 2]
    try:
        return args.fn(args)
    except LLMRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
