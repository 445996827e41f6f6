"""Full pipeline: teacher, pre-distillation, per-method distillation, evaluation.

All methods branch from one pre-distilled student snapshot. Every artifact
carries the config hash and seed; with equal configs the outputs are
byte-identical.
"""
from __future__ import annotations

import json
import logging
import math
import os
import shutil
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .. import __version__
from ..distill import METHODS, TrainReport, contexts_along, pre_distill, run_training
from ..errors import ConfigurationError, CorpusIOError, EmptyInputError, LLMRError
from ..metrics import (
    DEFAULT_MAX_STATES,
    ExposureBiasReport,
    corpus_bleu,
    corpus_rouge,
    distinct_n,
    exerror_csv,
    exerror_sweep,
)
from ..policy import TabularPolicy, beam_search, greedy_decode, policy_to_dict, sample_batch
from ..reward import path_rewards
from .config import EvalSpec, ExperimentConfig
from .data import Task, build_task

log = logging.getLogger(__name__)

UNDEFINED = "undefined"
MARKER = ".llmr-output"
ROW_ORDER = ("teacher", "pre-distilled") + METHODS


class ExperimentError(LLMRError):
    """A pipeline stage failed; ``exit_code`` follows the underlying cause."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)


def stage_seed(seed: int, tag: str) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(tag.encode())]).generate_state(1)[0])


def _finite_or_undefined(x):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return UNDEFINED
    return x


@dataclass
class ExperimentResult:
    rows: Dict[str, dict]
    exerror: Dict[str, List[ExposureBiasReport]]
    reports: Dict[str, TrainReport] = field(repr=False)
    models: Dict[str, TabularPolicy] = field(repr=False)
    config: dict
    config_hash: str
    seed: int
    version: str = __version__

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "exerror_files": {name: f"exerror/{name}.csv" for name in self.exerror},
            "train_reports": {name: f"train/{name}.jsonl" for name in self.reports},
            "config": self.config,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "version": self.version,
        }


def decode(policy: TabularPolicy, conditioning, spec: EvalSpec, rng) -> tuple:
    if spec.decode == "beam":
        y = beam_search(policy, conditioning, spec.beam_width, spec.max_len)
    elif spec.decode == "greedy":
        y = greedy_decode(policy, conditioning, spec.max_len)
    else:
        tokens, lengths = sample_batch(policy, [conditioning], spec.max_len, rng)
        y = tuple(int(t) for t in tokens[0, : lengths[0]])
    eos = policy.vocab.eos
    return y[:-1] if y and y[-1] == eos else y


def mean_induced_reward(model, teacher, inputs, samples, max_len, seed):
    """Monte-Carlo E_{y ~ model}[R(y)] over inputs, with its standard error."""
    rng = np.random.default_rng(seed)
    conds = [c for c in inputs for _ in range(samples)]
    tokens, lengths = sample_batch(model, conds, max_len, rng)
    t_ctx = contexts_along(teacher, conds, tokens, lengths)
    totals = path_rewards(teacher, t_ctx, tokens, lengths).sum(axis=1)
    return float(totals.mean()), float(totals.std(ddof=1) / math.sqrt(len(totals)))


def _exerror_mode(teacher, model, spec: EvalSpec) -> str:
    if spec.exerror_mode != "auto":
        return "exact" if spec.exerror_mode == "exact" else "mc"
    states = teacher.vocab.radix ** max(teacher.order, model.order)
    return "exact" if states <= DEFAULT_MAX_STATES else "mc"


def evaluate_model(model: TabularPolicy, task: Task, spec: EvalSpec, seed: int):
    """Metric row plus ExError sweep for one model on the held-out inputs."""
    teacher = task.teacher
    rng = np.random.default_rng(stage_seed(seed, "decode"))
    hyps = [decode(model, c, spec, rng) for c in task.heldout_inputs]
    row: dict = {}
    for n in spec.bleu_orders:
        row[f"bleu{n}"] = corpus_bleu(hyps, task.references, n)
    for variant, name in (("R1", "rouge1"), ("R2", "rouge2"), ("RL", "rougeL")):
        try:
            row[name] = corpus_rouge(hyps, task.references, variant)[2]
        except EmptyInputError:
            row[name] = UNDEFINED
    for n in spec.distinct_orders:
        try:
            row[f"distinct{n}"] = distinct_n(hyps, n)
        except EmptyInputError:
            row[f"distinct{n}"] = UNDEFINED
    mean, se = mean_induced_reward(model, teacher, task.heldout_inputs, spec.reward_samples,
                                    spec.max_len, stage_seed(seed, "reward"))
    row["mean_reward"] = mean
    row["mean_reward_se"] = se
    mode = _exerror_mode(teacher, model, spec)
    reports = exerror_sweep(teacher, model, task.heldout_inputs, spec.exerror_max_length, mode,
                            spec.samples, np.random.default_rng(stage_seed(seed, "exerror")))
    row["exerror_mode"] = mode
    row["exerror_pct"] = [_finite_or_undefined(r.exerror_pct) for r in reports]
    row["generations"] = [list(map(int, h)) for h in hyps]
    return {k: _finite_or_undefined(v) for k, v in row.items()}, reports


def train_methods(config: ExperimentConfig, task: Task, methods=None):
    """Pre-distill once, then train each method from a copy of that snapshot."""
    methods = config.methods if methods is None else methods
    reports: Dict[str, TrainReport] = {}
    models: Dict[str, TabularPolicy] = {}
    if not methods:
        return models, reports
    stage = "pre_distill"
    try:
        student = TabularPolicy(task.vocab, config.student.order)
        pre_cfg = config.pre_distill
        pre_cfg = type(pre_cfg)(**{**pre_cfg.to_dict(), "seed": stage_seed(config.seed, stage)})
        reports["pre_distill"] = pre_distill(student, task.teacher, task.train_inputs, pre_cfg,
                                             task.heldout_inputs)
        snapshot = student.copy()
        models["pre-distilled"] = snapshot
        for method in [m for m in METHODS if m in methods]:
            stage = f"train:{method}"
            log.info("training %s", method)
            cfg = config.method_config(method, seed=stage_seed(config.seed, stage))
            s = snapshot.copy()
            reports[method] = run_training(s, task.teacher, task.train_inputs, cfg, task.heldout_inputs)
            models[method] = s
    except LLMRError as exc:
        raise ExperimentError(stage, exc) from exc
    return models, reports


def run_experiment(config: ExperimentConfig, write: bool = True) -> ExperimentResult:
    config.validate()
    stage = "task"
    try:
        task = build_task(config.task, config.teacher, config.seed, config.eval.max_len, config.eval.beam_width)
    except LLMRError as exc:
        raise ExperimentError(stage, exc) from exc
    models, reports = train_methods(config, task)
    models = {"teacher": task.teacher, **models}
    rows: Dict[str, dict] = {}
    exerror: Dict[str, List[ExposureBiasReport]] = {}
    for name in [n for n in ROW_ORDER if n in models]:
        stage = f"evaluate:{name}"
        try:
            rows[name], exerror[name] = evaluate_model(models[name], task, config.eval, config.seed)
        except LLMRError as exc:
            raise ExperimentError(stage, exc) from exc
    result = ExperimentResult(rows, exerror, reports, models, config.to_dict(include_output=False),
                              config.config_hash(), config.seed)
    if write:
        write_result(result, Path(config.output_dir))
    return result


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_artifacts(out: Path, files: Dict[str, str]) -> None:
    """Write ``files`` (relative path -> text) into a scratch directory, then move it into place.

    On failure the scratch directory is removed, so no partial outputs remain.
    An existing directory is only replaced if it holds a previous result.
    """
    out = Path(out)
    if out.exists() and (not out.is_dir() or (any(out.iterdir()) and not (out / MARKER).exists())):
        raise ExperimentError("write", ConfigurationError(f"{out} exists and is not an output directory of this tool"))
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.parent / f".{out.name}.partial-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    try:
        for rel, text in {**files, MARKER: ""}.items():
            path = tmp / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
        if out.exists():
            shutil.rmtree(out)
        os.replace(tmp, out)
    except OSError as exc:
        shutil.rmtree(tmp, ignore_errors=True)
        raise ExperimentError("write", CorpusIOError(str(exc))) from exc
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def model_files(models: Dict[str, TabularPolicy], reports: Dict[str, TrainReport], meta: dict) -> Dict[str, str]:
    files = {f"models/{name}.json": _dump(policy_to_dict(m, meta)) for name, m in models.items()}
    files.update({f"train/{name}.jsonl": rep.to_jsonl(meta) for name, rep in reports.items()})
    return files


def write_result(result: ExperimentResult, out: Path) -> None:
    meta = {"config_hash": result.config_hash, "seed": result.seed}
    files = {"result.json": _dump(result.to_dict())}
    comment = f"config_hash={result.config_hash} seed={result.seed}"
    for name, reps in result.exerror.items():
        files[f"exerror/{name}.csv"] = exerror_csv(reps, comment)
    files.update(model_files(result.models, result.reports, meta))
    write_artifacts(out, files)
