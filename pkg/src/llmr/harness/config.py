"""Experiment configuration: JSON file, CLI overrides, defaults."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional

from ..distill import METHODS, TrainConfig
from ..errors import ConfigurationError, CorpusIOError


@dataclass
class TaskSpec:
    kind: str = "synthetic_markov"
    path: Optional[str] = None
    tokenization: str = "whitespace"
    vocab_size: int = 12
    order: int = 2
    length: int = 3
    num_inputs: int = 100
    prompt_len: int = 2
    seed: Optional[int] = None


@dataclass
class TeacherSpec:
    order: int = 2
    smoothing: float = 0.1
    path: Optional[str] = None


@dataclass
class StudentSpec:
    order: int = 1


@dataclass
class EvalSpec:
    max_len: int = 16
    decode: str = "beam"
    beam_width: int = 4
    bleu_orders: List[int] = field(default_factory=lambda: [2, 4])
    distinct_orders: List[int] = field(default_factory=lambda: [1, 2])
    exerror_max_length: int = 16
    exerror_mode: str = "auto"
    samples: int = 500
    reward_samples: int = 200


def _default_pre_distill() -> TrainConfig:
    return TrainConfig(method="SeqKD", steps=300, batch_size=16, learning_rate=0.5)


def _default_train() -> TrainConfig:
    return TrainConfig(steps=10000, batch_size=16, learning_rate=0.5)


def _default_overrides() -> Dict[str, dict]:
    # REINFORCE steps are noisier than the f-divergence ones; a smaller rate
    # gave the highest induced reward on tuning seeds disjoint from any test seed.
    return {"LLMR": {"learning_rate": 0.3}}


@dataclass
class ExperimentConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    teacher: TeacherSpec = field(default_factory=TeacherSpec)
    student: StudentSpec = field(default_factory=StudentSpec)
    pre_distill: TrainConfig = field(default_factory=_default_pre_distill)
    train: TrainConfig = field(default_factory=_default_train)
    methods: List[str] = field(default_factory=lambda: list(METHODS))
    method_overrides: Dict[str, dict] = field(default_factory=_default_overrides)
    eval: EvalSpec = field(default_factory=EvalSpec)
    output_dir: str = "runs/experiment"
    seed: int = 0

    def validate(self) -> "ExperimentConfig":
        for m in self.methods:
            if m not in METHODS:
                raise ConfigurationError(f"unknown method {m!r}; expected one of {METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigurationError("methods must not repeat")
        for m, over in self.method_overrides.items():
            if m not in METHODS:
                raise ConfigurationError(f"override for unknown method {m!r}")
            self.method_config(m)
        self.pre_distill.validate()
        self.train.validate()
        if self.eval.decode not in ("beam", "greedy", "sample"):
            raise ConfigurationError(f"unknown decode strategy {self.eval.decode!r}")
        if self.eval.exerror_mode not in ("auto", "exact", "mc"):
            raise ConfigurationError(f"unknown ExError mode {self.eval.exerror_mode!r}")
        if self.task.kind == "corpus" and self.task.path and not Path(self.task.path).exists():
            raise CorpusIOError(f"corpus {self.task.path} does not exist")
        if self.teacher.path and not Path(self.teacher.path).exists():
            raise CorpusIOError(f"teacher model {self.teacher.path} does not exist")
        return self

    def method_config(self, method: str, seed: Optional[int] = None) -> TrainConfig:
        d = {**self.train.to_dict(), **self.method_overrides.get(method, {}), "method": method}
        if seed is not None:
            d["seed"] = seed
        return TrainConfig.from_dict(d)

    def to_dict(self, include_output: bool = True) -> dict:
        d = asdict(self)
        if not include_output:
            d.pop("output_dir")
        return d

    def config_hash(self) -> str:
        """Digest of everything that determines results (the output location is excluded)."""
        text = json.dumps(self.to_dict(include_output=False), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


_SECTIONS = {"task": TaskSpec, "teacher": TeacherSpec, "student": StudentSpec, "eval": EvalSpec}


def _build(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigurationError(f"section {where!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown keys in {where!r}: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigurationError(f"bad section {where!r}: {exc}") from None


def config_from_dict(d: dict) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown top-level keys: {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in d:
            kwargs[name] = _build(cls, d[name], name)
    if "pre_distill" in d:
        kwargs["pre_distill"] = TrainConfig.from_dict({**_default_pre_distill().to_dict(), **d["pre_distill"]})
    if "train" in d:
        kwargs["train"] = TrainConfig.from_dict({**_default_train().to_dict(), **d["train"]})
    for name in ("methods", "method_overrides", "output_dir", "seed"):
        if name in d:
            kwargs[name] = d[name]
    return ExperimentConfig(**kwargs)


def load_config(path=None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Defaults, then the JSON file at ``path``, then ``overrides`` (CLI)."""
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise CorpusIOError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigurationError("config root must be a JSON object")
    cfg = config_from_dict(doc)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "seed":
            cfg.seed = int(value)
        elif key == "output_dir":
            cfg.output_dir = str(value)
        elif key == "methods":
            cfg.methods = list(value)
        elif key == "exerror_mode":
            cfg.eval.exerror_mode = value
        elif key == "samples":
            cfg.eval.samples = int(value)
        else:
            raise ConfigurationError(f"unsupported override {key!r}")
    return cfg.validate()
