"""Corpus ingestion and synthetic tasks."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from ..errors import ConfigurationError, CorpusIOError, EmptyInputError
from ..policy import TabularPolicy, TokenSequence, Vocab, beam_search, fit_mle

COPY_MARGIN = 10.0


def tokenize(line: str, tokenization: str) -> List[str]:
    if tokenization == "char":
        return list(line)
    if tokenization == "whitespace":
        return line.split()
    raise ConfigurationError(f"unknown tokenization {tokenization!r}")


def load_corpus(path, tokenization: str = "whitespace") -> Tuple[Vocab, List[TokenSequence]]:
    """One sequence per non-empty line; ids assigned by first occurrence after BOS/EOS."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusIOError(f"cannot read corpus {path}: {exc}") from exc
    lines = [tokenize(line, tokenization) for line in text.splitlines()]
    lines = [toks for toks in lines if toks]
    if not lines:
        raise EmptyInputError(f"corpus {path} has no usable lines")
    vocab = Vocab.build(s for toks in lines for s in toks)
    return vocab, [vocab.encode(toks) for toks in lines]


def is_heldout(index: int) -> bool:
    """Deterministic 90/10 split keyed on a hash of the item index."""
    return zlib.crc32(str(index).encode()) % 10 == 0


def split_heldout(items: Sequence[TokenSequence]) -> Tuple[List[TokenSequence], List[TokenSequence]]:
    train = [s for i, s in enumerate(items) if not is_heldout(i)]
    seen = set(train)
    held = [s for i, s in enumerate(items) if is_heldout(i) and s not in seen]
    return train, held


@dataclass
class Task:
    """Everything a run needs: the teacher, training inputs and held-out pairs."""

    vocab: Vocab
    teacher: TabularPolicy
    train_inputs: List[TokenSequence]
    heldout_inputs: List[TokenSequence]
    references: List[TokenSequence] = field(default_factory=list)


def synthetic_markov(vocab_size: int, order: int, seed: int, num_inputs: int = 100,
                     prompt_len: int = 2) -> Tuple[Vocab, TabularPolicy, List[TokenSequence]]:
    """Random order-k teacher with every logit drawn from uniform[-2, 2].

    ``vocab_size`` counts BOS and EOS. Inputs are distinct random conditionings
    of ``prompt_len`` content tokens.
    """
    if vocab_size < 3 or order < 0 or prompt_len < 1 or num_inputs < 1:
        raise ConfigurationError("synthetic_markov needs vocab_size >= 3, order >= 0, prompt_len >= 1, num_inputs >= 1")
    vocab = Vocab.build(f"w{i}" for i in range(vocab_size - 2))
    rng = np.random.default_rng(seed)
    teacher = TabularPolicy(vocab, order, trainable=False)
    teacher.weights[:] = rng.uniform(-2.0, 2.0, size=teacher.weights.shape)
    teacher.stored[:] = True
    content = np.arange(2, vocab_size)
    space = len(content) ** prompt_len
    n = min(num_inputs, space)
    if space <= 4 * n:
        picks = rng.permutation(space)[:n]
    else:
        picks = []
        seen = set()
        while len(picks) < n:
            x = int(rng.integers(space))
            if x not in seen:
                seen.add(x)
                picks.append(x)
    inputs = []
    for x in picks:
        digits = []
        for _ in range(prompt_len):
            x, d = divmod(int(x), len(content))
            digits.append(int(content[d]))
        inputs.append(tuple(digits))
    return vocab, teacher, inputs


def copy_task(vocab_size: int, length: int) -> Tuple[Vocab, TabularPolicy, List[TokenSequence]]:
    """Teacher that echoes its conditioning and then emits EOS.

    The teacher's order is ``2 * length`` so its context always spans the whole
    conditioning plus everything copied so far.
    """
    if vocab_size < 3 or length < 1:
        raise ConfigurationError("copy_task needs vocab_size >= 3 and length >= 1")
    vocab = Vocab.build(f"c{i}" for i in range(vocab_size - 2))
    order = 2 * length
    teacher = TabularPolicy(vocab, order, trainable=False)
    content = range(2, vocab_size)
    inputs = [tuple(c) for c in _product(content, length)]
    for cond in inputs:
        for j in range(length + 1):
            target = cond[j] if j < length else vocab.eos
            row = np.zeros(vocab.size)
            row[target] = COPY_MARGIN
            teacher.set_row(teacher.context_key(cond + cond[:j]), row)
    return vocab, teacher, inputs


def _product(alphabet, n):
    if n == 0:
        yield ()
        return
    for head in alphabet:
        for tail in _product(alphabet, n - 1):
            yield (head,) + tail


def build_task(spec, teacher_spec, seed: int, max_len: int, beam_width: int) -> Task:
    """Materialize a ``TaskSpec`` into a teacher plus train/held-out inputs."""
    kind = spec.kind
    task_seed = spec.seed if spec.seed is not None else seed
    if kind == "corpus":
        if not spec.path:
            raise ConfigurationError("corpus task needs a path")
        vocab, seqs = load_corpus(spec.path, spec.tokenization)
        seqs = list(dict.fromkeys(seqs))
        train, held = split_heldout(seqs)
        if not train or not held:
            raise EmptyInputError("corpus too small for a train/held-out split")
        if teacher_spec.path:
            from ..policy import load_policy
            teacher = load_policy(teacher_spec.path)
            if teacher.vocab != vocab:
                raise ConfigurationError("teacher model vocabulary does not match the corpus")
        else:
            teacher = fit_mle(vocab, teacher_spec.order, train, teacher_spec.smoothing)
        teacher.trainable = False
        p = spec.prompt_len
        train_inputs = [s[:p] for s in train if len(s) > p]
        pairs = [(s[:p], s[p:]) for s in held if len(s) > p]
        if not train_inputs or not pairs:
            raise EmptyInputError(f"no corpus line is longer than prompt_len={p}")
        return Task(vocab, teacher, train_inputs, [a for a, _ in pairs], [b for _, b in pairs])
    if kind == "synthetic_markov":
        vocab, teacher, inputs = synthetic_markov(spec.vocab_size, spec.order, task_seed,
                                                  spec.num_inputs, spec.prompt_len)
    elif kind == "copy_task":
        vocab, teacher, inputs = copy_task(spec.vocab_size, spec.length)
    else:
        raise ConfigurationError(f"unknown task kind {kind!r}")
    if teacher_spec.path:
        from ..policy import load_policy
        teacher = load_policy(teacher_spec.path)
        if teacher.vocab != vocab:
            raise ConfigurationError("teacher model vocabulary does not match the task")
        teacher.trainable = False
    train, held = split_heldout(inputs)
    if not train or not held:
        raise EmptyInputError("too few inputs for a train/held-out split")
    refs = []
    for c in held:
        y = beam_search(teacher, c, beam_width, max_len)
        refs.append(y[:-1] if y and y[-1] == vocab.eos else y)
    return Task(vocab, teacher, train, held, refs)
