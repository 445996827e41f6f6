"""Order-k tabular autoregressive policies over a shared vocabulary.

One class plays both roles in distillation: the teacher whose logits are read
as q-values, and the trainable student. Logits live in a dense
``(radix**order, V)`` table; a ``stored`` mask marks the rows that were set
explicitly, every other row holds ``default_logits``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .errors import (
    CapacityError,
    ConfigurationError,
    CorpusIOError,
    EmptyInputError,
    EmptySequenceError,
    InvalidTokenError,
    NotTrainableError,
    NumericError,
)

TokenSequence = Tuple[int, ...]

KEY_SEPARATOR = "\x1f"
LOGIT_FLOOR = -1e9
MAX_TABLE_ENTRIES = 1 << 25


@dataclass(frozen=True)
class Vocab:
    """Bijective id <-> string table.

    ``bos`` and ``eos`` are optional so that bare two-symbol toys can be
    written down. Without a BOS symbol, contexts are left-padded with a
    virtual id ``V`` that no model can emit.
    """

    tokens: Tuple[str, ...]
    bos: Optional[int] = None
    eos: Optional[int] = None
    index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tokens = tuple(self.tokens)
        object.__setattr__(self, "tokens", tokens)
        if len(tokens) < 2:
            raise ConfigurationError("a vocabulary needs at least two symbols")
        if any(not isinstance(t, str) or t == "" for t in tokens):
            raise ConfigurationError("vocabulary symbols must be non-empty strings")
        if len(set(tokens)) != len(tokens):
            raise ConfigurationError("vocabulary symbols must be unique")
        for name in ("bos", "eos"):
            tid = getattr(self, name)
            if tid is not None and not 0 <= tid < len(tokens):
                raise ConfigurationError(f"{name} id {tid} outside [0, {len(tokens)})")
        if self.bos is not None and self.bos == self.eos:
            raise ConfigurationError("BOS and EOS must be distinct")
        object.__setattr__(self, "index", {t: i for i, t in enumerate(tokens)})

    @classmethod
    def build(cls, symbols: Iterable[str], bos: str = "<s>", eos: str = "</s>") -> "Vocab":
        """BOS gets id 0, EOS id 1, then ``symbols`` in order of first appearance."""
        ordered = list(dict.fromkeys(s for s in symbols if s not in (bos, eos)))
        return cls(tuple([bos, eos] + ordered), bos=0, eos=1)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self):
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self.bos if self.bos is not None else len(self.tokens)

    @property
    def radix(self) -> int:
        """Alphabet size of context keys (V, plus one for a virtual pad)."""
        return len(self.tokens) + (0 if self.bos is not None else 1)

    @property
    def eos_or_none(self) -> int:
        return -1 if self.eos is None else self.eos

    def encode(self, symbols: Iterable[str]) -> TokenSequence:
        try:
            return tuple(self.index[s] for s in symbols)
        except KeyError as exc:
            raise InvalidTokenError(f"unknown symbol {exc.args[0]!r}") from None

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self.tokens[i] for i in self.validate(ids)]

    def validate(self, ids: Iterable[int]) -> TokenSequence:
        out = tuple(int(i) for i in ids)
        V = len(self.tokens)
        for i in out:
            if not 0 <= i < V:
                raise InvalidTokenError(f"token id {i} outside [0, {V})")
        return out

    def pad_symbol(self) -> str:
        return self.tokens[self.bos] if self.bos is not None else ""


@dataclass(frozen=True)
class GenerationState:
    """MDP state: conditioning input plus the tokens generated so far."""

    conditioning: TokenSequence = ()
    prefix: TokenSequence = ()

    def append(self, token: int) -> "GenerationState":
        return GenerationState(self.conditioning, self.prefix + (int(token),))

    @property
    def tokens(self) -> TokenSequence:
        return tuple(self.conditioning) + tuple(self.prefix)


class TabularPolicy:
    """Context-indexed logit table of order ``k``.

    The context of a state is the last ``k`` tokens of conditioning + prefix,
    left-padded with BOS (or the virtual pad when the vocab has no BOS).
    """

    def __init__(self, vocab: Vocab, order: int, table=None, default_logits=None,
                 trainable: bool = True):
        if order < 0:
            raise ConfigurationError("order must be >= 0")
        self.vocab = vocab
        self.order = int(order)
        self.trainable = bool(trainable)
        V = vocab.size
        n_ctx = vocab.radix ** self.order
        if n_ctx * V > MAX_TABLE_ENTRIES:
            raise CapacityError(
                f"dense table of {n_ctx} contexts x {V} tokens exceeds {MAX_TABLE_ENTRIES} entries"
            )
        default = np.zeros(V) if default_logits is None else np.asarray(default_logits, dtype=np.float64)
        if default.shape != (V,) or not np.all(np.isfinite(default)):
            raise ConfigurationError("default logits must be a finite vector of length V")
        self.default_logits = default.copy()
        self.weights = np.tile(self.default_logits, (n_ctx, 1))
        self.stored = np.zeros(n_ctx, dtype=bool)
        for key, values in (table or {}).items():
            self.set_row(key, values)

    @property
    def n_ctx(self) -> int:
        return self.weights.shape[0]

    @property
    def V(self) -> int:
        return self.vocab.size

    def __repr__(self):
        return (f"TabularPolicy(V={self.V}, order={self.order}, "
                f"stored={int(self.stored.sum())}, trainable={self.trainable})")

    # context bookkeeping

    def context_key(self, tokens: Sequence[int]) -> Tuple[int, ...]:
        if self.order == 0:
            return ()
        tokens = self.vocab.validate(tokens)
        padded = (self.vocab.pad_id,) * self.order + tokens
        return padded[-self.order:]

    def key_to_index(self, key: Sequence[int]) -> int:
        key = tuple(int(t) for t in key)
        if len(key) != self.order:
            raise ConfigurationError(f"context key {key} does not have length {self.order}")
        idx = 0
        for t in key:
            if not 0 <= t < self.vocab.radix:
                raise InvalidTokenError(f"context token {t} outside [0, {self.vocab.radix})")
            idx = idx * self.vocab.radix + t
        return idx

    def index_to_key(self, index: int) -> Tuple[int, ...]:
        key = []
        for _ in range(self.order):
            index, t = divmod(index, self.vocab.radix)
            key.append(t)
        return tuple(reversed(key))

    def context_index(self, tokens: Sequence[int]) -> int:
        return self.key_to_index(self.context_key(tokens))

    def state_index(self, state: GenerationState) -> int:
        return self.context_index(state.tokens)

    # table access

    def logits(self, state: GenerationState) -> np.ndarray:
        return self.weights[self.state_index(state)].copy()

    def row(self, key: Sequence[int]) -> np.ndarray:
        return self.weights[self.key_to_index(key)]

    def set_row(self, key: Sequence[int], values) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.V,) or not np.all(np.isfinite(values)):
            raise ConfigurationError(f"logits for context {tuple(key)} must be {self.V} finite reals")
        idx = self.key_to_index(key)
        self.weights[idx] = values
        self.stored[idx] = True

    @property
    def table(self) -> Dict[Tuple[int, ...], np.ndarray]:
        return {self.index_to_key(i): self.weights[i].copy() for i in np.flatnonzero(self.stored)}

    def copy(self, trainable: Optional[bool] = None) -> "TabularPolicy":
        out = TabularPolicy.__new__(TabularPolicy)
        out.vocab = self.vocab
        out.order = self.order
        out.trainable = self.trainable if trainable is None else bool(trainable)
        out.default_logits = self.default_logits.copy()
        out.weights = self.weights.copy()
        out.stored = self.stored.copy()
        return out

    def same_values(self, other: "TabularPolicy") -> bool:
        return (self.vocab == other.vocab and self.order == other.order
                and np.array_equal(self.weights, other.weights))


def require_shared_vocab(*policies: TabularPolicy) -> Vocab:
    vocab = policies[0].vocab
    for p in policies[1:]:
        if p.vocab != vocab:
            raise ConfigurationError("teacher and student must share one vocabulary")
    return vocab


class ParamGrad:
    """Gradient over table logits, non-zero only on visited contexts.

    Backed by a dense array plus a visited-context mask; iteration yields only
    the ``((context key, token), value)`` entries of visited contexts.
    """

    def __init__(self, vocab: Vocab, order: int, values=None, visited=None):
        self.vocab = vocab
        self.order = order
        n_ctx = vocab.radix ** order
        self.values = np.zeros((n_ctx, vocab.size)) if values is None else values
        self.visited = np.zeros(n_ctx, dtype=bool) if visited is None else visited

    @classmethod
    def zeros_like(cls, policy: TabularPolicy) -> "ParamGrad":
        return cls(policy.vocab, policy.order)

    def _key_index(self, key) -> int:
        idx = 0
        for t in key:
            idx = idx * self.vocab.radix + int(t)
        return idx

    def _index_key(self, index) -> Tuple[int, ...]:
        key = []
        for _ in range(self.order):
            index, t = divmod(index, self.vocab.radix)
            key.append(t)
        return tuple(reversed(key))

    def __getitem__(self, item) -> float:
        key, token = item
        idx = self._key_index(key)
        if len(tuple(key)) != self.order or not self.visited[idx]:
            raise KeyError(item)
        return float(self.values[idx, token])

    def get(self, item, default=0.0) -> float:
        try:
            return self[item]
        except KeyError:
            return default

    def rows(self) -> Dict[Tuple[int, ...], np.ndarray]:
        return {self._index_key(i): self.values[i].copy() for i in np.flatnonzero(self.visited)}

    def items(self):
        for i in np.flatnonzero(self.visited):
            key = self._index_key(i)
            for v in range(self.vocab.size):
                yield (key, v), float(self.values[i, v])

    def __len__(self):
        return int(self.visited.sum()) * self.vocab.size

    def _compatible(self, other: "ParamGrad"):
        if other.vocab != self.vocab or other.order != self.order:
            raise ConfigurationError("gradients belong to differently shaped policies")

    def __add__(self, other: "ParamGrad") -> "ParamGrad":
        self._compatible(other)
        return ParamGrad(self.vocab, self.order, self.values + other.values,
                         self.visited | other.visited)

    def __mul__(self, scalar: float) -> "ParamGrad":
        return ParamGrad(self.vocab, self.order, self.values * float(scalar), self.visited.copy())

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "ParamGrad":
        return self * (1.0 / float(scalar))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values[self.visited])))

    def max_abs(self) -> float:
        return float(np.abs(self.values).max()) if self.values.size else 0.0


def _log_softmax_row(z: np.ndarray) -> np.ndarray:
    m = z.max()
    return z - (m + np.log(np.exp(z - m).sum()))


def next_token_distribution(policy: TabularPolicy, state: GenerationState) -> np.ndarray:
    return np.exp(_log_softmax_row(policy.logits(state)))


def greedy_decode(policy: TabularPolicy, conditioning: Sequence[int], max_len: int,
                  stop_at_eos: bool = True) -> TokenSequence:
    out: List[int] = []
    idx = policy.context_index(conditioning)
    eos = policy.vocab.eos_or_none if stop_at_eos else -1
    for _ in range(max_len):
        tok = int(np.argmax(policy.weights[idx]))
        out.append(tok)
        idx = (idx * policy.vocab.radix + tok) % policy.n_ctx
        if tok == eos:
            break
    return tuple(out)


def start_contexts(policy: TabularPolicy, conditionings: Sequence[Sequence[int]]) -> np.ndarray:
    return np.array([policy.context_index(c) for c in conditionings], dtype=np.int64)


def sample_batch(policy: TabularPolicy, conditionings: Sequence[Sequence[int]], max_len: int,
                 rng: np.random.Generator, stop_at_eos: bool = True):
    """Sample one path per conditioning. Returns padded ``(tokens, lengths)``.

    Draws exactly ``len(conditionings) * max_len`` uniforms from ``rng``.
    """
    if max_len < 1:
        raise ConfigurationError("max_len must be >= 1")
    start = start_contexts(policy, conditionings)
    uniforms = rng.random((len(start), max_len))
    eos = policy.vocab.eos_or_none if stop_at_eos else -1
    return kernels.sample_paths(policy.weights, policy.n_ctx, policy.vocab.radix, start, uniforms, eos)


def sample_sequence(policy: TabularPolicy, conditioning: Sequence[int], max_len: int,
                    rng: np.random.Generator, stop_at_eos: bool = True) -> TokenSequence:
    tokens, lengths = sample_batch(policy, [conditioning], max_len, rng, stop_at_eos)
    return tuple(int(t) for t in tokens[0, : lengths[0]])


def sequence_log_prob(policy: TabularPolicy, conditioning: Sequence[int], y: Sequence[int]) -> float:
    y = policy.vocab.validate(y)
    if not y:
        raise EmptySequenceError("cannot score an empty sequence")
    idx = policy.context_index(conditioning)
    total = 0.0
    for tok in y:
        total += float(_log_softmax_row(policy.weights[idx])[tok])
        idx = (idx * policy.vocab.radix + tok) % policy.n_ctx
    return total


def beam_search(policy: TabularPolicy, conditioning: Sequence[int], beam_width: int,
                max_len: int, stop_at_eos: bool = True) -> TokenSequence:
    """Length-synchronous beam search on summed log-probabilities.

    Candidates are ranked by score, ties by the token tuple (lowest ids
    first). Candidates ending in EOS leave the beam and are kept as finished.
    """
    if beam_width < 1 or max_len < 1:
        raise ConfigurationError("beam_width and max_len must be >= 1")
    radix, n_ctx = policy.vocab.radix, policy.n_ctx
    eos = policy.vocab.eos_or_none if stop_at_eos else -1
    beams = [(0.0, (), policy.context_index(conditioning))]
    finished: List[Tuple[float, TokenSequence]] = []
    for step in range(max_len):
        candidates = []
        for score, toks, idx in beams:
            logq = _log_softmax_row(policy.weights[idx])
            for v in range(policy.V):
                candidates.append((score + float(logq[v]), toks + (v,), (idx * radix + v) % n_ctx))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        beams = []
        for cand in candidates[:beam_width]:
            if cand[1][-1] == eos or step == max_len - 1:
                finished.append((cand[0], cand[1]))
            else:
                beams.append(cand)
        if not beams:
            break
    finished.sort(key=lambda c: (-c[0], c[1]))
    return finished[0][1]


def log_prob_gradient(policy: TabularPolicy, conditioning: Sequence[int], y: Sequence[int]) -> ParamGrad:
    """Exact gradient of ``sequence_log_prob`` with respect to every table logit."""
    if not policy.trainable:
        raise NotTrainableError("gradient requested for a frozen policy")
    y = policy.vocab.validate(y)
    if not y:
        raise EmptySequenceError("cannot differentiate an empty sequence")
    grad = ParamGrad.zeros_like(policy)
    tokens = np.array([y], dtype=np.int64)
    lengths = np.array([len(y)], dtype=np.int64)
    start = np.array([policy.context_index(conditioning)], dtype=np.int64)
    ctx = kernels.path_contexts(tokens, lengths, start, policy.vocab.radix, policy.n_ctx)
    kernels.logprob_grad(policy.weights, ctx, tokens, lengths, np.ones((1, len(y))),
                         grad.values, grad.visited)
    return grad


def sgd_update(policy: TabularPolicy, grad: ParamGrad, learning_rate: float) -> TabularPolicy:
    """In-place ascent step ``logit += learning_rate * grad`` on visited contexts."""
    if not policy.trainable:
        raise NotTrainableError("cannot update a frozen policy")
    if grad.vocab != policy.vocab or grad.order != policy.order:
        raise ConfigurationError("gradient shape does not match the policy")
    if learning_rate < 0 or not np.isfinite(learning_rate):
        raise ConfigurationError("learning rate must be a finite non-negative real")
    if not grad.is_finite():
        raise NumericError("non-finite gradient entries")
    rows = grad.visited
    policy.weights[rows] += learning_rate * grad.values[rows]
    if not np.all(np.isfinite(policy.weights[rows])):
        raise NumericError("update produced non-finite logits")
    policy.stored |= rows
    return policy


def fit_mle(vocab: Vocab, order: int, corpus: Sequence[Sequence[int]], smoothing: float = 0.0,
            append_eos: bool = True, trainable: bool = False) -> TabularPolicy:
    """Smoothed maximum-likelihood n-gram table.

    Each corpus sequence is read from an empty conditioning (all-pad context)
    and, when the vocab has EOS and ``append_eos`` is set, closed by EOS.
    Observed contexts get ``log((count + eps) / (total + V * eps))``; with
    ``eps == 0`` unseen continuations get the finite floor ``LOGIT_FLOOR``
    instead of ``-inf``. Unobserved contexts keep the uniform default.
    """
    if not corpus:
        raise EmptyInputError("cannot fit a model on an empty corpus")
    if smoothing < 0:
        raise ConfigurationError("smoothing must be >= 0")
    policy = TabularPolicy(vocab, order, trainable=True)
    counts = np.zeros_like(policy.weights)
    radix, n_ctx = vocab.radix, policy.n_ctx
    start = policy.context_index(())
    for seq in corpus:
        seq = vocab.validate(seq)
        if append_eos and vocab.eos is not None and (not seq or seq[-1] != vocab.eos):
            seq = seq + (vocab.eos,)
        idx = start
        for tok in seq:
            counts[idx, tok] += 1.0
            idx = (idx * radix + tok) % n_ctx
    seen = counts.sum(axis=1) > 0
    c = counts[seen] + smoothing
    with np.errstate(divide="ignore"):
        logits = np.log(c) - np.log(c.sum(axis=1, keepdims=True))
    logits[~np.isfinite(logits)] = LOGIT_FLOOR
    policy.weights[seen] = logits
    policy.stored[:] = seen
    policy.trainable = trainable
    return policy


# serialization

def policy_to_dict(policy: TabularPolicy, meta: Optional[dict] = None) -> dict:
    vocab = policy.vocab

    def symbol(t: int) -> str:
        return vocab.tokens[t] if t < vocab.size else vocab.pad_symbol()

    table = {}
    for i in np.flatnonzero(policy.stored):
        key = KEY_SEPARATOR.join(symbol(t) for t in policy.index_to_key(int(i)))
        table[key] = [float(x) for x in policy.weights[i]]
    doc = {
        "vocab": list(vocab.tokens),
        "bos": vocab.bos,
        "eos": vocab.eos,
        "order": policy.order,
        "default_logits": [float(x) for x in policy.default_logits],
        "table": table,
        "trainable": policy.trainable,
    }
    if meta:
        doc["meta"] = meta
    return doc


def policy_from_dict(doc: dict) -> TabularPolicy:
    try:
        vocab = Vocab(tuple(doc["vocab"]), bos=doc.get("bos"), eos=doc.get("eos"))
        order = int(doc["order"])
        policy = TabularPolicy(vocab, order, default_logits=doc["default_logits"],
                               trainable=bool(doc.get("trainable", True)))
        for key, values in doc["table"].items():
            if order == 0:
                if key != "":
                    raise ConfigurationError(f"order-0 model with non-empty context key {key!r}")
                ids: Tuple[int, ...] = ()
            else:
                parts = key.split(KEY_SEPARATOR)
                ids = tuple(vocab.pad_id if s == "" else vocab.index[s] for s in parts)
            policy.set_row(ids, values)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"malformed model document: {exc}") from None
    return policy


def save_policy(policy: TabularPolicy, path, meta: Optional[dict] = None) -> None:
    text = json.dumps(policy_to_dict(policy, meta), sort_keys=True, allow_nan=False)
    try:
        Path(path).write_text(text + "\n", encoding="utf-8")
    except OSError as exc:
        raise CorpusIOError(f"cannot write model to {path}: {exc}") from exc


def load_policy(path) -> TabularPolicy:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CorpusIOError(f"cannot read model {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"model {path} is not valid JSON: {exc}") from exc
    return policy_from_dict(doc)
