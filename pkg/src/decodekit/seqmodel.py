"""Locally-normalized sequence models and exact scoring utilities.

Sequences are tuples of token ids that start with BOS. A terminated sequence
ends with EOS; a truncated one (generation budget exhausted) does not. BOS is
a context-only symbol: every next-token distribution assigns it zero mass, so
the predictable vocabulary is ``V ∪ {EOS}`` and has ``len(vocab) - 1`` entries.

All log-probabilities use the natural logarithm.
"""

from __future__ import annotations

import abc
import functools
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import (
    EmptyCorpusError,
    EmptySequenceError,
    EnumerationTooLargeError,
    InvalidParameterError,
    MissingDistributionError,
    SerializationError,
    TerminatedPrefixError,
    UnknownTokenError,
)

FORMAT_VERSION = 1
NORMALIZATION_TOL = 1e-9
ENUMERATION_GUARD = 10**7

Context = tuple  # tuple[int, ...]; empty for unconditional generation
TokenLike = Union[int, str]


def _logp(p: float) -> float:
    return math.log(p) if p > 0.0 else -math.inf


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple
    bos_id: int
    eos_id: int
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tokens = tuple(self.tokens)
        object.__setattr__(self, "tokens", tokens)
        index = {tok: i for i, tok in enumerate(tokens)}
        if len(index) != len(tokens):
            raise InvalidParameterError("vocabulary tokens must be unique")
        for name in ("bos_id", "eos_id"):
            if not 0 <= getattr(self, name) < len(tokens):
                raise InvalidParameterError(f"{name} out of range")
        if self.bos_id == self.eos_id:
            raise InvalidParameterError("BOS and EOS must be distinct tokens")
        object.__setattr__(self, "_index", index)

    @classmethod
    def build(cls, words: Iterable[str], bos: str = "<s>", eos: str = "</s>") -> "Vocabulary":
        """BOS gets id 0, EOS id 1, remaining words follow in sorted order."""
        rest = sorted(set(words) - {bos, eos})
        return cls((bos, eos, *rest), 0, 1)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token) -> bool:
        return token in self._index

    @property
    def bos(self) -> str:
        return self.tokens[self.bos_id]

    @property
    def eos(self) -> str:
        return self.tokens[self.eos_id]

    @property
    def predictable_size(self) -> int:
        """|V ∪ {EOS}|, i.e. everything except BOS."""
        return len(self.tokens) - 1

    def id(self, token: TokenLike) -> int:
        if isinstance(token, (int, np.integer)) and not isinstance(token, bool):
            if 0 <= token < len(self.tokens):
                return int(token)
            raise UnknownTokenError(f"token id {token} outside vocabulary of size {len(self)}")
        try:
            return self._index[token]
        except KeyError:
            raise UnknownTokenError(f"unknown token {token!r}") from None

    def encode(self, tokens: Iterable[TokenLike]) -> tuple:
        return tuple(self.id(t) for t in tokens)

    def decode(self, ids: Iterable[int]) -> tuple:
        return tuple(self.tokens[i] for i in ids)

    def content(self, ids: Sequence[int]) -> tuple:
        """Token strings of a sequence with BOS/EOS stripped."""
        return tuple(self.tokens[i] for i in ids if i != self.bos_id and i != self.eos_id)

    def to_json(self) -> dict:
        return {"tokens": list(self.tokens), "bos_id": self.bos_id, "eos_id": self.eos_id}

    @classmethod
    def from_json(cls, doc: Mapping) -> "Vocabulary":
        return cls(tuple(doc["tokens"]), int(doc["bos_id"]), int(doc["eos_id"]))


class TokenDistribution:
    """Normalized probability vector over token ids (read-only)."""

    __slots__ = ("probs",)

    def __init__(self, probs, *, validate: bool = True):
        arr = np.array(probs, dtype=np.float64)
        if validate:
            if arr.ndim != 1 or arr.size == 0:
                raise InvalidParameterError("distribution must be a non-empty vector")
            if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
                raise InvalidParameterError("probabilities must lie in [0, 1]")
            total = float(arr.sum())
            if abs(total - 1.0) > NORMALIZATION_TOL:
                raise InvalidParameterError(f"probabilities sum to {total!r}, not 1")
        arr.setflags(write=False)
        self.probs = arr

    @classmethod
    def from_mapping(cls, vocab: Vocabulary, mapping: Mapping[TokenLike, float]) -> "TokenDistribution":
        arr = np.zeros(len(vocab))
        for tok, p in mapping.items():
            arr[vocab.id(tok)] = p
        return cls(arr)

    def __getitem__(self, token_id: int) -> float:
        return float(self.probs[token_id])

    def __len__(self) -> int:
        return self.probs.size

    def __eq__(self, other) -> bool:
        return isinstance(other, TokenDistribution) and np.array_equal(self.probs, other.probs)

    def __repr__(self) -> str:
        nz = {int(i): round(float(self.probs[i]), 6) for i in self.support()}
        return f"TokenDistribution({nz})"

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.probs > 0.0)

    def as_dict(self, vocab: Vocabulary | None = None) -> dict:
        ids = self.support()
        if vocab is None:
            return {int(i): float(self.probs[i]) for i in ids}
        return {vocab.tokens[i]: float(self.probs[i]) for i in ids}


@dataclass(frozen=True)
class GenerationBudget:
    """Maximum number of generated tokens (EOS included, BOS excluded)."""

    max_len: int

    def __post_init__(self):
        if int(self.max_len) != self.max_len or self.max_len < 1:
            raise InvalidParameterError(f"max_len must be a positive integer, got {self.max_len!r}")


def _max_len(budget) -> int:
    return budget.max_len if isinstance(budget, GenerationBudget) else int(budget)


class SequenceModel(abc.ABC):
    """Conditional next-token distribution p(. | x, y<t).

    Implementations must be pure: the distribution depends only on the
    ``(context, prefix)`` pair, so repeated calls replay identically and the
    model can be shared read-only between workers.
    """

    vocab: Vocabulary

    @abc.abstractmethod
    def _probs(self, context: tuple, prefix: tuple) -> np.ndarray:
        """Probability vector for a validated, non-terminated prefix."""

    def next_distribution(self, context: Sequence[int], prefix: Sequence[int]) -> TokenDistribution:
        context = tuple(context)
        prefix = tuple(prefix)
        self._check_prefix(prefix)
        dist = TokenDistribution(self._probs(context, prefix))
        if len(dist) != len(self.vocab) or dist.probs[self.vocab.bos_id] != 0.0:
            raise InvalidParameterError("model produced a distribution inconsistent with its vocabulary")
        return dist

    def _check_prefix(self, prefix: tuple) -> None:
        vocab = self.vocab
        if not prefix or prefix[0] != vocab.bos_id:
            raise InvalidParameterError("prefix must start with BOS")
        if prefix[-1] == vocab.eos_id or vocab.eos_id in prefix:
            raise TerminatedPrefixError("prefix already terminated with EOS")
        n = len(vocab)
        for tok in prefix:
            if not 0 <= tok < n:
                raise UnknownTokenError(f"token id {tok} outside vocabulary")


def next_distribution(model: SequenceModel, context: Sequence[int], prefix: Sequence[int]) -> TokenDistribution:
    return model.next_distribution(context, prefix)


def _as_probs(vocab: Vocabulary, spec) -> np.ndarray:
    if isinstance(spec, TokenDistribution):
        arr = np.array(spec.probs)
    elif isinstance(spec, Mapping):
        arr = TokenDistribution.from_mapping(vocab, spec).probs.copy()
    else:
        arr = np.array(spec, dtype=np.float64)
    TokenDistribution(arr)
    if arr.size != len(vocab):
        raise InvalidParameterError(f"distribution has {arr.size} entries, vocabulary has {len(vocab)}")
    if arr[vocab.bos_id] != 0.0:
        raise InvalidParameterError("BOS must have zero probability")
    arr.setflags(write=False)
    return arr


class TableModel(SequenceModel):
    """Explicit lookup table from (context, prefix) to a distribution.

    ``entries`` keys are ``(context, prefix)`` pairs of id tuples; values are
    probability vectors, ``TokenDistribution`` objects or ``{token: p}``
    mappings. Unlisted prefixes use ``default`` if given.
    """

    def __init__(self, vocab: Vocabulary, entries: Mapping, default=None):
        self.vocab = vocab
        self._entries = {
            (tuple(ctx), tuple(prefix)): _as_probs(vocab, spec) for (ctx, prefix), spec in entries.items()
        }
        self._default = None if default is None else _as_probs(vocab, default)

    @classmethod
    def from_prefixes(cls, vocab: Vocabulary, entries: Mapping, default=None) -> "TableModel":
        """Context-free table keyed by prefixes; prefixes may be token strings."""
        return cls(vocab, {((), vocab.encode(p)): d for p, d in entries.items()}, default)

    def _probs(self, context, prefix):
        try:
            return self._entries[(context, prefix)]
        except KeyError:
            if self._default is None:
                raise MissingDistributionError(f"no distribution for context={context} prefix={prefix}") from None
            return self._default

    def to_json(self) -> dict:
        tokens = self.vocab.tokens

        def dense(arr):
            return {tokens[i]: float(arr[i]) for i in np.flatnonzero(arr > 0)}

        entries = [
            {"context": list(self.vocab.decode(c)), "prefix": list(self.vocab.decode(p)), "probs": dense(arr)}
            for (c, p), arr in sorted(self._entries.items())
        ]
        return {
            "version": FORMAT_VERSION,
            "vocabulary": self.vocab.to_json(),
            "entries": entries,
            "default": None if self._default is None else dense(self._default),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "TableModel":
        _check_version(doc)
        vocab = Vocabulary.from_json(doc["vocabulary"])
        entries = {(vocab.encode(e["context"]), vocab.encode(e["prefix"])): e["probs"] for e in doc["entries"]}
        return cls(vocab, entries, doc.get("default"))


class NGramModel(SequenceModel):
    """Additively smoothed n-gram model.

    p(w | c) = (count(c, w) + k) / (count(c, .) + k * |V ∪ {EOS}|). Histories
    never observed in training fall back to the smoothed unigram distribution.
    The history of a prefix is the last ``order - 1`` tokens of
    ``BOS^(order-1) + context + prefix[1:]``, so a context acts as a
    conditioning prompt.
    """

    def __init__(self, vocab: Vocabulary, order: int, counts: Mapping, smoothing_k: float = 0.0):
        if order < 1:
            raise InvalidParameterError("order must be >= 1")
        if smoothing_k < 0:
            raise InvalidParameterError("smoothing_k must be >= 0")
        self.vocab = vocab
        self.order = int(order)
        self.smoothing_k = float(smoothing_k)
        self.counts = {}
        unigram = Counter()
        for hist, table in counts.items():
            hist = tuple(hist)
            if len(hist) != self.order - 1:
                raise InvalidParameterError(f"history {hist} does not have length {self.order - 1}")
            table = {int(t): int(c) for t, c in table.items() if c}
            if any(t == vocab.bos_id for t in table):
                raise InvalidParameterError("BOS can never be a predicted token")
            if table:
                self.counts[hist] = table
                unigram.update(table)
        if not self.counts:
            raise EmptyCorpusError("n-gram model has no counts")
        self._tables = {h: self._pack(t) for h, t in self.counts.items()}
        self._unigram = self._pack(unigram)
        self._cached = functools.lru_cache(maxsize=4096)(self._compute)

    @staticmethod
    def _pack(table: Mapping[int, int]):
        ids = np.array(sorted(table), dtype=np.int64)
        vals = np.array([table[i] for i in ids.tolist()], dtype=np.float64)
        return ids, vals, float(vals.sum())

    def history(self, context: tuple, prefix: tuple) -> tuple:
        if self.order == 1:
            return ()
        full = (self.vocab.bos_id,) * (self.order - 1) + tuple(context) + tuple(prefix[1:])
        return full[-(self.order - 1):]

    def _compute(self, hist: tuple) -> np.ndarray:
        ids, vals, total = self._tables.get(hist, self._unigram)
        k = self.smoothing_k
        arr = np.full(len(self.vocab), k)
        arr[self.vocab.bos_id] = 0.0
        arr[ids] += vals
        arr /= total + k * self.vocab.predictable_size
        arr.setflags(write=False)
        return arr

    def _probs(self, context, prefix):
        return self._cached(self.history(context, prefix))

    def to_json(self) -> dict:
        tokens = self.vocab.tokens
        counts = [
            [[tokens[i] for i in hist], {tokens[t]: c for t, c in sorted(table.items())}]
            for hist, table in sorted(self.counts.items())
        ]
        return {
            "version": FORMAT_VERSION,
            "order": self.order,
            "smoothing_k": self.smoothing_k,
            "vocabulary": self.vocab.to_json(),
            "counts": counts,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "NGramModel":
        _check_version(doc)
        vocab = Vocabulary.from_json(doc["vocabulary"])
        counts = {vocab.encode(h): {vocab.id(t): c for t, c in table.items()} for h, table in doc["counts"]}
        return cls(vocab, doc["order"], counts, doc["smoothing_k"])


def _check_version(doc: Mapping) -> None:
    if doc.get("version") != FORMAT_VERSION:
        raise SerializationError(f"unsupported model document version {doc.get('version')!r}")


def train_ngram(
    corpus: Sequence,
    order: int,
    smoothing_k: float = 0.0,
    vocab: Vocabulary | None = None,
) -> NGramModel:
    """Count n-grams over ``corpus`` (token lists or whitespace-split strings).

    Every training sequence is wrapped as BOS ... EOS, contributing exactly
    one EOS event; BOS only ever appears in histories.
    """
    if order < 1:
        raise InvalidParameterError("order must be >= 1")
    if smoothing_k < 0:
        raise InvalidParameterError("smoothing_k must be >= 0")
    seqs = [s.split() if isinstance(s, str) else list(s) for s in corpus]
    if not seqs:
        raise EmptyCorpusError("cannot train on an empty corpus")
    if vocab is None:
        vocab = Vocabulary.build(w for s in seqs for w in s)
    pad = (vocab.bos_id,) * (order - 1)
    counts: dict = defaultdict(Counter)
    for s in seqs:
        ids = pad + vocab.encode(s) + (vocab.eos_id,)
        for i in range(order - 1, len(ids)):
            counts[ids[i - order + 1 : i]][ids[i]] += 1
    return NGramModel(vocab, order, counts, smoothing_k)


def load_model(path) -> SequenceModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if "order" in doc:
        return NGramModel.from_json(doc)
    if "entries" in doc:
        return TableModel.from_json(doc)
    raise SerializationError(f"{path}: not a recognised model document")


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model.to_json(), ensure_ascii=False) + "\n", encoding="utf-8")


def _coerce_sequence(model: SequenceModel, sequence) -> tuple:
    return model.vocab.encode(sequence)


def sequence_log_prob(model: SequenceModel, context, sequence, truncated: bool = False) -> float:
    """Sum of ln p(y_t | x, y<t) over every token after BOS.

    ``sequence`` must end in EOS unless ``truncated`` is set, in which case
    the missing EOS term is simply absent.
    """
    seq = _coerce_sequence(model, sequence)
    context = tuple(context)
    vocab = model.vocab
    if not seq or seq[0] != vocab.bos_id:
        raise InvalidParameterError("sequence must start with BOS")
    if seq[-1] != vocab.eos_id and not truncated and len(seq) > 1:
        raise InvalidParameterError("sequence does not end with EOS; pass truncated=True to score it")
    lp = 0.0
    for t in range(1, len(seq)):
        lp += _logp(float(model.next_distribution(context, seq[:t]).probs[seq[t]]))
    return lp


def normalized_log_prob(model: SequenceModel, context, sequence, truncated: bool = False) -> float:
    seq = _coerce_sequence(model, sequence)
    if len(seq) < 2:
        raise EmptySequenceError("sequence has no scored tokens")
    return sequence_log_prob(model, context, seq, truncated) / (len(seq) - 1)


def perplexity(model: SequenceModel, context, sequence, truncated: bool = False) -> float:
    return math.exp(-normalized_log_prob(model, context, sequence, truncated))


def enumerate_sequences(
    model: SequenceModel,
    context,
    budget,
    include_truncated: bool = False,
    guard: int = ENUMERATION_GUARD,
) -> list:
    """Every positive-probability EOS-terminated sequence within the budget.

    Returns ``(sequence, log_prob)`` pairs in lexicographic id order.
    With ``include_truncated`` the list also holds the length-``max_len``
    paths that never emitted EOS. Raises once more than ``guard`` nodes
    would be expanded.
    """
    max_len = _max_len(budget)
    context = tuple(context)
    vocab = model.vocab
    out = []
    expanded = 0

    def visit(prefix, lp):
        nonlocal expanded
        probs = model.next_distribution(context, prefix).probs
        for tok in np.flatnonzero(probs > 0.0).tolist():
            expanded += 1
            if expanded > guard:
                raise EnumerationTooLargeError(f"enumeration exceeds {guard} nodes")
            seq = prefix + (tok,)
            score = lp + _logp(float(probs[tok]))
            if tok == vocab.eos_id:
                out.append((seq, score))
            elif len(seq) - 1 >= max_len:
                if include_truncated:
                    out.append((seq, score))
            else:
                visit(seq, score)

    if max_len > 0:
        visit((vocab.bos_id,), 0.0)
    return out
