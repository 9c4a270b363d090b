"""Lexical quality and diversity metrics over token sequences.

Inputs are sequences of token strings (BOS/EOS already stripped). BLEU is
reported on a 0-100 scale; the diversity metrics keep their natural scales
(ratios in [0, 1], entropies in nats).
"""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    InsufficientSamplesError,
    InvalidParameterError,
    InvalidReferenceError,
    InvalidSetError,
    UndefinedMetricError,
)

log = logging.getLogger(__name__)

DIVERSITY_ORDERS = (1, 2, 3, 4, 5)
SET_SIZE = 10
BEAM_KINDS = frozenset({"beam", "diverse_beam"})
SAMPLING_KINDS = frozenset({"ancestral", "top_k", "top_p"})
SINGLE_OUTPUT_KINDS = frozenset({"greedy", "mbr"})


def ngrams(tokens: Sequence, n: int) -> list:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


@dataclass
class NGramCounts:
    n: int
    counts: Counter = field(default_factory=Counter)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @classmethod
    def of(cls, tokens: Sequence, n: int) -> "NGramCounts":
        if n < 1:
            raise InvalidParameterError("n must be >= 1")
        return cls(n, Counter(ngrams(list(tokens), n)))


def concatenate(members: Iterable[Sequence]) -> list:
    """Join set members into one token stream (set-level dist-n/ent-n)."""
    out = []
    for m in members:
        out.extend(m)
    return out


def dist_n(tokens: Sequence, n: int) -> float:
    c = NGramCounts.of(tokens, n)
    total = c.total
    if total == 0:
        raise UndefinedMetricError(f"dist-{n} undefined for a string of length {len(tokens)}")
    return len(c.counts) / total


def ent_n(tokens: Sequence, n: int) -> float:
    c = NGramCounts.of(tokens, n)
    total = c.total
    if total == 0:
        raise UndefinedMetricError(f"ent-{n} undefined for a string of length {len(tokens)}")
    return -math.fsum((f / total) * math.log(f / total) for f in c.counts.values())


def ngram_diversity(tokens: Sequence, orders: Sequence[int] = DIVERSITY_ORDERS) -> float:
    return math.fsum(dist_n(tokens, n) for n in orders) / len(orders)


# --- BLEU -----------------------------------------------------------------


@lru_cache(maxsize=65536)
def _bleu_stats(tokens: tuple, max_n: int) -> tuple:
    return tuple(Counter(ngrams(tokens, n)) for n in range(1, max_n + 1))


def _closest_ref_len(c: int, ref_lens: Sequence[int]) -> int:
    return min(ref_lens, key=lambda r: (abs(r - c), r))


def _sentence_stats(candidate: tuple, references: Sequence[tuple], max_n: int):
    cand = _bleu_stats(candidate, max_n)
    refs = [_bleu_stats(r, max_n) for r in references]
    matches, totals = [], []
    for n in range(max_n):
        if len(refs) == 1:
            max_ref = refs[0][n]
        else:
            max_ref = Counter()
            for r in refs:
                max_ref |= r[n]
        matches.append(sum(min(c, max_ref[g]) for g, c in cand[n].items()))
        totals.append(max(0, len(candidate) - n))
    return matches, totals, len(candidate), _closest_ref_len(len(candidate), [len(r) for r in references])


def _combine(matches, totals, c: int, r: int, smooth: bool) -> float:
    if c == 0:
        log.warning("BLEU of a zero-length candidate is 0")
        return 0.0
    max_n = len(matches)
    logs = []
    for n, (m, t) in enumerate(zip(matches, totals), start=1):
        if smooth and n >= 2 and m == 0:
            m, t = 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        logs.append(math.log(m / t))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(math.fsum(logs) / max_n)


def _as_refs(ref) -> list:
    """A reference entry is one token sequence or a list of them."""
    if len(ref) and not isinstance(ref[0], str):
        return [tuple(r) for r in ref]
    return [tuple(ref)]


def bleu(candidates: Sequence, references: Sequence, max_n: int = 4, mode: str = "corpus") -> float:
    """Corpus BLEU from summed clipped counts, or smoothed BLEU of one pair.

    In ``sentence`` mode ``candidates``/``references`` hold exactly one pair
    and precisions for n >= 2 with zero matches are add-one smoothed.
    """
    if len(candidates) != len(references):
        raise InvalidParameterError("candidate and reference lists differ in length")
    if mode not in ("corpus", "sentence"):
        raise InvalidParameterError(f"unknown BLEU mode {mode!r}")
    if mode == "sentence":
        if len(candidates) != 1:
            raise InvalidParameterError("sentence mode scores exactly one candidate")
        return sentence_bleu(candidates[0], _as_refs(references[0]), max_n)
    matches, totals = [0] * max_n, [0] * max_n
    c_sum = r_sum = 0
    for cand, ref in zip(candidates, references):
        m, t, c, r = _sentence_stats(tuple(cand), _as_refs(ref), max_n)
        matches = [a + b for a, b in zip(matches, m)]
        totals = [a + b for a, b in zip(totals, t)]
        c_sum += c
        r_sum += r
    return _combine(matches, totals, c_sum, r_sum, smooth=False)


def sentence_bleu(candidate: Sequence, references: Sequence[Sequence], max_n: int = 4) -> float:
    """Smoothed BLEU of one candidate against one or more references."""
    refs = [tuple(r) for r in references]
    if not refs:
        raise InvalidReferenceError("sentence BLEU needs at least one reference")
    m, t, c, r = _sentence_stats(tuple(candidate), refs, max_n)
    return _combine(m, t, c, r, smooth=True)


def bleu_utility(hypothesis: Sequence, reference: Sequence) -> float:
    """Default MBR utility: smoothed sentence BLEU against a single sample."""
    if len(hypothesis) == 0:
        return 0.0
    return sentence_bleu(hypothesis, [reference])


def self_bleu(members: Sequence[Sequence], max_n: int = 4) -> float:
    members = [tuple(m) for m in members]
    if len(members) < 2:
        raise InvalidSetError("self-BLEU needs a set of at least two strings")
    scores = [
        sentence_bleu(m, members[:i] + members[i + 1 :], max_n) for i, m in enumerate(members)
    ]
    return math.fsum(scores) / len(scores)


# --- ROUGE-L ---------------------------------------------------------------


def lcs_length(a: Sequence, b: Sequence) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence, reference: Sequence) -> float:
    """Balanced F-measure of the longest common subsequence."""
    if len(reference) == 0:
        raise InvalidReferenceError("ROUGE-L needs a non-empty reference")
    lcs = lcs_length(list(candidate), list(reference))
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return 2 * p * r / (p + r)


# --- degeneracy and length -------------------------------------------------


def detect_repetition(tokens: Sequence, eos: str | None = "</s>", min_len: int = 2, min_repeats: int = 3):
    """Find a phrase of >= 2 tokens repeated >= 3 times through the end.

    Returns ``(True, phrase)`` with the shortest such phrase, else
    ``(False, None)``. A trailing EOS token is ignored.
    """
    toks = list(tokens)
    if toks and eos is not None and toks[-1] == eos:
        toks.pop()
    n = len(toks)
    for width in range(min_len, n // min_repeats + 1):
        phrase = toks[n - width :]
        reps = 1
        while (reps + 1) * width <= n and toks[n - (reps + 1) * width : n - reps * width] == phrase:
            reps += 1
        if reps >= min_repeats:
            return True, tuple(phrase)
    return False, None


def length_errors(gen_lengths: Sequence[float], ref_lengths: Sequence[float]) -> tuple:
    """Mean absolute and mean signed percentage length error, in percent."""
    if len(gen_lengths) != len(ref_lengths):
        raise InvalidParameterError("length lists differ in size")
    if not len(ref_lengths):
        raise InvalidParameterError("no lengths given")
    if any(r <= 0 for r in ref_lengths):
        raise InvalidReferenceError("reference lengths must be positive")
    rel = [(g - r) / r for g, r in zip(gen_lengths, ref_lengths)]
    mape = math.fsum(abs(x) for x in rel) / len(rel) * 100.0
    mpe = math.fsum(rel) / len(rel) * 100.0
    return mape, mpe


# --- set protocol ----------------------------------------------------------


@dataclass
class GenerationSet:
    input_id: str
    decoder: str
    members: list


def _generator(rng):
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(0 if rng is None else int(rng))
    if hasattr(rng, "generator"):
        return rng.generator()
    return rng


def collect_metric_sets(
    records: Iterable,
    kinds: Mapping[str, str],
    task_kind: str = "conditional",
    K: int = SET_SIZE,
    rng=None,
) -> list:
    """Group generations into the sets used for set-level diversity.

    ``kinds`` maps decoder labels to decoder kinds. Beam methods contribute
    their whole beam per input; sampling methods the first ``K`` samples per
    input, or for unconditional tasks random disjoint size-``K`` subsets of the
    pooled samples (ids ``pool-0000``, ...). Greedy and MBR never form sets.
    """
    if K < 1:
        raise InvalidParameterError("K must be >= 1")
    grouped = defaultdict(list)
    for rec in records:
        grouped[(rec.decoder, rec.input_id)].append(rec)
    by_decoder = defaultdict(list)
    for (dec, inp), recs in sorted(grouped.items()):
        by_decoder[dec].append((inp, sorted(recs, key=lambda r: r.sample_index)))

    gen = _generator(rng)
    sets = []
    for dec in sorted(by_decoder):
        try:
            kind = kinds[dec]
        except KeyError:
            raise InvalidParameterError(f"decoder {dec!r} has no known kind") from None
        if kind in SINGLE_OUTPUT_KINDS:
            continue
        if kind in BEAM_KINDS:
            for inp, recs in by_decoder[dec]:
                sets.append(GenerationSet(inp, dec, [tuple(r.tokens) for r in recs]))
        elif kind in SAMPLING_KINDS:
            if task_kind == "unconditional":
                pool = [tuple(r.tokens) for _, recs in by_decoder[dec] for r in recs]
                order = gen.permutation(len(pool))
                for i in range(len(pool) // K):
                    members = [pool[j] for j in order[i * K : (i + 1) * K]]
                    sets.append(GenerationSet(f"pool-{i:04d}", dec, members))
            else:
                for inp, recs in by_decoder[dec]:
                    if len(recs) < K:
                        raise InsufficientSamplesError(
                            f"{dec} has {len(recs)} samples for input {inp}, need {K}"
                        )
                    sets.append(GenerationSet(inp, dec, [tuple(r.tokens) for r in recs[:K]]))
        else:
            raise InvalidParameterError(f"unknown decoder kind {kind!r}")
    return sets
