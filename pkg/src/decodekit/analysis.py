"""Statistical analyses over metric tables and human ratings."""

from __future__ import annotations

import math
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    InsufficientDataError,
    InvalidParameterError,
    InvalidPValueError,
    JoinError,
    MissingRatingError,
    PairingError,
    UndefinedCorrelationError,
)

ALPHA = 0.01
LIKERT_MIN, LIKERT_MAX = 1, 8
PERMUTATION_ROUNDS = 10_000
EXACT_LIMIT = 20

CRITERIA = ("adequacy", "naturalness", "quality", "accuracy", "fluency")
TASK_CRITERIA = {
    "mt": (),
    "summarization": ("quality", "accuracy"),
    "dialogue": ("adequacy", "naturalness"),
    "story": ("fluency", "naturalness"),
    "unconditional": ("fluency", "naturalness"),
}


# --- ratings ---------------------------------------------------------------------


@dataclass(frozen=True)
class RatingRecord:
    input_id: str
    decoder: str
    criterion: str
    rater_id: str
    score: int

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise InvalidParameterError(f"unknown rating criterion {self.criterion!r}")
        if int(self.score) != self.score or not LIKERT_MIN <= self.score <= LIKERT_MAX:
            raise InvalidParameterError(f"score {self.score!r} outside the 1-8 Likert scale")

    @classmethod
    def from_json(cls, doc: Mapping) -> "RatingRecord":
        return cls(str(doc["input_id"]), str(doc["decoder"]), doc["criterion"], str(doc["rater"]), doc["score"])

    def to_json(self) -> dict:
        return {
            "input_id": self.input_id,
            "decoder": self.decoder,
            "criterion": self.criterion,
            "rater": self.rater_id,
            "score": self.score,
        }


@dataclass(frozen=True)
class AggregatedRating:
    input_id: str
    decoder: str
    criterion: str
    median_score: float


def aggregate_ratings(ratings: Iterable[RatingRecord], task: str | None = None) -> list:
    """Median score per (input, decoder, criterion) cell.

    Even-sized cells take the mean of the two central scores. With ``task``
    given, criteria not used for that task are rejected.
    """
    cells = defaultdict(list)
    allowed = TASK_CRITERIA.get(task) if task else None
    for r in ratings:
        if allowed is not None and r.criterion not in allowed:
            raise InvalidParameterError(f"criterion {r.criterion!r} is not rated for task {task!r}")
        cells[(r.input_id, r.decoder, r.criterion)].append(r.score)
    return [
        AggregatedRating(inp, dec, crit, float(statistics.median(scores)))
        for (inp, dec, crit), scores in sorted(cells.items())
    ]


def rating_scores(aggregated: Iterable[AggregatedRating], criterion: str | None = None) -> dict:
    """Collapse medians to one score per (input, decoder).

    With ``criterion=None`` the medians of all rated criteria are averaged.
    """
    cells = defaultdict(list)
    for a in aggregated:
        if criterion is None or a.criterion == criterion:
            cells[(a.input_id, a.decoder)].append(a.median_score)
    return {key: math.fsum(v) / len(v) for key, v in sorted(cells.items())}


# --- correlation -----------------------------------------------------------------


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidParameterError("pearson needs two vectors of equal length")
    if x.size < 2:
        raise InvalidParameterError("pearson needs at least two observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant vector")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def ancestral_contrast(decoder_values: Sequence[float], ancestral_values: Sequence[float]) -> float:
    """Correlation between a metric and an is-ancestral indicator.

    The decoder's values (indicator 0) are stacked with the ancestral
    samples' values (indicator 1). A negative value means the metric is
    higher for the decoder than for ancestral samples.
    """
    if len(decoder_values) == 0 or len(ancestral_values) == 0:
        raise InvalidParameterError("both value vectors must be non-empty")
    values = np.concatenate([np.asarray(decoder_values, float), np.asarray(ancestral_values, float)])
    indicator = np.concatenate([np.zeros(len(decoder_values)), np.ones(len(ancestral_values))])
    return pearson(values, indicator)


def correlation_matrix(columns: Mapping[str, Sequence[float]]):
    """Pairwise Pearson matrix over equally long columns; NaN where undefined."""
    names = list(columns)
    k = len(names)
    out = np.full((k, k), np.nan)
    for i in range(k):
        for j in range(i, k):
            try:
                r = pearson(columns[names[i]], columns[names[j]])
            except (UndefinedCorrelationError, InvalidParameterError):
                continue
            out[i, j] = out[j, i] = r
    return names, out


# --- significance ---------------------------------------------------------------


def _sign_patterns(n: int, start: int, stop: int) -> np.ndarray:
    codes = np.arange(start, stop, dtype=np.int64)[:, None]
    bits = (codes >> np.arange(n, dtype=np.int64)) & 1
    return (1 - 2 * bits).astype(np.float64)


def permutation_test(
    a: Sequence[float],
    b: Sequence[float],
    rounds: int = PERMUTATION_ROUNDS,
    seed: int = 0,
    exact: bool | None = None,
) -> float:
    """Two-sided paired sign-flip test on the mean difference.

    For n <= 20 (or ``exact=True``) all 2^n sign patterns are enumerated and
    p is the fraction with |mean| at least the observed one. Otherwise
    ``rounds`` random patterns give p = (hits + 1) / (rounds + 1).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise PairingError("paired vectors must have equal length")
    n = a.size
    if n < 2:
        raise InvalidParameterError("permutation test needs at least two pairs")
    d = a - b
    observed = abs(float(d.mean()))
    tol = 1e-12 * max(1.0, float(np.abs(d).mean()))
    if exact is None:
        exact = n <= EXACT_LIMIT
    chunk = 1 << 16
    hits = 0
    if exact:
        if n > 26:
            raise InvalidParameterError("exact enumeration is limited to n <= 26")
        total = 1 << n
        for start in range(0, total, chunk):
            stats = np.abs(_sign_patterns(n, start, min(total, start + chunk)) @ d / n)
            hits += int(np.count_nonzero(stats >= observed - tol))
        return hits / total
    rng = np.random.default_rng(seed)
    rows = max(1, chunk // n)
    done = 0
    while done < rounds:
        m = min(rows, rounds - done)
        signs = 1.0 - 2.0 * rng.integers(0, 2, size=(m, n))
        stats = np.abs(signs @ d / n)
        hits += int(np.count_nonzero(stats >= observed - tol))
        done += m
    return (hits + 1) / (rounds + 1)


def bonferroni(p_values: Sequence[float]) -> list:
    ps = [float(p) for p in p_values]
    if any(not 0.0 <= p <= 1.0 or math.isnan(p) for p in ps):
        raise InvalidPValueError("p-values must lie in [0, 1]")
    m = len(ps)
    return [min(1.0, p * m) for p in ps]


@dataclass(frozen=True)
class TestResult:
    decoder_pair: tuple
    statistic: float
    p_value: float
    p_adjusted: float
    significant: bool


def compare_to_best(
    scores: Mapping[str, Mapping[str, float]],
    rounds: int = PERMUTATION_ROUNDS,
    seed: int = 0,
    alpha: float = ALPHA,
) -> list:
    """Test the best decoder (highest mean) against every other decoder.

    ``scores[decoder][input_id]`` holds per-input values; each pair is matched
    on shared input ids. p-values are Bonferroni-corrected over the
    comparisons made. The number of significant results is how many decoders
    are significantly worse than the best one.
    """
    decoders = sorted(scores)
    if len(decoders) < 2:
        return []
    means = {d: math.fsum(scores[d].values()) / len(scores[d]) for d in decoders}
    best = min(decoders, key=lambda d: (-means[d], d))
    raw = []
    for i, other in enumerate(d for d in decoders if d != best):
        shared = sorted(set(scores[best]) & set(scores[other]))
        if len(shared) < 2:
            raise PairingError(f"{best} and {other} share fewer than two inputs")
        x = [scores[best][k] for k in shared]
        y = [scores[other][k] for k in shared]
        stat = math.fsum(u - v for u, v in zip(x, y)) / len(shared)
        raw.append((other, stat, permutation_test(x, y, rounds, seed + i)))
    adjusted = bonferroni([p for _, _, p in raw])
    return [
        TestResult((best, other), stat, p, q, q < alpha) for (other, stat, p), q in zip(raw, adjusted)
    ]


def bootstrap_diff_ci(
    a: Sequence[float],
    b: Sequence[float],
    resamples: int = 1000,
    seed: int = 0,
    level: float = 0.95,
    paired: bool = True,
) -> tuple:
    """Percentile bootstrap interval for mean(a) - mean(b).

    Paired data resample item indices jointly; unpaired data resample each
    side independently.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.size < 2 or b.size < 2:
        raise InvalidParameterError("bootstrap needs at least two items per side")
    rng = np.random.default_rng(seed)
    if paired:
        if a.shape != b.shape:
            raise PairingError("paired bootstrap needs equal lengths")
        d = a - b
        means = d[rng.integers(0, d.size, size=(resamples, d.size))].mean(axis=1)
    else:
        means = a[rng.integers(0, a.size, size=(resamples, a.size))].mean(axis=1) - b[
            rng.integers(0, b.size, size=(resamples, b.size))
        ].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


# --- rank analysis -------------------------------------------------------------


@dataclass(frozen=True)
class GroupingSpec:
    deterministic: frozenset
    stochastic: frozenset
    excluded: frozenset = frozenset()

    def __post_init__(self):
        for name in ("deterministic", "stochastic", "excluded"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        if (self.deterministic & self.stochastic) or (self.excluded & (self.deterministic | self.stochastic)):
            raise InvalidParameterError("decoder groups must be disjoint")

    @classmethod
    def from_kinds(cls, kinds: Mapping[str, str]) -> "GroupingSpec":
        """Mode-seeking search vs sampling; MBR sits in neither group."""
        det = {d for d, k in kinds.items() if k in ("greedy", "beam", "diverse_beam")}
        sto = {d for d, k in kinds.items() if k in ("ancestral", "top_k", "top_p")}
        return cls(frozenset(det), frozenset(sto), frozenset(set(kinds) - det - sto))

    @property
    def ranked(self) -> frozenset:
        return self.deterministic | self.stochastic

    def covers(self, decoders: Iterable[str]) -> bool:
        return set(decoders) <= (self.ranked | self.excluded)


def competition_ranks(scores: Mapping[str, float]) -> dict:
    """1 + number of strictly better items; ties share the smallest rank."""
    values = list(scores.values())
    return {d: 1 + sum(v > s for v in values) for d, s in scores.items()}


@dataclass
class RankSummary:
    per_input: dict
    histogram: dict = field(default_factory=dict)
    mean: dict = field(default_factory=dict)


def rank_groups(scores, grouping: GroupingSpec, criterion: str | None = None) -> RankSummary:
    """Best rank reached by each decoder group on every input.

    ``scores`` maps ``(input_id, decoder)`` to a quality score (higher is
    better) or is a list of :class:`AggregatedRating`. Decoders are ranked
    per input with competition ranking; excluded decoders are ignored.
    """
    if not isinstance(scores, Mapping):
        scores = rating_scores(scores, criterion)
    by_input = defaultdict(dict)
    for (inp, dec), s in scores.items():
        if dec in grouping.ranked:
            by_input[inp][dec] = s
    groups = {"deterministic": grouping.deterministic, "stochastic": grouping.stochastic}
    per_input = {}
    for inp in sorted(by_input):
        missing = grouping.ranked - set(by_input[inp])
        if missing:
            raise MissingRatingError(f"input {inp!r} lacks scores for {sorted(missing)}")
        ranks = competition_ranks(by_input[inp])
        per_input[inp] = {g: (min(ranks[d] for d in members) if members else None) for g, members in groups.items()}
    histogram, mean = {}, {}
    for g in groups:
        vals = [r[g] for r in per_input.values() if r[g] is not None]
        histogram[g] = dict(sorted(Counter(vals).items()))
        mean[g] = math.fsum(vals) / len(vals) if vals else None
    return RankSummary(per_input, histogram, mean)


# --- trade-off curves ------------------------------------------------------------


def quality_probability_curve(records: Sequence, bins: int = 10) -> list:
    """Mean quality in equal-count bins of length-normalized log-probability.

    ``records`` are ``(norm_log_prob, quality)`` pairs. Returns
    ``(mean_norm_log_prob, mean_quality, count)`` per bin, lowest bin first.
    """
    if bins < 1:
        raise InvalidParameterError("bins must be >= 1")
    if len(records) < bins:
        raise InsufficientDataError(f"{len(records)} records cannot fill {bins} bins")
    pairs = sorted(((float(p), float(q)) for p, q in records), key=lambda r: r[0])
    out = []
    for chunk in np.array_split(np.arange(len(pairs)), bins):
        xs = [pairs[i][0] for i in chunk]
        qs = [pairs[i][1] for i in chunk]
        out.append((math.fsum(xs) / len(xs), math.fsum(qs) / len(qs), len(chunk)))
    return out


def quality_diversity_points(
    diversity: Mapping[tuple, float], quality: Mapping[tuple, float], strict: bool = True
) -> list:
    """Join per-set diversity and mean quality on ``(input_id, decoder)``.

    Returns ``(diversity, quality, decoder, input_id)`` rows sorted by key. A
    strict join rejects keys present in only one table; otherwise the inner
    join is returned.
    """
    left, right = set(diversity), set(quality)
    if strict and left != right:
        raise JoinError(f"{len(left ^ right)} keys present in only one table")
    return [(diversity[k], quality[k], k[1], k[0]) for k in sorted(left & right)]
