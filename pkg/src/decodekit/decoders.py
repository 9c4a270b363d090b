"""Decoding strategies over any :class:`~decodekit.seqmodel.SequenceModel`.

Ties are broken by ascending token id, and whole hypotheses by lexicographic
token-id order, so every deterministic decoder is reproducible. Scores are
raw sums of natural-log probabilities with no length normalization, and every
record's ``log_prob`` replays exactly through ``sequence_log_prob``.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, fields
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, InvalidParameterError
from .metrics import bleu_utility
from .rng import RngStream
from .seqmodel import (
    SequenceModel,
    TokenDistribution,
    _logp,
    _max_len,
    sequence_log_prob,
)

KINDS = ("greedy", "beam", "diverse_beam", "ancestral", "top_k", "top_p", "mbr")
DETERMINISTIC_KINDS = frozenset({"greedy", "beam", "diverse_beam"})
STOCHASTIC_KINDS = frozenset({"ancestral", "top_k", "top_p"})

_KIND_ALIASES = {
    "dbs": "diverse_beam",
    "diverse-beam": "diverse_beam",
    "sample": "ancestral",
    "sampling": "ancestral",
    "topk": "top_k",
    "top-k": "top_k",
    "topp": "top_p",
    "top-p": "top_p",
    "nucleus": "top_p",
}

# keys accepted in "kind:key=value,..." specs and flat config sections
_BEAM_KEYS = {"k": "beam_k", "beam": "beam_k", "beam_k": "beam_k", "size": "beam_k"}
_KEY_ALIASES = {
    "G": "groups_G",
    "g": "groups_G",
    "groups": "groups_G",
    "groups_G": "groups_G",
    "lambda": "lam",
    "lam": "lam",
    "p": "p",
    "samples": "mbr_samples",
    "n": "mbr_samples",
    "mbr_samples": "mbr_samples",
    "seed": "seed",
    "name": "name",
    "label": "name",
}


@dataclass(frozen=True)
class DecoderConfig:
    """One decoding strategy and its hyperparameters.

    Defaults follow the usual settings: beam size 5, DBS with 5 groups and
    diversity strength 0.7, top-k with k=30, nucleus mass 0.85 and 32 Monte
    Carlo samples for MBR.
    """

    kind: str
    beam_k: int = 5
    groups_G: int = 5
    lam: float = 0.7
    k: int = 30
    p: float = 0.85
    mbr_samples: int = 32
    seed: int | None = None
    name: str | None = None

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ConfigError(f"unknown decoder kind {self.kind!r}")
        if self.beam_k < 1 or self.groups_G < 1 or self.k < 1 or self.mbr_samples < 1:
            raise InvalidParameterError("integer decoder parameters must be >= 1")
        if self.lam < 0:
            raise InvalidParameterError("lambda must be non-negative")
        if not 0.0 < self.p <= 1.0:
            raise InvalidParameterError("p must lie in (0, 1]")
        if kind == "diverse_beam" and self.beam_k % self.groups_G:
            raise InvalidParameterError(f"groups_G={self.groups_G} does not divide beam_k={self.beam_k}")
        if self.seed is not None and not 0 <= self.seed < 2**64:
            raise InvalidParameterError("seed must be a 64-bit unsigned integer")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        d = DecoderConfig.__dataclass_fields__
        if self.kind == "beam":
            return f"beam-{self.beam_k}"
        if self.kind == "diverse_beam":
            if (self.beam_k, self.groups_G, self.lam) == (d["beam_k"].default, d["groups_G"].default, d["lam"].default):
                return "dbs"
            return f"dbs-{self.beam_k}x{self.groups_G}-{self.lam:g}"
        if self.kind == "top_k" and self.k != d["k"].default:
            return f"top_k-{self.k}"
        if self.kind == "top_p" and self.p != d["p"].default:
            return f"top_p-{self.p:g}"
        if self.kind == "mbr" and self.mbr_samples != d["mbr_samples"].default:
            return f"mbr-{self.mbr_samples}"
        return self.kind

    @property
    def deterministic(self) -> bool:
        return self.kind in DETERMINISTIC_KINDS

    @property
    def stochastic(self) -> bool:
        return self.kind in STOCHASTIC_KINDS

    @classmethod
    def from_dict(cls, section: Mapping) -> "DecoderConfig":
        """Build from a flat key-value section (``kind`` plus options)."""
        section = dict(section)
        if "kind" not in section:
            raise ConfigError("decoder section lacks 'kind'")
        raw_kind = str(section.pop("kind"))
        kind = _KIND_ALIASES.get(raw_kind, raw_kind)
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in section.items():
            if kind in ("beam", "diverse_beam") and key in _BEAM_KEYS:
                attr = _BEAM_KEYS[key]
            elif key in ("k", "top_k") and kind == "top_k":
                attr = "k"
            elif key in _KEY_ALIASES:
                attr = _KEY_ALIASES[key]
            elif key in types:
                attr = key
            else:
                raise ConfigError(f"unknown option {key!r} for decoder kind {raw_kind!r}")
            if attr == "name":
                kwargs[attr] = str(value)
            elif attr in ("lam", "p"):
                kwargs[attr] = float(value)
            else:
                try:
                    kwargs[attr] = int(value)
                except (TypeError, ValueError):
                    raise ConfigError(f"option {key!r} expects an integer, got {value!r}") from None
        return cls(kind=raw_kind, **kwargs)

    @classmethod
    def parse(cls, spec: str) -> "DecoderConfig":
        """Parse ``kind[:key=value,...]``, e.g. ``beam:k=5`` or ``top_p:p=0.9``."""
        kind, _, rest = spec.strip().partition(":")
        section = {"kind": kind.strip()}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, eq, value = item.partition("=")
            if not eq:
                raise ConfigError(f"malformed decoder option {item!r} in {spec!r}")
            section[key.strip()] = value.strip()
        return cls.from_dict(section)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "label": self.label}
        keep = {
            "greedy": (),
            "beam": ("beam_k",),
            "diverse_beam": ("beam_k", "groups_G", "lam"),
            "ancestral": (),
            "top_k": ("k",),
            "top_p": ("p",),
            "mbr": ("mbr_samples",),
        }[self.kind]
        for key in keep:
            out[key] = getattr(self, key)
        if self.seed is not None:
            out["seed"] = self.seed
        if self.name:
            out["name"] = self.name
        return out


def default_decoders() -> list:
    """The eight standard strategies with their default settings."""
    return [
        DecoderConfig("greedy"),
        DecoderConfig("beam", beam_k=5),
        DecoderConfig("beam", beam_k=10),
        DecoderConfig("diverse_beam", beam_k=5, groups_G=5, lam=0.7),
        DecoderConfig("ancestral"),
        DecoderConfig("top_k", k=30),
        DecoderConfig("top_p", p=0.85),
        DecoderConfig("mbr", mbr_samples=32),
    ]


@dataclass
class GenerationRecord:
    input_id: str
    decoder: str
    sample_index: int
    tokens: tuple
    text: str
    log_prob: float
    norm_log_prob: float
    truncated: bool
    ids: tuple | None = field(default=None, compare=False, repr=False)

    def to_json(self) -> dict:
        return {
            "id": self.input_id,
            "decoder": self.decoder,
            "sample_index": self.sample_index,
            "tokens": list(self.tokens),
            "text": self.text,
            "log_prob": self.log_prob,
            "norm_log_prob": self.norm_log_prob,
            "truncated": self.truncated,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "GenerationRecord":
        return cls(
            input_id=str(doc["id"]),
            decoder=str(doc["decoder"]),
            sample_index=int(doc["sample_index"]),
            tokens=tuple(doc["tokens"]),
            text=doc["text"],
            log_prob=float(doc["log_prob"]),
            norm_log_prob=float(doc["norm_log_prob"]),
            truncated=bool(doc["truncated"]),
        )

    def full_ids(self, vocab) -> tuple:
        """BOS + content (+ EOS unless truncated), for replay scoring."""
        if self.ids is not None:
            return self.ids
        tail = () if self.truncated else (vocab.eos_id,)
        return (vocab.bos_id,) + vocab.encode(self.tokens) + tail


@dataclass
class DecodeOutput:
    records: list

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def best(self) -> GenerationRecord:
        return self.records[0]


def make_record(model: SequenceModel, ids: tuple, log_prob: float, input_id="", decoder="", sample_index=0):
    vocab = model.vocab
    tokens = vocab.content(ids)
    return GenerationRecord(
        input_id=str(input_id),
        decoder=str(decoder),
        sample_index=int(sample_index),
        tokens=tokens,
        text=" ".join(tokens),
        log_prob=log_prob,
        norm_log_prob=log_prob / (len(ids) - 1),
        truncated=ids[-1] != vocab.eos_id,
        ids=tuple(ids),
    )


# --- truncation --------------------------------------------------------------


def _ranked(probs: np.ndarray) -> np.ndarray:
    """Token ids by descending probability, ties by ascending id."""
    return np.lexsort((np.arange(probs.size), -probs))


def truncate_top_k(dist: TokenDistribution, k: int) -> TokenDistribution:
    if int(k) != k or k < 1:
        raise InvalidParameterError(f"top-k needs k >= 1, got {k!r}")
    probs = dist.probs
    order = _ranked(probs)
    keep = order[: int(k)]
    if not np.any(probs[order[int(k):]] > 0.0):
        return dist
    out = np.zeros_like(probs)
    out[keep] = probs[keep] / probs[keep].sum()
    return TokenDistribution(out)


# cumulative sums that equal p in exact arithmetic may land a few ulps short
_MASS_TOL = 1e-12


def truncate_top_p(dist: TokenDistribution, p: float) -> TokenDistribution:
    if not 0.0 < p <= 1.0:
        raise InvalidParameterError(f"top-p needs p in (0, 1], got {p!r}")
    probs = dist.probs
    order = _ranked(probs)
    order = order[probs[order] > 0.0]
    cum = np.cumsum(probs[order])
    reached = np.flatnonzero(cum >= p - _MASS_TOL)
    n_keep = int(reached[0]) + 1 if reached.size else order.size
    if n_keep >= order.size:
        return dist
    keep = order[:n_keep]
    out = np.zeros_like(probs)
    out[keep] = probs[keep] / probs[keep].sum()
    return TokenDistribution(out)


def _truncation_fn(truncation) -> Callable[[TokenDistribution], TokenDistribution]:
    if callable(truncation):
        return truncation
    kind, value = truncation
    kind = _KIND_ALIASES.get(kind, kind)
    if kind == "top_k":
        if int(value) != value or value < 1:
            raise InvalidParameterError(f"top-k needs k >= 1, got {value!r}")
        return lambda d: truncate_top_k(d, int(value))
    if kind == "top_p":
        if not 0.0 < value <= 1.0:
            raise InvalidParameterError(f"top-p needs p in (0, 1], got {value!r}")
        return lambda d: truncate_top_p(d, float(value))
    raise InvalidParameterError(f"unknown truncation {kind!r}")


# --- deterministic search -------------------------------------------------------


def greedy_decode(model: SequenceModel, context, budget, input_id="", decoder="greedy") -> GenerationRecord:
    max_len = _max_len(budget)
    context = tuple(context)
    eos = model.vocab.eos_id
    ids = (model.vocab.bos_id,)
    score = 0.0
    while len(ids) - 1 < max_len:
        probs = model.next_distribution(context, ids).probs
        tok = int(np.argmax(probs))  # first maximum = lowest id
        score += _logp(float(probs[tok]))
        ids += (tok,)
        if tok == eos:
            break
    return make_record(model, ids, score, input_id, decoder, 0)


def _expand(model, context, hyps, slots, penalties: Counter | None, lam: float):
    """Best ``slots`` one-token extensions of ``hyps``.

    Returns ``(selection_score, raw_score, ids)`` triples ordered by
    selection score (descending), then ids. Selection score is the raw score
    minus ``lam`` times the penalty count of the new token.
    """
    bos = model.vocab.bos_id
    n_penalized = len(penalties) if penalties else 0
    cands = []
    for raw, ids in hyps:
        probs = model.next_distribution(context, ids).probs
        support = np.flatnonzero(probs > 0.0)
        support = support[support != bos]
        need = slots + n_penalized
        if support.size > need:
            # keep everything tied with the need-th largest probability
            threshold = np.partition(probs[support], support.size - need)[support.size - need]
            support = support[probs[support] >= threshold]
        for tok in support.tolist():
            new_raw = raw + _logp(float(probs[tok]))
            sel = new_raw - lam * penalties[tok] if n_penalized else new_raw
            cands.append((sel, new_raw, ids + (tok,)))
    cands.sort(key=lambda c: (-c[0], c[2]))
    return cands[:slots]


def _finalize(model, hyps, input_id, decoder) -> DecodeOutput:
    hyps = sorted(hyps, key=lambda h: (-h[0], h[1]))
    return DecodeOutput([make_record(model, ids, raw, input_id, decoder, i) for i, (raw, ids) in enumerate(hyps)])


class _Beam:
    __slots__ = ("width", "pool", "live")

    def __init__(self, width, bos):
        self.width = width
        self.pool = []
        self.live = [(0.0, (bos,))]

    @property
    def slots(self):
        return self.width - len(self.pool)

    def active(self):
        return self.slots > 0 and bool(self.live)

    def absorb(self, chosen, eos):
        self.live = []
        for _, raw, ids in chosen:
            (self.pool if ids[-1] == eos else self.live).append((raw, ids))

    def results(self):
        # unfinished hypotheses only fill a short pool; they are truncated
        return self.pool + (self.live if len(self.pool) < self.width else [])


def beam_decode(model: SequenceModel, context, beam_k: int, budget, input_id="", decoder=None) -> DecodeOutput:
    """Beam search with a completed pool.

    At each step the ``beam_k - |pool|`` best extensions are kept; those
    ending in EOS move to the pool. Search stops once the pool is full or the
    budget is spent; a short pool is topped up with the best unfinished
    hypotheses (flagged truncated). Output is ranked by raw log-probability.
    """
    if int(beam_k) != beam_k or beam_k < 1:
        raise InvalidParameterError(f"beam_k must be >= 1, got {beam_k!r}")
    max_len = _max_len(budget)
    context = tuple(context)
    eos = model.vocab.eos_id
    beam = _Beam(int(beam_k), model.vocab.bos_id)
    for _ in range(max_len):
        if not beam.active():
            break
        beam.absorb(_expand(model, context, beam.live, beam.slots, None, 0.0), eos)
    return _finalize(model, beam.results(), input_id, decoder or f"beam-{beam_k}")


def diverse_beam_decode(
    model: SequenceModel,
    context,
    beam_k: int,
    groups_G: int,
    lam: float,
    budget,
    input_id="",
    decoder="dbs",
) -> DecodeOutput:
    """Diverse beam search with a Hamming diversity term.

    The beam is split into ``groups_G`` groups expanded one after another at
    every time step. A group scores a candidate by its log-probability minus
    ``lam`` times the number of hypotheses that earlier groups selected at
    this step with the same new token. The penalty only affects selection;
    reported scores are raw log-probabilities.
    """
    if int(beam_k) != beam_k or beam_k < 1 or int(groups_G) != groups_G or groups_G < 1:
        raise InvalidParameterError("beam_k and groups_G must be positive integers")
    if beam_k % groups_G:
        raise InvalidParameterError(f"groups_G={groups_G} does not divide beam_k={beam_k}")
    if lam < 0:
        raise InvalidParameterError("lambda must be non-negative")
    max_len = _max_len(budget)
    context = tuple(context)
    eos = model.vocab.eos_id
    groups = [_Beam(beam_k // groups_G, model.vocab.bos_id) for _ in range(groups_G)]
    for _ in range(max_len):
        if not any(g.active() for g in groups):
            break
        chosen_tokens = Counter()
        for g in groups:
            if not g.active():
                continue
            chosen = _expand(model, context, g.live, g.slots, chosen_tokens, float(lam))
            g.absorb(chosen, eos)
            chosen_tokens.update(ids[-1] for _, _, ids in chosen)
    hyps = [h for g in groups for h in g.results()]
    return _finalize(model, hyps, input_id, decoder)


# --- sampling -------------------------------------------------------------------


def _sample(model, context, budget, rng: RngStream, transform, input_id, decoder, sample_index):
    max_len = _max_len(budget)
    context = tuple(context)
    eos = model.vocab.eos_id
    ids = (model.vocab.bos_id,)
    score = 0.0
    while len(ids) - 1 < max_len:
        dist = model.next_distribution(context, ids)
        proposal = transform(dist) if transform else dist
        tok = rng.categorical(proposal.probs)
        # score under the model, not the truncated proposal
        score += _logp(float(dist.probs[tok]))
        ids += (tok,)
        if tok == eos:
            break
    return make_record(model, ids, score, input_id, decoder, sample_index)


def ancestral_sample(
    model: SequenceModel, context, budget, rng: RngStream, input_id="", decoder="ancestral", sample_index=0
) -> GenerationRecord:
    return _sample(model, context, budget, rng, None, input_id, decoder, sample_index)


def truncated_sample(
    model: SequenceModel,
    context,
    budget,
    rng: RngStream,
    truncation,
    input_id="",
    decoder=None,
    sample_index=0,
) -> GenerationRecord:
    """Sample from the top-k / top-p truncated model at every step.

    ``truncation`` is ``("top_k", k)``, ``("top_p", p)`` or a callable on
    distributions. ``log_prob`` is the untruncated model log-probability.
    """
    transform = _truncation_fn(truncation)
    if decoder is None:
        decoder = truncation[0] if isinstance(truncation, tuple) else "truncated"
    return _sample(model, context, budget, rng, transform, input_id, decoder, sample_index)


# --- minimum Bayes risk -----------------------------------------------------------


def mbr_decode(
    model: SequenceModel,
    context,
    budget,
    mbr_samples: int,
    rng: RngStream,
    utility: Callable[[tuple, tuple], float] | None = None,
    extra_candidates: Iterable = (),
    input_id="",
    decoder="mbr",
) -> GenerationRecord:
    """Pick the candidate with the highest Monte Carlo expected utility.

    ``mbr_samples`` ancestral samples estimate the expectation; candidates are
    those samples plus ``extra_candidates`` (records or id tuples), deduplicated.
    Ties go to the higher model log-probability, then to lexicographic ids.
    """
    if int(mbr_samples) != mbr_samples or mbr_samples < 1:
        raise InvalidParameterError("mbr_samples must be >= 1")
    utility = utility or bleu_utility
    context = tuple(context)
    vocab = model.vocab
    samples = [ancestral_sample(model, context, budget, rng) for _ in range(int(mbr_samples))]

    pool = {}
    for rec in samples:
        pool.setdefault(rec.ids, rec.log_prob)
    for cand in extra_candidates:
        if isinstance(cand, GenerationRecord):
            ids = cand.full_ids(vocab)
            pool.setdefault(ids, cand.log_prob)
        else:
            ids = vocab.encode(cand)
            if ids not in pool:
                pool[ids] = sequence_log_prob(model, context, ids, truncated=ids[-1] != vocab.eos_id)

    ids, lp = mbr_select(pool, [vocab.content(s.ids) for s in samples], utility, vocab)
    return make_record(model, ids, lp, input_id, decoder, 0)


def mbr_select(pool: Mapping, samples: Sequence, utility: Callable[[tuple, tuple], float], vocab=None) -> tuple:
    """Return ``(ids, log_prob)`` of the pool entry with the best mean utility.

    ``pool`` maps candidate id tuples to model log-probabilities; ``samples``
    are token sequences. With ``vocab`` candidates are scored on their
    content tokens, otherwise on the keys as given. Ties go to the higher
    log-probability, then to the lexicographically smaller ids.
    """
    if not samples:
        raise InvalidParameterError("MBR needs at least one sample")
    best = None
    for ids, lp in pool.items():
        cand = vocab.content(ids) if vocab is not None else ids
        expected = math.fsum(utility(cand, s) for s in samples) / len(samples)
        key = (-expected, -lp, ids)
        if best is None or key < best[0]:
            best = (key, ids, lp)
    return best[1], best[2]


# --- dispatch -------------------------------------------------------------------


def decode(
    model: SequenceModel,
    context,
    config: DecoderConfig,
    budget,
    rng_for: Callable[[int], RngStream],
    n_samples: int = 10,
    input_id="",
    extra_candidates: Iterable = (),
    utility=None,
) -> list:
    """Run one configured decoder; ``rng_for(sample_index)`` supplies streams."""
    label = config.label
    kind = config.kind
    if kind == "greedy":
        return [greedy_decode(model, context, budget, input_id, label)]
    if kind == "beam":
        return beam_decode(model, context, config.beam_k, budget, input_id, label).records
    if kind == "diverse_beam":
        return diverse_beam_decode(
            model, context, config.beam_k, config.groups_G, config.lam, budget, input_id, label
        ).records
    if kind == "ancestral":
        return [ancestral_sample(model, context, budget, rng_for(i), input_id, label, i) for i in range(n_samples)]
    if kind in ("top_k", "top_p"):
        trunc = (kind, config.k if kind == "top_k" else config.p)
        return [
            truncated_sample(model, context, budget, rng_for(i), trunc, input_id, label, i)
            for i in range(n_samples)
        ]
    if kind == "mbr":
        return [
            mbr_decode(
                model, context, budget, config.mbr_samples, rng_for(0), utility, extra_candidates, input_id, label
            )
        ]
    raise ConfigError(f"unknown decoder kind {kind!r}")
