"""Seeded synthetic English-like text for training reference n-gram models.

Sentences come from a small probabilistic grammar over a pseudo-word lexicon
whose word frequencies are Zipfian within each part of speech. The result has
the long-tailed n-gram statistics of natural text without shipping a dataset.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr", "pl", "gr", "sh")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou", "ea")
_CODAS = ("", "", "n", "r", "s", "l", "t", "nd", "st")

FUNCTION_WORDS = {
    "det": ("the", "a", "this", "that", "every", "some", "my", "our"),
    "prep": ("in", "on", "near", "with", "under", "from", "over", "behind"),
    "conj": ("and", "but", "while", "because"),
    "aux": ("will", "can", "must", "did"),
    "pron": ("she", "he", "they", "we", "it"),
}


@dataclass(frozen=True)
class CorpusSpec:
    n_nouns: int = 1200
    n_verbs: int = 600
    n_adjectives: int = 400
    n_adverbs: int = 150
    zipf_s: float = 1.1
    seed: int = 0


class Lexicon:
    def __init__(self, spec: CorpusSpec, rng: np.random.Generator):
        self.spec = spec
        seen = set(w for ws in FUNCTION_WORDS.values() for w in ws)
        self.words = {}
        for pos, n in (("noun", spec.n_nouns), ("verb", spec.n_verbs), ("adj", spec.n_adjectives), ("adv", spec.n_adverbs)):
            words = []
            while len(words) < n:
                w = _pseudo_word(rng, pos)
                if w not in seen:
                    seen.add(w)
                    words.append(w)
            self.words[pos] = words
        for pos, ws in FUNCTION_WORDS.items():
            self.words[pos] = list(ws)
        self.cdf = {pos: np.cumsum(_zipf(len(ws), spec.zipf_s)) for pos, ws in self.words.items()}

    def draw(self, rng: np.random.Generator, pos: str) -> str:
        ws = self.words[pos]
        cdf = self.cdf[pos]
        return ws[min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(ws) - 1)]


def _zipf(n: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def _pseudo_word(rng: np.random.Generator, pos: str) -> str:
    syllables = int(rng.integers(1, 4))
    stem = "".join(
        _ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(syllables)
    ) + _CODAS[rng.integers(len(_CODAS))]
    suffix = {"adv": "ly", "adj": ("ic", "ous", "al", "")[rng.integers(4)]}.get(pos, "")
    return stem + suffix


def _noun_phrase(lex: Lexicon, rng) -> list:
    if rng.random() < 0.15:
        return [lex.draw(rng, "pron")]
    out = [lex.draw(rng, "det")]
    if rng.random() < 0.35:
        out.append(lex.draw(rng, "adj"))
    out.append(lex.draw(rng, "noun"))
    if rng.random() < 0.2:
        out += [lex.draw(rng, "prep")] + _noun_phrase(lex, rng)[:3]
    return out


def _clause(lex: Lexicon, rng) -> list:
    out = _noun_phrase(lex, rng)
    if rng.random() < 0.2:
        out.append(lex.draw(rng, "aux"))
    if rng.random() < 0.15:
        out.append(lex.draw(rng, "adv"))
    out.append(lex.draw(rng, "verb"))
    if rng.random() < 0.7:
        out += _noun_phrase(lex, rng)
    if rng.random() < 0.3:
        out += [lex.draw(rng, "prep")] + _noun_phrase(lex, rng)
    return out


def generate_sentences(n_bytes: int = 1_200_000, spec: CorpusSpec = CorpusSpec()) -> list:
    """Sentences (strings) until their total UTF-8 size reaches ``n_bytes``."""
    rng = np.random.default_rng(spec.seed)
    lex = Lexicon(spec, rng)
    sentences, size = [], 0
    while size < n_bytes:
        words = _clause(lex, rng)
        while rng.random() < 0.25:
            words += [lex.draw(rng, "conj")] + _clause(lex, rng)
        line = " ".join(words) + " ."
        sentences.append(line)
        size += len(line.encode("utf-8")) + 1
    return sentences


def write_corpus(path, n_bytes: int = 1_200_000, spec: CorpusSpec = CorpusSpec()) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(generate_sentences(n_bytes, spec)) + "\n", encoding="utf-8")
    return path
