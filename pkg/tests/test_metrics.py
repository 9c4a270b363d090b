import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decodekit.decoders import GenerationRecord
from decodekit.errors import (
    InsufficientSamplesError,
    InvalidReferenceError,
    InvalidSetError,
    UndefinedMetricError,
)
from decodekit.metrics import (
    NGramCounts,
    bleu,
    collect_metric_sets,
    concatenate,
    detect_repetition,
    dist_n,
    ent_n,
    length_errors,
    ngram_diversity,
    rouge_l,
    self_bleu,
    sentence_bleu,
)

tokens = st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=15)


# --- diversity ----------------------------------------------------------------------


def test_ngram_counts_total():
    c = NGramCounts.of("abcab", 2)
    assert c.total == 4 == sum(c.counts.values())
    assert NGramCounts.of("ab", 3).total == 0


def test_dist_n_examples():
    assert dist_n(["a", "a", "b"], 1) == 2 / 3
    assert dist_n(list("abcde"), 1) == 1.0
    with pytest.raises(UndefinedMetricError):
        dist_n(["a", "b"], 3)


def test_ent_n_examples():
    assert ent_n(["a", "b"], 1) == pytest.approx(math.log(2), abs=1e-12)
    assert ent_n(["a", "a", "a"], 1) == 0.0
    assert ent_n(["a", "a", "b", "c"], 1) == pytest.approx(1.039721, abs=1e-6)
    with pytest.raises(UndefinedMetricError):
        ent_n([], 1)


def test_ngram_diversity_examples():
    assert ngram_diversity(["a"] * 5) == pytest.approx(0.456667, abs=1e-6)
    assert ngram_diversity(list("abcde")) == 1.0
    with pytest.raises(UndefinedMetricError):
        ngram_diversity(list("abcd"))


@given(toks=tokens, n=st.integers(1, 4))
def test_diversity_bounds(toks, n):
    if len(toks) < n:
        with pytest.raises(UndefinedMetricError):
            dist_n(toks, n)
        return
    d = dist_n(toks, n)
    e = ent_n(toks, n)
    total = len(toks) - n + 1
    assert 0.0 < d <= 1.0
    assert -1e-12 <= e <= math.log(total) + 1e-12
    assert (e == 0.0) == (len(set(NGramCounts.of(toks, n).counts)) == 1)


def test_set_diversity_uses_concatenation():
    members = [["a", "b"], ["a", "b"]]
    assert dist_n(concatenate(members), 1) == 0.5
    # the join creates the cross-member bigram (b, a)
    assert dist_n(concatenate(members), 2) == 2 / 3


# --- BLEU ---------------------------------------------------------------------------


def test_bleu_examples():
    assert bleu([["the", "cat", "sat", "on", "the", "mat"]], [["the", "cat", "sat", "on", "the", "mat"]]) == 100.0
    assert bleu([["the"] * 3], [["the", "cat"]], max_n=1) == pytest.approx(33.333, abs=1e-3)
    assert bleu([["the"]], [["the", "cat"]], max_n=1) == pytest.approx(36.788, abs=1e-3)


def test_bleu_empty_candidate_warns(caplog):
    with caplog.at_level("WARNING"):
        assert bleu([[]], [["a", "b"]]) == 0.0
    assert "zero-length" in caplog.text


def test_bleu_corpus_sums_statistics():
    cands = [["a", "b", "c", "d"], ["a", "x"]]
    refs = [["a", "b", "c", "d"], ["a", "y"]]
    # p1 = 5/6, p2..p4 ~ 3/4, 2/2, 1/1 summed over both pairs; c = r = 6
    expect = 100 * math.exp((math.log(5 / 6) + math.log(3 / 4) + math.log(2 / 2) + math.log(1 / 1)) / 4)
    assert bleu(cands, refs) == pytest.approx(expect, rel=1e-12)


def test_bleu_multi_reference_clipping():
    # the appears twice in the second reference, so two matches are allowed
    cand = ["the", "the", "the"]
    refs = [["the", "cat"], ["the", "the", "dog"]]
    assert bleu([cand], [refs], max_n=1) == pytest.approx(100 * 2 / 3)


def test_sentence_bleu_smoothing():
    # no bigram matches: p2 smoothed to 1/(2+1)
    s = sentence_bleu(["a", "b", "c"], [["c", "b", "a"]], max_n=2)
    assert s == pytest.approx(100 * math.exp((math.log(3 / 3) + math.log(1 / 3)) / 2))


@settings(max_examples=100)
@given(x=tokens)
def test_bleu_and_rouge_identity(x):
    assert bleu([x], [x]) == pytest.approx(100.0, abs=1e-9) or len(x) < 4
    assert sentence_bleu(x, [x]) == pytest.approx(100.0) or len(x) < 4
    assert rouge_l(x, x) == 1.0


@settings(max_examples=100)
@given(c=st.lists(st.sampled_from("ab"), min_size=4, max_size=12), r=st.lists(st.sampled_from("ab"), min_size=4, max_size=12))
def test_corpus_equals_sentence_when_no_smoothing_needed(c, r):
    unsmoothed = bleu([c], [r])
    m = [sum(min(v, NGramCounts.of(r, n).counts[g]) for g, v in NGramCounts.of(c, n).counts.items()) for n in range(1, 5)]
    if all(m):
        assert sentence_bleu(c, [r]) == pytest.approx(unsmoothed, rel=1e-12)


# --- self-BLEU ----------------------------------------------------------------------


def test_self_bleu_examples():
    same = [["a", "b", "c", "d"]] * 4
    assert self_bleu(same) == pytest.approx(100.0)
    disjoint = [["a", "b", "c", "d"], ["e", "f", "g", "h"], ["i", "j", "k", "l"]]
    assert self_bleu(disjoint) <= 1.0
    toy = [["a", "b", "c"], ["a", "b", "d"], ["b", "c", "d"]]
    by_hand = [
        sentence_bleu(toy[0], [toy[1], toy[2]]),
        sentence_bleu(toy[1], [toy[0], toy[2]]),
        sentence_bleu(toy[2], [toy[0], toy[1]]),
    ]
    assert self_bleu(toy) == pytest.approx(sum(by_hand) / 3, rel=1e-12)
    with pytest.raises(InvalidSetError):
        self_bleu([["a"]])


@settings(max_examples=50)
@given(members=st.lists(tokens, min_size=2, max_size=5), seed=st.integers(0, 1000))
def test_self_bleu_permutation_invariant(members, seed):
    shuffled = [members[i] for i in np.random.default_rng(seed).permutation(len(members))]
    assert self_bleu(shuffled) == pytest.approx(self_bleu(members), rel=1e-12, abs=1e-12)


# --- ROUGE-L ------------------------------------------------------------------------


def test_rouge_l_examples():
    assert rouge_l(["the", "cat"], ["the", "cat"]) == 1.0
    assert rouge_l(["the", "cat", "sat"], ["the", "cat", "ran"]) == pytest.approx(0.6667, abs=1e-4)
    assert rouge_l(["a", "b"], ["c", "d"]) == 0.0
    with pytest.raises(InvalidReferenceError):
        rouge_l(["a"], [])


# --- repetition and length ----------------------------------------------------------


@pytest.mark.parametrize(
    "toks, expected",
    [
        (list("ABABAB"), (True, ("A", "B"))),
        (list("ABABC"), (False, None)),
        (list("AAAAAA"), (True, ("A", "A"))),
        (list("ABABAB") + ["</s>"], (True, ("A", "B"))),
        (list("CABCABCAB"), (True, ("C", "A", "B"))),
        (list("ABAB"), (False, None)),
    ],
)
def test_repetition_truth_table(toks, expected):
    assert detect_repetition(toks) == expected


@settings(max_examples=200)
@given(n=st.integers(0, 40))
def test_repetition_never_fires_on_distinct_tokens(n):
    assert detect_repetition([f"w{i}" for i in range(n)]) == (False, None)


def test_length_errors_examples():
    assert length_errors([5, 7], [5, 7]) == (0.0, 0.0)
    assert length_errors([10], [8]) == (25.0, 25.0)
    assert length_errors([6, 10], [8, 8]) == (25.0, 0.0)
    with pytest.raises(InvalidReferenceError):
        length_errors([1], [0])


@given(pairs=st.lists(st.tuples(st.integers(0, 50), st.integers(1, 50)), min_size=1, max_size=20))
def test_mpe_bounded_by_mape(pairs):
    g, r = zip(*pairs)
    mape, mpe = length_errors(g, r)
    assert mpe <= mape + 1e-9
    signs = {np.sign(a - b) for a, b in pairs if a != b}
    if len(signs) <= 1 and (not signs or signs == {1}):
        assert mpe == pytest.approx(mape)


# --- set protocol -------------------------------------------------------------------

KINDS = {"greedy": "greedy", "beam-5": "beam", "ancestral": "ancestral", "mbr": "mbr"}


def rec(inp, dec, i, toks=("a", "b")):
    return GenerationRecord(inp, dec, i, tuple(toks), " ".join(toks), -1.0, -0.5, False)


def test_sets_conditional():
    records = [rec("1", "beam-5", i) for i in range(5)] + [rec("1", "greedy", 0), rec("1", "mbr", 0)]
    records += [rec("1", "ancestral", i, (str(i),)) for i in range(12)]
    sets = collect_metric_sets(records, KINDS, "conditional", K=10)
    assert sorted((s.decoder, len(s.members)) for s in sets) == [("ancestral", 10), ("beam-5", 5)]
    anc = [s for s in sets if s.decoder == "ancestral"][0]
    assert anc.members == [(str(i),) for i in range(10)]


def test_sets_insufficient_samples():
    with pytest.raises(InsufficientSamplesError):
        collect_metric_sets([rec("1", "ancestral", i) for i in range(3)], KINDS, "conditional", K=10)


def test_sets_unconditional_partition():
    records = [rec(f"u{i}", "ancestral", 0, (f"t{i}",)) for i in range(25)]
    sets = collect_metric_sets(records, KINDS, "unconditional", K=10, rng=3)
    assert [s.input_id for s in sets] == ["pool-0000", "pool-0001"]
    members = [m for s in sets for m in s.members]
    assert len(members) == len(set(members)) == 20
