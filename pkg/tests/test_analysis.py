import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decodekit.analysis import (
    AggregatedRating,
    GroupingSpec,
    RatingRecord,
    aggregate_ratings,
    ancestral_contrast,
    bonferroni,
    bootstrap_diff_ci,
    compare_to_best,
    competition_ranks,
    correlation_matrix,
    pearson,
    permutation_test,
    quality_diversity_points,
    quality_probability_curve,
    rank_groups,
)
from decodekit.errors import (
    InsufficientDataError,
    InvalidParameterError,
    InvalidPValueError,
    JoinError,
    MissingRatingError,
    PairingError,
    UndefinedCorrelationError,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


# --- ratings ------------------------------------------------------------------------


def ratings(scores, criterion="fluency"):
    return [RatingRecord("1", "greedy", criterion, f"r{i}", s) for i, s in enumerate(scores)]


@pytest.mark.parametrize("scores, median", [([1, 2, 3, 7, 8], 3.0), ([5, 5, 5], 5.0), ([2, 4], 3.0)])
def test_median_aggregation(scores, median):
    (agg,) = aggregate_ratings(ratings(scores))
    assert agg == AggregatedRating("1", "greedy", "fluency", median)


def test_rating_validation():
    with pytest.raises(InvalidParameterError):
        RatingRecord("1", "greedy", "fluency", "r", 9)
    with pytest.raises(InvalidParameterError):
        RatingRecord("1", "greedy", "coherence", "r", 3)
    with pytest.raises(InvalidParameterError):
        aggregate_ratings(ratings([3], "adequacy"), task="story")
    aggregate_ratings(ratings([3], "adequacy"), task="dialogue")


@given(st.lists(st.integers(1, 8), min_size=1, max_size=9))
def test_medians_stay_on_scale(scores):
    (agg,) = aggregate_ratings(ratings(scores))
    assert 1.0 <= agg.median_score <= 8.0
    assert (2 * agg.median_score).is_integer()


# --- correlation --------------------------------------------------------------------


def test_pearson_examples():
    x = [1.0, 2.0, 5.0, 3.0]
    assert pearson(x, x) == pytest.approx(1.0)
    assert pearson(x, [-v for v in x]) == pytest.approx(-1.0)
    assert pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(0.981981, abs=1e-6)
    with pytest.raises(UndefinedCorrelationError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(InvalidParameterError):
        pearson([1, 2], [1, 2, 3])


@settings(max_examples=200)
@given(
    xy=st.lists(st.tuples(finite, finite), min_size=3, max_size=30),
    a=st.floats(0.01, 100),
    b=st.floats(-100, 100),
)
def test_pearson_affine_invariance(xy, a, b):
    x, y = map(np.array, zip(*xy))
    if np.ptp(x) < 1e-3 or np.ptp(y) < 1e-3:
        return
    r = pearson(x, y)
    assert -1.0 <= r <= 1.0
    assert pearson(a * x + b, y) == pytest.approx(r, abs=1e-9)


def test_pearson_affine_invariance_random():
    rng = np.random.default_rng(0)
    for _ in range(100):
        x, y = rng.normal(size=(2, 20))
        a, b = rng.uniform(0.1, 10), rng.normal()
        assert abs(pearson(a * x + b, y) - pearson(x, y)) <= 1e-12
        assert abs(pearson(x, a * y + b) - pearson(x, y)) <= 1e-12


def test_ancestral_contrast_examples():
    assert ancestral_contrast([1.0] * 4, [0.0] * 4) == pytest.approx(-1.0)
    assert ancestral_contrast([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]) == pytest.approx(0.0, abs=1e-15)
    d, a = [0.3, 0.9, 0.1], [0.5, 0.2]
    assert ancestral_contrast(d, a) == pearson(d + a, [0, 0, 0, 1, 1])
    with pytest.raises(InvalidParameterError):
        ancestral_contrast([], [1.0])


def test_correlation_matrix_marks_undefined():
    names, m = correlation_matrix({"x": [1, 2, 3], "y": [2, 4, 7], "flat": [1, 1, 1]})
    assert names == ["x", "y", "flat"]
    assert m[0, 0] == pytest.approx(1.0) and m[0, 1] == m[1, 0]
    assert np.isnan(m[2]).all()


# --- permutation tests --------------------------------------------------------------


def test_identical_vectors_give_p_one():
    a = [1.0, 5.0, 2.0, 7.0]
    assert permutation_test(a, a) == 1.0
    assert permutation_test(a * 10, a * 10, exact=False) == 1.0


def test_exact_dominance_p_value():
    a = np.arange(12, dtype=float) + 3
    b = a - 3
    # only the all-plus and all-minus patterns reach the observed |mean|
    assert permutation_test(a, b) == 2 / 2**12


def test_large_shift_sampled():
    rng = np.random.default_rng(1)
    d = 10 + rng.normal(scale=1e-3, size=30)
    assert permutation_test(d, np.zeros(30), seed=4) <= 0.001


def test_pairing_error():
    with pytest.raises(PairingError):
        permutation_test([1, 2, 3], [1, 2])


def test_exact_matches_hand_enumeration():
    a, b = [3.0, 1.0, 4.0], [1.0, 1.0, 2.0]  # d = [2, 0, 2], |mean| = 4/3
    # sign patterns over (2, 0, 2): |mean| = 4/3 when both 2s share a sign: 4 of 8 patterns
    assert permutation_test(a, b) == 0.5


@pytest.mark.parametrize("n", [8, 12])
def test_sampled_agrees_with_exact(n):
    errors = []
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        a = rng.normal(size=n)
        b = a + rng.normal(0.3, 1.0, size=n)
        exact = permutation_test(a, b, exact=True)
        sampled = permutation_test(a, b, rounds=10_000, seed=seed, exact=False)
        errors.append(sampled - exact)
    assert abs(np.mean(errors)) <= 0.005


def test_bonferroni_examples():
    assert bonferroni([0.01, 0.02]) == pytest.approx([0.02, 0.04])
    assert bonferroni([0.7, 0.9]) == [1.0, 1.0]
    assert bonferroni([0.3]) == [0.3]
    with pytest.raises(InvalidPValueError):
        bonferroni([0.5, 1.2])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_bonferroni_monotone(ps):
    adj = bonferroni(ps)
    for p, q in zip(ps, adj):
        assert q >= p
    order = np.argsort(ps, kind="stable")
    assert all(adj[i] <= adj[j] for i, j in zip(order, order[1:]))


def test_compare_to_best():
    inputs = [str(i) for i in range(12)]
    base = {i: float(k % 3) for k, i in enumerate(inputs)}
    scores = {
        "good": {i: v + 3 for i, v in base.items()},
        "same_a": dict(base),
        "same_b": dict(base),
    }
    results = compare_to_best(scores, seed=0)
    by_other = {r.decoder_pair[1]: r for r in results}
    assert set(by_other) == {"same_a", "same_b"}
    for r in results:
        assert r.decoder_pair[0] == "good"
        assert r.p_value == 2 / 2**12
        assert r.p_adjusted == 2 * r.p_value and r.significant
    # two identical decoders compared with each other
    twin = compare_to_best({"x": dict(base), "y": dict(base)})
    assert twin[0].p_adjusted == 1.0 and not twin[0].significant


def test_bootstrap_interval():
    rng = np.random.default_rng(0)
    a = rng.normal(1.0, 0.1, size=50)
    b = rng.normal(0.0, 0.1, size=50)
    lo, hi = bootstrap_diff_ci(a, b, seed=1)
    assert 0.9 < lo < hi < 1.1
    lo2, hi2 = bootstrap_diff_ci(a, b, seed=1, paired=False)
    assert lo2 > 0.9 and hi2 < 1.1


# --- ranks --------------------------------------------------------------------------

SEVEN = GroupingSpec.from_kinds(
    {
        "greedy": "greedy",
        "beam-5": "beam",
        "beam-10": "beam",
        "dbs": "diverse_beam",
        "ancestral": "ancestral",
        "top_k": "top_k",
        "top_p": "top_p",
        "mbr": "mbr",
    }
)


def test_default_grouping():
    assert SEVEN.deterministic == {"greedy", "beam-5", "beam-10", "dbs"}
    assert SEVEN.stochastic == {"ancestral", "top_k", "top_p"}
    assert SEVEN.excluded == {"mbr"}
    with pytest.raises(InvalidParameterError):
        GroupingSpec({"a"}, {"a"})


def test_competition_ranks():
    assert competition_ranks({"a": 5, "b": 7, "c": 5, "d": 1}) == {"b": 1, "a": 2, "c": 2, "d": 4}


def test_rank_groups_examples():
    det_best = {("1", d): 8.0 for d in SEVEN.deterministic}
    det_best.update({("1", d): 2.0 for d in SEVEN.stochastic})
    s = rank_groups(det_best, SEVEN)
    assert s.per_input["1"] == {"deterministic": 1, "stochastic": 5}
    tied = {("1", d): 4.0 for d in SEVEN.ranked}
    tied[("1", "mbr")] = 8.0  # excluded decoders do not take ranks
    assert rank_groups(tied, SEVEN).per_input["1"] == {"deterministic": 1, "stochastic": 1}


def test_rank_groups_from_aggregated_and_missing():
    agg = [AggregatedRating("1", d, "fluency", 3.0) for d in sorted(SEVEN.ranked)]
    assert rank_groups(agg, SEVEN).histogram == {"deterministic": {1: 1}, "stochastic": {1: 1}}
    with pytest.raises(MissingRatingError):
        rank_groups(agg[:-1], SEVEN)


@settings(max_examples=300)
@given(
    scores=st.lists(st.integers(1, 8), min_size=7, max_size=7),
    n_det=st.integers(1, 6),
)
def test_rank_bounds(scores, n_det):
    names = [f"d{i}" for i in range(7)]
    g = GroupingSpec(frozenset(names[:n_det]), frozenset(names[n_det:]))
    s = rank_groups({("x", n): float(v) for n, v in zip(names, scores)}, g)
    assert s.per_input["x"]["deterministic"] <= 7 - n_det + 1
    assert s.per_input["x"]["stochastic"] <= 7 - (7 - n_det) + 1


# --- trade-off curves ---------------------------------------------------------------


def test_quality_probability_curve():
    rng = np.random.default_rng(0)
    x = rng.normal(size=103)
    flat = quality_probability_curve(list(zip(x, [2.0] * 103)))
    assert {q for _, q, _ in flat} == {2.0}
    assert {c for _, _, c in flat} == {10, 11}
    mono = quality_probability_curve(list(zip(x, x)))
    qs = [q for _, q, _ in mono]
    assert all(a < b for a, b in zip(qs, qs[1:]))
    with pytest.raises(InsufficientDataError):
        quality_probability_curve([(0.0, 1.0)] * 9)


@given(n=st.integers(10, 300), bins=st.integers(1, 10))
def test_curve_bins_balanced(n, bins):
    pts = quality_probability_curve([(float(i % 7), 1.0) for i in range(n)], bins)
    counts = [c for _, _, c in pts]
    assert sum(counts) == n and max(counts) - min(counts) <= 1


def test_quality_diversity_points():
    k = ("1", "beam-5")
    assert quality_diversity_points({k: 0.4}, {k: 3.0}) == [(0.4, 3.0, "beam-5", "1")]
    with pytest.raises(JoinError):
        quality_diversity_points({k: 0.4}, {("2", "beam-5"): 3.0})
    left = {("1", "a"): 0.1, ("2", "a"): 0.2, ("3", "a"): 0.3}
    right = {("2", "a"): 1.0, ("3", "a"): 2.0, ("4", "a"): 3.0}
    assert len(quality_diversity_points(left, right, strict=False)) == 2
