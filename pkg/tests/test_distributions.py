import math
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from knowprobe.distributions import (
    OOV_TOKEN,
    KnowledgeScore,
    SupportDistribution,
    TokenProb,
    TopKPrediction,
    approximate_pair,
    entropy,
    kl_divergence,
    knowledge_scores,
)
from knowprobe.errors import InvalidDistributionError, InvalidInputError, SupportMismatchError

# Frozen from term-by-term summation with the math module (no package code).
H_07_02_01 = 0.8018185525433372
KL_HALF_VS_09 = 0.5108256237659907
H_09_01 = 0.3250829733914482


def D(**kw):
    mapping = {("oov" if k == "oov" else k): v for k, v in kw.items()}
    if "oov" in mapping:
        mapping[OOV_TOKEN] = mapping.pop("oov")
    return SupportDistribution.from_mapping(mapping)


def random_topk(rng, vocab, k, allow_zero_residual=True):
    n = int(rng.integers(0, min(k, len(vocab)) + 1))
    tokens = rng.choice(vocab, size=n, replace=False)
    raw = rng.dirichlet(np.ones(n + 1))
    if allow_zero_residual and rng.random() < 0.2:
        raw[-1] = 0.0
        raw = raw / raw.sum() if raw.sum() > 0 else np.r_[np.zeros(n), 1.0]
    return TopKPrediction.from_pairs(zip(tokens, raw[:n]), k=k)


class TestTypes:
    def test_token_prob_rejects_empty_and_out_of_range(self):
        with pytest.raises(InvalidInputError):
            TokenProb("", 0.5)
        with pytest.raises(InvalidInputError):
            TokenProb("a", 1.5)
        with pytest.raises(InvalidInputError):
            TokenProb("a", float("nan"))

    def test_topk_invariants(self):
        with pytest.raises(InvalidInputError, match="sorted"):
            TopKPrediction((TokenProb("a", 0.1), TokenProb("b", 0.2)), 2, 0.7)
        with pytest.raises(InvalidInputError, match="duplicate"):
            TopKPrediction((TokenProb("a", 0.2), TokenProb("a", 0.2)), 2, 0.6)
        with pytest.raises(InvalidInputError, match="exceed"):
            TopKPrediction((TokenProb("a", 0.5), TokenProb("b", 0.5)), 1, 0.0)
        with pytest.raises(InvalidInputError, match="sum"):
            TopKPrediction((TokenProb("a", 0.5),), 1, 0.1)
        with pytest.raises(InvalidInputError, match="reserved"):
            TopKPrediction.from_pairs({OOV_TOKEN: 1.0})

    def test_from_pairs_sorts_and_fills_residual(self):
        pred = TopKPrediction.from_pairs({"b": 0.3, "a": 0.6})
        assert pred.tokens == ("a", "b")
        assert pred.residual_mass == pytest.approx(0.1)
        assert pred.k == 2

    def test_roundtrip_dict(self):
        pred = TopKPrediction.from_pairs({"a": 0.6, "b": 0.3}, k=5)
        assert TopKPrediction.from_dict(pred.to_dict()) == pred

    def test_support_distribution_invariants(self):
        with pytest.raises(InvalidDistributionError, match="OOV"):
            SupportDistribution(("a",), (1.0,))
        with pytest.raises(InvalidDistributionError, match="sum"):
            D(a=0.5, b=0.4)
        with pytest.raises(InvalidDistributionError):
            SupportDistribution(("a", OOV_TOKEN), (1.2, -0.2))
        with pytest.raises(InvalidDistributionError, match="distinct"):
            SupportDistribution(("a", "a", OOV_TOKEN), (0.5, 0.5, 0.0))

    def test_knowledge_score_delta_invariant(self):
        with pytest.raises(InvalidInputError):
            KnowledgeScore("f", 1.0, 0.5, 0.4, 0.1)
        with pytest.raises(InvalidInputError):
            KnowledgeScore("f", 1.0, 0.5, 0.5, -0.1)


class TestEntropy:
    def test_uniform_two(self):
        assert entropy(D(a=0.5, b=0.5, oov=0.0)) == pytest.approx(math.log(2), abs=1e-12)

    def test_point_mass(self):
        assert entropy(D(a=1.0, oov=0.0)) == 0.0

    def test_three_way_matches_oracle(self):
        assert entropy(D(a=0.7, b=0.2, c=0.1)) == pytest.approx(H_07_02_01, abs=1e-12)

    @pytest.mark.parametrize("n", [2, 10, 100])
    def test_uniform_is_log_n(self, n):
        d = SupportDistribution.from_mapping({f"t{i}": 1.0 / n for i in range(n)})
        assert abs(entropy(d) - math.log(n)) < 1e-9

    def test_rejects_non_distribution(self):
        with pytest.raises(InvalidDistributionError):
            entropy({"a": 1.0})

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30))
    def test_bounds(self, weights):
        w = np.asarray(weights + [1e-3])
        w = w / w.sum()
        d = SupportDistribution(tuple(f"t{i}" for i in range(len(w) - 1)) + (OOV_TOKEN,), tuple(w))
        h = entropy(d)
        assert 0.0 <= h <= math.log(len(d)) + 1e-12


class TestKL:
    def test_identical_is_zero(self):
        p = D(a=0.5, b=0.5)
        assert kl_divergence(p, p) == 0.0

    def test_matches_oracle(self):
        assert kl_divergence(D(a=0.5, b=0.5), D(a=0.9, b=0.1)) == pytest.approx(KL_HALF_VS_09, abs=1e-9)

    def test_permutation_changes_kl_not_entropy(self):
        p = D(a=0.7, b=0.2, c=0.1)
        q = D(a=0.1, b=0.2, c=0.7)
        assert entropy(p) == pytest.approx(entropy(q), abs=1e-12)
        assert kl_divergence(p, q) > 0

    def test_support_mismatch(self):
        with pytest.raises(SupportMismatchError):
            kl_divergence(D(a=0.5, b=0.5), D(b=0.5, a=0.5))

    def test_zero_on_one_side_is_finite(self):
        val = kl_divergence(D(a=1.0, oov=0.0), D(a=0.0, oov=1.0))
        assert math.isfinite(val) and val > 20

    def test_tiny_difference_is_positive(self):
        p = D(a=0.5, b=0.5)
        q = D(a=0.5 + 1e-9, b=0.5 - 1e-9)
        assert kl_divergence(p, q) > 0

    def test_gibbs_random(self):
        rng = np.random.default_rng(0)
        for _ in range(2000):
            n = int(rng.integers(1, 12))
            support = tuple(f"t{i}" for i in range(n)) + (OOV_TOKEN,)
            p = SupportDistribution(support, tuple(rng.dirichlet(np.ones(n + 1))))
            q = SupportDistribution(support, tuple(rng.dirichlet(np.ones(n + 1))))
            val = kl_divergence(p, q)
            assert val >= 0
            if np.max(np.abs(p.as_array() - q.as_array())) >= 1e-9:
                assert val > 0

    def test_close_pairs_agree_with_naive_sum(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            support = ("a", "b", "c", OOV_TOKEN)
            p = rng.dirichlet(np.ones(4))
            q = rng.dirichlet(np.ones(4))
            naive = sum(x * math.log(x / y) for x, y in zip(p, q))
            got = kl_divergence(SupportDistribution(support, tuple(p)), SupportDistribution(support, tuple(q)))
            assert got == pytest.approx(naive, rel=1e-9, abs=1e-12)

    def test_log_base_change_preserves_order(self):
        rng = np.random.default_rng(2)
        support = ("a", "b", "c", OOV_TOKEN)
        ref = SupportDistribution(support, tuple(rng.dirichlet(np.ones(4))))
        others = [SupportDistribution(support, tuple(rng.dirichlet(np.ones(4)))) for _ in range(50)]
        nats = np.array([kl_divergence(ref, o) for o in others])
        bits = nats / math.log(2)
        ents = np.array([entropy(o) for o in others])
        np.testing.assert_array_equal(np.argsort(nats, kind="stable"), np.argsort(bits, kind="stable"))
        np.testing.assert_array_equal(
            np.argsort(ents, kind="stable"), np.argsort(ents / math.log(10), kind="stable")
        )


class TestApproximatePair:
    def test_worked_example(self):
        before = TopKPrediction.from_pairs({"a": 0.6, "b": 0.3})
        after = TopKPrediction.from_pairs({"a": 0.5, "c": 0.4})
        p, q = approximate_pair(before, after)
        assert p.support == ("a", "b", "c", OOV_TOKEN)
        np.testing.assert_allclose(p.probs, [0.6, 0.3, 0.05, 0.05], atol=1e-12)
        np.testing.assert_allclose(q.probs, [0.5, 0.05, 0.4, 0.05], atol=1e-12)

    def test_zero_residual_identical(self):
        pred = TopKPrediction.from_pairs({"a": 1.0})
        p, q = approximate_pair(pred, pred)
        assert p.as_dict() == {"a": 1.0, OOV_TOKEN: 0.0}
        assert q == p

    def test_residual_goes_to_oov_only(self):
        before = TopKPrediction.from_pairs({"a": 0.6, "b": 0.4})
        after = TopKPrediction.from_pairs({"a": 0.2, "b": 0.2})
        p, q = approximate_pair(before, after)
        assert p.support == ("a", "b", OOV_TOKEN)
        np.testing.assert_allclose(p.probs, [0.6, 0.4, 0.0], atol=1e-12)
        np.testing.assert_allclose(q.probs, [0.2, 0.2, 0.6], atol=1e-12)

    def test_rejects_invalid(self):
        with pytest.raises(InvalidInputError):
            approximate_pair({"a": 1.0}, TopKPrediction.from_pairs({"a": 1.0}))

    def test_randomized_normalization_and_support(self):
        rng = np.random.default_rng(3)
        vocab = np.array([f"w{i}" for i in range(40)])
        for _ in range(1000):
            k = int(rng.integers(1, 15))
            a = random_topk(rng, vocab, k)
            b = random_topk(rng, vocab, k)
            p, q = approximate_pair(a, b)
            assert abs(sum(p.probs) - 1) <= 1e-9 and abs(sum(q.probs) - 1) <= 1e-9
            assert len(p) == len(set(a.tokens) | set(b.tokens)) + 1
            assert p.support == q.support

    def test_exactness_when_nothing_missing(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            n = int(rng.integers(1, 8))
            w = rng.dirichlet(np.ones(n))
            pred = TopKPrediction.from_pairs(zip([f"t{i}" for i in range(n)], w), residual_mass=0.0)
            # residual 0 requires entries to sum to 1 within tolerance
            p, q = approximate_pair(pred, pred)
            assert p.probs[:-1] == pred.probs
            assert p.probs[-1] == 0.0


class TestKnowledgeScores:
    def test_unchanged_prediction(self):
        pred = TopKPrediction.from_pairs({"a": 0.6, "b": 0.3})
        s = knowledge_scores(pred, pred, fact_id="f1")
        assert s.entropy_delta == 0.0
        assert s.kl_score == 0.0

    def test_composition(self):
        s = knowledge_scores(
            TopKPrediction.from_pairs({"a": 0.5, "b": 0.5}),
            TopKPrediction.from_pairs({"a": 0.9, "b": 0.1}),
        )
        assert s.entropy_before == pytest.approx(math.log(2), abs=1e-12)
        assert s.entropy_after == pytest.approx(H_09_01, abs=1e-12)
        assert s.entropy_delta == pytest.approx(0.368064, abs=1e-6)
        assert s.kl_score == pytest.approx(KL_HALF_VS_09, abs=1e-9)

    def test_gold_rank(self):
        before = TopKPrediction.from_pairs({"b": 0.6, "a": 0.4})
        assert knowledge_scores(before, before, gold="a").gold_rank == 2
        assert knowledge_scores(before, before, gold="z").gold_rank is None
        assert knowledge_scores(before, before).gold_rank is None

    def test_negative_delta_is_kept(self):
        s = knowledge_scores(
            TopKPrediction.from_pairs({"a": 0.9, "b": 0.1}),
            TopKPrediction.from_pairs({"a": 0.5, "b": 0.5}),
        )
        assert s.entropy_delta < 0

    def test_roundtrip(self):
        s = knowledge_scores(
            TopKPrediction.from_pairs({"a": 0.5, "b": 0.5}),
            TopKPrediction.from_pairs({"a": 0.9, "b": 0.1}),
            gold="a", fact_id="x", mode="implicit", flags=["multi_token_gold"],
        )
        assert KnowledgeScore.from_dict(s.to_dict()) == s


@pytest.mark.parametrize("perm", [p for p in itertools.permutations(range(4)) if p != (0, 1, 2, 3)])
def test_every_permutation_of_distinct_values(perm):
    probs = np.array([0.4, 0.3, 0.2, 0.1])
    support = ("a", "b", "c", OOV_TOKEN)
    p = SupportDistribution(support, tuple(probs))
    q = SupportDistribution(support, tuple(probs[list(perm)]))
    assert entropy(p) == pytest.approx(entropy(q), abs=1e-12)
    assert kl_divergence(p, q) > 0
