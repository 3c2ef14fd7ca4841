import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zerogen import (CandidateSet, TableMultimodalOracle, WordControlSimCache,
                     amplify_weight, compute_alpha, compute_beta,
                     select_keyword_subset, toy_embed_text)

from helpers import make_vocab, random_table, table_from_rows


def probs_with(v, assignments):
    p = np.zeros(v)
    for tid, value in assignments.items():
        p[tid] = value
    rest = 1.0 - p.sum()
    free = [i for i in range(v) if i not in assignments]
    p[free] = rest / len(free)
    return p


class FixedSimCache:
    """Stands in for WordControlSimCache with preset word-control cosines."""

    def __init__(self, sims):
        self.sims = dict(sims)

    def get(self, tid):
        return self.sims[tid]


def cands_of(ids):
    return CandidateSet(token_ids=tuple(ids), base_scores=np.zeros(len(ids)))


class TestComputeAlpha:
    def test_mean_then_amplify(self):
        p = probs_with(10, {3: 0.1, 7: 0.3})
        d_t, alpha_t = compute_alpha(p, [3, 7], 2, 0.2, 2.5)
        assert d_t == pytest.approx(0.2)
        assert alpha_t == pytest.approx(1.0)

    def test_clamps_at_upper_bound(self):
        p = probs_with(10, {3: 0.6, 7: 0.6})
        d_t, alpha_t = compute_alpha(p, [3, 7], 2, 0.2, 2.5)
        assert d_t == pytest.approx(0.6)
        assert alpha_t == 2.5

    def test_zero_probabilities_zero_weight(self):
        p = np.zeros(10)
        d_t, alpha_t = compute_alpha(p, [3, 7], 2, 0.2, 2.5)
        assert (d_t, alpha_t) == (0.0, 0.0)

    def test_keyword_id_out_of_range(self):
        from zerogen import ConfigError
        with pytest.raises(ConfigError, match="out of vocabulary range"):
            compute_alpha(np.ones(4) / 4, [9], 1, 0.2, 1.0)

    def test_uses_top_n_hat_subset(self):
        p = probs_with(10, {1: 0.4, 2: 0.1, 3: 0.2})
        d_t, _ = compute_alpha(p, [1, 2, 3], 2, 0.2, 9.0)
        assert d_t == pytest.approx((0.4 + 0.2) / 2)


class TestComputeBeta:
    def test_boundary_amplification(self):
        d_v, beta_t = compute_beta(cands_of([0, 1, 2]),
                                   FixedSimCache({0: 0.1, 1: 0.1, 2: 0.1}), 0.2, 0.5)
        assert d_v == pytest.approx(0.1)
        assert beta_t == pytest.approx(0.5)

    def test_sub_threshold_damping(self):
        d_v, beta_t = compute_beta(cands_of([0, 1]),
                                   FixedSimCache({0: 0.02, 1: 0.02}), 0.2, 0.5)
        assert beta_t == pytest.approx(0.1)

    def test_negative_mean_clamps_to_zero(self):
        d_v, beta_t = compute_beta(cands_of([0, 1]),
                                   FixedSimCache({0: -0.3, 1: -0.1}), 0.2, 0.5)
        assert d_v == pytest.approx(-0.2)
        assert beta_t == 0.0

    def test_allow_negative_flag(self):
        _, beta_t = compute_beta(cands_of([0, 1]),
                                 FixedSimCache({0: -0.3, 1: -0.1}), 0.2, 0.5,
                                 allow_negative=True)
        assert beta_t == pytest.approx(-1.0)


class TestSelectKeywordSubset:
    def test_full_set(self):
        p = probs_with(10, {1: 0.2, 5: 0.3})
        assert sorted(select_keyword_subset(p, [1, 5], 2)) == [1, 5]

    def test_top_two_by_probability(self):
        p = probs_with(10, {1: 0.4, 2: 0.1, 3: 0.2})
        assert select_keyword_subset(p, [1, 2, 3], 2) == [1, 3]

    def test_ties_break_low_id(self):
        p = probs_with(10, {4: 0.2, 2: 0.2, 8: 0.2})
        assert select_keyword_subset(p, [8, 4, 2], 2) == [2, 4]

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(37)
        p = rng.dirichlet(np.ones(60))
        ids = [int(x) for x in rng.choice(60, size=40, replace=False)]
        got = select_keyword_subset(p, ids, 2)
        expected = sorted(ids, key=lambda t: (-p[t], t))[:2]
        assert got == expected


class TestWordControlSimCache:
    def test_lazy_deterministic_lookup(self):
        rng = np.random.default_rng(41)
        vocab = make_vocab(6)
        table = random_table(vocab, 4, rng)
        mm = TableMultimodalOracle(table, vocab)
        ctl = toy_embed_text([vocab.tokens[2]], table, vocab)
        cache = WordControlSimCache(mm, vocab, ctl)
        assert cache.get(2) == pytest.approx(1.0)
        assert cache.get(3) == cache.get(3)
        assert -1.0 - 1e-12 <= cache.get(3) <= 1.0 + 1e-12


class TestAmplifyWeight:
    @given(st.floats(min_value=-1, max_value=1), st.floats(min_value=1e-3, max_value=5),
           st.floats(min_value=0, max_value=10))
    @settings(max_examples=200, deadline=None)
    def test_clamped_to_both_bounds(self, d, lam, upper):
        w = amplify_weight(d, lam, upper)
        assert 0.0 <= w <= upper

    @given(st.floats(min_value=0, max_value=1), st.floats(min_value=0, max_value=1))
    @settings(max_examples=100, deadline=None)
    def test_monotone_in_signal(self, a, b):
        lo, hi = sorted((a, b))
        assert amplify_weight(lo, 0.2, 2.5) <= amplify_weight(hi, 0.2, 2.5)

    def test_linear_region_exact(self):
        lam, upper = 0.2, 2.5
        for d in np.linspace(0, lam * upper, 23):
            assert amplify_weight(float(d), lam, upper) == float(d) / lam
