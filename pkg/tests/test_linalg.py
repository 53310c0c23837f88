import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from echobench.errors import DimensionError, EmptyInputError, InvalidInputError
from echobench.linalg import (
    cosine_similarity,
    log_sum_exp,
    mean_vectors,
    softmax_rows,
)

finite_floats = st.floats(
    min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False
)


def vec_strategy(n):
    return arrays(np.float64, n, elements=finite_floats)


class TestCosineSimilarity:
    def test_parallel(self):
        assert cosine_similarity([1.0, 0.0], [2.0, 0.0]) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 3.0]) == pytest.approx(0.0)

    def test_antiparallel(self):
        assert cosine_similarity([1.0, 1.0], [-2.0, -2.0]) == pytest.approx(-1.0)

    def test_both_zero_scores_zero(self):
        assert cosine_similarity([0.0, 0.0], [0.0, 0.0]) == 0.0

    def test_one_zero_scores_zero(self):
        assert cosine_similarity([0.0, 0.0], [1.0, 2.0]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            cosine_similarity([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            cosine_similarity([np.nan, 1.0], [1.0, 1.0])

    @given(vec_strategy(6))
    @settings(max_examples=100)
    def test_self_similarity_of_nonzero(self, v):
        if np.linalg.norm(v) > 1e-3:
            assert abs(cosine_similarity(v, v) - 1.0) < 1e-9

    @given(vec_strategy(5), vec_strategy(5))
    @settings(max_examples=100)
    def test_bounded(self, a, b):
        s = cosine_similarity(a, b)
        assert -1.0 - 1e-9 <= s <= 1.0 + 1e-9

    @given(vec_strategy(4), st.floats(min_value=0.1, max_value=1e3))
    @settings(max_examples=100)
    def test_scale_invariance(self, v, c):
        # The epsilon in the denominator perturbs the ratio by about
        # eps / norm, so keep norms comfortably above it.
        if np.linalg.norm(v) > 0.1:
            w = np.array([1.0, -2.0, 0.5, 3.0])
            assert cosine_similarity(v, w) == pytest.approx(
                cosine_similarity(c * v, w), abs=1e-9
            )


class TestMeanVectors:
    def test_two_vectors(self):
        out = mean_vectors([[1.0, 3.0], [3.0, 1.0]])
        assert np.array_equal(out, [2.0, 2.0])

    def test_three_vectors(self):
        out = mean_vectors([[2.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
        assert np.array_equal(out, [1.0, 1.0])

    def test_single_vector_identity(self):
        v = np.array([0.1, 0.2, 0.3])
        assert np.array_equal(mean_vectors([v]), v)

    def test_empty_rejected(self):
        with pytest.raises(EmptyInputError):
            mean_vectors([])

    def test_ragged_rejected(self):
        with pytest.raises(DimensionError):
            mean_vectors([[1.0, 2.0], [1.0, 2.0, 3.0]])

    @given(vec_strategy(5), st.integers(min_value=1, max_value=97))
    @settings(max_examples=100)
    def test_n_copies_exact(self, v, n):
        out = mean_vectors([v] * n)
        assert np.array_equal(out, v)


class TestSoftmaxRows:
    def test_two_logits(self):
        out = softmax_rows([[1.0, 0.0]])
        assert out[0, 0] == pytest.approx(0.7310586, abs=1e-6)
        assert out[0, 1] == pytest.approx(0.2689414, abs=1e-6)

    def test_extreme_logits_no_overflow(self):
        out = softmax_rows([[1000.0, 0.0]])
        assert out[0, 0] == pytest.approx(1.0, abs=1e-9)
        assert out[0, 1] == pytest.approx(0.0, abs=1e-9)

    def test_scale_sharpens(self):
        mild = softmax_rows([[1.0, 0.0]], scale=1.0)
        sharp = softmax_rows([[1.0, 0.0]], scale=10.0)
        assert sharp[0, 0] > mild[0, 0]

    def test_bad_scale_rejected(self):
        with pytest.raises(InvalidInputError):
            softmax_rows([[1.0, 0.0]], scale=0.0)

    @given(
        arrays(
            np.float64,
            (3, 4),
            elements=st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
        )
    )
    @settings(max_examples=100)
    def test_rows_sum_to_one_at_extreme_magnitudes(self, m):
        out = softmax_rows(m)
        assert np.isfinite(out).all()
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-12)
        assert (out >= 0.0).all()

    @given(
        arrays(
            np.float64,
            (3, 4),
            elements=st.floats(min_value=-300.0, max_value=300.0, allow_nan=False),
        )
    )
    @settings(max_examples=100)
    def test_entries_positive_when_exp_representable(self, m):
        # Entries can underflow to exactly 0.0 once the gap to the row max
        # exceeds about 745, so strict positivity is asserted only below that.
        assert (softmax_rows(m) > 0.0).all()


class TestLogSumExp:
    def test_pair(self):
        assert log_sum_exp([0.0, 0.0]) == pytest.approx(math.log(2.0))

    def test_large_values_stable(self):
        assert log_sum_exp([1000.0, 1000.0]) == pytest.approx(
            1000.0 + math.log(2.0)
        )

    def test_singleton_exact(self):
        assert log_sum_exp([123.456]) == 123.456

    def test_empty_rejected(self):
        with pytest.raises(EmptyInputError):
            log_sum_exp([])

    @given(vec_strategy(6))
    @settings(max_examples=100)
    def test_dominates_max(self, v):
        out = log_sum_exp(v)
        assert out >= v.max()
        assert out <= v.max() + math.log(len(v)) + 1e-12
