"""Relaxed sort/min/argmax against direct formula re-evaluation oracles."""

import numpy as np
import pytest

from bidarena import diffcore as dc
from bidarena import softsort as ss
from bidarena.errors import ConfigError


def reference_relaxed_sort(scores, tau):
    """Straightforward re-implementation of the relaxed sort matrix."""
    s = np.asarray(scores, dtype=float)
    n = s.size
    a = np.abs(s[:, None] - s[None, :])
    ones = np.ones(n)
    out = np.zeros((n, n))
    for i in range(1, n + 1):
        logits = ((n + 1 - 2 * i) * s - a @ ones) / tau
        e = np.exp(logits - logits.max())
        out[i - 1] = e / e.sum()
    return out


class TestNeuralSort:
    def test_low_temperature_recovers_hard_sort(self):
        perm = ss.neural_sort([3.0, 1.0, 2.0], tau=1e-4).matrix
        hard = np.zeros((3, 3))
        hard[0, 0] = 1.0  # 3 is largest
        hard[1, 2] = 1.0  # 2 is second
        hard[2, 1] = 1.0  # 1 is third
        np.testing.assert_allclose(perm, hard, atol=1e-6)

    def test_tied_scores_split_evenly(self):
        for tau in (0.01, 0.5, 3.0):
            perm = ss.neural_sort([0.7, 0.7], tau=tau).matrix
            np.testing.assert_allclose(perm, np.full((2, 2), 0.5), atol=1e-12)

    def test_matches_reference_formula(self):
        perm = ss.neural_sort([0.9, 0.1, 0.5], tau=1.0).matrix
        np.testing.assert_allclose(
            perm, reference_relaxed_sort([0.9, 0.1, 0.5], 1.0), rtol=1e-12
        )

    def test_row_stochastic_on_random_vectors(self):
        rng = np.random.default_rng(77)
        for _ in range(1000):
            n = rng.integers(1, 6)
            scores = rng.standard_normal(n) * rng.uniform(0.1, 5.0)
            tau = rng.uniform(0.01, 2.0)
            m = ss.neural_sort(scores, tau).matrix
            np.testing.assert_allclose(m.sum(axis=1), np.ones(n), atol=1e-9)
            assert np.all(m >= 0.0) and np.all(m <= 1.0)

    def test_hard_limit_recovery_on_distinct_scores(self):
        rng = np.random.default_rng(123)
        for _ in range(200):
            n = int(rng.integers(2, 6))
            scores = rng.permutation(np.linspace(-1.0, 1.0, n)) + rng.uniform(-0.01, 0.01, n)
            m = ss.neural_sort(scores, tau=1e-6).matrix
            rounded = np.round(m)
            order = np.argsort(-scores, kind="stable")
            expected = np.zeros((n, n))
            expected[np.arange(n), order] = 1.0
            np.testing.assert_array_equal(rounded, expected)

    def test_rejects_bad_temperature(self):
        with pytest.raises(ConfigError):
            ss.neural_sort([1.0, 2.0], tau=0.0)
        with pytest.raises(ConfigError):
            ss.neural_sort([1.0, 2.0], tau=-1.0)

    def test_row_builder_handles_batches(self):
        rng = np.random.default_rng(5)
        batch = rng.standard_normal((10, 4))
        row1 = ss.neural_sort_row(batch, rank=1, tau=0.7)
        for b in range(10):
            np.testing.assert_allclose(
                row1[b], reference_relaxed_sort(batch[b], 0.7)[1], rtol=1e-12
            )

    def test_gradient_path_matches_finite_differences(self):
        rng = np.random.default_rng(31)
        x = rng.standard_normal(4)
        pv = dc.ParamVector.from_segments([("s", x)])
        w = rng.standard_normal(4)

        def loss_fn(v):
            row = ss.neural_sort_row(v["s"], rank=1, tau=0.5)
            return dc.vsum(dc.mul(row, w))

        def loss_value(p):
            return float(reference_relaxed_sort(p.segment("s"), 0.5)[1] @ w)

        got = dc.gradient(pv, loss_fn).values
        step = 1e-5
        want = np.zeros(4)
        for k in range(4):
            up, down = pv.values.copy(), pv.values.copy()
            up[k] += step
            down[k] -= step
            want[k] = (loss_value(pv.with_values(up)) - loss_value(pv.with_values(down))) / (
                2 * step
            )
        np.testing.assert_allclose(got, want, rtol=1e-4, atol=1e-7)


class TestSoftMin2:
    def test_equal_arguments(self):
        for tau in (1e-5, 0.3, 2.0):
            assert ss.soft_min2(0.4, 0.4, tau) == pytest.approx(0.4, abs=1e-12)

    def test_low_temperature_limit(self):
        assert ss.soft_min2(0.0, 1.0, tau=1e-5) == pytest.approx(0.0, abs=1e-4)

    def test_matches_boltzmann_formula(self):
        x, y, tau = 0.3, 0.7, 0.5
        wx = np.exp(-x / tau)
        wy = np.exp(-y / tau)
        expected = (x * wx + y * wy) / (wx + wy)
        assert 0.3 <= expected <= 0.7
        assert ss.soft_min2(x, y, tau) == pytest.approx(expected, rel=1e-12)

    def test_stays_between_arguments(self):
        rng = np.random.default_rng(8)
        for _ in range(300):
            x, y = rng.uniform(-2, 2, size=2)
            tau = rng.uniform(0.01, 3.0)
            v = ss.soft_min2(x, y, tau)
            assert min(x, y) - 1e-12 <= v <= max(x, y) + 1e-12

    def test_differentiable_in_both_arguments(self):
        pv = dc.ParamVector.from_segments([("x", np.array([0.3])), ("y", np.array([0.7]))])

        def loss_fn(v):
            return dc.vsum(ss.soft_min2(v["x"], v["y"], 0.5))

        got = dc.gradient(pv, loss_fn).values
        step = 1e-6

        def value(x, y):
            return float(ss.soft_min2(x, y, 0.5))

        want = np.array(
            [
                (value(0.3 + step, 0.7) - value(0.3 - step, 0.7)) / (2 * step),
                (value(0.3, 0.7 + step) - value(0.3, 0.7 - step)) / (2 * step),
            ]
        )
        np.testing.assert_allclose(got, want, rtol=1e-4)

    def test_rejects_bad_temperature(self):
        with pytest.raises(ConfigError):
            ss.soft_min2(0.1, 0.2, tau=0.0)


class TestSoftArgmax:
    def test_hard_limit(self):
        w = ss.soft_argmax(np.array([5.0, -1.0]), kappa=100.0)
        np.testing.assert_allclose(w, [1.0, 0.0], atol=1e-6)

    def test_symmetry(self):
        for kappa in (0.5, 10.0, 500.0):
            w = ss.soft_argmax(np.array([0.2, 0.2, 0.2]), kappa=kappa)
            np.testing.assert_allclose(w, np.full(3, 1 / 3), atol=1e-12)

    def test_matches_softmax_oracle(self):
        s = np.array([0.2, 0.8])
        e = np.exp(s - s.max())
        np.testing.assert_allclose(
            ss.soft_argmax(s, kappa=1.0), e / e.sum(), rtol=1e-12
        )

    def test_simplex_properties(self):
        rng = np.random.default_rng(15)
        for _ in range(200):
            s = rng.standard_normal(rng.integers(1, 7))
            w = ss.soft_argmax(s, kappa=rng.uniform(0.1, 50))
            assert np.all(w >= 0)
            assert w.sum() == pytest.approx(1.0, abs=1e-9)
