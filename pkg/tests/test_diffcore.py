"""Gradient checks for the autodiff core against central finite differences."""

import numpy as np
import pytest

from bidarena import diffcore as dc
from bidarena.errors import ConfigError, NumericError


def finite_difference(params, loss_value_fn, step=1e-5):
    """Central finite differences of a scalar loss over a flat parameter vector."""
    flat = params.values.copy()
    grads = np.zeros_like(flat)
    for k in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[k] += step
        down[k] -= step
        grads[k] = (
            loss_value_fn(params.with_values(up)) - loss_value_fn(params.with_values(down))
        ) / (2 * step)
    return grads


def assert_matches_fd(params, loss_fn, loss_value_fn, rtol=1e-4, atol=1e-7):
    got = dc.gradient(params, loss_fn).values
    want = finite_difference(params, loss_value_fn)
    np.testing.assert_allclose(got, want, rtol=rtol, atol=atol)


class TestParamVector:
    def test_segments_round_trip(self):
        pv = dc.ParamVector.from_segments(
            [("w", np.arange(6.0).reshape(2, 3)), ("b", np.array([1.0, 2.0]))]
        )
        assert pv.size == 8
        np.testing.assert_array_equal(pv.segment("w"), np.arange(6.0).reshape(2, 3))
        np.testing.assert_array_equal(pv.segment("b"), [1.0, 2.0])

    def test_values_locked(self):
        pv = dc.ParamVector.from_segments([("b", np.zeros(3))])
        with pytest.raises(ValueError):
            pv.values[0] = 1.0

    def test_with_values_keeps_layout(self):
        pv = dc.ParamVector.from_segments([("b", np.zeros(3))])
        pv2 = pv.with_values([1.0, 2.0, 3.0])
        assert pv2.names == ["b"]
        np.testing.assert_array_equal(pv2.segment("b"), [1.0, 2.0, 3.0])

    def test_rejects_size_mismatch(self):
        pv = dc.ParamVector.from_segments([("b", np.zeros(3))])
        with pytest.raises(ConfigError):
            pv.with_values([1.0, 2.0])

    def test_rejects_non_finite(self):
        with pytest.raises(NumericError):
            dc.ParamVector.from_segments([("b", np.array([1.0, np.nan]))])

    def test_unknown_segment(self):
        pv = dc.ParamVector.from_segments([("b", np.zeros(3))])
        with pytest.raises(ConfigError):
            pv.segment("nope")

    def test_text_round_trip_bit_exact(self):
        rng = np.random.default_rng(7)
        pv = dc.ParamVector.from_segments(
            [("w", rng.standard_normal((3, 4)) * 1e-7), ("b", rng.standard_normal(3))]
        )
        back = dc.ParamVector.from_text(pv.to_text())
        assert back == pv

    def test_text_rejects_bad_header(self):
        with pytest.raises(ConfigError):
            dc.ParamVector.from_text("something else\n")


class TestMlpForward:
    def test_single_linear_unit(self):
        pv = dc.ParamVector.from_segments(
            [("w0", np.array([[2.0]])), ("b0", np.array([-1.0]))]
        )
        out = dc.mlp_forward(pv, np.array([0.5]))
        np.testing.assert_allclose(out, [0.0])

    def test_zero_weights_give_bias(self):
        pv = dc.ParamVector.from_segments(
            [("w0", np.zeros((2, 3))), ("b0", np.array([0.3, -0.7]))]
        )
        out = dc.mlp_forward(pv, np.array([5.0, -2.0, 9.0]))
        np.testing.assert_allclose(out, [0.3, -0.7])

    def test_two_layer_matches_hand_rolled_loop(self):
        rng = np.random.default_rng(42)
        w0 = rng.standard_normal((4, 1))
        b0 = rng.standard_normal(4)
        w1 = rng.standard_normal((1, 4))
        b1 = rng.standard_normal(1)
        pv = dc.ParamVector.from_segments(
            [("w0", w0), ("b0", b0), ("w1", w1), ("b1", b1)]
        )
        x = np.array([0.3])

        # independent re-implementation with explicit loops
        hidden = np.zeros(4)
        for i in range(4):
            z = b0[i]
            for j in range(1):
                z += w0[i, j] * x[j]
            hidden[i] = np.log1p(np.exp(z))
        expected = np.zeros(1)
        for i in range(1):
            z = b1[i]
            for j in range(4):
                z += w1[i, j] * hidden[j]
            expected[i] = z

        np.testing.assert_allclose(dc.mlp_forward(pv, x), expected, rtol=1e-12)

    def test_shape_mismatch_is_config_error(self):
        pv = dc.ParamVector.from_segments(
            [("w0", np.zeros((2, 3))), ("b0", np.zeros(2))]
        )
        with pytest.raises(ConfigError):
            dc.mlp_forward(pv, np.zeros(4))

    def test_deterministic_repeat(self):
        rng = np.random.default_rng(3)
        pv = dc.ParamVector.from_segments(
            [("w0", rng.standard_normal((5, 2))), ("b0", rng.standard_normal(5))]
        )
        x = rng.standard_normal(2)
        a = dc.mlp_forward(pv, x)
        b = dc.mlp_forward(pv, x)
        assert np.array_equal(a, b)


class TestGradient:
    def test_square(self):
        pv = dc.ParamVector.from_segments([("p", np.array([3.0]))])
        g = dc.gradient(pv, lambda v: dc.vsum(dc.mul(v["p"], v["p"])))
        np.testing.assert_allclose(g.values, [6.0])

    def test_constant_loss_zero_gradient(self):
        pv = dc.ParamVector.from_segments([("p", np.array([1.0, -2.0]))])
        g = dc.gradient(pv, lambda v: dc.vsum(dc.mul(v["p"], 0.0)))
        np.testing.assert_array_equal(g.values, [0.0, 0.0])

    def test_two_layer_net_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        pv = dc.ParamVector.from_segments(
            [
                ("w0", rng.standard_normal((4, 2)) * 0.5),
                ("b0", rng.standard_normal(4) * 0.5),
                ("w1", rng.standard_normal((1, 4)) * 0.5),
                ("b1", rng.standard_normal(1) * 0.5),
            ]
        )
        x = rng.standard_normal(2)

        def loss_fn(v):
            out = dc.mlp_forward(v, x)
            return dc.vsum(dc.mul(out, out))

        def loss_value(p):
            out = dc.mlp_forward(p, x)
            return float(np.sum(out * out))

        assert_matches_fd(pv, loss_fn, loss_value)

    def test_non_finite_identifies_node(self):
        pv = dc.ParamVector.from_segments([("p", np.array([1000.0]))])
        with np.errstate(over="ignore"), pytest.raises(NumericError, match="exp"):
            dc.gradient(pv, lambda v: dc.vsum(dc.exp(dc.exp(v["p"]))))

    def test_tape_single_use(self):
        tape = dc.Tape()
        x = tape.leaf(np.array(2.0))
        y = dc.mul(x, x)
        tape.backward(y)
        with pytest.raises(ConfigError):
            tape.backward(y)


class TestPrimitiveGradients:
    """Every primitive against finite differences on random inputs."""

    CASES = {
        "exp": (dc.exp, np.exp),
        "softplus": (dc.softplus, lambda x: np.logaddexp(0.0, x)),
        "abs": (dc.absolute, np.abs),
        "log": (dc.log, np.log),
    }

    @pytest.mark.parametrize("name", sorted(CASES))
    def test_unary(self, name):
        op, ref = self.CASES[name]
        rng = np.random.default_rng(hash(name) % 2**32)
        x = rng.uniform(0.2, 1.5, size=7)  # positive keeps log/abs smooth
        pv = dc.ParamVector.from_segments([("x", x)])
        weights = rng.standard_normal(7)

        def loss_fn(v):
            return dc.vsum(dc.mul(op(v["x"]), weights))

        def loss_value(p):
            return float(np.sum(ref(p.segment("x")) * weights))

        assert_matches_fd(pv, loss_fn, loss_value)

    def test_softmax_and_reductions(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((3, 4))
        pv = dc.ParamVector.from_segments([("x", x)])
        w = rng.standard_normal((3, 4))

        def loss_fn(v):
            p = dc.softmax(v["x"], axis=-1)
            return dc.vsum(dc.mul(p, w))

        def loss_value(pvec):
            z = pvec.segment("x")
            e = np.exp(z - z.max(axis=-1, keepdims=True))
            p = e / e.sum(axis=-1, keepdims=True)
            return float(np.sum(p * w))

        assert_matches_fd(pv, loss_fn, loss_value)

    def test_hard_max_min_subgradients(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((4, 5))
        pv = dc.ParamVector.from_segments([("x", x)])
        w = rng.standard_normal(4)

        def loss_fn(v):
            return dc.vsum(dc.mul(dc.sub(dc.amax(v["x"], axis=1), dc.amin(v["x"], axis=1)), w))

        def loss_value(p):
            z = p.segment("x")
            return float(np.sum((z.max(axis=1) - z.min(axis=1)) * w))

        assert_matches_fd(pv, loss_fn, loss_value)

    def test_broadcasting_mul_add(self):
        rng = np.random.default_rng(13)
        a = rng.standard_normal((1, 4))
        b = rng.standard_normal((3, 1))
        pv = dc.ParamVector.from_segments([("a", a), ("b", b)])

        def loss_fn(v):
            return dc.vmean(dc.mul(dc.add(v["a"], v["b"]), dc.sub(v["a"], v["b"])))

        def loss_value(p):
            aa, bb = p.segment("a"), p.segment("b")
            return float(np.mean((aa + bb) * (aa - bb)))

        assert_matches_fd(pv, loss_fn, loss_value)

    def test_stack_take_reshape(self):
        rng = np.random.default_rng(17)
        a = rng.standard_normal(4)
        b = rng.standard_normal(4)
        pv = dc.ParamVector.from_segments([("a", a), ("b", b)])

        def loss_fn(v):
            s = dc.stack([v["a"], v["b"]], axis=0)
            top = dc.take(s, 1, axis=0)
            return dc.vsum(dc.mul(dc.reshape(top, (2, 2)), 0.5))

        def loss_value(p):
            return float(np.sum(p.segment("b").reshape(2, 2) * 0.5))

        assert_matches_fd(pv, loss_fn, loss_value)


class TestNetworkShapeGradientSweep:
    """Reverse-mode vs. central differences on each network shape in use."""

    def test_hundred_random_points_per_shape(self):
        rng = np.random.default_rng(2024)
        # (hidden width, input dim) pairs covering the package's nets
        shapes = [(10, 1), (5, 5)]
        for width, din in shapes:
            for _ in range(50):
                pv = dc.ParamVector.from_segments(
                    [
                        ("w0", rng.standard_normal((width, din)) * 0.4),
                        ("b0", rng.standard_normal(width) * 0.4),
                        ("w1", rng.standard_normal((1, width)) * 0.4),
                        ("b1", rng.standard_normal(1) * 0.4),
                    ]
                )
                x = rng.standard_normal(din)

                def loss_fn(v, x=x):
                    return dc.vsum(dc.softplus(dc.mlp_forward(v, x)))

                def loss_value(p, x=x):
                    return float(np.sum(np.logaddexp(0.0, dc.mlp_forward(p, x))))

                got = dc.gradient(pv, loss_fn).values
                want = finite_difference(pv, loss_value)
                np.testing.assert_allclose(got, want, rtol=1e-4, atol=1e-7)

    def test_forward_bit_deterministic(self):
        rng = np.random.default_rng(1)
        pv = dc.ParamVector.from_segments(
            [("w0", rng.standard_normal((10, 1))), ("b0", rng.standard_normal(10))]
        )
        x = rng.standard_normal(1)
        runs = {dc.mlp_forward(pv, x).tobytes() for _ in range(5)}
        assert len(runs) == 1
