"""Primitive-op forward values, backward rules vs finite differences, tape invariants."""

import numpy as np
import pytest

from sta_risk import autodiff as ad
from sta_risk.autodiff import (
    ComputationTape, DomainError, ShapeError, Tensor, backward, grad_check, no_grad,
)


def t(data, rg=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=rg)


class TestForwardValues:
    def test_matmul_identity(self):
        a = t([[1.0, 2.0], [3.0, 4.0]])
        eye = t([[1.0, 0.0], [0.0, 1.0]])
        assert np.array_equal(ad.matmul(a, eye).data, a.data)

    def test_softmax_symmetry(self):
        s = ad.softmax(t([0.0, 0.0, 0.0]))
        assert np.allclose(s.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_l2_norm_345(self):
        assert ad.l2_norm(t([3.0, 4.0])).item() == 5.0

    def test_softplus_at_zero(self):
        assert ad.softplus(t(0.0)).item() == pytest.approx(np.log(2.0), abs=1e-15)

    def test_layer_norm_standardizes(self):
        x = t(np.random.default_rng(0).normal(2.0, 3.0, (4, 8)))
        y = ad.layer_norm(x)
        assert np.allclose(y.data.mean(axis=-1), 0.0, atol=1e-12)
        assert np.allclose(y.data.var(axis=-1), 1.0, atol=1e-4)

    def test_concat_and_slice(self):
        a, b = t([[1.0, 2.0]]), t([[3.0, 4.0]])
        c = ad.concat([a, b], axis=0)
        assert np.array_equal(c.data, [[1, 2], [3, 4]])
        assert np.array_equal(c[1].data, [3, 4])

    def test_shape_mismatch_names_op_and_shapes(self):
        with pytest.raises(ShapeError, match="matmul") as ei:
            ad.matmul(t(np.ones((2, 3))), t(np.ones((2, 3))))
        assert ei.value.shape_a == (2, 3) and ei.value.shape_b == (2, 3)
        with pytest.raises(ShapeError, match="add"):
            ad.add(t(np.ones(3)), t(np.ones(4)))

    def test_log_sqrt_domain_errors(self):
        with pytest.raises(DomainError):
            ad.log(t([-1.0]))
        with pytest.raises(DomainError):
            ad.sqrt(t([-1.0]))


class TestBackward:
    def test_sum_of_squares(self):
        x = t([1.0, 2.0, 3.0], rg=True)
        backward(ad.tsum(ad.mul(x, x)))
        assert np.allclose(x.grad, [2.0, 4.0, 6.0], atol=1e-15)

    def test_sigmoid_grad_at_zero(self):
        x = t(0.0, rg=True)
        backward(ad.sigmoid(x))
        assert x.grad == pytest.approx(0.25, abs=1e-15)

    def test_accumulates_across_calls(self):
        x = t([1.0, 2.0], rg=True)
        for _ in range(2):
            backward(ad.tsum(ad.mul(x, x)))
        assert np.allclose(x.grad, [4.0, 8.0])
        x.zero_grad()
        backward(ad.tsum(x))
        assert np.allclose(x.grad, [1.0, 1.0])

    def test_non_scalar_output_rejected(self):
        x = t([1.0, 2.0], rg=True)
        with pytest.raises(ValueError, match="scalar"):
            backward(ad.mul(x, x))

    def test_detached_output_rejected(self):
        with pytest.raises(RuntimeError, match="detached"):
            backward(t(3.0))

    def test_no_grad_blocks_recording(self):
        x = t([1.0], rg=True)
        with no_grad():
            y = ad.tsum(ad.mul(x, x))
        assert not y.requires_grad and y._record is None

    def test_reused_subexpression_fanout(self):
        # y = (x*x) used twice: d/dx [x^2 + x^2] = 4x
        x = t([3.0], rg=True)
        sq = ad.mul(x, x)
        backward(ad.tsum(ad.add(sq, sq)))
        assert np.allclose(x.grad, [12.0])


class TestTape:
    def test_topological_order_and_single_visit(self):
        x = t([1.0, 2.0], rg=True)
        y = ad.mul(x, x)
        z = ad.tsum(ad.add(y, y))
        tape = ComputationTape.from_output(z)
        pos = {id(tt): i for i, tt in enumerate(tape.tensors)}
        for tt in tape.tensors:
            for parent in tt._record.inputs:
                if parent._record is not None:
                    assert pos[id(parent)] < pos[id(tt)]
        # each recorded op appears exactly once
        assert len({id(r) for r in tape.records}) == len(tape.records)


RNG = np.random.default_rng(20240811)


def _shapes():
    return [(5,), (3, 4), (2, 3, 4)]


UNARY_OPS = [
    ("exp", ad.exp, lambda s: RNG.normal(0, 1, s)),
    ("log", ad.log, lambda s: RNG.uniform(0.2, 3.0, s)),
    ("sqrt", ad.sqrt, lambda s: RNG.uniform(0.2, 3.0, s)),
    ("sigmoid", ad.sigmoid, lambda s: RNG.normal(0, 2, s)),
    ("softplus", ad.softplus, lambda s: RNG.normal(0, 2, s)),
    ("gelu", ad.gelu, lambda s: RNG.normal(0, 2, s)),
    ("softmax", lambda x: ad.softmax(x, axis=-1), lambda s: RNG.normal(0, 2, s)),
    ("layer-norm", lambda x: ad.layer_norm(x), lambda s: RNG.normal(0, 2, s)),
    ("l2-norm", ad.l2_norm, lambda s: RNG.normal(0, 2, s) + 0.1),
    ("mean", lambda x: ad.tmean(x, axis=-1), lambda s: RNG.normal(0, 2, s)),
    ("sum", lambda x: ad.tsum(x, axis=0), lambda s: RNG.normal(0, 2, s)),
    ("scale", lambda x: ad.scale(x, -1.7), lambda s: RNG.normal(0, 2, s)),
]


class TestGradCheckPrimitives:
    """Every primitive passes finite differences on 10 random draws per shape class."""

    @pytest.mark.parametrize("name,op,sampler", UNARY_OPS, ids=[o[0] for o in UNARY_OPS])
    def test_unary(self, name, op, sampler):
        for shape in _shapes():
            for _ in range(10):
                x = t(sampler(shape))
                err = grad_check(lambda v: ad.tsum(op(v)), x)
                assert err < 1e-4, f"{name} failed at shape {shape}: {err}"

    def test_relu_skips_kink_neighborhood(self):
        for _ in range(10):
            x = t(RNG.normal(0, 1, (4, 5)))
            skip = np.abs(x.data) < 1e-3
            err = grad_check(lambda v: ad.tsum(ad.relu(v)), x, skip=skip)
            assert err < 1e-4

    @pytest.mark.parametrize("name,op", [("add", ad.add), ("sub", ad.sub), ("mul", ad.mul)])
    def test_binary_broadcast(self, name, op):
        for sa, sb in [((3, 4), (3, 4)), ((3, 4), (4,)), ((2, 3, 4), (1, 4))]:
            for _ in range(5):
                a, b = t(RNG.normal(0, 1, sa)), t(RNG.normal(0, 1, sb))
                assert grad_check(lambda v: ad.tsum(op(v, b)), a) < 1e-4
                assert grad_check(lambda v: ad.tsum(op(a, v)), b) < 1e-4

    def test_matmul_plain_and_stacked(self):
        for sa, sb in [((3, 4), (4, 5)), ((2, 3, 4), (4, 5)), ((2, 2, 3, 4), (2, 2, 4, 3))]:
            a, b = t(RNG.normal(0, 1, sa)), t(RNG.normal(0, 1, sb))
            assert grad_check(lambda v: ad.tsum(ad.matmul(v, b)), a) < 1e-4
            assert grad_check(lambda v: ad.tsum(ad.matmul(a, v)), b) < 1e-4

    def test_concat_slice_reshape_transpose(self):
        a, b = t(RNG.normal(0, 1, (2, 3))), t(RNG.normal(0, 1, (2, 3)))

        def f(v):
            c = ad.concat([v, b], axis=0)
            d = ad.transpose(ad.reshape(c[1:4, :], (3, 3)), (1, 0))
            return ad.tsum(ad.mul(d, d))

        assert grad_check(f, a) < 1e-4


class TestProperties:
    def test_backward_linearity(self):
        x0 = RNG.normal(0, 1, (6,))

        def f(v):
            return ad.tsum(ad.mul(v, ad.sigmoid(v)))

        def g(v):
            return ad.tsum(ad.exp(ad.scale(v, 0.3)))

        a_c, b_c = 2.5, -1.25
        x = t(x0, rg=True)
        backward(ad.add(ad.scale(f(x), a_c), ad.scale(g(x), b_c)))
        combined = x.grad.copy()

        x1, x2 = t(x0, rg=True), t(x0, rg=True)
        backward(f(x1))
        backward(g(x2))
        assert np.allclose(combined, a_c * x1.grad + b_c * x2.grad, atol=1e-10)

    def test_determinism_bit_identical(self):
        def run():
            rng = np.random.default_rng(7)
            x = t(rng.normal(0, 1, (4, 4)), rg=True)
            w = t(rng.normal(0, 1, (4, 4)), rg=True)
            y = ad.tsum(ad.softmax(ad.matmul(x, w), axis=-1))
            backward(y)
            return y.item(), x.grad.copy(), w.grad.copy()

        v1, gx1, gw1 = run()
        v2, gx2, gw2 = run()
        assert v1 == v2
        assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)

    def test_forward_values_finite(self):
        x = t(RNG.normal(0, 3, (5, 6)))
        for op in (ad.exp, ad.sigmoid, ad.softplus, ad.gelu, ad.relu,
                   lambda v: ad.softmax(v, -1), ad.layer_norm):
            assert np.all(np.isfinite(op(x).data))


class TestGradCheckHarness:
    def test_constant_gradient_near_exact(self):
        x = t(RNG.normal(0, 1, (7,)))
        assert grad_check(ad.tsum, x) < 1e-10

    def test_eps_validated(self):
        with pytest.raises(ValueError):
            grad_check(ad.tsum, t([1.0]), eps=1e-2)

    def test_non_scalar_f_rejected(self):
        with pytest.raises(ValueError, match="scalar"):
            grad_check(lambda v: ad.mul(v, v), t([1.0, 2.0]))

    def test_negative_control_detects_wrong_rule(self):
        def broken_square(v):
            # intentionally wrong backward rule: claims d(x^2)/dx = x
            return ad._make("broken", v.data * v.data, (v,), lambda g: (g * v.data,))

        x = t(RNG.uniform(1.0, 2.0, (4,)))
        assert grad_check(lambda v: ad.tsum(broken_square(v)), x) > 1e-2
