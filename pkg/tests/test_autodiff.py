"""Tape engine: forward equality, per-primitive adjoints, reports, errors."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpgrl import autodiff as ad


def test_record_square_value():
    out, tape = ad.record_forward(lambda x: x * x, [3.0])
    assert out.value == 9.0


def test_record_burst_value():
    out, _ = ad.record_forward(lambda th, r: r * ad.cos(th), [0.0, 1.0])
    assert out.value == 1.0


def test_square_gradient():
    out, tape = ad.record_forward(lambda x: x * x, [3.0])
    g = ad.backward(tape, 1.0)
    assert g.grads[0] == 6.0


def test_burst_gradient_wrt_phase():
    out, tape = ad.record_forward(lambda th, r: r * ad.cos(th), [np.pi / 2, 2.0])
    g = ad.backward(tape, 1.0)
    assert np.isclose(g.grads[0], -2.0, atol=1e-12)
    assert np.isclose(g.grads[1], np.cos(np.pi / 2))


def _composite(x, w):
    h = ad.tanh(ad.matvec(x, ad.transpose(w)))
    return ad.vsum(ad.softplus(h) * ad.sin(h) + ad.exp(-0.5 * ad.square(h)))


def test_forward_bitwise_equality():
    rng = np.random.default_rng(0)
    x = rng.normal(size=5)
    w = rng.normal(size=(3, 5))
    direct = _composite(x, w)
    out, _ = ad.record_forward(_composite, [x, w])
    assert out.value == direct  # bitwise


def test_backward_linearity(rng):
    x = rng.normal(size=4)
    a, b = 2.5, -1.25

    def f(v):
        return ad.vsum(ad.sin(v) * v)

    def g(v):
        return ad.vsum(ad.exp(-ad.square(v)))

    def combo(v):
        return a * f(v) + b * g(v)

    _, t1 = ad.record_forward(f, [x])
    _, t2 = ad.record_forward(g, [x])
    _, t3 = ad.record_forward(combo, [x])
    gf = ad.backward(t1, 1.0).grads[0]
    gg = ad.backward(t2, 1.0).grads[0]
    gc = ad.backward(t3, 1.0).grads[0]
    assert np.allclose(gc, a * gf + b * gg, rtol=1e-12, atol=1e-12)


UNARY = {
    "sin": ad.sin, "cos": ad.cos, "exp": ad.exp, "tanh": ad.tanh,
    "softplus": ad.softplus,
}


@pytest.mark.parametrize("name", sorted(UNARY))
@pytest.mark.parametrize("shape", [(), (4,), (2, 3)])
def test_unary_adjoints(name, shape, rng):
    fn = UNARY[name]
    x = rng.normal(size=shape)
    proj = rng.normal(size=shape)
    rep = ad.finite_diff_check(
        lambda v: ad.vsum(fn(v) * proj) if shape else fn(v), [x], h=1e-6, tol=1e-6)
    assert rep.passed, rep.failing_indices


def test_log_adjoint(rng):
    x = rng.uniform(0.5, 3.0, size=5)
    rep = ad.finite_diff_check(lambda v: ad.vsum(ad.log(v)), [x], h=1e-7, tol=1e-6)
    assert rep.passed


@pytest.mark.parametrize("sa,sb", [((4,), (4,)), ((2, 4), (4,)), ((2, 4), ()),
                                   ((2, 1, 4), (3, 4)), ((4,), (2, 4))])
@pytest.mark.parametrize("op", [lambda a, b: a + b, lambda a, b: a - b,
                                lambda a, b: a * b, lambda a, b: a / b,
                                ad.maximum, ad.minimum])
def test_binary_broadcast_adjoints(sa, sb, op, rng):
    a = rng.uniform(0.5, 2.0, size=sa)
    b = rng.uniform(0.5, 2.0, size=sb)
    rep = ad.finite_diff_check(lambda x, y: ad.vsum(op(x, y)), [a, b], h=1e-6, tol=1e-5)
    assert rep.passed, rep.failing_indices


@pytest.mark.parametrize("sa,sb", [((3, 4), (4, 2)), ((4,), (4, 2)),
                                   ((3, 4), (4,)), ((4,), (4,))])
def test_matvec_adjoints(sa, sb, rng):
    a = rng.normal(size=sa)
    b = rng.normal(size=sb)
    seed_shape = ad.matvec(a, b).shape
    proj = rng.normal(size=seed_shape)
    rep = ad.finite_diff_check(lambda x, y: ad.vsum(ad.matvec(x, y) * proj), [a, b],
                               h=1e-6, tol=1e-5)
    assert rep.passed, rep.failing_indices


def test_gather_reshape_transpose_adjoints(rng):
    v = rng.normal(size=7)
    idx = np.array([[0, 2, 2], [6, 1, 0]])
    proj = rng.normal(size=(3, 2))

    def f(x):
        g = ad.gather(x, idx)            # (2, 3) with repeats
        r = ad.reshape(g, (3, 2))
        return ad.vsum(ad.transpose(r) * ad.transpose(proj))

    rep = ad.finite_diff_check(f, [v], h=1e-6, tol=1e-6)
    assert rep.passed, rep.failing_indices


@pytest.mark.parametrize("axis", [None, 0, 1, -1])
def test_sum_mean_adjoints(axis, rng):
    x = rng.normal(size=(3, 5))

    def f(v):
        s = ad.vsum(v, axis=axis)
        m = ad.vmean(v, axis=axis)
        return ad.vsum(s * 1.5) + ad.vsum(m * -0.5) if axis is not None else s * 1.5 + m * -0.5

    rep = ad.finite_diff_check(f, [x], h=1e-6, tol=1e-6)
    assert rep.passed


def test_clip_subgradient():
    x = np.array([-2.0, 0.5, 2.0, 1.0, -1.0])  # below, inside, above, boundaries
    out, tape = ad.record_forward(lambda v: ad.vsum(ad.clip(v, -1.0, 1.0)), [x])
    g = ad.backward(tape, 1.0).grads[0]
    assert np.array_equal(g, [0.0, 1.0, 0.0, 0.0, 0.0])


def test_softplus_stable_and_positive():
    x = np.array([-800.0, -20.0, 0.0, 20.0, 800.0])
    y = ad.softplus(x)
    assert np.isfinite(y).all() and (y >= 0).all()
    assert (y[1:] > 0).all()  # only underflows below ~-745
    assert np.isclose(y[-1], 800.0)


def test_minimum_matches_numpy(rng):
    a, b = rng.normal(size=6), rng.normal(size=6)
    out, tape = ad.record_forward(lambda x, y: ad.vsum(ad.minimum(x, y)), [a, b])
    assert out.value == np.sum(np.minimum(a, b))


def test_unsupported_primitive_named():
    with pytest.raises(ad.UnsupportedPrimitiveError, match="atan"):
        ad.apply("atan", np.ones(3))


def test_numpy_ufunc_on_var_rejected():
    _, tape = ad.record_forward(lambda x: x * x, [2.0])
    v = tape.leaf(np.ones(3))
    with pytest.raises(TypeError):
        np.arctan(v)


def test_seed_shape_mismatch():
    out, tape = ad.record_forward(lambda x: x * x, [np.ones(3)])
    with pytest.raises(ad.ContractShapeError):
        ad.backward(tape, np.ones(2))


def test_unused_leaf_gets_zero_gradient():
    def f(a, b):
        return ad.vsum(a * a)

    _, tape = ad.record_forward(f, [np.ones(3), np.ones(4)])
    g = ad.backward(tape, 1.0)
    assert np.array_equal(g.grads[1], np.zeros(4))


def test_finite_diff_linear_tiny_error(rng):
    # central differences are exact for linear maps; a power-of-two step
    # keeps the rounding error near machine precision
    w = rng.normal(size=6)
    rep = ad.finite_diff_check(lambda x: ad.vsum(x * w), [rng.normal(size=6)],
                               h=0.0625, tol=1e-5)
    assert rep.max_rel_err < 1e-10


def test_finite_diff_detects_corrupted_adjoint(monkeypatch):
    fwd, _ = ad._OPS["sin"]
    monkeypatch.setitem(ad._OPS, "sin",
                        (fwd, (lambda g, o, a, c: g * np.cos(a) * 1.01,)))
    rep = ad.finite_diff_check(lambda x: ad.vsum(ad.sin(x)), [np.array([0.3, 1.1])],
                               h=1e-6, tol=1e-5)
    assert not rep.passed and rep.failing_indices


def test_finite_diff_requires_scalar():
    with pytest.raises(ad.ContractShapeError):
        ad.finite_diff_check(lambda x: x * x, [np.ones(3)])


def test_mixed_tape_rejected():
    _, t1 = ad.record_forward(lambda x: x * x, [1.0])
    _, t2 = ad.record_forward(lambda x: x * x, [1.0])
    with pytest.raises(ad.ContractShapeError):
        ad.Var(t1, 0) + ad.Var(t2, 0)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.sampled_from(sorted(UNARY)), min_size=1, max_size=4),
       st.integers(min_value=0, max_value=10_000))
def test_unary_chain_gradients_match_fd(chain, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.5, 1.5, size=3)

    def f(v):
        h = v
        for name in chain:
            h = ad.tanh(UNARY[name](h))  # keep magnitudes bounded for the FD oracle
        return ad.vmean(h)

    rep = ad.finite_diff_check(f, [x], h=1e-6, tol=1e-4)
    assert rep.passed, (chain, rep.max_rel_err)


def test_backward_without_output_marker():
    tape = ad.Tape()
    v = tape.leaf(2.0)
    with pytest.raises(ad.ContractShapeError):
        ad.backward(tape, 1.0)
    out = v * v
    g = ad.backward(tape, 1.0, output=out)
    assert g.wrt(v) == 4.0
