import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diffattn.dcn import (
    DcnConfig,
    context_backward,
    context_forward,
    differential_context,
    opposing_context,
    project,
    reject,
    supporting_context,
)

seeds = st.integers(0, 2**31 - 1)


def maps(seed, n=3, R=9):
    return np.random.default_rng(seed).dirichlet(np.ones(R), size=n)


def test_project_cases():
    np.testing.assert_array_equal(project([0.0, 1.0], [1.0, 0.0]), [0.0, 0.0])
    np.testing.assert_allclose(project([0.3, 0.7], [0.3, 0.7]), [0.3, 0.7], rtol=0, atol=1e-15)
    np.testing.assert_array_equal(project([1.0, 1.0], [1.0, 0.0]), [1.0, 0.0])


def test_reject_cases():
    np.testing.assert_allclose(reject([2.0, 4.0], [1.0, 2.0]), [0.0, 0.0], atol=1e-15)
    np.testing.assert_array_equal(reject([0.0, 3.0], [1.0, 0.0]), [0.0, 3.0])


def test_zero_norm_guard():
    with pytest.raises(ZeroDivisionError):
        project([1.0, 2.0], [0.0, 0.0])


@given(seeds)
def test_decomposition(seed):
    r = np.random.default_rng(seed)
    v, s = r.normal(size=(2, 12))
    p, q = project(v, s), reject(v, s)
    np.testing.assert_allclose(p + q, v, rtol=0, atol=1e-12)
    assert abs(np.dot(q, s)) < 1e-10
    # parallel: 2x2 minors of (p, s) vanish
    np.testing.assert_allclose(np.outer(p, s) - np.outer(s, p), 0.0, atol=1e-12)


def test_supporting_context_cases():
    s = maps(0, 1)[0]
    np.testing.assert_allclose(supporting_context(s, s, s), 2 * s, rtol=0, atol=1e-15)
    s2 = np.array([1.0, 0.0, 0.0])
    np.testing.assert_array_equal(supporting_context(s2, [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]), np.zeros(3))
    np.testing.assert_array_equal(opposing_context(s2, [3.0, 0.0, 0.0], [0.5, 0.0, 0.0]), np.zeros(3))


@given(seeds)
def test_contexts_direct_formula(seed):
    s, sp, sn = maps(seed)
    n2 = sum(x * x for x in s)
    ref_plus = [(np.dot(s, sp) / n2) * x + (np.dot(s, sn) / n2) * x for x in s]
    ref_minus = [sp[i] - np.dot(s, sp) / n2 * s[i] + sn[i] - np.dot(s, sn) / n2 * s[i] for i in range(len(s))]
    np.testing.assert_allclose(supporting_context(s, sp, sn), ref_plus, rtol=0, atol=1e-12)
    np.testing.assert_allclose(opposing_context(s, sp, sn), ref_minus, rtol=0, atol=1e-12)
    np.testing.assert_allclose(supporting_context(s, sp, sn) + opposing_context(s, sp, sn), sp + sn, rtol=0, atol=1e-12)


@pytest.mark.parametrize("mode", ["mul", "add"])
def test_identity_context(mode):
    s = maps(1, 1)[0]
    cfg = DcnConfig(mode=mode)
    z = np.zeros_like(s)
    np.testing.assert_allclose(differential_context(s, z, z, 1.0, 1.0, cfg), s, rtol=0, atol=1e-15)
    r = maps(2, 1)[0]
    np.testing.assert_allclose(differential_context(s, r, r, 0.7, 0.7, cfg), s, rtol=0, atol=1e-15)


@pytest.mark.parametrize("mode", ["mul", "add"])
@given(seed=seeds)
def test_output_is_distribution(mode, seed):
    s, sp, sn = maps(seed)
    r = np.random.default_rng(seed)
    d, _ = context_forward(s[None], sp[None], sn[None], r.normal(size=9) * 3, r.normal(size=9) * 3, DcnConfig(mode=mode))
    assert np.all(d >= 0) and abs(d.sum() - 1.0) < 1e-9


@given(seeds)
def test_v1_equals_untrained_v2(seed):
    s, sp, sn = maps(seed, 3)
    for mode in ("mul", "add"):
        d1, _ = context_forward(s[None], sp[None], sn[None], np.ones(1), np.ones(1), DcnConfig(mode=mode, scaling="fixed"))
        d2, _ = context_forward(s[None], sp[None], sn[None], np.ones(9), np.ones(9), DcnConfig(mode=mode, scaling="diag"))
        np.testing.assert_array_equal(d1, d2)


def test_batched_matches_single(rng):
    s, sp, sn = maps(7, 3)
    W1, W2 = rng.normal(size=9), rng.normal(size=9)
    cfg = DcnConfig(mode="mul")
    d, _ = context_forward(s[None], sp[None], sn[None], W1, W2, cfg)
    single = differential_context(s, supporting_context(s, sp, sn), opposing_context(s, sp, sn), W1, W2, cfg)
    np.testing.assert_allclose(d[0], single, rtol=0, atol=1e-15)


def test_unnormalised_flags():
    s, sp, sn = maps(3)
    raw = differential_context(s, sp, sn, 1.0, 1.0, DcnConfig(mode="mul", mul_identity=False), normalize=False)
    np.testing.assert_allclose(raw, s * np.tanh(sp - sn), rtol=0, atol=1e-15)
    plain = differential_context(s, sp, sn, 1.0, 1.0, DcnConfig(mode="add", plain_difference=True), normalize=False)
    np.testing.assert_allclose(plain, s + sp - sn, rtol=0, atol=1e-15)


def test_support_difference_flag():
    s, sp, sn = maps(4)
    np.testing.assert_allclose(supporting_context(s, sp, sn, difference=True), project(sp, s) - project(sn, s), atol=1e-15)


@pytest.mark.parametrize("mode", ["mul", "add"])
@pytest.mark.parametrize("flags", [{}, {"support_difference": True}, {"plain_difference": True}, {"scaling": "full"}])
def test_context_backward_fd(mode, flags):
    r = np.random.default_rng(9)
    s, sp, sn = (r.dirichlet(np.ones(6), size=2) for _ in range(3))
    full = flags.get("scaling") == "full"
    W1 = r.normal(size=(6, 6)) if full else r.normal(size=6)
    W2 = r.normal(size=(6, 6)) if full else r.normal(size=6)
    cfg = DcnConfig(mode=mode, **flags)
    dd = r.normal(size=(2, 6))

    def loss(s_, sp_, sn_, W1_, W2_):
        return float(np.sum(dd * context_forward(s_, sp_, sn_, W1_, W2_, cfg)[0]))

    _, cache = context_forward(s, sp, sn, W1, W2, cfg)
    grads = context_backward(dd, cache, W1, W2, cfg)
    args = [s, sp, sn, W1, W2]
    for j in range(5):
        if grads[j] is None:
            continue
        x = args[j]
        num = np.zeros_like(x)
        for i in np.ndindex(x.shape):
            o = x[i]
            x[i] = o + 1e-6
            lp = loss(*args)
            x[i] = o - 1e-6
            lm = loss(*args)
            x[i] = o
            num[i] = (lp - lm) / 2e-6
        np.testing.assert_allclose(grads[j], num, atol=1e-7, rtol=1e-5)
