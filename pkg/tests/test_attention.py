import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diffattn.attention import answer_logits, attend, attention_map, init_params
from diffattn.gradcheck import check_gradients, random_instance
from diffattn.losses import LossConfig
from diffattn.model import MODEL_NAMES, Batch, ModelSpec, run_batch
from diffattn.tensor import ShapeError


def loop_attention(g, f, p):
    """Scalar-loop re-implementation of the attention map."""
    R, D = g.shape
    A = p.W_I.shape[1]
    logits = []
    for r in range(R):
        acc = 0.0
        for a in range(A):
            h = p.b_q[a]
            for d in range(D):
                h += g[r][d] * p.W_I[d][a] + f[d] * p.W_Q[d][a]
            acc += math.tanh(h) * p.W_P[a][0]
        logits.append(acc + p.b_P[0])
    m = max(logits)
    e = [math.exp(v - m) for v in logits]
    z = sum(e)
    return np.array([v / z for v in e])


def params(seed=0, D=3, A=2, C=4):
    return init_params(D, A, C, np.random.default_rng(seed))


def test_attention_matches_scalar_loop(rng):
    p = params()
    g, f = rng.normal(size=(4, 3)), rng.normal(size=3)
    np.testing.assert_allclose(attention_map(g, f, p), loop_attention(g, f, p), rtol=0, atol=1e-12)


def test_zero_projection_gives_uniform_map(rng):
    p = params()
    p.W_P[:] = 0.0
    s = attention_map(rng.normal(size=(5, 3)), rng.normal(size=3), p)
    np.testing.assert_allclose(s, np.full(5, 0.2), rtol=0, atol=1e-15)


@given(st.integers(0, 2**31 - 1), st.integers(1, 12))
def test_attention_is_distribution(seed, R):
    r = np.random.default_rng(seed)
    p = params(seed, D=4, A=3)
    p.W_P *= 10
    s = attention_map(r.normal(size=(R, 4)) * 5, r.normal(size=4), p)
    assert np.all(s >= 0) and abs(s.sum() - 1.0) < 1e-9


def test_attend_selector_and_mean(rng):
    g = rng.normal(size=(6, 4))
    np.testing.assert_array_equal(attend(g, np.eye(6)[2]), g[2])
    np.testing.assert_allclose(attend(g, np.full(6, 1 / 6)), g.mean(axis=0), rtol=0, atol=1e-15)


def test_attend_loop_oracle(rng):
    g, s = rng.normal(size=(5, 3)), rng.dirichlet(np.ones(5))
    ref = [sum(s[r] * g[r][d] for r in range(5)) for d in range(3)]
    np.testing.assert_allclose(attend(g, s), ref, rtol=0, atol=1e-12)


@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_attend_is_linear(seed, a, b):
    r = np.random.default_rng(seed)
    g, s1, s2 = r.normal(size=(7, 3)), r.normal(size=7), r.normal(size=7)
    np.testing.assert_allclose(attend(g, a * s1 + b * s2), a * attend(g, s1) + b * attend(g, s2), rtol=0, atol=1e-12)


def test_attend_shape_error():
    with pytest.raises(ShapeError):
        attend(np.ones((3, 2)), np.ones(4))


def test_answer_head_cases(rng):
    p = params()
    v, f = rng.normal(size=3), rng.normal(size=3)
    p2 = p.copy()
    p2.W_A[:] = 0.0
    np.testing.assert_array_equal(answer_logits(v, f, p2), p2.b_A)
    np.testing.assert_allclose(answer_logits(np.zeros(3), f, p), f @ p.W_A + p.b_A, rtol=0, atol=1e-15)
    ref = [sum((v[d] + f[d]) * p.W_A[d][c] for d in range(3)) + p.b_A[c] for c in range(4)]
    np.testing.assert_allclose(answer_logits(v, f, p), ref, rtol=0, atol=1e-12)


def test_all_zero_params_are_finite(rng):
    spec = ModelSpec.from_name("dan")
    p = params(D=4, A=3).zeros_like()
    b = Batch(rng.normal(size=(2, 5, 4)), rng.normal(size=(2, 4)), np.array([0, 1]),
              rng.normal(size=(2, 1, 5, 4)), rng.normal(size=(2, 1, 5, 4)))
    r = run_batch(b, p, spec, LossConfig())
    assert np.isfinite(r.loss)
    assert all(np.all(np.isfinite(a)) for _, a in r.grads.items())


def test_doubling_nu_doubles_triplet_gradient():
    spec = ModelSpec.from_name("dan")
    p, b = random_instance(spec, 4)
    g0 = run_batch(b, p, spec, LossConfig(nu=0.0)).grads
    g1 = run_batch(b, p, spec, LossConfig(nu=1.5)).grads
    g2 = run_batch(b, p, spec, LossConfig(nu=3.0)).grads
    for name in p.trainable():
        t1 = getattr(g1, name) - getattr(g0, name)
        t2 = getattr(g2, name) - getattr(g0, name)
        np.testing.assert_allclose(t2, 2 * t1, rtol=1e-9, atol=1e-13)


@pytest.mark.parametrize("model", MODEL_NAMES)
def test_gradients_match_finite_differences(model):
    spec = ModelSpec.from_name(model)
    p, b = random_instance(spec, 11)
    errs = check_gradients(b, p, spec)
    assert max(errs.values()) < 1e-4, errs


def test_quintuplet_variant_gradients():
    spec = ModelSpec.from_name("dan", metric="quintuplet")
    p, b = random_instance(spec, 2)
    assert max(check_gradients(b, p, spec).values()) < 1e-4


def test_full_scaling_gradients():
    spec = ModelSpec.from_name("dcn-mul-v2", full_scaling=True)
    p, b = random_instance(spec, 5)
    assert max(check_gradients(b, p, spec).values()) < 1e-4


def test_own_question_exemplar_gradients(rng):
    spec = ModelSpec.from_name("dan")
    p, b = random_instance(spec, 6)
    b.f_sup = rng.normal(size=(3, 2, 16))
    b.f_opp = rng.normal(size=(3, 2, 16))
    assert max(check_gradients(b, p, spec).values()) < 1e-4


def test_baseline_ignores_exemplars(rng):
    spec = ModelSpec.from_name("baseline")
    p, b = random_instance(spec, 1)
    r1 = run_batch(b, p, spec)
    b.g_sup = b.g_sup + 5.0
    r2 = run_batch(b, p, spec)
    assert r1.loss == r2.loss


def test_dcn_requires_exemplars(rng):
    spec = ModelSpec.from_name("dcn-add-v1")
    p, b = random_instance(spec, 1)
    b.g_sup = None
    with pytest.raises(ValueError):
        run_batch(b, p, spec)


def test_unknown_model_name():
    with pytest.raises(ValueError):
        ModelSpec.from_name("dcn-sub-v3")
