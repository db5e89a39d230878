import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asgdlab.checks import TOLERANCE, gradcheck_instance
from asgdlab.models import Batch, ModelSpec, backward, forward_loss, grad_check, init_params, numeric_grad
from asgdlab.numerics import NumericalFault, ParamVector, zeros_like
from conftest import rel_err


def _sig(a):
    return 1.0 / (1.0 + math.exp(-a))


def gru_reference_loss(spec, params, sentences):
    """Unbatched scalar-loop forward pass, written independently of the vectorized one."""
    P = {n: params.view(n) for n in params.layout.names}
    H, E = spec.hidden, spec.embed_dim
    total = 0.0
    for s in sentences:
        h = [0.0] * H
        for t, target in enumerate(s):
            x = [0.0] * E if t == 0 else list(P["E"][s[t - 1]])
            z = [_sig(sum(x[i] * P["W_z"][i, k] for i in range(E)) + sum(h[i] * P["U_z"][i, k] for i in range(H))
                      + P["b_z"][k]) for k in range(H)]
            r = [_sig(sum(x[i] * P["W_r"][i, k] for i in range(E)) + sum(h[i] * P["U_r"][i, k] for i in range(H))
                      + P["b_r"][k]) for k in range(H)]
            c = [math.tanh(sum(x[i] * P["W_h"][i, k] for i in range(E))
                           + sum(r[i] * h[i] * P["U_h"][i, k] for i in range(H)) + P["b_h"][k]) for k in range(H)]
            h = [z[k] * h[k] + (1 - z[k]) * c[k] for k in range(H)]
            logits = [sum(h[i] * P["W_out"][i, v] for i in range(H)) + P["b_out"][v] for v in range(spec.vocab)]
            mx = max(logits)
            lse = mx + math.log(sum(math.exp(l - mx) for l in logits))
            total += lse - logits[target]
    return total


def random_batch(spec, rng, n=6):
    if spec.kind == "gru_lm":
        return Batch([rng.integers(0, spec.vocab, size=int(rng.integers(1, 8))) for _ in range(n)])
    if spec.kind == "mlp_classifier":
        return Batch([(rng.normal(size=spec.in_dim), int(rng.integers(spec.classes))) for _ in range(n)])
    return Batch([(rng.normal(size=spec.in_dim), float(rng.normal())) for _ in range(n)])


SPECS = [ModelSpec.linear(3), ModelSpec.mlp(2, 4, 2), ModelSpec.gru_lm(8, 4, 4)]


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec.gru_lm(vocab=1)
    with pytest.raises(ValueError):
        ModelSpec.mlp(2, 0, 2)
    with pytest.raises(ValueError):
        ModelSpec("transformer")


def test_init_deterministic_and_shaped():
    s = ModelSpec.linear(3)
    assert np.array_equal(init_params(s, 7).values, init_params(s, 7).values)
    g = ModelSpec.gru_lm(8, 4, 4)
    assert len(init_params(g, 1).values) == g.layout.total_len
    m = init_params(ModelSpec.mlp(2, 4, 2), 0).values
    assert m.min() >= -0.5 and m.max() <= 0.5


def test_init_bounds_follow_fan_in():
    spec = ModelSpec.gru_lm(16, 8, 16)
    p = init_params(spec, 3)
    for seg in spec.layout.segments:
        bound = 0.5 / math.sqrt(spec.fan_in(seg.name))
        assert np.abs(p.view(seg.name)).max() <= bound


def test_linear_hand_values():
    spec = ModelSpec.linear(1)
    w = ParamVector(spec.layout, np.array([1.0]))
    batch = Batch([(2.0, 5.0)])
    assert forward_loss(spec, w, batch) == (9.0, 1)
    grad, n = backward(spec, w, batch)
    assert grad.values.tolist() == [-12.0] and n == 1


def test_gru_uniform_logits():
    spec = ModelSpec.gru_lm(8, 4, 4)
    batch = Batch([[1, 2, 3], [7, 0, 0, 5, 6]])
    loss, n = forward_loss(spec, zeros_like(spec.layout), batch)
    assert n == 8
    assert loss / n == pytest.approx(math.log(8), rel=1e-14)


def test_gru_matches_scalar_reference(rng):
    spec = ModelSpec.gru_lm(6, 3, 4)
    p = init_params(spec, 5)
    p.values[:] += rng.normal(scale=0.3, size=len(p))
    sentences = [list(rng.integers(0, 6, size=k)) for k in (1, 4, 7)]
    loss, _ = forward_loss(spec, p, Batch(sentences))
    assert loss == pytest.approx(gru_reference_loss(spec, p, sentences), rel=1e-12)


def test_batch_token_count():
    assert Batch([[1, 2, 3], [4]]).token_count == 4
    assert Batch([(np.zeros(2), 1)] * 3).token_count == 3
    with pytest.raises(ValueError):
        Batch([[1, 2]], token_count=3)
    with pytest.raises(ValueError):
        Batch([])


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind)
def test_duplicated_batch_doubles_gradient(spec, rng):
    p = init_params(spec, 2)
    b = random_batch(spec, rng)
    g1, n1 = backward(spec, p, b)
    g2, n2 = backward(spec, p, b + b)
    assert n2 == 2 * n1
    assert rel_err(g2.values, 2 * g1.values) <= 1e-12


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind)
def test_forward_deterministic(spec, rng):
    p = init_params(spec, 4)
    b = random_batch(spec, rng)
    assert forward_loss(spec, p, b)[0] == forward_loss(spec, p, b)[0]


@pytest.mark.parametrize("kind", list(TOLERANCE))
def test_grad_check_small_suite(kind):
    for seed in range(5):
        assert grad_check(*gradcheck_instance(kind, seed), h=1e-4) <= TOLERANCE[kind]


def test_grad_check_multi_sentence_gru(rng):
    spec = ModelSpec.gru_lm(8, 4, 4)
    p = init_params(spec, 9)
    batch = Batch([rng.integers(0, 8, size=k) for k in (2, 5, 3)])
    assert grad_check(spec, p, batch, 1e-4) <= 1e-4


def test_grad_check_detects_wrong_gradient(rng):
    spec = ModelSpec.linear(2)
    p = init_params(spec, 0)
    b = random_batch(spec, rng)
    numeric = numeric_grad(spec, p, b)
    analytic = backward(spec, p, b)[0].values
    assert rel_err(numeric, analytic) < 1e-8
    assert rel_err(numeric, 1.01 * analytic) > 1e-3
    with pytest.raises(ValueError):
        grad_check(spec, p, b, h=0.0)


def test_non_finite_parameters_fault():
    spec = ModelSpec.gru_lm(4, 2, 2)
    p = init_params(spec, 0)
    p.view("U_r")[0, 0] = np.inf
    with pytest.raises(NumericalFault) as info:
        forward_loss(spec, p, Batch([[1, 2, 3]]))
    assert info.value.segment == "U_r"


def test_batch_kind_mismatch():
    with pytest.raises(ValueError):
        forward_loss(ModelSpec.linear(1), init_params(ModelSpec.linear(1), 0), Batch([[1, 2]]))


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(SPECS), st.integers(0, 10_000))
def test_gradient_linearity(spec, seed):
    rng = np.random.default_rng(seed)
    p = init_params(spec, seed)
    a, b = random_batch(spec, rng, 3), random_batch(spec, rng, 4)
    ga, na = backward(spec, p, a)
    gb, nb = backward(spec, p, b)
    gab, nab = backward(spec, p, a + b)
    assert nab == na + nb
    summed = ga.values + gb.values
    assert rel_err(summed, gab.values) <= 1e-12
