import numpy as np
import pytest

from hifgo.linalg import ConfigError, RngStream, finite_diff_grad, gaussian_matrix, relative_error
from hifgo.lora import BaseWeights, DeltaStack, LoraAdapter, LoraLayer, effective_delta, freeze_delta
from hifgo.models import Batch, ModelSpec
from hifgo.regularizers import (
    GpwcSnapshot,
    RegWeights,
    compute_gpwc,
    history_grad_orth_loss,
    history_snapshots,
    norm_loss,
    orth_loss_full,
    orth_loss_proxy,
    param_orth_loss,
)
from hifgo.tasks import gen_quadratic_pair

from oracles import gram_schmidt_project


def adapter(seed, shapes=((3, 4),), rank=2, scale=1.0, zero_b=False):
    rng = RngStream(seed)
    return LoraAdapter(tuple(LoraLayer(np.zeros((d, rank)) if zero_b else gaussian_matrix(rng.child("b", i), d, rank),
                                       gaussian_matrix(rng.child("a", i), rank, k))
                             for i, (d, k) in enumerate(shapes)), scale)


def snap(seed, shapes=((3, 4),), source=1):
    return GpwcSnapshot(2, source, tuple(gaussian_matrix(RngStream(seed).child(i), *s) for i, s in enumerate(shapes)), 10)


def test_reg_weights_defaults_and_validation():
    assert RegWeights() == RegWeights(2e-2, 1e-2)
    with pytest.raises(ConfigError):
        RegWeights(-1.0, 0.0)


def test_gpwc_zero_at_stationary_model():
    spec = ModelSpec("linear-regression", ((1, 2),))
    x = RngStream(0).generator().normal(size=(30, 2))
    base = BaseWeights((np.array([[1.0, 2.0]]),))
    s = compute_gpwc(spec, base, DeltaStack(), Batch(x, x @ np.array([1.0, 2.0])))
    assert max(s.norms()) <= 1e-8


def test_gpwc_quadratic_closed_form():
    pair = gen_quadratic_pair([1, 0], [0, 1], np.diag([2.0, 1.0]), np.diag([1.0, 3.0]), 20000, 0.01, seed=1)
    spec = ModelSpec("linear-regression", ((1, 2),))
    base = BaseWeights((np.zeros((1, 2)),))
    prefix = DeltaStack(((pair[0].theta_star,),))
    g = compute_gpwc(spec, base, prefix, pair[1].train).grads[0]
    expected = (pair[0].theta_star - pair[1].theta_star) @ pair[1].hessian
    assert relative_error(g, expected) < 0.05


def test_gpwc_invariant_to_duplication():
    spec = ModelSpec("linear-softmax", ((3, 2),))
    gen = RngStream(1).generator()
    d = Batch(gen.normal(size=(9, 2)), gen.integers(0, 3, 9))
    base = BaseWeights((gen.normal(size=(3, 2)),))
    a = compute_gpwc(spec, base, DeltaStack(), d)
    b = compute_gpwc(spec, base, DeltaStack(), Batch.concat([d, d]))
    np.testing.assert_allclose(a.grads[0], b.grads[0], rtol=1e-12, atol=1e-15)


def test_snapshot_is_immutable():
    s = snap(1)
    with pytest.raises(ValueError):
        s.grads[0][0, 0] = 1.0


def test_orth_full_examples():
    assert orth_loss_full([snap(1)], adapter(2, zero_b=True))[0] == 0.0
    a = adapter(3)
    g = GpwcSnapshot(2, 1, tuple(effective_delta(a)), 1)
    assert orth_loss_full([g], a)[0] == pytest.approx(float(np.sum(effective_delta(a)[0] ** 2)), rel=1e-12)


def test_orth_full_projected_delta():
    snaps = [snap(10), snap(11)]
    dw = gaussian_matrix(RngStream(12), 3, 4)
    proj = gram_schmidt_project(dw.ravel(), [s.grads[0].ravel() for s in snaps]).reshape(3, 4)
    u, sv, vt = np.linalg.svd(proj)
    a = LoraAdapter((LoraLayer(u[:, :3] * sv[:3], vt[:3]),), 1.0)
    assert orth_loss_full(snaps, a)[0] <= 1e-10


def test_proxy_reduces_to_full_with_one_snapshot():
    s, a = snap(4), adapter(5)
    pv, pg = orth_loss_proxy(s, a)
    fv, fg = orth_loss_full([s], a)
    assert pv == fv
    for (pb, pa), (fb, fa) in zip(pg, fg):
        np.testing.assert_array_equal(pb, fb)
        np.testing.assert_array_equal(pa, fa)
    assert orth_loss_proxy(s, adapter(5, zero_b=True))[0] == 0.0


def test_proxy_never_exceeds_full():
    snaps = [snap(20 + i) for i in range(4)]
    for k in range(5):
        a = adapter(30 + k)
        assert orth_loss_proxy(snaps[-1], a)[0] <= orth_loss_full(snaps, a)[0]


def test_param_orth_examples():
    a = adapter(6)
    assert param_orth_loss(DeltaStack(), a)[0] == 0.0
    stack = freeze_delta(a, DeltaStack())
    assert param_orth_loss(stack, a)[0] == pytest.approx(float(np.sum(effective_delta(a)[0] ** 2)), rel=1e-12)
    stack = freeze_delta(adapter(8), freeze_delta(adapter(7), DeltaStack()))
    d = effective_delta(a)[0]
    expected = sum(abs(sum(e[0][r, c] * d[r, c] for r in range(3) for c in range(4))) for e in stack.entries)
    assert param_orth_loss(stack, a)[0] == pytest.approx(expected, rel=1e-12)


def test_norm_loss_examples():
    v, g = norm_loss(adapter(1, zero_b=True))
    assert v == 0.0 and not np.any(g[0][1])
    v, g = norm_loss(LoraAdapter((LoraLayer(np.array([[2.0]]), np.array([[3.0]])),)))
    assert v == 36.0
    assert g[0][0][0, 0] == 36.0 and g[0][1][0, 0] == 24.0


def _fd_factor_check(fn, a, tol):
    _, grads = fn(a)
    factors = [(l.b, l.a) for l in a.layers]
    for i in range(len(factors)):
        for which in (0, 1):
            def f(m, i=i, which=which):
                fs = [list(p) for p in factors]
                fs[i][which] = m
                return fn(a.with_factors(fs))[0]
            assert relative_error(grads[i][which], finite_diff_grad(f, factors[i][which])) < tol


def test_norm_loss_gradient_matches_finite_differences():
    _fd_factor_check(norm_loss, adapter(9, shapes=((3, 4), (2, 3)), scale=0.5), 1e-6)


@pytest.mark.parametrize("penalty", ["abs", "square"])
def test_orth_gradients_match_finite_differences(penalty):
    shapes = ((3, 4), (2, 3))
    snaps = [snap(40, shapes), snap(41, shapes)]
    a = adapter(42, shapes)
    _fd_factor_check(lambda x: orth_loss_full(snaps, x, penalty), a, 1e-6)
    _fd_factor_check(lambda x: param_orth_loss(DeltaStack((snaps[0].grads, snaps[1].grads)), x, penalty), a, 1e-6)


def test_unknown_penalty():
    with pytest.raises(ConfigError):
        orth_loss_proxy(snap(1), adapter(1), "hinge")


def test_history_snapshots():
    spec = ModelSpec("linear-regression", ((1, 2),))
    x = RngStream(0).generator().normal(size=(30, 2))
    base = BaseWeights((np.zeros((1, 2)),))
    stack = DeltaStack(((np.array([[1.0, -1.0]]),),))
    data = Batch(x, x @ np.array([1.0, -1.0]))
    snaps = history_snapshots(spec, base, stack, [data], 2)
    assert history_grad_orth_loss(snaps, adapter(3, ((1, 2),), rank=1))[0] <= 1e-10
    # with D_2 = D_1 the history form equals the full GPWC form
    g = compute_gpwc(spec, base, stack, data, 2)
    other = Batch(x, x @ np.array([0.0, 2.0]))
    h = history_snapshots(spec, base, stack, [other], 2)
    g2 = compute_gpwc(spec, base, stack, other, 2)
    a = adapter(4, ((1, 2),), rank=1)
    assert history_grad_orth_loss(h, a)[0] == orth_loss_full([g2], a)[0]
    assert g.norms()[0] <= 1e-10
    with pytest.raises(ConfigError):
        history_snapshots(spec, base, stack, [], 2)


def test_normalized_snapshot():
    s = snap(3).normalized()
    assert s.norms()[0] == pytest.approx(1.0)
    z = GpwcSnapshot(2, 1, (np.zeros((2, 2)),), 1).normalized()
    assert not np.any(z.grads[0])
