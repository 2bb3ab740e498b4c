import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hifgo.linalg import ConfigError, InputError, RngStream
from hifgo.lora import BaseWeights, DeltaStack, merge
from hifgo.models import ModelSpec, evaluate, grad_wrt_merged, init_base
from hifgo.tasks import (
    ParseError,
    SubsetPlan,
    gen_quadratic_pair,
    gen_rotated_gaussians,
    load_csv,
    random_spd,
    ring_means,
    select_subsets,
    subset_indices,
)
from hifgo.trainer import ModelSetup, OptimConfig, stage1_finetune

# pilot: task-1 stage-1 accuracy on the fixture stream is 100 for seeds 0..2; chance is 25
TASK1_ACC_FLOOR = 90.0


def test_rotation_step_zero_gives_identical_distributions():
    s = gen_rotated_gaussians(3, 4, 8, 0.0, 4000, 0.5, seed=1)
    truth = ring_means(4, 8, 0.0, 2.0)
    for t in s.tasks:
        emp = np.array([t.train.inputs[t.train.targets == c].mean(0) for c in range(4)])
        # per-coordinate std of a class mean is 0.5 / sqrt(800) ~ 0.018
        np.testing.assert_allclose(emp, truth, atol=0.1)


def test_quarter_turn_rotates_means():
    m1 = ring_means(2, 2, 0.0, 2.0)
    m2 = ring_means(2, 2, math.pi / 2, 2.0)
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    np.testing.assert_allclose(m2, m1 @ rot.T, atol=1e-12)
    s = gen_rotated_gaussians(2, 2, 2, math.pi / 2, 4000, 0.3, seed=0)
    emp = [np.array([t.train.inputs[t.train.targets == c].mean(0) for c in range(2)]) for t in s.tasks]
    np.testing.assert_allclose(emp[1], emp[0] @ rot.T, atol=0.05)


def test_stream_is_balanced_and_split():
    s = gen_rotated_gaussians(2, 4, 8, 1.0, 2000, 0.5, seed=3)
    t = s[0]
    assert len(t.train) == 1600 and len(t.eval) == 400
    counts = np.bincount(np.concatenate([t.train.targets, t.eval.targets]))
    assert list(counts) == [500] * 4


def test_generators_are_deterministic():
    a = gen_rotated_gaussians(2, seed=5)
    b = gen_rotated_gaussians(2, seed=5)
    np.testing.assert_array_equal(a[1].train.inputs, b[1].train.inputs)


def test_task1_is_learnable():
    s = gen_rotated_gaussians(1, seed=0)
    spec = ModelSpec.build("linear-softmax", 8, 4)
    setup = ModelSetup(spec, init_base(spec, RngStream(0)), 4)
    d1 = s[0].train
    a = stage1_finetune(setup, setup.fresh_adapter(RngStream(0).child("a")), d1,
                        OptimConfig("sgd", 0.1, 0.0, 5, 0, 32), RngStream(0))
    assert evaluate(spec, merge(setup.base, DeltaStack(), a), s[0].eval, setup.base.biases) >= TASK1_ACC_FLOOR


def test_quadratic_pair_fields_and_zero_conflict():
    h = np.eye(2)
    s = gen_quadratic_pair([1, 2], [1, 2], h, h, 500, 0.0, seed=0)
    assert len(s) == 2 and len(s[0].eval) == 125
    spec = ModelSpec("linear-regression", ((1, 2),))
    for t in s.tasks:
        g = grad_wrt_merged(spec, [t.theta_star], t.train).grads[0]
        assert np.linalg.norm(g) <= 1e-10


def test_optimum_gradient_within_noise_bound():
    s = gen_quadratic_pair([1, 0], [0, 1], np.eye(2), np.eye(2), 2000, 0.1, seed=2)
    spec = ModelSpec("linear-regression", ((1, 2),))
    g = grad_wrt_merged(spec, [s[0].theta_star], s[0].train).grads[0]
    # mean of x * noise has std noise / sqrt(n) per coordinate
    assert np.linalg.norm(g) <= 5 * 0.1 / math.sqrt(2000)


def test_anisotropic_empirical_hessian_concentrates():
    ha = random_spd(RngStream(1), 4, 10.0)
    hb = random_spd(RngStream(2), 4, 10.0)
    s = gen_quadratic_pair(np.ones(4), -np.ones(4), ha, hb, 10000, 0.1, seed=0)
    for t, h in zip(s.tasks, (ha, hb)):
        x = t.train.inputs
        emp = x.T @ x / len(x)
        assert np.linalg.norm(emp - h) / np.linalg.norm(h) <= 0.10


def test_random_spd_condition():
    h = random_spd(RngStream(0), 4, 10.0)
    ev = np.linalg.eigvalsh(h)
    assert ev.min() > 0 and ev.max() / ev.min() == pytest.approx(10.0, rel=1e-9)


def test_quadratic_pair_rejects_non_spd():
    with pytest.raises(ConfigError):
        gen_quadratic_pair([1, 0], [0, 1], np.diag([1.0, -1.0]), np.eye(2))


def test_load_csv_fixture(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f1,f2,label\n0.5,1.0,0\n1.5,-2.0,1\n3.0,4.0,2\n")
    b = load_csv(p, "label")
    assert b.inputs.shape == (3, 2) and list(b.targets) == [0, 1, 2]


def test_load_csv_header_only(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f1,label\n")
    with pytest.raises(InputError):
        load_csv(p, "label")


def test_load_csv_reports_row(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f1,label\n1.0,0\nabc,1\n")
    with pytest.raises(ParseError) as info:
        load_csv(p, "label")
    assert info.value.row == 2 and "row 2" in str(info.value)


def test_subset_examples():
    s = gen_rotated_gaussians(1, samples=125, seed=0)
    d1, d2 = select_subsets(s[0], SubsetPlan(rho=1.0))
    assert sorted(map(tuple, d2.inputs.tolist())) == sorted(map(tuple, d1.inputs.tolist()))
    assert len(subset_indices(100, SubsetPlan(0.1))) == 10
    np.testing.assert_array_equal(subset_indices(100, SubsetPlan(0.3, seed=4)),
                                  subset_indices(100, SubsetPlan(0.3, seed=4)))
    assert len(subset_indices(100, SubsetPlan(count=7))) == 7


def test_subset_plan_validation():
    with pytest.raises(ConfigError):
        SubsetPlan(rho=0.0)
    with pytest.raises(ConfigError):
        subset_indices(5, SubsetPlan(count=6))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 500), st.floats(0.01, 1.0), st.integers(0, 1000))
def test_subset_size_and_uniqueness(n, rho, seed):
    idx = subset_indices(n, SubsetPlan(rho, seed=seed))
    assert len(idx) == math.ceil(rho * n - 1e-9)
    assert len(set(idx.tolist())) == len(idx) and idx.min() >= 0 and idx.max() < n
