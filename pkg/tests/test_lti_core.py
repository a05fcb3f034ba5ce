import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aoi_ncs.lti_core import (
    CostOverflowError,
    NoiseTrace,
    SystemModel,
    build_cost_function,
    check_linear_cost,
    error_from_noise,
    generate_noise,
    parse_matrix,
    per_slot_error_variance,
    rotation,
    scalar_model,
)


def random_orthogonal(d, seed):
    q, r = np.linalg.qr(np.random.default_rng(seed).standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def test_model_validation():
    with pytest.raises(ValueError):
        SystemModel(np.ones((2, 3)))
    with pytest.raises(ValueError):
        SystemModel(np.eye(2), noise_variance=0.0)
    with pytest.raises(ValueError):
        SystemModel(np.eye(2), b_matrix=np.ones((3, 1)))
    m = SystemModel(np.eye(3), 2.0)
    assert m.dim == 3 and m.noise_trace == 6.0
    with pytest.raises(ValueError):
        m.a_matrix[0, 0] = 5.0


def test_cost_unit_scalar():
    cost = build_cost_function(scalar_model(1.0), 5)
    np.testing.assert_array_equal(cost.coeffs, [1, 1, 1, 1, 1])
    assert cost.f(5) == 5
    assert cost.gamma == 1.0


def test_cost_half_scalar():
    cost = build_cost_function(scalar_model(0.5), 3)
    np.testing.assert_allclose(cost.coeffs, [1, 0.25, 0.0625], rtol=0, atol=0)
    assert cost.f(3) == pytest.approx(1.3125, abs=1e-15)
    assert cost.gamma is None


def test_cost_rotation_is_linear():
    cost = build_cost_function(SystemModel(rotation(0.7), 2.0), 8)
    np.testing.assert_allclose(cost.prefix[1:], 4.0 * np.arange(1, 9), rtol=1e-12)
    assert cost.gamma == pytest.approx(4.0, rel=1e-12)


def test_prefix_tables():
    cost = build_cost_function(SystemModel(np.array([[0.9, 0.3], [-0.2, 0.7]]), 1.5), 40)
    assert cost.prefix[0] == 0 and cost.double_prefix[0] == 0
    assert np.all(np.diff(cost.prefix) >= 0)
    np.testing.assert_allclose(np.diff(cost.double_prefix), cost.prefix[:-1], rtol=1e-14)
    assert cost.window_sum(3, 7) == pytest.approx(sum(cost.f(j) for j in range(3, 7)))


@pytest.mark.parametrize("a", [1.0, -1.0])
def test_linear_cost_scalar_unit(a):
    assert check_linear_cost(build_cost_function(scalar_model(a, 3.0), 50)) == pytest.approx(3.0)


def test_linear_cost_rejects_contraction():
    assert check_linear_cost(build_cost_function(scalar_model(0.5), 10)) is None


@settings(max_examples=30, deadline=None)
@given(d=st.integers(1, 5), seed=st.integers(0, 2**31 - 1),
       s2=st.floats(0.1, 10.0), flip=st.booleans())
def test_orthogonal_matrices_have_linear_cost(d, seed, s2, flip):
    q = random_orthogonal(d, seed)
    if flip:
        q[:, 0] *= -1
    cost = build_cost_function(SystemModel(q, s2), 200)
    assert cost.gamma is not None
    assert abs(cost.gamma - d * s2) <= 1e-10 * d * s2


def test_overflow_reports_index():
    with pytest.raises(CostOverflowError) as err:
        build_cost_function(scalar_model(1e200), 5)
    assert err.value.index == 1
    assert "cost overflow at index 1" in str(err.value)


def test_error_from_noise_examples():
    model = scalar_model(2.0)
    noise = NoiseTrace(np.array([[0.0], [3.0], [1.0]]), seed=0)
    assert error_from_noise(model, noise, 2, 3)[0] == 7.0
    assert error_from_noise(model, noise, 1, 3)[0] == 1.0
    assert error_from_noise(model, noise, 0, 3)[0] == 0.0
    with pytest.raises(IndexError):
        error_from_noise(model, noise, 3, 2)


def test_error_age_one_is_last_noise():
    model = SystemModel(np.array([[0.3, 1.0], [0.0, 2.0]]))
    noise = generate_noise(model, 20, seed=5)
    np.testing.assert_array_equal(error_from_noise(model, noise, 1, 10), noise.samples[9])


def test_per_slot_variance_examples():
    assert per_slot_error_variance(scalar_model(1.0), 7) == 7.0
    m = SystemModel(np.array([[3.0, 1.0], [2.0, -4.0]]), 0.7)
    assert per_slot_error_variance(m, 1) == pytest.approx(m.noise_trace, rel=1e-15)
    a = np.random.default_rng(11).standard_normal((2, 2))
    m = SystemModel(a, 1.3)
    assert per_slot_error_variance(m, 4) == pytest.approx(build_cost_function(m, 4).f(4), rel=1e-12)


def test_per_slot_variance_matches_table_everywhere():
    gen = np.random.default_rng(3)
    for _ in range(20):
        d = int(gen.integers(1, 5))
        m = SystemModel(gen.standard_normal((d, d)) * 0.8, float(gen.uniform(0.2, 3)))
        cost = build_cost_function(m, 30)
        for j in range(1, 31):
            assert per_slot_error_variance(m, j) == pytest.approx(cost.f(j), rel=1e-12)


@pytest.mark.parametrize("a,age", [(np.array([[0.9]]), 6), (rotation(0.4) * 1.02, 5)])
def test_error_second_moment_monte_carlo(a, age):
    # ||e||^2 is a sum of squared Gaussians; its sample mean over 1e5 draws
    # must land within 5 standard errors of f(age).
    model = SystemModel(a, 0.8)
    n = 100_000
    d = model.dim
    w = math.sqrt(model.noise_variance) * np.random.default_rng(17).standard_normal((n, age, d))
    powers = [np.linalg.matrix_power(a, i) for i in range(age)]
    # slot index m = age - i holds W[n-i]
    e = sum(w[:, age - i] @ powers[i - 1].T for i in range(1, age + 1))
    sq = np.sum(e * e, axis=1)
    target = build_cost_function(model, age).f(age)
    assert abs(sq.mean() - target) <= 5 * sq.std(ddof=1) / math.sqrt(n)


def test_noise_seed_determinism():
    m = SystemModel(rotation(0.2), 2.0)
    a, b = generate_noise(m, 500, seed=42), generate_noise(m, 500, seed=42)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert len(a) == 500
    assert not np.array_equal(a.samples, generate_noise(m, 500, seed=43).samples)
    np.testing.assert_array_equal(error_from_noise(m, a, 9, 300), error_from_noise(m, b, 9, 300))
    # a prefix of a longer trace is the shorter trace
    np.testing.assert_array_equal(generate_noise(m, 800, seed=42).samples[:500], a.samples)
    assert np.var(a.samples) == pytest.approx(2.0, rel=0.15)


def test_parse_matrix():
    np.testing.assert_array_equal(parse_matrix("1, 2\n3 4\n"), [[1, 2], [3, 4]])
    np.testing.assert_array_equal(parse_matrix("# comment\n0.5\n\n"), [[0.5]])
    with pytest.raises(ValueError):
        parse_matrix("1 2\n3\n")
    with pytest.raises(ValueError):
        parse_matrix("\n")
