import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aoi_ncs import analytic
from aoi_ncs.analytic import (
    TableTooSmallError,
    cost_for,
    expected_aoi,
    expected_f_delta,
    zero_wait_geometric_aoi,
)
from aoi_ncs.channel import deterministic, empirical, geometric
from aoi_ncs.lti_core import SystemModel, build_cost_function, per_slot_error_variance, rotation, scalar_model
from aoi_ncs.policy import CONSTANT, THRESHOLD, ZERO_WAIT, make_policy, parse_policy

TABLE1_P = [0.01, 0.05, 0.1, 0.2, 0.4, 0.8]
TABLE1_ZERO_WAIT = [199.0, 39.0, 19.0, 9.0, 4.0, 1.5]
TABLE1_MEAS = [189.33, 37.23, 18.22, 8.70, 4.0, 1.5]


def brute_force(dist, waits, reward):
    """Enumerate (y', y) pairs and every slot of the cycle one by one."""
    num = den = 0.0
    for (i, yp), (j, y) in itertools.product(enumerate(dist.support), repeat=2):
        w = dist.pmf[i] * dist.pmf[j]
        length = int(waits[i]) + int(y)
        num += w * sum(reward(int(yp) + t) for t in range(length))
        den += w * length
    return num / den


@pytest.mark.parametrize("p,expected", list(zip(TABLE1_P, TABLE1_ZERO_WAIT)))
def test_zero_wait_table_values(p, expected):
    dist = geometric(p)
    got = expected_aoi(dist, make_policy(ZERO_WAIT, dist)).value
    assert got == pytest.approx(expected, abs=1e-8)
    assert zero_wait_geometric_aoi(p) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("p,expected", list(zip(TABLE1_P, TABLE1_MEAS)))
def test_meas_table_values(p, expected):
    dist = geometric(p)
    got = expected_aoi(dist, parse_policy("meas", dist)).value
    assert got == pytest.approx(expected, abs=5e-3)


@settings(max_examples=40, deadline=None)
@given(p=st.floats(0.02, 1.0))
def test_zero_wait_matches_closed_form(p):
    dist = geometric(p)
    got = expected_aoi(dist, make_policy(ZERO_WAIT, dist)).value
    assert got == pytest.approx(zero_wait_geometric_aoi(p), abs=1e-8)


@pytest.mark.parametrize("c", [1, 2, 3, 6, 11])
def test_deterministic_zero_wait(c):
    dist = deterministic(c)
    policy = make_policy(ZERO_WAIT, dist)
    got = expected_aoi(dist, policy).value
    assert got == pytest.approx(c + (c - 1) / 2, abs=1e-12)
    assert got == pytest.approx(brute_force(dist, policy.wait_table, float), abs=1e-12)


def test_deterministic_constant_wait_cycle():
    dist = deterministic(2)
    # with G = 1 the cycle shows ages 2, 3, 4
    one = expected_aoi(dist, make_policy(CONSTANT, dist, wait=1))
    assert one.value == pytest.approx(3.0, abs=1e-12)
    assert one.denominator == pytest.approx(3.0)
    # with G = 0 only ages 2, 3
    zero = expected_aoi(dist, make_policy(ZERO_WAIT, dist))
    assert zero.value == pytest.approx(2.5, abs=1e-12)
    cost = build_cost_function(scalar_model(1.0), 10)
    assert expected_f_delta(cost, dist, make_policy(CONSTANT, dist, wait=1)).value == pytest.approx(3.0)


def test_table_too_small():
    dist = deterministic(3)
    policy = make_policy(CONSTANT, dist, wait=4)
    cost = build_cost_function(scalar_model(0.5), 5)
    with pytest.raises(TableTooSmallError) as err:
        expected_f_delta(cost, dist, policy)
    # the cycle-end lookup T[y' + G + y] sets the size
    assert err.value.required == 3 + 4 + 3
    # the helper sizes the table just large enough
    sized = cost_for(scalar_model(0.5), dist, policy)
    assert sized.max_delta == err.value.required
    expected_f_delta(sized, dist, policy)


def test_brute_force_triple_sum_oracle():
    gen = np.random.default_rng(21)
    dist = empirical([1, 2, 4, 7], [0.1, 0.4, 0.3, 0.2])
    for _ in range(5):
        model = SystemModel(gen.standard_normal((2, 2)) * 0.7, float(gen.uniform(0.5, 2)))
        for policy in (make_policy(ZERO_WAIT, dist), make_policy(CONSTANT, dist, wait=2),
                       parse_policy("meas", dist), make_policy(THRESHOLD, dist, beta=5.5)):
            want = brute_force(dist, policy.wait_table, lambda a: per_slot_error_variance(model, a))
            got = expected_f_delta(cost_for(model, dist, policy), dist, policy).value
            assert got == pytest.approx(want, rel=1e-12)
            want_aoi = brute_force(dist, policy.wait_table, float)
            assert expected_aoi(dist, policy).value == pytest.approx(want_aoi, rel=1e-12)


@pytest.mark.parametrize("p", [0.05, 0.1, 0.3, 0.6, 0.9])
def test_meas_never_worse_than_zero_wait(p):
    dist = geometric(p)
    zero = expected_aoi(dist, make_policy(ZERO_WAIT, dist)).value
    meas = expected_aoi(dist, parse_policy("meas", dist)).value
    assert meas <= zero + 1e-12


@pytest.mark.parametrize("model", [scalar_model(1.0, 2.5), scalar_model(-1.0),
                                   SystemModel(rotation(0.7), 2.0)])
@pytest.mark.parametrize("p", [0.1, 0.35, 0.8])
def test_linear_cost_scales_aoi(model, p):
    dist = geometric(p)
    specs = ["zero-wait"] + [f"const:{g}" for g in range(1, 6)] + ["meas"]
    for spec in specs:
        policy = parse_policy(spec, dist)
        cost = cost_for(model, dist, policy)
        assert cost.gamma is not None
        lhs = expected_f_delta(cost, dist, policy).value
        rhs = cost.gamma * expected_aoi(dist, policy).value
        assert lhs == pytest.approx(rhs, rel=1e-10)


def test_stable_system_costs_less_than_random_walk():
    for p in np.linspace(0.05, 0.95, 19):
        dist = geometric(float(p))
        policy = make_policy(ZERO_WAIT, dist)
        values = [expected_f_delta(cost_for(scalar_model(a), dist, policy), dist, policy).value
                  for a in (0.5, 1.0)]
        assert values[0] < values[1]


def test_truncation_bound_is_reported():
    dist = geometric(0.3, 1e-6)
    res = expected_aoi(dist, make_policy(ZERO_WAIT, dist))
    assert res.truncation_error_bound >= 0
    assert abs(res.value - zero_wait_geometric_aoi(0.3)) <= max(res.truncation_error_bound, 1e-12)


def test_rejects_bad_waits():
    dist = deterministic(2)
    with pytest.raises(ValueError):
        analytic.expected_aoi(dist, np.array([-1.0]))
    with pytest.raises(ValueError):
        analytic.expected_aoi(dist, np.array([0.0, 1.0]))
