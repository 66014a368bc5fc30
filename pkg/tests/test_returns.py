import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memoroid.core import PartialTransition, apply_resettable
from memoroid.returns import (
    ReturnElement,
    discounted_return_prefix,
    gae,
    gae_monoid,
    naive_gae,
    naive_return_to_go,
    return_memoroid,
    return_monoid,
    return_to_go,
    td_residuals,
)
from memoroid.scan import ScanSchedule


def _episode_ends(dones):
    ends = np.flatnonzero(dones)
    return {t: ends[ends >= t][0] for t in range(len(dones))}


def definition_return_to_go(r, d, gamma):
    end = _episode_ends(d)
    return np.array([sum(gamma ** (l - t) * r[l] for l in range(t, end[t] + 1)) for t in range(len(r))])


def definition_gae(r, v, v2, d, gamma, lam):
    delta = [r[t] + gamma * (1 - d[t]) * v2[t] - v[t] for t in range(len(r))]
    end = _episode_ends(d)
    return np.array([sum((gamma * lam) ** (l - t) * delta[l] for l in range(t, end[t] + 1))
                     for t in range(len(r))])


def instances():
    @st.composite
    def build(draw):
        n = draw(st.integers(1, 60))
        seed = draw(st.integers(0, 2**31 - 1))
        rng = np.random.default_rng(seed)
        d = (rng.random(n) < 0.2).astype(np.int64)
        d[-1] = 1
        return rng.standard_normal(n), d, draw(st.floats(0, 1)), rng
    return build()


@given(instances(), st.sampled_from(["parallel", "vectorized"]))
@settings(max_examples=150, deadline=None)
def test_return_to_go_matches_definition(inst, method):
    r, d, gamma, _ = inst
    got = return_to_go(r, d, gamma, ScanSchedule(2, 7), method=method)
    np.testing.assert_allclose(got, definition_return_to_go(r, d, gamma), rtol=1e-9, atol=1e-12)


@given(instances(), st.floats(0, 1), st.sampled_from(["parallel", "vectorized"]))
@settings(max_examples=150, deadline=None)
def test_gae_matches_definition(inst, lam, method):
    r, d, gamma, rng = inst
    v, v2 = rng.standard_normal((2, len(r)))
    got = gae(r, v, v2, d, gamma, lam, method=method)
    np.testing.assert_allclose(got, definition_gae(r, v, v2, d, gamma, lam), rtol=1e-9, atol=1e-12)


@given(instances())
@settings(max_examples=60, deadline=None)
def test_naive_loops_match_definition(inst):
    r, d, gamma, rng = inst
    v, v2 = rng.standard_normal((2, len(r)))
    np.testing.assert_allclose(naive_return_to_go(r, d, gamma), definition_return_to_go(r, d, gamma), atol=1e-12)
    np.testing.assert_allclose(naive_gae(r, v, v2, d, gamma, 0.9), definition_gae(r, v, v2, d, gamma, 0.9),
                               atol=1e-12)


def test_gamma_zero_and_one():
    r = np.array([1.0, 2.0, 3.0, 4.0])
    d = np.array([0, 1, 0, 1])
    np.testing.assert_array_equal(return_to_go(r, d, 0.0), r)
    np.testing.assert_array_equal(return_to_go(r, d, 1.0), [3.0, 2.0, 7.0, 4.0])


def test_gae_with_lambda_one_is_return_minus_value():
    rng = np.random.default_rng(0)
    r, v = rng.standard_normal((2, 12))
    d = np.zeros(12, dtype=int)
    d[[4, 11]] = 1
    # the residual sum telescopes when V(s_{t+1}) is the next stored value
    v_next = np.append(v[1:], 0.0)
    np.testing.assert_allclose(gae(r, v, v_next, d, 0.9, 1.0) + v, return_to_go(r, d, 0.9), atol=1e-12)


def test_prefix_expansion():
    gamma = 0.7
    r = [1.0, -2.0, 0.5, 4.0]
    a, total = discounted_return_prefix(r, gamma)[-1]
    assert a == pytest.approx(gamma ** 4, abs=1e-12)
    assert total == pytest.approx(1.0 - 2.0 * 0.7 + 0.5 * 0.49 + 4.0 * 0.343, abs=1e-12)


def test_return_memoroid_resets_between_episodes():
    m = return_memoroid(0.5)
    ps = [PartialTransition(np.array([x]), b) for x, b in [(1, 1), (1, 0), (1, 0), (2, 1), (2, 0)]]
    _, ss = apply_resettable(m, ps)
    assert ss == [1.0, 1.5, 1.75, 2.0, 3.0]


def test_monoid_identity_and_associativity():
    op = return_monoid(0.9)
    x, y, z = ReturnElement(0.9, 1.0), ReturnElement(0.9, -3.0), ReturnElement(0.81, 2.0)
    assert op(op.identity, x) == x and op(x, op.identity) == x
    assert op(op(x, y), z) == pytest.approx(op(x, op(y, z)))


@pytest.mark.parametrize("bad", [-0.1, 1.5])
def test_discount_validation(bad):
    with pytest.raises(ValueError):
        return_monoid(bad)
    with pytest.raises(ValueError):
        gae_monoid(0.9, bad)


def test_trailing_incomplete_episode_rejected():
    with pytest.raises(ValueError):
        return_to_go([1.0, 2.0], [1, 0], 0.9)
    with pytest.raises(ValueError):
        return_to_go([1.0], [1], 0.9, method="bogus")


def test_empty_input():
    assert return_to_go([], [], 0.9).shape == (0,)


def test_td_residuals_mask_terminal_bootstrap():
    delta = td_residuals([1.0, 1.0], [0.5, 0.5], [10.0, 10.0], [0, 1], 0.5)
    np.testing.assert_allclose(delta, [1.0 + 5.0 - 0.5, 1.0 - 0.5])
