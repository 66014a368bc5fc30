import itertools
import operator

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from memoroid.scan import (
    AssociativeOperator,
    ScanSchedule,
    associative_scan,
    blelloch_exclusive,
    scan_parallel,
    scan_sequential,
)
from memoroid.verify import counting

ADD = AssociativeOperator(0, operator.add)
CONCAT = AssociativeOperator("", operator.add)  # associative, not commutative


def _mat(a, b):
    return a @ b


@given(st.lists(st.integers(-10**6, 10**6), max_size=300), st.integers(1, 40), st.integers(1, 6))
@settings(max_examples=200, deadline=None)
def test_parallel_matches_accumulate(xs, block, workers):
    expect = list(itertools.accumulate(xs))
    assert scan_parallel(ADD, xs, ScanSchedule(workers, block)) == expect
    assert scan_sequential(ADD, xs) == expect


@given(st.lists(st.sampled_from("abcdefg"), max_size=200), st.integers(1, 17))
@settings(max_examples=150, deadline=None)
def test_order_is_preserved_for_non_commutative_ops(chars, block):
    expect = ["".join(chars[: i + 1]) for i in range(len(chars))]
    assert scan_parallel(CONCAT, chars, ScanSchedule(3, block)) == expect


@given(st.lists(st.sampled_from("xyz"), max_size=130))
@settings(max_examples=150, deadline=None)
def test_blelloch_exclusive_is_shifted_inclusive(chars):
    out = blelloch_exclusive(CONCAT, chars)
    assert out == ["".join(chars[:i]) for i in range(len(chars))]


@pytest.mark.parametrize("n", [0, 1, 2, 3, 255, 256, 257, 1000, 4096])
@pytest.mark.parametrize("block", [1, 7, 256])
def test_combine_count_below_three_n(n, block):
    op, calls = counting(ADD)
    scan_parallel(op, list(range(n)), ScanSchedule(1, block))
    assert calls[0] <= 3 * n


def test_sequential_uses_n_minus_one_combines():
    op, calls = counting(ADD)
    scan_sequential(op, list(range(50)))
    assert calls[0] == 49


def test_float_results_independent_of_worker_budget():
    rng = np.random.default_rng(3)
    xs = [np.eye(3) + 0.05 * rng.standard_normal((3, 3)) for _ in range(2000)]
    op = AssociativeOperator(np.eye(3), _mat)
    ref = np.stack(scan_parallel(op, xs, ScanSchedule(1, 64)))
    for w in (2, 3, 8):
        assert np.array_equal(ref, np.stack(scan_parallel(op, xs, ScanSchedule(w, 64))))


def test_process_executor_matches_inline():
    xs = list(range(3000))
    assert scan_parallel(ADD, xs, ScanSchedule(2, 500, "process")) == list(itertools.accumulate(xs))


@pytest.mark.parametrize("bad", [dict(worker_budget=0), dict(block_size=0), dict(executor="gpu")])
def test_schedule_validation(bad):
    with pytest.raises(ValueError):
        ScanSchedule(**bad)


@given(st.integers(0, 200), st.integers(0, 2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_associative_scan_numpy_matches_cumsum(n, seed):
    x = np.random.default_rng(seed).integers(-100, 100, size=(n, 3))
    out = associative_scan(lambda a, b: a + b, x)
    np.testing.assert_array_equal(out, np.cumsum(x, axis=0))


def test_associative_scan_over_tuples_and_torch():
    # affine maps h -> a h + b compose associatively; the scan gives h_t from h_{-1} = 0
    torch.manual_seed(0)
    a = torch.rand(37, 4, dtype=torch.float64)
    b = torch.randn(37, 4, dtype=torch.float64)

    def combine(x, y):
        return y[0] * x[0], y[0] * x[1] + y[1]

    _, h = associative_scan(combine, (a, b))
    ref = torch.zeros(4, dtype=torch.float64)
    for t in range(37):
        ref = a[t] * ref + b[t]
        torch.testing.assert_close(h[t], ref, rtol=1e-12, atol=1e-12)


def test_associative_scan_empty_and_single():
    assert associative_scan(lambda a, b: a + b, np.zeros((0, 2))).shape == (0, 2)
    np.testing.assert_array_equal(associative_scan(lambda a, b: a + b, np.ones((1, 2))), np.ones((1, 2)))


def test_operator_call_delegates():
    assert ADD(2, 3) == 5
