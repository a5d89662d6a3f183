import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from c3ae.metrics import COLUMNS, ErrorStats, format_csv, format_table, quantile, summarize


def brute_force(values):
    """Independent oracle: sort, then index/slice by hand."""
    s = sorted(values)
    n = len(s)

    def q(p):
        pos = (n - 1) * p
        lo = math.floor(pos)
        hi = min(lo + 1, n - 1)
        return s[lo] + (s[hi] - s[lo]) * (pos - lo)

    k = -(-n // 4)
    return (sum(s[:k]) / k, sum(s) / n, q(0.5), (q(0.25) + 2 * q(0.5) + q(0.75)) / 4, sum(s[n - k:]) / k)


def test_quantile_examples():
    assert quantile([5], 0.5) == 5
    assert quantile([1, 2, 3, 4], 0.25) == 1.75
    assert quantile([1, 2, 3, 4], 1.0) == 4


def test_quantile_empty():
    with pytest.raises(ValueError):
        quantile([], 0.5)


def test_summarize_examples():
    assert summarize([2, 2, 2, 2]).as_row() == (2, 2, 2, 2, 2)
    s = summarize([1, 2, 3, 4])
    assert (s.mean, s.median, s.trimean, s.best25_mean, s.worst25_mean) == (2.5, 2.5, 2.5, 1, 4)


def test_summarize_empty():
    with pytest.raises(ValueError):
        summarize([])


def test_summarize_matches_oracle_1000(rng):
    vals = rng.exponential(3.0, 1000)
    np.testing.assert_allclose(summarize(vals).as_row(), brute_force(list(vals)), atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 90, allow_nan=False), min_size=1, max_size=200))
def test_summarize_invariants(vals):
    s = summarize(vals)
    np.testing.assert_allclose(s.as_row(), brute_force(vals), atol=1e-9)
    eps = 1e-9
    assert s.best25_mean <= s.mean + eps and s.mean <= s.worst25_mean + eps
    assert min(vals) - eps <= s.median <= max(vals) + eps
    assert min(vals) - eps <= s.trimean <= max(vals) + eps
    np.testing.assert_allclose(summarize(list(reversed(vals))).as_row(), s.as_row(), atol=1e-12)
    bigger = summarize(vals + [max(vals) + 1.0])
    assert bigger.mean >= s.mean - eps and bigger.worst25_mean >= s.worst25_mean - eps


def test_report_formats():
    rows = {"grey-world": summarize([1, 2, 3, 4]), "c3ae": ErrorStats(0, 1, 2, 3, 4)}
    table = format_table(rows)
    header = table.splitlines()[0].split()
    assert header[1:] == list(COLUMNS)
    assert len(table.splitlines()) == 3
    csv = format_csv(rows).splitlines()
    assert csv[0] == "method,best25_mean,mean,median,trimean,worst25_mean"
    assert csv[2].startswith("c3ae,")
