import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from finsler_flow import jets as J

finite = st.floats(-2.0, 2.0, allow_nan=False)


def test_variable_partials():
    x1, x2 = J.variables([np.array([0.3]), np.array([-0.7])], 3)
    f = x1 * x1 * x2
    assert f.value[0] == pytest.approx(0.3**2 * -0.7)
    assert f.partial(0)[0] == pytest.approx(2 * 0.3 * -0.7)
    assert f.partial(0, 0, 1)[0] == pytest.approx(2.0)
    assert f.partial(1, 1)[0] == pytest.approx(0.0)


@given(finite, finite)
@settings(max_examples=40, deadline=None)
def test_elementary_functions_match_calculus(a, b):
    x1, x2 = J.variables([np.array([a]), np.array([b])], 3)
    f = J.sin(x1) * J.exp(x2)
    assert f.partial(0, 0, 1)[0] == pytest.approx(-np.sin(a) * np.exp(b), abs=1e-12)
    g = J.cos(x1 + 2.0 * x2)
    assert g.partial(1, 1)[0] == pytest.approx(-4 * np.cos(a + 2 * b), abs=1e-12)


@given(st.floats(0.2, 3.0), st.floats(0.2, 3.0))
@settings(max_examples=40, deadline=None)
def test_sqrt_log_reciprocal(a, b):
    x1, x2 = J.variables([np.array([a]), np.array([b])], 2)
    r = J.sqrt(x1 * x1 + x2 * x2)
    n = np.hypot(a, b)
    assert r.partial(0)[0] == pytest.approx(a / n)
    assert r.partial(0, 1)[0] == pytest.approx(-a * b / n**3)
    lg = J.log(x1)
    assert lg.partial(0, 0)[0] == pytest.approx(-1 / a**2)
    inv = x2.reciprocal()
    assert inv.partial(1, 1)[0] == pytest.approx(2 / b**3)


def test_chain_rule_against_finite_differences():
    x = np.array([0.4, 1.1])
    y = np.array([-0.2, 0.5])
    x1, x2 = J.variables([x, y], 2)
    f = J.exp(J.sin(x1) * x2) / (2.0 + J.cos(x2))
    fun = lambda a, b: np.exp(np.sin(a) * b) / (2 + np.cos(b))  # noqa: E731
    h = 1e-5
    fd = (fun(x + h, y) - fun(x - h, y)) / (2 * h)
    np.testing.assert_allclose(f.partial(0), fd, rtol=1e-8)
