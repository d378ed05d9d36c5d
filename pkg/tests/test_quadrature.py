import math

import pytest

from torsionpinn.errors import QuadratureError
from torsionpinn.fd_oracle import adaptive_simpson
from torsionpinn.quadrature import cumulative_simpson


def test_simpson_exact_for_cubics():
    assert adaptive_simpson(lambda x: x * x, 0.0, 1.0, 1e-12) == pytest.approx(1 / 3, abs=1e-15)
    assert adaptive_simpson(lambda x: x ** 3 - x, -1.0, 2.0, 1e-12) == pytest.approx(2.25, abs=1e-14)


def test_exponential_to_tolerance():
    assert abs(adaptive_simpson(math.exp, 0.0, 1.0, 1e-10) - (math.e - 1)) <= 1e-10


def test_oscillatory_and_peaked():
    val = adaptive_simpson(lambda x: math.exp(-((x - 0.5) / 0.01) ** 2), 0.0, 1.0, 1e-12)
    assert val == pytest.approx(0.01 * math.sqrt(math.pi), abs=1e-11)
    assert adaptive_simpson(math.sin, 0.0, 20 * math.pi, 1e-10) == pytest.approx(0.0, abs=1e-9)


def test_edge_cases():
    assert adaptive_simpson(math.exp, 1.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        adaptive_simpson(math.exp, 1.0, 0.0)
    with pytest.raises(ValueError):
        adaptive_simpson(math.exp, 0.0, 1.0, tol=0)
    with pytest.raises(QuadratureError):
        adaptive_simpson(lambda x: 1 / x if x else 0.0, 0.0, 1.0, 1e-12, max_intervals=1000)


def test_cumulative():
    vals = cumulative_simpson(math.cos, [0.0, 0.5, 1.0, 2.0], 1e-12)
    assert vals[0] == 0.0
    for v, x in zip(vals, [0.0, 0.5, 1.0, 2.0]):
        assert v == pytest.approx(math.sin(x), abs=1e-11)
