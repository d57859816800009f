import math

import mpmath
import numpy as np
import pytest

from urnflow.series import SeriesResult, ToleranceError, em_sum, neumaier_sum


def test_zeta_two():
    r = em_sum(lambda x: x**-2.0, 1, rho=0.5)
    assert r.value == pytest.approx(math.pi**2 / 6, rel=1e-13)
    assert r.tail_bound <= 1e-10


@pytest.mark.parametrize("s", [1.5, 3.0, 10.0 / 3.0])
def test_zeta_tails(s):
    r = em_sum(lambda x: x**-s, 11, rho=0.5, atol=1e-14)
    assert r.value == pytest.approx(float(mpmath.zeta(s, 11)), rel=1e-11)


def test_head_only_when_terms_vanish():
    r = em_sum(lambda x: np.exp(-x), 1, rho=0.5, atol=1e-15)
    assert r.value == pytest.approx(1.0 / math.expm1(1.0), rel=1e-13)


def test_certificate_covers_actual_error():
    exact = float(mpmath.zeta(1.2, 1))
    r = em_sum(lambda x: x**-1.2, 1, rho=0.5, atol=1e-9, rtol=0.0)
    assert abs(r.value - exact) <= r.tail_bound + 1e-13


def test_tolerance_error_carries_best_estimate():
    with pytest.raises(ToleranceError) as info:
        em_sum(lambda x: x**-1.01, 1, rho=0.5, atol=1e-300, rtol=0.0, budget=2**17)
    assert info.value.best.value > 0
    assert math.isfinite(info.value.best.tail_bound)


def test_start_validation():
    with pytest.raises(ValueError):
        em_sum(lambda x: x**-2.0, 0, rho=0.5)


def test_result_arithmetic():
    a = SeriesResult(1.0, 1e-12, 10)
    b = SeriesResult(0.5, 2e-12, 20)
    assert (a - b).value == 0.5
    assert (a + b).tail_bound == pytest.approx(3e-12)
    assert a.scaled(-2.0) == SeriesResult(-2.0, 2e-12, 10)
    assert float(b) == 0.5


def test_neumaier_sum_cancellation():
    vals = [1e16, 1.0, -1e16, 1.0]
    assert neumaier_sum(vals) == 2.0
