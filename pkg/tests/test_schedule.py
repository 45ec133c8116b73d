import pytest
from hypothesis import given
from hypothesis import strategies as st

from cesor.schedule import RiskSchedule, soft_risk_level


def test_midway_value():
    assert soft_risk_level(100, RiskSchedule(0.05, 0.8, 250)) == pytest.approx(0.525)


def test_first_step_close_to_one():
    assert soft_risk_level(1, RiskSchedule(0.05, 0.8, 250)) == pytest.approx(1 - 0.95 / 200)


def test_reaches_alpha_at_soft_end():
    s = RiskSchedule(0.05, 0.8, 250)
    assert soft_risk_level(200, s) == pytest.approx(0.05)
    assert all(soft_risk_level(m, s) == 0.05 for m in range(200, 251))


def test_out_of_range_step():
    s = RiskSchedule(0.1, 0.5, 10)
    with pytest.raises(ValueError):
        soft_risk_level(0, s)
    with pytest.raises(ValueError):
        soft_risk_level(11, s)


@pytest.mark.parametrize("args", [(0.0, 0.8, 10), (1.0, 0.8, 10), (0.1, 0.0, 10), (0.1, 1.2, 10), (0.1, 0.5, 0)])
def test_invalid_schedule(args):
    with pytest.raises(ValueError):
        RiskSchedule(*args)


@given(st.floats(0.01, 0.99), st.floats(0.05, 1.0), st.integers(1, 400))
def test_monotone_and_bounded(alpha, rho, M):
    s = RiskSchedule(alpha, rho, M)
    levels = [soft_risk_level(m, s) for m in range(1, M + 1)]
    assert all(alpha <= a <= 1.0 for a in levels)
    assert all(a >= b for a, b in zip(levels, levels[1:]))
    assert all(a == alpha for m, a in enumerate(levels, start=1) if m >= rho * M)
