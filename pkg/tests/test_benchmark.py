import numpy as np
import pytest

from core.errors import ConfigurationError, DataError
from market.benchmark import BenchmarkConfig, eblr_reduction, eblr_run_day, elasticity_schedule
from market.env import DayInputs
from market.metrics import ledger


def _day(price=10.0, load=(1.0, 2.0, 3.0)):
    return DayInputs(price=np.full(24, price), loads=np.tile(np.asarray(load), (24, 1)))


def test_elasticity_schedule_bands():
    xi = elasticity_schedule()
    assert xi.shape == (24,)
    assert xi[0] == xi[5] == xi[21] == xi[23] == 0.5
    assert xi[6] == xi[15] == 0.3
    assert xi[16] == xi[20] == 0.1


def test_reduction_at_band_floor_is_zero():
    assert eblr_reduction(5.0, 0.5, 3.0, 3.0) == 0.0


def test_reduction_is_capped():
    # 10 * 0.5 * (6 - 3) / 3 = 5, capped at 30 % of demand
    assert eblr_reduction(10.0, 0.5, 6.0, 3.0) == pytest.approx(3.0)
    assert eblr_reduction(10.0, 0.5, 6.0, 3.0, k_max_fraction=0.0) == 0.0


def test_reduction_with_band_denominator():
    assert eblr_reduction(1.0, 0.1, 2.0, 1.0, lam_max=3.0, denominator="band") == pytest.approx(0.05)
    with pytest.raises(ValueError):
        eblr_reduction(1.0, 0.1, 2.0, 1.0, denominator="band")


def test_reduction_rejects_rate_below_floor():
    with pytest.raises(ValueError):
        eblr_reduction(1.0, 0.1, 0.5, 1.0)
    with pytest.raises(ValueError):
        eblr_reduction(1.0, 0.1, 0.5, 0.0)


def test_incentives_sit_inside_the_band():
    run = eblr_run_day(_day(), ["1", "2", "3"])
    rates = run.trace.per_eu("lambda")
    # band is [0.3, 1.0] times the lowest price of the day
    np.testing.assert_allclose(rates[0], [3.0 + 0.3 * 7.0, 3.0 + 0.6 * 7.0, 3.0 + 0.9 * 7.0])
    np.testing.assert_array_equal(rates, np.tile(rates[0], (24, 1)))


def test_small_incentives_follow_elasticity():
    config = BenchmarkConfig(mu=[0.1, 0.1, 0.1])
    day = _day()
    run = eblr_run_day(day, ["1", "2", "3"], config)
    ratio = run.reductions / day.loads
    expected = elasticity_schedule(config) * (3.7 - 3.0) / 3.0
    np.testing.assert_allclose(ratio, np.tile(expected[:, None], (1, 3)), atol=1e-12)


def test_eblr_never_increases_load():
    day = DayInputs(price=np.linspace(3, 12, 24), loads=np.random.default_rng(2).uniform(0.5, 4, (24, 3)))
    run = eblr_run_day(day, ["a", "b", "c"])
    assert (run.loads <= day.loads + 1e-12).all()
    assert (run.reductions <= 0.3 * day.loads + 1e-12).all()
    np.testing.assert_allclose(run.aggregate, day.loads.sum(axis=1) - run.reductions.sum(axis=1))


def test_eblr_trace_feeds_the_ledger():
    run = eblr_run_day(_day(), ["1", "2", "3"], capacity=4.0)
    assert len(run.trace) == 24
    frame = run.trace.to_frame()
    np.testing.assert_allclose(frame["required"], 2.0)
    np.testing.assert_array_equal(frame["dis_cost_1"], 0.0)
    book = ledger(run.trace, 0.9)
    assert book.sp_cost == pytest.approx(sum(e.income for e in book.eus))
    assert book.sp_gross == pytest.approx(10.0 * run.reductions.sum())


def test_eblr_uses_actual_demand_when_known():
    day = DayInputs(price=np.full(24, 10.0), loads=np.ones((24, 1)), actual_loads=np.full((24, 1), 2.0))
    run = eblr_run_day(day, ["1"])
    assert run.loads.max() <= 2.0
    assert run.loads.min() >= 1.4 - 1e-12


def test_eblr_input_errors():
    with pytest.raises(ConfigurationError):
        eblr_run_day(_day(load=(1.0, 1.0, 1.0, 1.0)), ["1", "2", "3", "4"])
    with pytest.raises(DataError):
        eblr_run_day(_day(price=0.0), ["1", "2", "3"])


def test_eblr_trace_carries_per_household_loads():
    day = DayInputs(price=np.linspace(3, 12, 24), loads=np.random.default_rng(5).uniform(0.5, 4, (24, 3)))
    run = eblr_run_day(day, ["a", "b", "c"])
    np.testing.assert_allclose(run.trace.per_eu("load_preferred"), day.loads)
    np.testing.assert_allclose(run.trace.per_eu("load_after"), run.loads)
    frame = run.trace.to_frame()
    np.testing.assert_allclose(run.trace.per_eu("load_after").sum(axis=1), frame["load_after"])
