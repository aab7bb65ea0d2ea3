import itertools

import numpy as np
import pytest

from core.errors import ConfigurationError
from market.household import (
    BETA_FLOOR,
    DEFAULT_FLEET,
    OTHER_LOAD,
    Appliance,
    Category,
    Household,
    build_households,
    pc_best_response,
    pc_cost,
    pc_delta,
    preferred_ts_i_profile,
    respond,
    sample_betas,
    schedule_ts_i,
    schedule_ts_ni,
    ts_cost,
)

from tests.conftest import pc_only_household


def _ts_ni(window=(18, 23), block_length=2, block_energy=1.0, preferred_start=18, beta=0.4):
    return Appliance(
        name="washer",
        category=Category.TS_NI,
        beta=beta,
        block_length=block_length,
        block_energy=block_energy,
        preferred_start=preferred_start,
        window=window,
    )


def _ts_i(window=(0, 3), daily_energy=2.0, max_rate=1.0, beta=0.05):
    return Appliance(
        name="ev", category=Category.TS_I, beta=beta, window=window, daily_energy=daily_energy, max_rate=max_rate
    )


# --- PC primitives ---


def test_pc_cost_examples():
    assert pc_cost(3.5, 0, 4, 2.0) == 0.0
    assert pc_cost(3.5, 4, 4, 2.0) == pytest.approx(14.0, abs=1e-9)
    assert pc_cost(3.5, 2, 4, 2.0) == pytest.approx(3.5, abs=1e-9)


def test_pc_delta_examples():
    assert pc_delta(0, 4, 2.0) == 0.0
    assert pc_delta(4, 4, 2.0) == 2.0
    assert pc_delta(1, 4, 2.0) == pytest.approx(0.5, abs=1e-9)


def test_pc_level_out_of_range():
    with pytest.raises(ValueError):
        pc_cost(1.0, 5, 4, 1.0)
    with pytest.raises(ValueError):
        pc_delta(-1, 4, 1.0)


def test_pc_best_response_edges():
    assert pc_best_response(0.0, 3.5, 4, 2.0) == 0
    assert pc_best_response(5.0, 1e-9, 4, 2.0) == 4
    with pytest.raises(ValueError):
        pc_best_response(-1.0, 3.5, 4, 2.0)


def _oracle(lam, beta, m, energy):
    best_q, best_u = 0, None
    for q in range(m + 1):
        u = lam * ((q / m) * energy) - beta * ((q / m) * energy) ** 2
        if best_u is None or u > best_u:
            best_q, best_u = q, u
    return best_q


def test_pc_best_response_hand_checked_case():
    # utilities for q = 0..4: 0, 2.625, 3.5, 2.625, 0
    assert pc_best_response(7.0, 3.5, 4, 2.0) == 2 == _oracle(7.0, 3.5, 4, 2.0)


def test_pc_best_response_matches_brute_force_grid():
    betas = [0.01, 0.5, 3.5, 8.0]
    lams = [0.0, 0.7, 3.0, 9.5, 12.0]
    energies = [0.3, 1.0, 2.5, 4.0, 6.0]
    levels = [1, 2]
    grid = list(itertools.product(betas, lams, energies, levels))
    assert len(grid) == 200
    for beta, lam, energy, m in grid:
        assert pc_best_response(lam, beta, m, energy) == _oracle(lam, beta, m, energy)


def test_pc_response_is_monotone_in_lambda():
    for beta, energy, m in itertools.product([0.1, 1.0, 3.5], [0.5, 2.0], [1, 4, 7]):
        levels = [pc_best_response(lam, beta, m, energy) for lam in np.linspace(0, 30, 301)]
        assert all(a <= b for a, b in zip(levels, levels[1:]))


# --- TS primitives ---


def test_ts_cost_examples():
    assert ts_cost(0.4, 0) == 0.0
    assert ts_cost(0.4, 3) == pytest.approx(3.6, abs=1e-9)
    assert ts_cost(0.4, 4) == pytest.approx(4 * ts_cost(0.4, 2))
    with pytest.raises(ValueError):
        ts_cost(0.4, -1)


def _ts_ni_load():
    aggregate = np.full(24, 2.0)
    aggregate[21:23] = 1.0
    aggregate[18:20] += 1.0  # the block at its preferred start
    return aggregate


def test_ts_ni_stays_without_incentive():
    result = schedule_ts_ni(_ts_ni(), 0.0, _ts_ni_load(), 2.5)
    assert not result.moved
    assert result.start == 18
    np.testing.assert_array_equal(result.delta_e, 0.0)
    assert result.dis_cost == 0.0


def test_ts_ni_moves_to_only_feasible_slot():
    result = schedule_ts_ni(_ts_ni(), 10.0, _ts_ni_load(), 2.5)
    assert result.moved
    assert result.start == 21
    expected = np.zeros(24)
    expected[[18, 19]] = 1.0
    np.testing.assert_allclose(result.delta_e, expected, atol=1e-12)
    assert result.dis_cost == pytest.approx(0.4 * 9, abs=1e-9)
    assert result.profile.sum() == pytest.approx(2.0)


def test_ts_ni_forced_schedule_never_moves():
    app = _ts_ni(window=(18, 19))
    aggregate = np.full(24, 5.0)
    result = schedule_ts_ni(app, 100.0, aggregate, 1.0)
    assert not result.moved and result.start == 18


def test_ts_ni_respects_not_before():
    result = schedule_ts_ni(_ts_ni(), 10.0, _ts_ni_load(), 2.5, not_before=19)
    # the block has already started
    assert not result.moved


def test_ts_ni_rejects_infeasible_preference():
    with pytest.raises(ConfigurationError):
        schedule_ts_ni(_ts_ni(), 1.0, _ts_ni_load(), 2.5, preferred_start=23)


def test_ts_i_fills_low_load_hours():
    app = _ts_i()
    aggregate = np.zeros(24)
    aggregate[:4] = [5.0, 1.0, 1.0, 5.0]
    preferred = np.zeros(24)
    preferred[:2] = 1.0
    result = schedule_ts_i(app, 10.0, aggregate, 4.0, preferred)
    assert result.moved
    np.testing.assert_allclose(result.profile[:4], [0.0, 1.0, 1.0, 0.0])
    assert result.profile.sum() == pytest.approx(2.0, abs=1e-9)
    assert result.delta_e[0] == pytest.approx(1.0)
    assert result.delay == pytest.approx(1.0)
    assert result.dis_cost == pytest.approx(0.05)


def test_ts_i_without_incentive_keeps_preference():
    app = _ts_i(window=(0, 5))
    preferred = preferred_ts_i_profile(app)
    np.testing.assert_allclose(preferred[:3], [1.0, 1.0, 0.0])
    result = schedule_ts_i(app, 0.0, np.full(24, 1.0), 10.0)
    assert not result.moved
    np.testing.assert_array_equal(result.profile, preferred)


def test_ts_i_without_slack_stays_flat():
    app = _ts_i(daily_energy=4.0)
    aggregate = np.zeros(24)
    aggregate[:4] = 9.0
    result = schedule_ts_i(app, 50.0, aggregate, 4.0)
    np.testing.assert_allclose(result.profile[:4], 1.0)
    np.testing.assert_array_equal(result.delta_e, 0.0)


def test_appliance_validation():
    with pytest.raises(ConfigurationError):
        Appliance(name="x", category=Category.PC, beta=0.0)
    with pytest.raises(ConfigurationError):
        _ts_ni(window=(22, 22), preferred_start=22)
    with pytest.raises(ConfigurationError):
        _ts_i(daily_energy=5.0)
    with pytest.raises(ConfigurationError):
        _ts_ni(preferred_start=10)


# --- fleet ---


def test_sample_betas_are_floored_and_seeded():
    a = sample_betas(np.random.default_rng(5), DEFAULT_FLEET, 50)
    b = sample_betas(np.random.default_rng(5), DEFAULT_FLEET, 50)
    assert a == b
    assert len(a) == 50
    assert min(d["ev"] for d in a) == BETA_FLOOR
    assert all(v >= BETA_FLOOR for d in a for v in d.values())


def test_build_households_uses_betas():
    betas = sample_betas(np.random.default_rng(0), DEFAULT_FLEET, 2)
    households = build_households(DEFAULT_FLEET, betas, ["a", "b"])
    assert [h.eu_id for h in households] == ["a", "b"]
    assert households[1].appliance("air_conditioner").beta == betas[1]["air_conditioner"]


def test_duplicate_appliance_names_rejected():
    ac = Appliance(name="ac", category=Category.PC, beta=1.0, share=0.5)
    with pytest.raises(ConfigurationError):
        Household("1", [ac, ac])


# --- household ---


def _evening_load():
    hours = np.arange(24)
    return 2.0 + 1.5 * np.exp(-0.5 * ((hours - 19.5) / 2.0) ** 2)


def _fleet_household(eu_id="1", seed=0):
    betas = sample_betas(np.random.default_rng(seed), DEFAULT_FLEET, 1)[0]
    return build_households(DEFAULT_FLEET, [betas], [eu_id])[0]


def test_begin_day_conserves_demand():
    hh = _fleet_household()
    load = _evening_load()
    profiles = hh.begin_day(load)
    np.testing.assert_allclose(hh.preferred_total(), load, atol=1e-9)
    np.testing.assert_allclose(hh.realized_total(), load, atol=1e-9)
    assert profiles["dryer"][19] == pytest.approx(1.2)
    assert profiles["dryer"][21] == 0.0
    assert profiles["ev"].sum() == pytest.approx(4.0)
    assert OTHER_LOAD in hh.preferred


def test_respond_requires_begin_day():
    with pytest.raises(ConfigurationError):
        pc_only_household().respond(1.0, np.zeros(24), 5.0, 0)


def test_ns_only_household_never_responds():
    hh = Household("1", [Appliance(name="fridge", category=Category.NS, beta=1.0)])
    load = _evening_load()
    hh.begin_day(load)
    for h in range(24):
        out = respond(hh, 9.0, np.full(24, 100.0), 1.0, h)
        assert (out.delta_e, out.dis_cost) == (0.0, 0.0)
        assert out.consumption == pytest.approx(load[h])


def test_pc_household_matches_best_response():
    hh = pc_only_household(beta=0.5, levels=4)
    hh.begin_day(np.full(24, 2.0))
    out = hh.respond(3.0, np.full(24, 2.0), 1.0, 12)
    q = pc_best_response(3.0, 0.5, 4, 2.0)
    assert out.delta_e == pytest.approx(pc_delta(q, 4, 2.0))
    assert out.dis_cost == pytest.approx(pc_cost(0.5, q, 4, 2.0))
    assert out.consumption == pytest.approx(2.0 - out.delta_e)


def test_respond_rejects_negative_incentive():
    hh = pc_only_household()
    hh.begin_day(np.ones(24))
    with pytest.raises(ValueError):
        hh.respond(-1.0, np.ones(24), 1.0, 0)


@pytest.mark.parametrize("rho", [0.5, 0.9])
@pytest.mark.parametrize("seed", [0, 3, 5])
def test_response_dominates_doing_nothing_every_hour(rho, seed):
    hh = _fleet_household(seed=seed)
    load = _evening_load()
    hh.begin_day(load)
    capacity = 0.75 * (3 * load).max()
    rates = np.random.default_rng(seed).choice([0.0, 3.0, 9.5], size=24)
    for h, lam in enumerate(rates):
        out = hh.respond(float(lam), 3 * hh.realized_total(), capacity, h)
        assert rho * lam * out.delta_e - (1 - rho) * out.dis_cost >= -1e-12


def _dryer_household():
    dryer = Appliance(
        name="dryer", category=Category.TS_NI, beta=0.1,
        block_length=2, block_energy=1.2, preferred_start=19, window=(19, 23),
    )
    hh = Household("1", [dryer])
    hh.begin_day(np.full(24, 2.0))
    return hh


def test_shift_is_paid_at_the_rate_that_triggered_it():
    hh = _dryer_household()
    aggregate = np.full(24, 2.0)
    aggregate[18:21] = 4.0
    decided = hh.respond(9.0, aggregate, 3.5, 18)
    assert hh.ts_decision_hour == 18
    np.testing.assert_allclose(hh.realized["dryer"][21:23], 1.2)
    assert decided.delta_e == pytest.approx(2.4)
    assert decided.dis_cost == pytest.approx(0.4)
    assert 9.0 * decided.delta_e - decided.dis_cost > 0.0
    # nothing is offered while the load is actually away
    for h in (19, 20):
        out = hh.respond(0.0, hh.realized_total(), 3.5, h)
        assert (out.delta_e, out.dis_cost) == (0.0, 0.0)


def test_eu_objective_is_monotone_in_rho():
    hh = pc_only_household(beta=0.5)
    hh.begin_day(np.full(24, 2.0))
    out = hh.respond(4.0, np.full(24, 2.0), 1.0, 0)
    values = [rho * 4.0 * out.delta_e - (1 - rho) * out.dis_cost for rho in np.linspace(0, 1, 11)]
    assert all(a <= b + 1e-12 for a, b in zip(values, values[1:]))


def test_shift_decision_is_made_once_per_day():
    hh = _fleet_household()
    load = _evening_load()
    hh.begin_day(load)
    aggregate = 3 * load
    capacity = 0.8 * aggregate.max()
    first_over = int(np.argmax(aggregate > capacity))
    for h in range(first_over):
        hh.respond(0.0, 3 * hh.realized_total(), capacity, h)
    assert not hh.ts_decided
    hh.respond(9.0, 3 * hh.realized_total(), capacity, first_over)
    assert hh.ts_decided and hh.ts_decision_hour == first_over
    snapshot = {k: v.copy() for k, v in hh.realized.items() if k != "air_conditioner"}
    hh.respond(9.0, 3 * hh.realized_total(), capacity, first_over + 1)
    for name, profile in snapshot.items():
        np.testing.assert_array_equal(hh.realized[name], profile)


def _check_day_invariants(hh):
    for app in hh.appliances:
        realized, preferred = hh.realized[app.name], hh.preferred[app.name]
        assert (realized >= -1e-12).all()
        if app.category in (Category.TS_I, Category.TS_NI):
            assert abs(realized.sum() - preferred.sum()) <= 1e-9
            earliest, deadline = app.window
            active = np.flatnonzero(realized > 1e-12)
            if active.size:
                assert active.min() >= earliest and active.max() <= deadline
            if app.category is Category.TS_NI and active.size:
                assert active.max() - active.min() + 1 == app.block_length
    np.testing.assert_array_equal(hh.realized[OTHER_LOAD], hh.preferred[OTHER_LOAD])


def test_random_days_conserve_ts_energy_and_deadlines():
    rng = np.random.default_rng(11)
    for trial in range(40):
        households = build_households(DEFAULT_FLEET, sample_betas(rng, DEFAULT_FLEET, 3), ["1", "2", "3"])
        loads = np.stack([_evening_load() * rng.uniform(0.6, 1.4, size=24) for _ in households])
        for hh, load in zip(households, loads):
            hh.begin_day(load)
        capacity = 0.75 * loads.sum(axis=0).max()
        for h in range(24):
            aggregate = np.sum([hh.realized_total() for hh in households], axis=0)
            for hh in households:
                hh.respond(float(rng.uniform(0, 12)), aggregate, capacity, h)
        for hh in households:
            _check_day_invariants(hh)
