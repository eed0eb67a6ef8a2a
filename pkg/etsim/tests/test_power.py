import logging

import pytest

from etsim import cost
from etsim.domain import PowerProfile
from etsim.exceptions import ValidationError
from etsim.power import (ProfileCache, optimal_power_limit,
                         profiling_epoch_blended, profiling_epoch_cost)

logger = logging.getLogger(__name__)


def test_optimal_power_limit_table(table_profiles):
    power_limit, epoch_cost = optimal_power_limit(table_profiles, 0.5, 250)
    assert power_limit == 150.0
    assert epoch_cost == pytest.approx(19000.0)
    costs = [cost.epoch_cost(prof, 0.5, 250) for prof in table_profiles]
    assert costs == pytest.approx([21250.0, 19000.0, 19090.909090909, 20000.0])


def test_optimal_power_limit_time_only(table_profiles):
    power_limit, _ = optimal_power_limit(table_profiles, 0.0, 250)
    assert power_limit == 250.0


def test_optimal_power_limit_single():
    profile = PowerProfile(32, 175.0, 150.0, 0.01)
    assert optimal_power_limit([profile], 0.5, 250)[0] == 175.0


def test_optimal_power_limit_ties_go_to_smaller_limit():
    profiles = [PowerProfile(32, 200.0, 100.0, 0.01),
                PowerProfile(32, 100.0, 100.0, 0.01)]
    assert optimal_power_limit(profiles, 0.5, 250)[0] == 100.0


def test_optimal_power_limit_coverage(table_profiles):
    with pytest.raises(ValidationError) as excinfo:
        optimal_power_limit(table_profiles[:3], 0.5, 250,
                            power_limits=[100, 150, 200, 250])
    assert 'missing power limits [250]' in str(excinfo.value)
    with pytest.raises(ValidationError):
        optimal_power_limit(table_profiles + table_profiles[:1], 0.5, 250)
    with pytest.raises(ValidationError):
        optimal_power_limit([], 0.5, 250)


def test_optimal_power_limit_matches_oracle(random_bundles):
    for trace in random_bundles:
        epochs = trace.expected_epochs()
        max_power = max(trace.power_limits)
        for eta in (0.0, 0.3, 0.5, 0.8, 1.0):
            for b in epochs:
                profiles = trace.power_for(b)
                power_limit, _ = optimal_power_limit(profiles, eta, max_power)
                config, _ = cost.brute_force_optimum({b: epochs[b]}, profiles,
                                                     eta, max_power)
                assert power_limit == config.power_limit


def test_profiling_epoch_cost():
    profiles = [PowerProfile(32, 100.0, 100.0, 0.01),
                PowerProfile(32, 200.0, 200.0, 0.02)]
    time, energy = profiling_epoch_cost(profiles)
    assert time == pytest.approx(75.0)
    assert energy == pytest.approx(10000.0)
    assert profiling_epoch_blended(profiles, 1.0, 250) == pytest.approx(
        10000.0)


def test_profiling_epoch_cost_single_limit():
    profile = PowerProfile(32, 100.0, 90.0, 0.01)
    time, energy = profiling_epoch_cost([profile])
    assert time == pytest.approx(profile.epoch_time)
    assert energy == pytest.approx(profile.epoch_energy)


def test_profiling_epoch_costs_at_least_the_best_epoch(table_profiles):
    for eta in (0.0, 0.5, 1.0):
        _, best = optimal_power_limit(table_profiles, eta, 250)
        assert profiling_epoch_blended(table_profiles, eta, 250) >= best


def test_ProfileCache_store_once(table_profiles):
    cache = ProfileCache([100, 150, 200, 250], 0.5, 250)
    assert 32 not in cache
    entry = cache.store(32, table_profiles)
    assert 32 in cache
    assert len(cache) == 1
    assert cache.lookup(32) == (150.0, entry.epoch_cost)
    with pytest.raises(ValidationError):
        cache.store(32, table_profiles)


def test_ProfileCache_measure_one_limit_at_a_time(table_profiles):
    cache = ProfileCache([100, 150, 200, 250], 0.5, 250)
    for profile in table_profiles[:-1]:
        assert cache.next_unmeasured(32) == profile.power_limit
        assert cache.measure(profile) is None
        assert 32 not in cache
    assert cache.next_unmeasured(32) == 250.0
    entry = cache.measure(table_profiles[-1])
    assert entry.power_limit == 150.0
    assert cache.next_unmeasured(32) is None
