import logging
import math

import numpy as np
import pytest

from etsim.bandit import (VARIANCE_FLOOR, ArmState, observe, posterior,
                          predict, seed_arm)
from etsim.exceptions import InputError, ValidationError

logger = logging.getLogger(__name__)


def test_posterior_flat_prior():
    arm = seed_arm(ArmState(32), [10.0, 14.0])
    assert arm.posterior_mean == pytest.approx(12.0, rel=1e-9)
    assert arm.posterior_variance == pytest.approx(4.0, rel=1e-9)


def test_posterior_flat_prior_closed_form():
    costs = [103.0, 97.5, 110.25, 99.0, 101.5]
    mean, variance = posterior(costs)
    assert mean == pytest.approx(np.mean(costs), rel=1e-9)
    assert variance == pytest.approx(np.var(costs, ddof=1) / len(costs),
                                     rel=1e-9)


def test_posterior_informative_prior():
    arm = seed_arm(ArmState(32, prior_mean=0.0, prior_variance=100.0),
                   [10.0, 14.0])
    assert arm.posterior_variance == pytest.approx(1 / 0.26, rel=1e-9)
    assert arm.posterior_variance == pytest.approx(3.84615, rel=1e-5)
    assert arm.posterior_mean == pytest.approx(11.5385, rel=1e-5)


def test_posterior_before_two_observations():
    assert posterior([]) == (None, None)
    assert posterior([10.0]) == (None, None)
    assert posterior([10.0], prior_mean=5.0, prior_variance=2.0) == (5.0, 2.0)
    arm = observe(ArmState(32), 10.0)
    assert not arm.usable


def test_window_evicts_oldest():
    arm = ArmState(32, window=3)
    for cost in (5.0, 50.0, 52.0, 54.0):
        arm = observe(arm, cost)
    assert arm.history == (50.0, 52.0, 54.0)
    assert arm.posterior_mean == pytest.approx(52.0)
    assert arm.posterior_variance == pytest.approx(4 / 3)


@pytest.mark.parametrize('prior_variance', [math.inf, 50.0])
def test_posterior_ignores_order_within_window(prior_variance):
    costs = [103.0, 97.5, 110.25, 99.0, 101.5, 95.75]
    rng = np.random.default_rng(4)
    expected = posterior(costs, 90.0, prior_variance)
    for _ in range(5):
        shuffled = rng.permutation(costs).tolist()
        assert posterior(shuffled, 90.0, prior_variance) == pytest.approx(
            expected, rel=1e-12)


def test_confidence_grows_with_observations():
    # Pairs spread so the sample variance stays at 4 for every length
    sample_variance = 4.0
    variances = []
    for pairs in range(1, 8):
        n = 2 * pairs
        spread = math.sqrt(sample_variance * (n - 1) / n)
        costs = [100.0 - spread, 100.0 + spread] * pairs
        assert np.var(costs, ddof=1) == pytest.approx(sample_variance)
        mean, variance = posterior(costs)
        assert mean == pytest.approx(100.0)
        assert variance == pytest.approx(sample_variance / n)
        variances.append(variance)
    assert all(later < earlier
               for earlier, later in zip(variances, variances[1:]))


def test_window_forgets_costs_before_a_change():
    window = 6
    arm = seed_arm(ArmState(32, window=window), [100.0, 101.0, 99.0, 100.5])
    after = [200.0, 203.0, 198.5, 201.0, 199.0, 202.5]
    for count, cost in enumerate(after, start=1):
        arm = observe(arm, cost)
        assert len(arm.history) == min(window, 4 + count)
    assert arm.history == tuple(after)
    assert all(cost >= 198.5 for cost in arm.history)
    assert arm.posterior_mean == pytest.approx(np.mean(after))


def test_zero_variance_uses_floor():
    arm = seed_arm(ArmState(32), [7.0, 7.0])
    assert arm.posterior_mean == pytest.approx(7.0)
    floor = VARIANCE_FLOOR * (1 + 7.0 ** 2)
    assert arm.posterior_variance == pytest.approx(floor / 2)
    assert arm.posterior_variance > 0


def test_observe_leaves_arm_untouched():
    arm = seed_arm(ArmState(32), [10.0, 14.0])
    updated = observe(arm, 12.0)
    assert arm.history == (10.0, 14.0)
    assert updated.history == (10.0, 14.0, 12.0)


@pytest.mark.parametrize('cost', [-1.0, math.inf, math.nan])
def test_observe_rejects_bad_costs(cost):
    with pytest.raises(InputError):
        observe(ArmState(32), cost)


def test_seed_arm_needs_two_costs():
    with pytest.raises(ValidationError):
        seed_arm(ArmState(32), [10.0])
    informed = seed_arm(ArmState(32, prior_variance=4.0), [10.0])
    assert informed.usable


def test_ArmState_dict_round_trip():
    arm = seed_arm(ArmState(32, window=5), [10.0, 14.0])
    data = arm.to_dict()
    assert data['prior_variance'] is None
    assert ArmState.from_dict(data) == arm


def test_predict_single_arm():
    arm = seed_arm(ArmState(32), [10.0, 14.0])
    for seed in range(10):
        assert predict([arm], np.random.default_rng(seed)) == 32


def test_predict_zero_variance_is_argmin():
    arms = [ArmState(b, posterior_mean=mean, posterior_variance=0.0)
            for b, mean in ((8, 5.0), (16, 3.0), (32, 9.0))]
    assert predict(arms, np.random.default_rng(0)) == 16


def test_predict_separated_arms():
    arms = [ArmState(16, posterior_mean=10.0, posterior_variance=1.0),
            ArmState(32, posterior_mean=20.0, posterior_variance=1.0)]
    rng = np.random.default_rng(0)
    picks = [predict(arms, rng) for _ in range(100000)]
    assert picks.count(16) >= 99900


def test_predict_is_reproducible():
    arms = [ArmState(b, posterior_mean=10.0, posterior_variance=4.0)
            for b in (8, 16, 32)]
    first = [predict(arms, np.random.default_rng(5)) for _ in range(20)]
    second = [predict(arms, np.random.default_rng(5)) for _ in range(20)]
    assert first == second


def test_predict_requires_usable_arms():
    with pytest.raises(InputError):
        predict([], np.random.default_rng(0))
    with pytest.raises(InputError):
        predict([ArmState(32)], np.random.default_rng(0))


def test_thompson_sampling_converges():
    means = {8: 100.0, 16: 120.0, 32: 144.0, 64: 172.8}
    hits, total = 0, 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        arms = {}
        for b, mean in means.items():
            arms[b] = seed_arm(ArmState(b), rng.normal(mean, 0.05 * mean, 2))
        for round_ in range(98):
            choice = predict([arms[b] for b in sorted(arms)], rng)
            mean = means[choice]
            arms[choice] = observe(arms[choice],
                                   rng.normal(mean, 0.05 * mean))
            if round_ >= 78:
                total += 1
                hits += choice == 8
    assert hits / total >= 0.9
