"""Closed-form cost arithmetic.

The blended cost of a run is ``eta*energy + (1-eta)*max_power*time``. Since
Epochs(b) does not depend on the power limit, the cost of a whole job is the
expected number of epochs times the cost of one epoch, and the oracle only has
to search the (b, p) grid once with expected epochs plugged in.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .domain import Config
from .exceptions import OracleError

logger = logging.getLogger(__name__)

# Relative slack allowed before a negative regret is blamed on the oracle
REGRET_TOLERANCE = 1e-9

# Relative margin a point must win by on one axis to dominate another
DOMINANCE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ParetoPoint:
    """Time-to-accuracy and energy-to-accuracy of one configuration."""
    config: Config
    tta: float
    eta_energy: float


@dataclass(frozen=True)
class SweepPoint:
    """Oracle configuration for one value of eta."""
    eta: float
    config: Config
    tta: float
    eta_energy: float
    cost: float


def blended_cost(energy, time, eta, max_power):
    """Energy and time folded into a single cost.

    Works elementwise on numpy arrays as well as on scalars.

    Parameters
    ----------
    energy : float or np.ndarray
        Energy in joules.

    time : float or np.ndarray
        Time in seconds.

    eta : float
        Weight of energy in [0, 1].

    max_power : float
        Maximum power limit in watts, turning seconds into joule equivalents.

    Returns
    -------
    cost : float or np.ndarray
    """
    return eta * energy + (1 - eta) * max_power * time


def epoch_cost(profile, eta, max_power):
    """Blended cost of one epoch at the profile's configuration."""
    return ((eta * profile.avg_power + (1 - eta) * max_power)
            / profile.throughput)


def job_cost(epochs, epoch_cost):
    """Cost of training for ``epochs`` epochs at a per-epoch cost."""
    return epochs * epoch_cost


def regret(observed_cost, optimal_cost, tolerance=REGRET_TOLERANCE):
    """Cost paid above the optimum.

    Raises
    ------
    OracleError
        If the observation beats the optimum by more than ``tolerance``
        (relative), which means the optimum is wrong.
    """
    difference = observed_cost - optimal_cost
    if difference < -tolerance * max(abs(optimal_cost), 1.0):
        raise OracleError('Observed cost {0} is below the optimal cost {1}'
                          ''.format(observed_cost, optimal_cost))
    return max(difference, 0.0)


def cumulative_regret(regrets):
    """Running sum of per-recurrence regrets."""
    return np.cumsum(np.asarray(regrets, dtype=float))


def check_cost_identity(sample, eta, max_power, rel=1e-9):
    """Whether a CostSample's cost agrees with its energy and time."""
    expected = blended_cost(sample.energy, sample.time, eta, max_power)
    return abs(sample.cost - expected) <= rel * max(abs(expected), 1.0)


def expected_epochs(records):
    """Mean epochs-to-target per batch size over converged replicas.

    Batch sizes with no converged replica are left out.

    Parameters
    ----------
    records : iterable of TrainingRecord
        Replicas of a single slice.

    Returns
    -------
    dict
        Maps batch size to mean epochs.
    """
    epochs = {}
    for record in records:
        if record.converged:
            epochs.setdefault(record.batch_size, []).append(
                record.epochs_to_target)
    return {b: float(np.mean(values)) for b, values in sorted(epochs.items())}


def brute_force_optimum(training, profiles, eta, max_power):
    """Exhaustive search for the cheapest configuration.

    Parameters
    ----------
    training : dict
        Expected epochs per batch size, see :func:`expected_epochs`. Batch
        sizes missing from it never converge and are skipped.

    profiles : iterable of PowerProfile
        Profiles of a single slice.

    eta : float

    max_power : float

    Returns
    -------
    config : Config
        The argmin. Ties go to the smaller batch size, then the smaller power
        limit.

    cost : float
        Expected job cost at ``config``.

    Raises
    ------
    OracleError
        If no profiled batch size converges.
    """
    best = None
    for profile in sorted(profiles, key=lambda prof: prof.config):
        epochs = training.get(profile.batch_size)
        if epochs is None:
            continue
        cost = job_cost(epochs, epoch_cost(profile, eta, max_power))
        if best is None or cost < best[1]:
            best = (profile.config, cost)
    if best is None:
        raise OracleError('No batch size in the trace reaches the target')
    return best


def grid_points(training, profiles):
    """(TTA, ETA) of every configuration whose batch size converges."""
    points = []
    for profile in sorted(profiles, key=lambda prof: prof.config):
        epochs = training.get(profile.batch_size)
        if epochs is None:
            continue
        points.append(ParetoPoint(profile.config,
                                  epochs * profile.epoch_time,
                                  epochs * profile.epoch_energy))
    return points


def pareto_front(points, tolerance=DOMINANCE_TOLERANCE):
    """Points not dominated in both TTA and ETA.

    A point is dominated when another point is no worse on both axes and
    better on one by more than ``tolerance`` (relative). Points that differ
    only by rounding therefore dominate neither way. Points equal on both
    axes keep only the first by (b, p) order.

    Parameters
    ----------
    points : list of ParetoPoint

    tolerance : float, optional

    Returns
    -------
    list of ParetoPoint
        Sorted by ascending TTA.
    """
    if not points:
        return []
    ordered = sorted(points, key=lambda pt: pt.config)
    coords = np.array([(pt.tta, pt.eta_energy) for pt in ordered])
    front = []
    for i, (tta, energy) in enumerate(coords):
        no_worse = (coords[:, 0] <= tta) & (coords[:, 1] <= energy)
        better = ((coords[:, 0] < tta * (1 - tolerance))
                  | (coords[:, 1] < energy * (1 - tolerance)))
        if np.any(no_worse & better):
            continue
        # Exact duplicates that came earlier win
        same = (coords[:i, 0] == tta) & (coords[:i, 1] == energy)
        if np.any(same):
            continue
        front.append(ordered[i])
    return sorted(front, key=lambda pt: (pt.tta, pt.config))


def power_band(profiles):
    """Smallest and largest average power over a set of profiles."""
    powers = [profile.avg_power for profile in profiles]
    return min(powers), max(powers)


def eta_sweep(training, profiles, etas, max_power):
    """Oracle configuration and its coordinates for each eta.

    Parameters
    ----------
    training : dict
        Expected epochs per batch size.

    profiles : iterable of PowerProfile

    etas : iterable of float

    max_power : float

    Returns
    -------
    list of SweepPoint
    """
    profiles = list(profiles)
    by_config = {profile.config: profile for profile in profiles}
    results = []
    for eta in etas:
        config, cost = brute_force_optimum(training, profiles, eta, max_power)
        profile = by_config[config]
        epochs = training[config.batch_size]
        results.append(SweepPoint(eta, config, epochs * profile.epoch_time,
                                  epochs * profile.epoch_energy, cost))
        logger.debug('eta=%g optimum %s cost %g', eta, config, cost)
    return results
