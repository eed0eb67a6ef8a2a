"""Power limit selection for a fixed batch size.

Given the profiles of a batch size over every power limit, the best limit is
the one with the cheapest epoch. Profiles are collected just in time: the
first epoch a batch size ever runs is split into equal slices, one per power
limit, and the results are cached for the rest of the experiment.
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .cost import blended_cost, epoch_cost
from .domain import PowerProfile
from .exceptions import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProfileEntry:
    """Cached outcome of profiling one batch size."""
    profiles: Tuple[PowerProfile, ...]
    power_limit: float
    epoch_cost: float


def _check_coverage(profiles, power_limits=None):
    """Raise unless ``profiles`` hold each power limit exactly once."""
    if not profiles:
        raise ValidationError('no profiles given')
    batch_sizes = {profile.batch_size for profile in profiles}
    if len(batch_sizes) > 1:
        raise ValidationError('profiles mix batch sizes {0}'.format(
            sorted(batch_sizes)))
    limits = [profile.power_limit for profile in profiles]
    errors = []
    duplicates = sorted({p for p in limits if limits.count(p) > 1})
    if duplicates:
        errors.append('duplicated power limits {0}'.format(duplicates))
    if power_limits is not None:
        missing = sorted(set(power_limits) - set(limits))
        extra = sorted(set(limits) - set(power_limits))
        if missing:
            errors.append('missing power limits {0}'.format(missing))
        if extra:
            errors.append('unknown power limits {0}'.format(extra))
    if errors:
        raise ValidationError(errors, prefix='Profiles of b={0}'.format(
            batch_sizes.pop()))


def optimal_power_limit(profiles, eta, max_power, power_limits=None):
    """Power limit with the cheapest epoch for one batch size.

    Parameters
    ----------
    profiles : list of PowerProfile
        One profile per power limit, all for the same batch size.

    eta : float

    max_power : float

    power_limits : iterable of float, optional
        The job's full set of power limits. When given, profiles must cover it.

    Returns
    -------
    power_limit : float
        The argmin; ties go to the smaller limit.

    cost : float
        Cost of one epoch at that limit.

    Raises
    ------
    ValidationError
        On missing or duplicated power limits.
    """
    _check_coverage(profiles, power_limits)
    ordered = sorted(profiles, key=lambda prof: prof.power_limit)
    costs = np.array([epoch_cost(prof, eta, max_power) for prof in ordered])
    # argmin returns the first minimum, i.e. the smallest limit
    best = int(np.argmin(costs))
    return ordered[best].power_limit, float(costs[best])


def profiling_epoch_cost(profiles, power_limits=None):
    """Time and energy of the epoch used to profile a batch size.

    The epoch is split into ``len(profiles)`` equal shares of work, each run at
    a different power limit.

    Returns
    -------
    time : float
        Seconds.

    energy : float
        Joules.
    """
    _check_coverage(profiles, power_limits)
    share = 1.0 / len(profiles)
    time = sum(share * prof.epoch_time for prof in profiles)
    energy = sum(share * prof.epoch_energy for prof in profiles)
    return time, energy


def profiling_epoch_blended(profiles, eta, max_power):
    """Blended cost of the profiling epoch."""
    time, energy = profiling_epoch_cost(profiles)
    return blended_cost(energy, time, eta, max_power)


class ProfileCache:
    """Profiles gathered so far for each batch size of one job.

    An entry only exists once a profiling epoch was actually charged for the
    batch size. ``measure`` supports gathering profiles one power limit at a
    time instead, in which case the entry is created when the last limit is
    measured.

    Parameters
    ----------
    power_limits : iterable of float
        The job's power limits.

    eta : float

    max_power : float
    """
    def __init__(self, power_limits, eta, max_power):
        self.power_limits = tuple(sorted(power_limits))
        self.eta = eta
        self.max_power = max_power
        self.entries = {}
        self._partial = {}

    def __contains__(self, batch_size):
        return batch_size in self.entries

    def __len__(self):
        return len(self.entries)

    def store(self, batch_size, profiles):
        """Record a full profiling epoch for ``batch_size``.

        Returns the new entry. Storing a batch size twice is an error, since
        profiling is charged once per batch size.
        """
        if batch_size in self.entries:
            raise ValidationError('batch size {0} was already profiled'
                                  ''.format(batch_size))
        profiles = tuple(sorted(profiles, key=lambda prof: prof.power_limit))
        power_limit, cost = optimal_power_limit(
            profiles, self.eta, self.max_power, self.power_limits)
        entry = ProfileEntry(profiles, power_limit, cost)
        self.entries[batch_size] = entry
        self._partial.pop(batch_size, None)
        logger.debug('Profiled b=%s: p*=%gW, epoch cost %g', batch_size,
                     power_limit, cost)
        return entry

    def lookup(self, batch_size):
        """Cached (p*, epoch cost) of a profiled batch size."""
        entry = self.entries[batch_size]
        return entry.power_limit, entry.epoch_cost

    def next_unmeasured(self, batch_size):
        """Smallest power limit not yet measured for ``batch_size``.

        Returns None once the batch size is fully profiled.
        """
        if batch_size in self.entries:
            return None
        measured = self._partial.get(batch_size, {})
        for power_limit in self.power_limits:
            if power_limit not in measured:
                return power_limit
        return None

    def measure(self, profile):
        """Record one power limit's profile learned from a whole recurrence."""
        measured = self._partial.setdefault(profile.batch_size, {})
        measured[profile.power_limit] = profile
        if len(measured) == len(self.power_limits):
            return self.store(profile.batch_size, measured.values())
        return None
