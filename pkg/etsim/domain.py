"""Value types shared by every part of the simulator.

All types are frozen dataclasses: they are created once, never mutated, and can
be handed between threads freely. Each one converts to and from a plain dict of
builtins (``to_dict``/``from_dict``) so it can be written into result files.
"""
import logging
from dataclasses import dataclass, asdict, fields
from typing import Optional, Tuple

from .exceptions import ValidationError

logger = logging.getLogger(__name__)


class _Record:
    """Dict conversion shared by the value types."""

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        return cls(**{key: val for key, val in data.items() if key in names})


@dataclass(frozen=True, order=True)
class Config(_Record):
    """A (batch size, power limit) pair.

    Ordering is by batch size, then power limit, which is the tie-breaking
    order used by every search in the package.
    """
    batch_size: int
    power_limit: float

    def __str__(self):
        return '(b={0}, p={1:g}W)'.format(self.batch_size, self.power_limit)


@dataclass(frozen=True)
class JobSpec(_Record):
    """Description of a recurring training job and its tuning knobs.

    Attributes
    ----------
    job_id : str
        Opaque identifier of the job.

    batch_sizes : tuple of int
        Candidate batch sizes, strictly increasing.

    power_limits : tuple of float
        Candidate power limits in watts, strictly increasing.

    default_batch_size : int
        The user's batch size, the starting point of the pruning walk.

    max_power : float
        Maximum configurable power limit of the device in watts. Converts time
        into energy-equivalent units in the blended cost.

    eta : float
        Relative weight of energy against time, in [0, 1].

    beta : float
        Early stopping multiplier, greater than one.

    recurrences : int
        Number of times the job is re-run.

    window : int or None
        Number of most recent cost observations each arm keeps. None keeps
        them all.

    max_epochs : int
        Hard cap on epochs for any single run.

    rng_seed : int
        Seed of the experiment's random generator.
    """
    job_id: str
    batch_sizes: Tuple[int, ...]
    power_limits: Tuple[float, ...]
    default_batch_size: int
    max_power: float
    eta: float = 0.5
    beta: float = 2.0
    recurrences: int = 1
    window: Optional[int] = None
    max_epochs: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        # Normalize list inputs so parsed specs hash and compare
        object.__setattr__(self, 'batch_sizes',
                           tuple(int(b) for b in self.batch_sizes))
        object.__setattr__(self, 'power_limits',
                           tuple(float(p) for p in self.power_limits))

    @property
    def grid(self):
        """Every configuration of the job in (b, p) order."""
        return [Config(b, p) for b in self.batch_sizes
                for p in self.power_limits]

    def to_dict(self):
        data = asdict(self)
        data['batch_sizes'] = list(self.batch_sizes)
        data['power_limits'] = list(self.power_limits)
        return data


@dataclass(frozen=True)
class PowerProfile(_Record):
    """Average power and throughput measured for one (b, p) pair.

    Throughput is in epochs per second, so one epoch takes ``1/throughput``
    seconds and ``avg_power/throughput`` joules.
    """
    batch_size: int
    power_limit: float
    avg_power: float
    throughput: float
    slice_index: int = 0

    def __post_init__(self):
        errors = []
        if not self.batch_size > 0:
            errors.append('batch size must be positive, got {0}'
                          ''.format(self.batch_size))
        if not self.power_limit > 0:
            errors.append('power limit must be positive, got {0}'
                          ''.format(self.power_limit))
        if not self.avg_power > 0:
            errors.append('average power must be positive, got {0}'
                          ''.format(self.avg_power))
        if not self.throughput > 0:
            errors.append('throughput must be positive, got {0}'
                          ''.format(self.throughput))
        if errors:
            raise ValidationError(errors, prefix='PowerProfile {0}'.format(
                Config(self.batch_size, self.power_limit)))

    @property
    def config(self):
        return Config(self.batch_size, self.power_limit)

    @property
    def epoch_time(self):
        return 1.0 / self.throughput

    @property
    def epoch_energy(self):
        return self.avg_power / self.throughput


@dataclass(frozen=True)
class TrainingRecord(_Record):
    """Epochs one seed replica needed to reach the target at a batch size.

    ``epochs_to_target`` is None exactly when the replica never converged.
    """
    batch_size: int
    seed_index: int
    epochs_to_target: Optional[int]
    converged: bool
    slice_index: int = 0

    def __post_init__(self):
        if not self.batch_size > 0:
            raise ValidationError(
                'batch size must be positive, got {0}'.format(self.batch_size),
                prefix='TrainingRecord seed={0}'.format(self.seed_index))
        if self.converged != (self.epochs_to_target is not None):
            raise ValidationError(
                'converged={0} disagrees with epochs_to_target={1}'.format(
                    self.converged, self.epochs_to_target),
                prefix='TrainingRecord b={0} seed={1}'.format(
                    self.batch_size, self.seed_index))
        if self.epochs_to_target is not None and self.epochs_to_target < 1:
            raise ValidationError(
                'epochs_to_target must be positive, got {0}'.format(
                    self.epochs_to_target),
                prefix='TrainingRecord b={0} seed={1}'.format(
                    self.batch_size, self.seed_index))


@dataclass(frozen=True)
class CostSample(_Record):
    """Outcome of one recurrence.

    ``cost`` is always ``eta*energy + (1-eta)*max_power*time`` for the job the
    sample was produced for; see :func:`etsim.cost.blended_cost`.
    """
    recurrence: int
    config: Config
    energy: float
    time: float
    cost: float
    epochs_run: int
    converged: bool
    early_stopped: bool = False
    profiled: bool = False

    def __post_init__(self):
        if self.early_stopped and self.converged:
            raise ValidationError('an early-stopped run cannot be converged',
                                  prefix='CostSample t={0}'.format(
                                      self.recurrence))

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if isinstance(data.get('config'), dict):
            data['config'] = Config.from_dict(data['config'])
        return super().from_dict(data)


def validate(job):
    """Check every JobSpec invariant.

    Parameters
    ----------
    job : JobSpec

    Returns
    -------
    errors : list of str
        Every violated invariant. An empty list means the job is valid.
    """
    errors = []
    batch_sizes, power_limits = job.batch_sizes, job.power_limits
    if not batch_sizes:
        errors.append('batch size set is empty')
    if not power_limits:
        errors.append('power limit set is empty')
    if any(b <= 0 for b in batch_sizes):
        errors.append('batch sizes must be positive')
    if any(p <= 0 for p in power_limits):
        errors.append('power limits must be positive')
    if any(a >= b for a, b in zip(batch_sizes, batch_sizes[1:])):
        errors.append('batch sizes must be strictly increasing')
    if any(a >= b for a, b in zip(power_limits, power_limits[1:])):
        errors.append('power limits must be strictly increasing')
    if job.default_batch_size not in batch_sizes:
        errors.append('default batch size not in set: {0} not in {1}'.format(
            job.default_batch_size, list(batch_sizes)))
    if power_limits and job.max_power < max(power_limits):
        errors.append('max power {0:g}W below the largest power limit {1:g}W'
                      ''.format(job.max_power, max(power_limits)))
    if not 0 <= job.eta <= 1:
        errors.append('eta out of [0,1]: {0}'.format(job.eta))
    if not job.beta > 1:
        errors.append('beta must exceed 1, got {0}'.format(job.beta))
    if job.recurrences < 1:
        errors.append('recurrences must be positive, got {0}'.format(
            job.recurrences))
    if job.window is not None and job.window < 1:
        errors.append('window must be positive or unbounded, got {0}'.format(
            job.window))
    if job.max_epochs < 1:
        errors.append('max epochs must be positive, got {0}'.format(
            job.max_epochs))
    if job.rng_seed < 0:
        errors.append('rng seed must be unsigned, got {0}'.format(
            job.rng_seed))
    for error in errors:
        logger.debug('JobSpec %s: %s', job.job_id, error)
    return errors


def check(job):
    """Raise :class:`ValidationError` listing every problem with ``job``."""
    errors = validate(job)
    if errors:
        raise ValidationError(errors, prefix='Invalid job {0!r}'.format(
            job.job_id))
    return job
