"""Trace-driven replay of a recurring job under a tuning policy.

Every recurrence picks a batch size (and possibly a power limit), draws one of
the recorded seed replicas of that batch size, and replays it epoch by epoch
until it reaches the target, hits the epoch cap or is stopped early.
Overlapping submissions are simulated with a single-threaded event loop: a
recurrence is decided when it is submitted and its cost is reported back to
the policy when it completes.
"""
import enum
import heapq
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from . import cost
from . import explorer
from .domain import Config, CostSample, check
from .exceptions import InputError, TraceValidationError, ValidationError
from .explorer import Phase, Role
from .power import (ProfileCache, optimal_power_limit, profiling_epoch_blended,
                    profiling_epoch_cost)

logger = logging.getLogger(__name__)

# Recurrences averaged for the converged cost of a policy
LAST_RECURRENCES = 5


class Policy(enum.Enum):
    ZEUS = 'zeus'
    GRID_SEARCH = 'grid'
    DEFAULT = 'default'


@dataclass(frozen=True)
class Decision:
    """What a policy asks the next recurrence to run.

    ``power_limit`` None means the power limit is left to the profile cache,
    profiling the batch size first if it was never profiled.
    """
    batch_size: int
    power_limit: Optional[float]
    threshold: Optional[float]
    phase: str


@dataclass(frozen=True)
class ArrivalSchedule:
    """Submission times of the recurrences, in seconds.

    A submission made before an earlier recurrence completes overlaps it.
    """
    submissions: Tuple[Tuple[int, float], ...]

    def __post_init__(self):
        submissions = tuple((int(t), float(s)) for t, s in self.submissions)
        object.__setattr__(self, 'submissions', submissions)
        errors = []
        if [t for t, _ in submissions] != list(range(len(submissions))):
            errors.append('recurrence indices must run 0, 1, 2, ...')
        times = [s for _, s in submissions]
        if any(b < a for a, b in zip(times, times[1:])):
            errors.append('submit times must be non-decreasing')
        if any(not math.isfinite(s) or s < 0 for s in times):
            errors.append('submit times must be finite and non-negative')
        if errors:
            raise ValidationError(errors, prefix='Invalid arrival schedule')

    def __len__(self):
        return len(self.submissions)

    @property
    def submit_times(self):
        return [s for _, s in self.submissions]

    @classmethod
    def periodic(cls, recurrences, interval, start=0.0):
        """A submission every ``interval`` seconds."""
        return cls(tuple((t, start + t * interval)
                         for t in range(recurrences)))

    @classmethod
    def from_csv(cls, path):
        """Read a ``recurrence,submit_time_s`` CSV."""
        frame = pd.read_csv(path)
        missing = {'recurrence', 'submit_time_s'} - set(frame.columns)
        if missing:
            raise InputError('Schedule "{0}" lacks columns {1}'.format(
                path, sorted(missing)))
        frame = frame.sort_values('recurrence', kind='stable')
        return cls(tuple(zip(frame['recurrence'], frame['submit_time_s'])))

    def to_frame(self):
        return pd.DataFrame(list(self.submissions),
                            columns=['recurrence', 'submit_time_s'])


@dataclass(frozen=True)
class RecurrenceRow:
    """One line of an experiment: what ran, what it cost, its regret."""
    recurrence: int
    slice_index: int
    submit_time: float
    phase: str
    threshold: Optional[float]
    sample: CostSample
    epoch_cost: float
    optimal_cost: float
    regret: float
    overlapped: bool = False

    @property
    def config(self):
        return self.sample.config


@dataclass(frozen=True)
class ExperimentResult:
    """Every recurrence of one replay.

    ``cumulative_regret`` is always the running sum of the regret column.
    ``report_order`` lists recurrences in the order their costs reached the
    policy. ``arms`` holds the final arm states of a Zeus replay as
    :meth:`ArmState.to_dict` mappings, by batch size.
    """
    policy: str
    job: object
    rows: Tuple[RecurrenceRow, ...]
    options: dict = field(default_factory=dict, hash=False)
    report_order: Tuple[int, ...] = ()
    arms: Tuple[dict, ...] = field(default=(), hash=False)

    @property
    def samples(self):
        return [row.sample for row in self.rows]

    @property
    def regrets(self):
        return np.array([row.regret for row in self.rows], dtype=float)

    @property
    def cumulative_regret(self):
        return cost.cumulative_regret(self.regrets)

    @property
    def total_cost(self):
        return float(sum(row.sample.cost for row in self.rows))

    @property
    def total_energy(self):
        return float(sum(row.sample.energy for row in self.rows))

    @property
    def total_time(self):
        return float(sum(row.sample.time for row in self.rows))

    @property
    def total_regret(self):
        return float(np.sum(self.regrets))

    def last(self, count=LAST_RECURRENCES):
        return self.rows[-count:]

    def last_mean_cost(self, count=LAST_RECURRENCES):
        """Mean cost of the final ``count`` recurrences."""
        return float(np.mean([row.sample.cost for row in self.last(count)]))

    @property
    def converged_config(self):
        """Configuration of the last recurrence that reached the target."""
        for row in reversed(self.rows):
            if row.sample.converged:
                return row.config
        return None

    def summary(self):
        config = self.converged_config
        return {'policy': self.policy,
                'recurrences': len(self.rows),
                'converged_batch_size': config and config.batch_size,
                'converged_power_limit_w': config and config.power_limit,
                'total_cost': self.total_cost,
                'total_energy_j': self.total_energy,
                'total_time_s': self.total_time,
                'total_regret': self.total_regret,
                'last_mean_cost': self.last_mean_cost()}

    def to_frame(self):
        """Per-recurrence table, one column per quantity with its unit."""
        records = []
        for row, cumulative in zip(self.rows, self.cumulative_regret):
            sample = row.sample
            records.append({
                'recurrence': row.recurrence,
                'slice': row.slice_index,
                'submit_time_s': row.submit_time,
                'phase': row.phase,
                'batch_size': sample.config.batch_size,
                'power_limit_w': sample.config.power_limit,
                'epochs_count': sample.epochs_run,
                'energy_j': sample.energy,
                'time_s': sample.time,
                'cost_jeq': sample.cost,
                'threshold_jeq': (np.nan if row.threshold is None
                                  else row.threshold),
                'converged': sample.converged,
                'early_stopped': sample.early_stopped,
                'profiled': sample.profiled,
                'overlapped': row.overlapped,
                'regret_jeq': row.regret,
                'cumulative_regret_jeq': float(cumulative)})
        return pd.DataFrame.from_records(records, columns=RESULT_COLUMNS)


# Costs are in joule-equivalent units (jeq): energy plus max power times time
RESULT_COLUMNS = ['recurrence', 'slice', 'submit_time_s', 'phase',
                  'batch_size', 'power_limit_w', 'epochs_count', 'energy_j',
                  'time_s', 'cost_jeq', 'threshold_jeq', 'converged',
                  'early_stopped', 'profiled', 'overlapped', 'regret_jeq',
                  'cumulative_regret_jeq']


def run_recurrence(job, batch_size, bundle, cache, threshold, slice_index,
                   rng, recurrence=0, power_limit=None):
    """Replay one recurrence of ``job`` at ``batch_size``.

    Parameters
    ----------
    job : JobSpec

    batch_size : int

    bundle : TraceBundle

    cache : ProfileCache or None
        Used, and filled, when ``power_limit`` is None.

    threshold : float or None
        Early stopping threshold. An epoch is not started if finishing it
        would take the accumulated cost above the threshold.

    slice_index : int

    rng : numpy.random.Generator
        Draws the seed replica, uniformly and with replacement.

    recurrence : int, optional

    power_limit : float, optional
        Run the whole recurrence at this limit, with no profiling.

    Returns
    -------
    CostSample
        The first epoch of a batch size that was never profiled is the
        profiling epoch, and ``profiled`` is set when it was actually run.
    """
    if batch_size not in job.batch_sizes:
        raise InputError('b={0} is not one of the job\'s batch sizes {1}'
                         ''.format(batch_size, list(job.batch_sizes)))
    replicas = bundle.replicas(batch_size, slice_index)
    if not replicas:
        raise TraceValidationError('No training replicas for b={0} in slice '
                                   '{1}'.format(batch_size, slice_index))
    profiles = bundle.power_for(batch_size, slice_index)
    if not profiles:
        raise TraceValidationError('No power profiles for b={0} in slice {1}'
                                   ''.format(batch_size, slice_index))
    record = replicas[int(rng.integers(len(replicas)))]

    profiling = False
    if power_limit is None:
        if cache is None:
            raise InputError('A profile cache is needed to choose the power '
                             'limit')
        if batch_size in cache:
            power_limit, _ = cache.lookup(batch_size)
        else:
            profiling = True
            power_limit, _ = optimal_power_limit(profiles, job.eta,
                                                 job.max_power,
                                                 job.power_limits)
    profile = bundle.profile(batch_size, power_limit, slice_index)

    target = record.epochs_to_target if record.converged else None
    planned = job.max_epochs if target is None else min(target,
                                                        job.max_epochs)
    times = np.full(planned, profile.epoch_time)
    energies = np.full(planned, profile.epoch_energy)
    if profiling:
        times[0], energies[0] = profiling_epoch_cost(profiles,
                                                     job.power_limits)
    cum_time = np.cumsum(times)
    cum_energy = np.cumsum(energies)

    epochs = planned
    early_stopped = False
    if threshold is not None:
        cum_cost = cost.blended_cost(cum_energy, cum_time, job.eta,
                                     job.max_power)
        over = np.flatnonzero(cum_cost > threshold)
        if over.size:
            epochs = int(over[0])
            early_stopped = True
    converged = (not early_stopped and target is not None
                 and target <= job.max_epochs)

    time = float(cum_time[epochs - 1]) if epochs else 0.0
    energy = float(cum_energy[epochs - 1]) if epochs else 0.0
    profiled = profiling and epochs > 0
    if profiled:
        cache.store(batch_size, profiles)
    sample = CostSample(recurrence=recurrence,
                        config=Config(batch_size, power_limit),
                        energy=energy, time=time,
                        cost=float(cost.blended_cost(energy, time, job.eta,
                                                     job.max_power)),
                        epochs_run=epochs, converged=converged,
                        early_stopped=early_stopped, profiled=profiled)
    logger.debug('t=%s %s ran %s epochs (seed %s): cost %g%s', recurrence,
                 sample.config, epochs, record.seed_index, sample.cost,
                 ' (early stop)' if early_stopped else '')
    return sample


class ZeusPolicy:
    """Pruning exploration then Thompson Sampling, with JIT power profiling.

    Parameters
    ----------
    job : JobSpec

    bundle : TraceBundle

    early_stopping, pruning, jit_profiling : bool, optional
        Switch the corresponding component off for ablations. Without JIT
        profiling a batch size spends whole recurrences at each unmeasured
        power limit, lowest first, before its best limit is known.
    """
    name = Policy.ZEUS.value

    def __init__(self, job, bundle, early_stopping=True, pruning=True,
                 jit_profiling=True, prior_mean=0.0, prior_variance=math.inf):
        self.job = job
        self.bundle = bundle
        self.jit_profiling = jit_profiling
        self.state = explorer.new_state(job, early_stopping=early_stopping,
                                        pruning=pruning,
                                        prior_mean=prior_mean,
                                        prior_variance=prior_variance)
        self.cache = ProfileCache(job.power_limits, job.eta, job.max_power)
        self._slices = {}

    def choose(self, recurrence, slice_index, rng):
        state = self.state
        phase = state.phase.value
        if state.phase is Phase.SAMPLING:
            batch_size = explorer.next_batch_size(state, rng)
            role = Role.SAMPLE
        elif state.pending_order and not state.walk_outstanding:
            batch_size, role = explorer.next_batch_size(state, rng), Role.WALK
        else:
            batch_size = explorer.concurrent_batch_size(state, rng)
            role = Role.CONCURRENT
        threshold = explorer.early_stop_threshold(state)
        explorer.issue(state, recurrence, batch_size, role, threshold)
        self._slices[recurrence] = slice_index

        power_limit = None
        if not self.jit_profiling:
            if batch_size in self.cache:
                power_limit, _ = self.cache.lookup(batch_size)
            else:
                power_limit = self.cache.next_unmeasured(batch_size)
        return Decision(batch_size, power_limit, threshold, phase)

    def report(self, sample):
        slice_index = self._slices.pop(sample.recurrence)
        batch_size = sample.config.batch_size
        if (not self.jit_profiling and sample.epochs_run
                and batch_size not in self.cache):
            self.cache.measure(self.bundle.profile(
                batch_size, sample.config.power_limit, slice_index))
        explorer.report_result(self.state, sample)

    def arm_states(self):
        return tuple(arm.to_dict()
                     for _, arm in sorted(self.state.arms.items()))

    @property
    def run_cache(self):
        return self.cache if self.jit_profiling else None


class GridSearchPolicy:
    """Try every (b, p) once, b then p ascending, then exploit the best.

    A batch size whose run fails to converge is dropped along with the rest
    of its power limits. No early stopping and no profiling.
    """
    name = Policy.GRID_SEARCH.value
    run_cache = None

    def __init__(self, job, bundle=None):
        self.job = job
        self._queue = list(job.grid)
        self._pruned = set()
        self._observed = {}

    def _next_config(self):
        while self._queue:
            config = self._queue.pop(0)
            if config.batch_size not in self._pruned:
                return config
        return None

    def best_observed(self):
        if not self._observed:
            return None
        return min(self._observed.items(), key=lambda item: (item[1],
                                                             item[0]))[0]

    def choose(self, recurrence, slice_index, rng):
        config = self._next_config()
        phase = 'exploration'
        if config is None:
            phase = 'exploitation'
            config = self.best_observed()
            if config is None:
                # Everything tried is still running
                config = Config(self.job.default_batch_size,
                                max(self.job.power_limits))
        return Decision(config.batch_size, config.power_limit, None, phase)

    def report(self, sample):
        if sample.converged:
            previous = self._observed.get(sample.config)
            if previous is None or sample.cost < previous:
                self._observed[sample.config] = sample.cost
        elif sample.config.batch_size not in self._pruned:
            self._pruned.add(sample.config.batch_size)
            logger.info('Grid Search: pruned b=%s', sample.config.batch_size)

    def arm_states(self):
        return ()


class DefaultPolicy:
    """Always the user's batch size at the maximum power limit."""
    name = Policy.DEFAULT.value
    run_cache = None

    def __init__(self, job, bundle=None):
        self.config = Config(job.default_batch_size, max(job.power_limits))

    def choose(self, recurrence, slice_index, rng):
        return Decision(self.config.batch_size, self.config.power_limit, None,
                        'default')

    def report(self, sample):
        pass

    def arm_states(self):
        return ()


def make_policy(policy, job, bundle, **options):
    """Build a policy by name or :class:`Policy` member.

    ``options`` (the Zeus ablation switches and prior) only apply to Zeus.
    """
    policy = Policy(policy)
    if policy is Policy.ZEUS:
        return ZeusPolicy(job, bundle, **options)
    if policy is Policy.GRID_SEARCH:
        return GridSearchPolicy(job, bundle)
    return DefaultPolicy(job, bundle)


def _check_coverage(job, bundle, slices):
    errors = []
    for slice_index in sorted(set(slices)):
        if slice_index not in bundle.slices:
            errors.append('slice {0} is not in the bundle'.format(slice_index))
            continue
        for b in job.batch_sizes:
            profiles = bundle.power_for(b, slice_index)
            limits = {prof.power_limit for prof in profiles}
            errors.extend(
                'b={0} p={1:g}W draws {2:g}W, above max power {3:g}W in '
                'slice {4}'.format(b, prof.power_limit, prof.avg_power,
                                   job.max_power, slice_index)
                for prof in profiles if prof.avg_power > job.max_power)
            missing = sorted(set(job.power_limits) - limits)
            if missing:
                errors.append('no profiles for b={0} at {1} in slice {2}'
                              ''.format(b, missing, slice_index))
            if not bundle.replicas(b, slice_index):
                errors.append('no training replicas for b={0} in slice {1}'
                              ''.format(b, slice_index))
    if errors:
        raise TraceValidationError(errors,
                                   prefix='Traces do not cover the job')


class _Oracle:
    """Per-slice optimum and expected cost of any recurrence."""

    def __init__(self, job, bundle):
        self.job = job
        self.bundle = bundle
        self._optimum = {}
        self._epochs = {}

    def optimum(self, slice_index):
        if slice_index not in self._optimum:
            self._epochs[slice_index] = self.bundle.expected_epochs(
                slice_index)
            self._optimum[slice_index] = cost.brute_force_optimum(
                self._epochs[slice_index], self.bundle.profiles(slice_index),
                self.job.eta, self.job.max_power)
            logger.info('Slice %s optimum %s at cost %g', slice_index,
                        *self._optimum[slice_index])
        return self._optimum[slice_index]

    def regret(self, sample, slice_index):
        """Expected excess cost of a converged run, whole cost otherwise."""
        _, optimal = self.optimum(slice_index)
        if not sample.converged:
            return cost.regret(sample.cost, 0.0)
        job = self.job
        b, p = sample.config.batch_size, sample.config.power_limit
        per_epoch = cost.epoch_cost(self.bundle.profile(b, p, slice_index),
                                    job.eta, job.max_power)
        expected = cost.job_cost(self._epochs[slice_index][b], per_epoch)
        if sample.profiled:
            expected += profiling_epoch_blended(
                self.bundle.power_for(b, slice_index), job.eta,
                job.max_power) - per_epoch
        return cost.regret(expected, optimal)


def run_experiment(job, bundle, policy=Policy.ZEUS, schedule=None,
                   slices=None, **options):
    """Replay ``job.recurrences`` recurrences under a policy.

    Parameters
    ----------
    job : JobSpec
        ``job.rng_seed`` seeds the only random generator of the replay.

    bundle : TraceBundle

    policy : Policy or str, optional

    schedule : ArrivalSchedule, optional
        Submission times. By default each recurrence is submitted when the
        previous one completes, so nothing overlaps. When given, its length
        sets the number of recurrences.

    slices : sequence of int, optional
        Trace slice of each recurrence; slice 0 throughout by default.

    options
        Passed to :class:`ZeusPolicy`.

    Returns
    -------
    ExperimentResult
    """
    check(job)
    recurrences = len(schedule) if schedule is not None else job.recurrences
    if slices is None:
        slices = [0] * recurrences
    slices = [int(s) for s in slices]
    if len(slices) != recurrences:
        raise InputError('{0} slice indices for {1} recurrences'.format(
            len(slices), recurrences))
    _check_coverage(job, bundle, slices)

    rng = np.random.default_rng(job.rng_seed)
    runner = make_policy(policy, job, bundle, **options)
    oracle = _Oracle(job, bundle)
    logger.info('Replaying %s recurrences of %r under %s', recurrences,
                job.job_id, runner.name)

    rows = []
    reported = []
    running = []
    clock = 0.0

    def complete_until(limit):
        while running and running[0][0] <= limit:
            _, t, sample = heapq.heappop(running)
            runner.report(sample)
            reported.append(t)

    for t in range(recurrences):
        submit = schedule.submit_times[t] if schedule is not None else clock
        complete_until(submit)
        overlapped = bool(running)
        decision = runner.choose(t, slices[t], rng)
        sample = run_recurrence(job, decision.batch_size, bundle,
                                runner.run_cache, decision.threshold,
                                slices[t], rng, recurrence=t,
                                power_limit=decision.power_limit)
        per_epoch = cost.epoch_cost(bundle.profile(sample.config.batch_size,
                                                   sample.config.power_limit,
                                                   slices[t]),
                                    job.eta, job.max_power)
        optimal = oracle.optimum(slices[t])[1]
        rows.append(RecurrenceRow(t, slices[t], submit, decision.phase,
                                  decision.threshold, sample, per_epoch,
                                  optimal, oracle.regret(sample, slices[t]),
                                  overlapped))
        completion = submit + sample.time
        clock = max(clock, completion)
        # Ties complete in submission order
        heapq.heappush(running, (completion, t, sample))
    complete_until(math.inf)

    options = dict(options, policy=runner.name,
                   concurrent=schedule is not None)
    result = ExperimentResult(runner.name, job, tuple(rows), options,
                              tuple(reported), runner.arm_states())
    logger.info('%s on %r: total cost %g, total regret %g', runner.name,
                job.job_id, result.total_cost, result.total_regret)
    return result


def slice_schedule(recurrences, change_points):
    """Slice index of each recurrence.

    The slice moves up by one at each change point, so recurrence ``t`` uses
    slice ``k`` where ``k`` change points are at or before ``t``.
    """
    change_points = sorted(int(c) for c in change_points)
    if any(not 0 < c < recurrences for c in change_points):
        raise InputError('Change points {0} must fall inside (0, {1})'.format(
            change_points, recurrences))
    if len(set(change_points)) != len(change_points):
        raise InputError('Change points must be distinct')
    return [int(np.searchsorted(change_points, t, side='right'))
            for t in range(recurrences)]


def run_drift_experiment(job, bundle, window, change_points, **options):
    """Zeus on drifting traces, with a history window of ``window`` costs.

    Parameters
    ----------
    job : JobSpec

    bundle : TraceBundle
        Needs one slice per change point plus one.

    window : int or None
        None keeps every observation.

    change_points : list of int
        Recurrences at which the next slice takes over.
    """
    job = replace(job, window=window)
    slices = slice_schedule(job.recurrences, change_points)
    return run_experiment(job, bundle, Policy.ZEUS, slices=slices, **options)


def run_concurrent_experiment(job, bundle, schedule, policy=Policy.ZEUS,
                              **options):
    """Replay with overlapping submissions.

    A recurrence submitted before an earlier one completes is decided without
    that earlier cost; costs reach the policy in completion order.
    """
    if not isinstance(schedule, ArrivalSchedule):
        schedule = ArrivalSchedule(tuple(schedule))
    return run_experiment(job, bundle, policy, schedule=schedule, **options)


def savings(result, baseline):
    """Fraction of the baseline's cost, energy and time a policy saved.

    Positive numbers mean ``result`` was cheaper than ``baseline``.
    """
    def saved(ours, theirs):
        return 1.0 - ours / theirs if theirs else 0.0

    return {'cost': saved(result.total_cost, baseline.total_cost),
            'energy': saved(result.total_energy, baseline.total_energy),
            'time': saved(result.total_time, baseline.total_time),
            'last_mean_cost': saved(result.last_mean_cost(),
                                    baseline.last_mean_cost())}


def beta_sweep(job, bundle, betas, reference=2.0, **options):
    """Replay Zeus for each beta.

    Returns
    -------
    list of (beta, total cost, ratio to the reference beta's total cost)
    """
    betas = sorted(set(float(b) for b in betas) | {float(reference)})
    totals = {beta: run_experiment(replace(job, beta=beta), bundle,
                                   Policy.ZEUS, **options).total_cost
              for beta in betas}
    return [(beta, totals[beta], totals[beta] / totals[reference])
            for beta in betas]


def audit_early_stop(result):
    """Samples that cost more than their threshold plus one epoch.

    Returns
    -------
    list of str
        Empty when every sample respects its threshold.
    """
    problems = []
    for row in result.rows:
        if row.threshold is None:
            continue
        limit = row.threshold + row.epoch_cost
        if row.sample.cost > limit * (1 + 1e-12):
            problems.append('t={0} cost {1} above threshold {2} plus one '
                            'epoch {3}'.format(row.recurrence,
                                               row.sample.cost, row.threshold,
                                               row.epoch_cost))
    return problems


def audit_accounting(result, rel=1e-9):
    """Broken cost identities, totals or profiling charges of a result."""
    job = result.job
    problems = []
    profiled = {}
    for row in result.rows:
        sample = row.sample
        if not cost.check_cost_identity(sample, job.eta, job.max_power, rel):
            problems.append('t={0} cost {1} disagrees with its energy and '
                            'time'.format(row.recurrence, sample.cost))
        if sample.profiled:
            b = sample.config.batch_size
            profiled[b] = profiled.get(b, 0) + 1
    problems.extend('b={0} profiled {1} times'.format(b, count)
                    for b, count in sorted(profiled.items()) if count > 1)
    total = math.fsum(sample.cost for sample in result.samples)
    if abs(total - result.total_cost) > rel * max(total, 1.0):
        problems.append('total cost {0} is not the sum of samples {1}'.format(
            result.total_cost, total))
    if not np.allclose(result.cumulative_regret, np.cumsum(result.regrets)):
        problems.append('cumulative regret is not the running regret sum')
    return problems
