"""Batch size exploration: two pruning rounds, then Thompson Sampling.

Each pruning round walks outward from the current default batch size: the
default first, then smaller batch sizes in descending order until one fails to
converge, then larger ones in ascending order until one fails. Only batch
sizes that converged in the round go on to the next. After the first round the
default moves to the cheapest survivor; after the second round every survivor
has at least two costs and becomes a Thompson Sampling arm.

The state is owned by a single caller. Several issuances may be outstanding at
once (overlapping job submissions), and their results may be reported in any
order.
"""
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

from .bandit import ArmState, observe, predict, seed_arm
from .exceptions import InputError, NoConvergenceError, UnknownBatchSizeError

logger = logging.getLogger(__name__)


class Phase(enum.Enum):
    PRUNING = 'pruning'
    SAMPLING = 'sampling'


class Role(enum.Enum):
    WALK = 'walk'
    CONCURRENT = 'concurrent'
    SAMPLE = 'sample'


@dataclass(frozen=True)
class Issuance:
    """A batch size handed out and not yet reported."""
    batch_size: int
    role: Role
    threshold: Optional[float]
    phase: Phase


@dataclass
class ExplorerState:
    """Everything the batch size explorer knows.

    Attributes
    ----------
    batch_sizes : tuple of int
        The job's full batch size set.

    beta : float
        Early stopping multiplier.

    phase : Phase

    round : int
        Pruning round, 1 or 2.

    current_default : int
        Where the current pruning walk starts.

    pending_order : list of int
        Batch sizes still to be walked this round, in walk order.

    surviving : set of int
        Batch sizes still in the running. All of them before the first round
        ends, the converged ones afterwards.

    min_cost : float or None
        Smallest cost of any converged recurrence so far.

    arms : dict
        Thompson Sampling arms by batch size, filled when sampling starts.
    """
    batch_sizes: Tuple[int, ...]
    beta: float
    current_default: int
    window: Optional[int] = None
    prior_mean: float = 0.0
    prior_variance: float = math.inf
    early_stopping: bool = True
    pruning: bool = True
    phase: Phase = Phase.PRUNING
    round: int = 1
    pending_order: List[int] = field(default_factory=list)
    surviving: Set[int] = field(default_factory=set)
    min_cost: Optional[float] = None
    arms: Dict[int, ArmState] = field(default_factory=dict)
    observations: Dict[int, List[float]] = field(default_factory=dict)
    round_converged: Set[int] = field(default_factory=set)
    outstanding: Dict[int, Issuance] = field(default_factory=dict)
    exhausted: bool = False

    @property
    def walk_outstanding(self):
        """Whether a pruning-walk issuance is still waiting for its result."""
        return any(iss.role is Role.WALK for iss in self.outstanding.values())

    def best_known(self):
        """Surviving batch size with the smallest cost observed so far."""
        costs = [(min(self.observations[b]), b) for b in sorted(self.surviving)
                 if self.observations.get(b)]
        return min(costs)[1] if costs else None


def walk_order(default, candidates):
    """Order in which a pruning round visits ``candidates``."""
    candidates = sorted(candidates)
    lower = [b for b in candidates if b < default][::-1]
    upper = [b for b in candidates if b > default]
    head = [default] if default in candidates else []
    return head + lower + upper


def new_state(job, early_stopping=True, pruning=True, prior_mean=0.0,
              prior_variance=math.inf):
    """Fresh explorer for a job.

    Parameters
    ----------
    job : JobSpec

    early_stopping : bool, optional
        Stop runs whose cost would exceed ``beta`` times the cheapest run.

    pruning : bool, optional
        Drop batch sizes that fail to converge. When False the walk visits
        every batch size and failures become ordinary (expensive) arms.

    prior_mean, prior_variance : float, optional
        Prior belief of every arm; the default is the flat prior.
    """
    if (job.window is not None and job.window < 2
            and math.isinf(prior_variance)):
        raise InputError('A window of {0} cannot estimate cost variance under '
                         'the flat prior'.format(job.window))
    state = ExplorerState(batch_sizes=tuple(job.batch_sizes), beta=job.beta,
                          current_default=job.default_batch_size,
                          window=job.window, prior_mean=prior_mean,
                          prior_variance=prior_variance,
                          early_stopping=early_stopping, pruning=pruning)
    state.surviving = set(state.batch_sizes)
    state.pending_order = walk_order(state.current_default, state.surviving)
    return state


def early_stop_threshold(state):
    """Cost above which the next run is stopped, or None if uncapped."""
    if not state.early_stopping or state.min_cost is None:
        return None
    return state.beta * state.min_cost


def next_batch_size(state, rng):
    """Batch size for the next submission.

    While pruning this is the head of the walk; while sampling it is a
    Thompson Sampling draw over the surviving arms.

    Raises
    ------
    NoConvergenceError
        If pruning left no batch size standing.
    """
    if state.exhausted:
        raise NoConvergenceError('No batch size in {0} reaches the target'
                                 ''.format(list(state.batch_sizes)))
    if state.phase is Phase.SAMPLING:
        return predict([state.arms[b] for b in sorted(state.arms)], rng)
    if not state.pending_order:
        raise InputError('The pruning walk is waiting for an outstanding '
                         'result; use concurrent_batch_size instead')
    return state.pending_order[0]


def concurrent_batch_size(state, rng):
    """Batch size for a submission made while an earlier one is running.

    While pruning, the cheapest batch size seen so far is reused (the default
    when nothing has converged yet). While sampling, Thompson Sampling is
    random enough to spread concurrent submissions on its own.
    """
    if state.exhausted:
        raise NoConvergenceError('No batch size in {0} reaches the target'
                                 ''.format(list(state.batch_sizes)))
    if state.phase is Phase.SAMPLING:
        return next_batch_size(state, rng)
    best = state.best_known()
    return state.current_default if best is None else best


def issue(state, recurrence, batch_size, role, threshold=None):
    """Record that ``batch_size`` was handed out for ``recurrence``."""
    if recurrence in state.outstanding:
        raise InputError('Recurrence {0} is already outstanding'.format(
            recurrence))
    if role is Role.WALK:
        if not state.pending_order or state.pending_order[0] != batch_size:
            raise InputError('b={0} is not next in the pruning walk {1}'
                             ''.format(batch_size, state.pending_order))
        state.pending_order.pop(0)
    state.outstanding[recurrence] = Issuance(batch_size, role, threshold,
                                             state.phase)
    logger.debug('t=%s issued b=%s (%s, threshold %s)', recurrence,
                 batch_size, role.value, threshold)
    return state


def _observed_cost(sample, issuance):
    """Cost an arm learns from a sample; early-stopped runs are censored."""
    if sample.early_stopped and issuance.threshold is not None:
        return issuance.threshold
    return sample.cost


def report_result(state, sample):
    """Feed the outcome of an issued recurrence back into the explorer.

    Parameters
    ----------
    state : ExplorerState
        Updated in place and returned.

    sample : CostSample

    Raises
    ------
    UnknownBatchSizeError
        If the sample's recurrence was never issued or its batch size does
        not match the issuance.
    """
    batch_size = sample.config.batch_size
    issuance = state.outstanding.get(sample.recurrence)
    if batch_size not in state.batch_sizes or issuance is None:
        raise UnknownBatchSizeError(
            'No outstanding issuance of b={0} for recurrence {1}'.format(
                batch_size, sample.recurrence))
    if issuance.batch_size != batch_size:
        raise UnknownBatchSizeError(
            'Recurrence {0} was issued b={1} but reported b={2}'.format(
                sample.recurrence, issuance.batch_size, batch_size))
    del state.outstanding[sample.recurrence]

    if sample.converged and (state.min_cost is None
                             or sample.cost < state.min_cost):
        state.min_cost = sample.cost
    cost = _observed_cost(sample, issuance)

    if state.phase is Phase.SAMPLING:
        if batch_size in state.arms:
            state.arms[batch_size] = observe(state.arms[batch_size], cost)
        return state

    if issuance.role is Role.WALK:
        _advance_walk(state, batch_size, sample, cost)
    elif sample.converged or not state.pruning:
        state.observations.setdefault(batch_size, []).append(cost)
    return state


def _advance_walk(state, batch_size, sample, cost):
    keep = sample.converged or not state.pruning
    if keep:
        state.round_converged.add(batch_size)
        state.observations.setdefault(batch_size, []).append(cost)
    else:
        # Failure ends the walk in this direction for the rest of the round
        default = state.current_default
        if batch_size < default:
            state.pending_order = [b for b in state.pending_order
                                   if b >= default]
        elif batch_size > default:
            state.pending_order = [b for b in state.pending_order
                                   if b <= default]
        logger.info('Pruning round %s: b=%s failed to converge', state.round,
                    batch_size)
    if not state.pending_order and not state.walk_outstanding:
        _finish_round(state)


def _finish_round(state):
    survivors = sorted(state.round_converged)
    state.surviving = set(survivors)
    state.round_converged = set()
    if not survivors:
        state.exhausted = True
        logger.warning('Pruning round %s left no batch size standing',
                       state.round)
        return
    state.current_default = state.best_known()
    logger.info('Pruning round %s done: survivors %s, default now b=%s',
                state.round, survivors, state.current_default)
    if state.round == 1:
        state.round = 2
        state.pending_order = walk_order(state.current_default, survivors)
        return
    state.phase = Phase.SAMPLING
    for b in survivors:
        arm = ArmState(b, window=state.window, prior_mean=state.prior_mean,
                       prior_variance=state.prior_variance)
        state.arms[b] = seed_arm(arm, state.observations[b])
    logger.info('Thompson Sampling over %s', survivors)
