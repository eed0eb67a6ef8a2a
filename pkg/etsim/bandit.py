"""Gaussian Thompson Sampling over batch sizes.

Each arm keeps a window of its most recent costs. The cost variance is not
known up front, so it is re-estimated from the window on every observation
and plugged into the conjugate normal update. A flat prior is encoded as
infinite prior variance (zero precision), which simply drops the prior terms.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from .exceptions import InputError, ValidationError

logger = logging.getLogger(__name__)

# Relative floor on the learned cost variance
VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class ArmState:
    """Belief about the mean cost of one batch size.

    Attributes
    ----------
    batch_size : int

    history : tuple of float
        Most recent costs, oldest first, at most ``window`` of them.

    window : int or None
        History length; None keeps everything.

    prior_mean, prior_variance : float
        Prior belief. ``prior_variance=inf`` is the flat prior.

    posterior_mean, posterior_variance : float or None
        Current belief, None until it can be computed.
    """
    batch_size: int
    history: Tuple[float, ...] = ()
    window: Optional[int] = None
    prior_mean: float = 0.0
    prior_variance: float = math.inf
    posterior_mean: Optional[float] = None
    posterior_variance: Optional[float] = None

    @property
    def flat_prior(self):
        return math.isinf(self.prior_variance)

    @property
    def usable(self):
        """Whether the arm can take part in a prediction."""
        return (self.posterior_variance is not None
                and self.posterior_variance >= 0)

    def to_dict(self):
        return {'batch_size': self.batch_size,
                'history': list(self.history),
                'window': self.window,
                'prior_mean': self.prior_mean,
                'prior_variance': (None if self.flat_prior
                                   else self.prior_variance),
                'posterior_mean': self.posterior_mean,
                'posterior_variance': self.posterior_variance}

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data['history'] = tuple(data.get('history', ()))
        if data.get('prior_variance') is None:
            data['prior_variance'] = math.inf
        return cls(**data)


def posterior(history, prior_mean=0.0, prior_variance=math.inf):
    """Posterior mean and variance of an arm's mean cost.

    Parameters
    ----------
    history : sequence of float
        Cost observations in the current window.

    prior_mean, prior_variance : float
        Prior belief; infinite variance is the flat prior.

    Returns
    -------
    mean, variance : float or None
        Both None when fewer than two observations exist under the flat
        prior. With an informative prior and fewer than two observations the
        prior itself is returned.
    """
    costs = np.asarray(history, dtype=float)
    flat = math.isinf(prior_variance)
    if costs.size < 2:
        if flat:
            return None, None
        return prior_mean, prior_variance
    sample_mean = float(np.mean(costs))
    floor = VARIANCE_FLOOR * (1.0 + sample_mean ** 2)
    cost_variance = max(float(np.var(costs, ddof=1)), floor)
    prior_precision = 0.0 if flat else 1.0 / prior_variance
    prior_weight = 0.0 if flat else prior_mean / prior_variance
    variance = 1.0 / (prior_precision + costs.size / cost_variance)
    mean = variance * (prior_weight + float(np.sum(costs)) / cost_variance)
    return mean, variance


def observe(arm, cost):
    """Add a cost observation to an arm and refresh its belief.

    The oldest observation is evicted once the window is full.

    Parameters
    ----------
    arm : ArmState

    cost : float
        Finite and non-negative.

    Returns
    -------
    ArmState
        A new state; ``arm`` is left untouched.
    """
    if not math.isfinite(cost) or cost < 0:
        raise InputError('Cost observations must be finite and non-negative, '
                         'got {0}'.format(cost))
    history = arm.history + (float(cost),)
    if arm.window is not None:
        history = history[-arm.window:]
    mean, variance = posterior(history, arm.prior_mean, arm.prior_variance)
    return replace(arm, history=history, posterior_mean=mean,
                   posterior_variance=variance)


def seed_arm(arm, costs):
    """Fold several observations into an arm in order.

    Used to hand the costs seen while pruning over to Thompson Sampling.

    Raises
    ------
    ValidationError
        If fewer than two costs are given under the flat prior.
    """
    costs = list(costs)
    if arm.flat_prior and len(arm.history) + len(costs) < 2:
        raise ValidationError('At least two costs are needed to seed b={0} '
                              'under the flat prior, got {1}'.format(
                                  arm.batch_size, len(costs)))
    for cost in costs:
        arm = observe(arm, cost)
    return arm


def predict(arms, rng):
    """Pick the arm whose sampled mean cost is smallest.

    Exactly one normal draw is taken per arm, in the order given, so runs are
    reproducible from the generator's seed.

    Parameters
    ----------
    arms : sequence of ArmState
        Every arm must have a usable posterior.

    rng : numpy.random.Generator

    Returns
    -------
    int
        Batch size of the chosen arm. Ties go to the smaller batch size.
    """
    arms = list(arms)
    if not arms:
        raise InputError('Cannot predict over an empty set of arms')
    unusable = [arm.batch_size for arm in arms if not arm.usable]
    if unusable:
        raise InputError('Arms {0} have no usable posterior'.format(unusable))
    samples = [rng.normal(arm.posterior_mean,
                          math.sqrt(arm.posterior_variance)) for arm in arms]
    best = min(zip(samples, (arm.batch_size for arm in arms)))
    logger.debug('Thompson samples %s -> b=%s',
                 dict(zip((arm.batch_size for arm in arms), samples)), best[1])
    return best[1]
