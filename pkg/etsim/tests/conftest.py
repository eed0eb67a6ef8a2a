import logging
from dataclasses import replace

import numpy as np
import pytest

from etsim import sim, traceio
from etsim.domain import CostSample, Config, JobSpec, PowerProfile

logger = logging.getLogger(__name__)


#Enable the logging level to be set from the command line
def pytest_addoption(parser):
    parser.addoption("--log", action="store", default="INFO",
                     help="Set the level of the log")
    parser.addoption("--logfile", action="store", default=None,
                     help="Write the log output to specified file path")


#Create a fixture to automatically instantiate logging setup
@pytest.fixture(scope='session', autouse=True)
def set_level(pytestconfig):
    #Read user input logging level
    log_level = getattr(logging, pytestconfig.getoption('--log'), None)

    #Report invalid logging level
    if not isinstance(log_level, int):
        raise ValueError("Invalid log level : {}".format(log_level))

    #Create basic configuration
    logging.basicConfig(level=log_level,
                        filename=pytestconfig.getoption('--logfile'))


@pytest.fixture(scope='session')
def bundle():
    """The deepspeech2-like preset, seed 0."""
    return traceio.generate_synthetic(traceio.preset('deepspeech2-like'), 0)


@pytest.fixture(scope='session')
def quiet_bundle():
    """The deepspeech2-like preset without epochs noise."""
    params = replace(traceio.preset('deepspeech2-like'), noise=0.0)
    return traceio.generate_synthetic(params, 0)


@pytest.fixture(scope='session')
def drift_bundle():
    """Two slices; the optimal batch size moves from 32 to 64."""
    return traceio.drift_slices(traceio.preset('drift-two-regime'),
                                [(1, 64)], seed=0)


@pytest.fixture(scope='session')
def random_bundles():
    """Fifty small bundles with random curves."""
    rng = np.random.default_rng(2022)
    return [traceio.generate_synthetic(random_params(rng), seed)
            for seed in range(50)]


@pytest.fixture
def job(bundle):
    return bundle.job_spec(recurrences=60)


@pytest.fixture
def table_profiles():
    """Four power limits of one batch size with a known best limit."""
    return [PowerProfile(32, 100.0, 90.0, 0.008),
            PowerProfile(32, 150.0, 130.0, 0.010),
            PowerProfile(32, 200.0, 170.0, 0.011),
            PowerProfile(32, 250.0, 210.0, 0.0115)]


def make_job(**kwargs):
    params = dict(job_id='test', batch_sizes=(8, 16, 32, 64, 128),
                  power_limits=(100, 150, 200, 250), default_batch_size=32,
                  max_power=250)
    params.update(kwargs)
    return JobSpec(**params)


def make_sample(recurrence, batch_size, cost, converged=True,
                early_stopped=False, power_limit=250.0):
    return CostSample(recurrence=recurrence,
                      config=Config(batch_size, power_limit),
                      energy=cost, time=0.0, cost=cost,
                      epochs_run=10 if converged else 3,
                      converged=converged, early_stopped=early_stopped)


def assert_audits_clean(result):
    assert sim.audit_early_stop(result) == []
    assert sim.audit_accounting(result) == []


def random_params(rng):
    """Random but valid generator parameters, small grids."""
    n_b = int(rng.integers(2, 9))
    n_p = int(rng.integers(1, 7))
    batch_sizes = tuple(sorted(rng.choice([4, 8, 12, 16, 24, 32, 48, 64, 96,
                                           128, 192, 256], n_b,
                                          replace=False).tolist()))
    power_limits = tuple(sorted(rng.choice(np.arange(100, 310, 10), n_p,
                                           replace=False).tolist()))
    return traceio.GeneratorParams(
        batch_sizes=batch_sizes,
        power_limits=power_limits,
        default_batch_size=batch_sizes[0],
        optimal_batch_size=int(rng.choice(batch_sizes)),
        min_epochs=float(rng.uniform(5, 40)),
        epochs_curvature=float(rng.uniform(0.1, 1.0)),
        failure_distance=float(rng.uniform(1.0, 4.0)),
        idle_power=float(rng.uniform(30, 90)),
        dynamic_power=float(rng.uniform(30, 200)),
        power_exponent=float(rng.uniform(0.5, 1.5)),
        peak_throughput=float(rng.uniform(0.01, 0.1)),
        half_throughput_batch=float(rng.uniform(16, 128)),
        power_efficiency=float(rng.uniform(0.1, 1.0)),
        noise=float(rng.uniform(0, 0.1)),
        replicas=int(rng.integers(1, 5)),
        job_id='random')
