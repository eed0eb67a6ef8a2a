"""Training and power traces: files, validation and synthetic generation.

A bundle is a directory holding ``bundle.yml`` (metadata and unit
declarations), ``power.csv`` (average power and throughput of every
(batch size, power limit, slice)), ``training.csv`` (epochs to target of every
(batch size, seed replica, slice)) and, for synthetic bundles, a
``ground_truth.csv`` sidecar with the generator's analytic expected epochs.
"""
import logging
import math
from dataclasses import dataclass, field, asdict
from functools import cached_property
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pandas as pd
import yaml

from . import cost
from .domain import JobSpec, PowerProfile, TrainingRecord
from .exceptions import InputError, TraceValidationError, ValidationError
from .utils import format_float

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'bundle.yml'
POWER_NAME = 'power.csv'
TRAINING_NAME = 'training.csv'
GROUND_TRUTH_NAME = 'ground_truth.csv'

POWER_COLUMNS = ['job_id', 'batch_size', 'power_limit_w', 'avg_power_w',
                 'throughput_epochs_per_s', 'slice']
TRAINING_COLUMNS = ['job_id', 'batch_size', 'seed', 'slice',
                    'epochs_to_target', 'converged']
GROUND_TRUTH_COLUMNS = ['slice', 'batch_size', 'expected_epochs']

UNITS = {'power_limit': 'W',
         'avg_power': 'W',
         'throughput': 'epochs/s',
         'epochs_to_target': 'epochs'}


@dataclass(frozen=True)
class TraceBundle:
    """Power and training traces of one job.

    Attributes
    ----------
    power : tuple of PowerProfile
        Complete over batch sizes x power limits for every slice.

    training : tuple of TrainingRecord
        At least one seed replica per (batch size, slice).

    metadata : dict
        ``job_id``, ``default_batch_size``, ``units`` and, for synthetic
        bundles, ``generator``.

    ground_truth : dict or None
        Analytic expected epochs, ``{slice: {batch_size: epochs or None}}``.
    """
    power: Tuple[PowerProfile, ...]
    training: Tuple[TrainingRecord, ...]
    metadata: dict = field(default_factory=dict, hash=False)
    ground_truth: Optional[dict] = field(default=None, hash=False)

    @property
    def job_id(self):
        return self.metadata.get('job_id', '')

    @cached_property
    def batch_sizes(self):
        return tuple(sorted({prof.batch_size for prof in self.power}
                            | {rec.batch_size for rec in self.training}))

    @cached_property
    def power_limits(self):
        return tuple(sorted({prof.power_limit for prof in self.power}))

    @cached_property
    def slices(self):
        return tuple(sorted({prof.slice_index for prof in self.power}
                            | {rec.slice_index for rec in self.training}))

    @cached_property
    def _power_index(self):
        index = {}
        for prof in self.power:
            index.setdefault((prof.batch_size, prof.slice_index),
                             []).append(prof)
        return index

    @cached_property
    def _training_index(self):
        index = {}
        for rec in self.training:
            index.setdefault((rec.batch_size, rec.slice_index), []).append(rec)
        return index

    def profiles(self, slice_index=0):
        """Every power profile of a slice."""
        return [prof for prof in self.power if prof.slice_index == slice_index]

    def power_for(self, batch_size, slice_index=0):
        """Profiles of one batch size in one slice, by power limit."""
        return sorted(self._power_index.get((batch_size, slice_index), []),
                      key=lambda prof: prof.power_limit)

    def profile(self, batch_size, power_limit, slice_index=0):
        for prof in self.power_for(batch_size, slice_index):
            if prof.power_limit == power_limit:
                return prof
        raise KeyError((batch_size, power_limit, slice_index))

    def replicas(self, batch_size, slice_index=0):
        """Training records of one batch size in one slice, by seed."""
        return sorted(self._training_index.get((batch_size, slice_index), []),
                      key=lambda rec: rec.seed_index)

    def expected_epochs(self, slice_index=0):
        """Mean epochs to target per converging batch size of a slice."""
        return cost.expected_epochs(
            rec for rec in self.training if rec.slice_index == slice_index)

    def optimum(self, eta, max_power, slice_index=0):
        """Brute-force optimal configuration and cost of a slice."""
        return cost.brute_force_optimum(self.expected_epochs(slice_index),
                                        self.profiles(slice_index), eta,
                                        max_power)

    def job_spec(self, **overrides):
        """A JobSpec over this bundle's grid.

        The default batch size comes from the metadata (or the middle batch
        size) and the max power is the largest power limit unless overridden.
        """
        batch_sizes = self.batch_sizes
        params = dict(job_id=self.job_id or 'job',
                      batch_sizes=batch_sizes,
                      power_limits=self.power_limits,
                      default_batch_size=self.metadata.get(
                          'default_batch_size',
                          batch_sizes[len(batch_sizes) // 2]),
                      max_power=max(self.power_limits))
        params.update({key: val for key, val in overrides.items()
                       if val is not None})
        return JobSpec(**params)


def validate_bundle(bundle):
    """Every completeness, duplicate and consistency problem of a bundle.

    Returns
    -------
    errors : list of str
        Empty when the bundle is valid.
    """
    errors = []
    if not bundle.power:
        errors.append('bundle has no power profiles')
    if not bundle.training:
        errors.append('bundle has no training records')
    if errors:
        return errors

    seen = {}
    for prof in bundle.power:
        key = (prof.batch_size, prof.power_limit, prof.slice_index)
        seen[key] = seen.get(key, 0) + 1
    errors.extend(
        'duplicate power key (b={0}, p={1:g}, slice={2})'.format(*key)
        for key, count in sorted(seen.items()) if count > 1)
    seen_training = {}
    for rec in bundle.training:
        key = (rec.batch_size, rec.seed_index, rec.slice_index)
        seen_training[key] = seen_training.get(key, 0) + 1
    errors.extend('duplicate training key (b={0}, seed={1}, slice={2})'
                  ''.format(*key)
                  for key, count in sorted(seen_training.items()) if count > 1)

    for slice_index in bundle.slices:
        for b in bundle.batch_sizes:
            for p in bundle.power_limits:
                if (b, p, slice_index) not in seen:
                    errors.append('missing power key (b={0}, p={1:g}, '
                                  'slice={2})'.format(b, p, slice_index))
            if not bundle.replicas(b, slice_index):
                errors.append('missing training key (b={0}, slice={1})'
                              ''.format(b, slice_index))

    for prof in bundle.power:
        if prof.power_limit <= 0:
            errors.append('non-positive power limit {0} for b={1}'.format(
                prof.power_limit, prof.batch_size))
    job_id = bundle.metadata.get('job_id')
    default = bundle.metadata.get('default_batch_size')
    if default is not None and default not in bundle.batch_sizes:
        errors.append('default batch size {0} not in {1}'.format(
            default, list(bundle.batch_sizes)))
    if not job_id:
        errors.append('bundle metadata has no job_id')
    return errors


def check_bundle(bundle):
    """Raise :class:`TraceValidationError` unless ``bundle`` is valid."""
    errors = validate_bundle(bundle)
    if errors:
        raise TraceValidationError(errors, prefix='Invalid trace bundle')
    return bundle


def _read_table(path, columns):
    """Read a CSV as strings, checking the header."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as exc:
        raise TraceValidationError('{0}: {1}'.format(path.name, exc))
    except pd.errors.EmptyDataError:
        raise TraceValidationError('{0}: file is empty'.format(path.name))
    missing = [col for col in columns if col not in frame.columns]
    if missing:
        raise TraceValidationError('{0}: missing columns {1}'.format(
            path.name, missing))
    return frame


def _rows(frame):
    # Header is line 1, so data row i sits on line i + 2
    for i, row in enumerate(frame.itertuples(index=False)):
        yield i + 2, row._asdict()


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ('true', '1', 'yes'):
        return True
    if lowered in ('false', '0', 'no'):
        return False
    raise ValueError('not a boolean: {0!r}'.format(text))


def _parse_power(path, job_id):
    profiles, errors = [], []
    for line, row in _rows(_read_table(path, POWER_COLUMNS)):
        try:
            if job_id and row['job_id'] != job_id:
                raise ValueError('job_id {0!r} does not match {1!r}'.format(
                    row['job_id'], job_id))
            profiles.append(PowerProfile(
                batch_size=int(row['batch_size']),
                power_limit=float(row['power_limit_w']),
                avg_power=float(row['avg_power_w']),
                throughput=float(row['throughput_epochs_per_s']),
                slice_index=int(row['slice'])))
        except (ValueError, ValidationError) as exc:
            errors.append('{0} line {1}: {2}'.format(path.name, line, exc))
    return profiles, errors


def _parse_training(path, job_id):
    records, errors = [], []
    for line, row in _rows(_read_table(path, TRAINING_COLUMNS)):
        try:
            if job_id and row['job_id'] != job_id:
                raise ValueError('job_id {0!r} does not match {1!r}'.format(
                    row['job_id'], job_id))
            epochs = row['epochs_to_target'].strip()
            records.append(TrainingRecord(
                batch_size=int(row['batch_size']),
                seed_index=int(row['seed']),
                epochs_to_target=int(epochs) if epochs else None,
                converged=_parse_bool(row['converged']),
                slice_index=int(row['slice'])))
        except (ValueError, ValidationError) as exc:
            errors.append('{0} line {1}: {2}'.format(path.name, line, exc))
    return records, errors


def _parse_ground_truth(path):
    truth = {}
    for line, row in _rows(_read_table(path, GROUND_TRUTH_COLUMNS)):
        try:
            epochs = row['expected_epochs'].strip()
            truth.setdefault(int(row['slice']), {})[int(row['batch_size'])] = (
                float(epochs) if epochs else None)
        except ValueError as exc:
            raise TraceValidationError('{0} line {1}: {2}'.format(
                path.name, line, exc))
    return truth


def manifest_path(path):
    """The ``bundle.yml`` of a bundle directory (or the file itself)."""
    path = Path(path)
    return path / MANIFEST_NAME if path.is_dir() else path


def load_bundle(path):
    """Load and validate a trace bundle.

    Parameters
    ----------
    path : str or Path
        Bundle directory, or its ``bundle.yml``.

    Returns
    -------
    TraceBundle

    Raises
    ------
    TraceValidationError
        Listing every parse error (with file and line number), missing or
        duplicate key, or non-positive value.

    FileNotFoundError
        If the manifest or a trace file is missing.
    """
    manifest_file = manifest_path(path)
    root = manifest_file.parent
    with open(str(manifest_file), 'r') as handle:
        try:
            manifest = yaml.safe_load(handle) or {}
        except yaml.YAMLError as exc:
            raise TraceValidationError('{0}: {1}'.format(manifest_file.name,
                                                         exc))
    if not isinstance(manifest, dict):
        raise TraceValidationError('{0}: expected a mapping, got {1}'.format(
            manifest_file.name, type(manifest).__name__))
    files = manifest.pop('files', None) or {}
    if not isinstance(files, dict):
        raise TraceValidationError('{0}: files must be a mapping'.format(
            manifest_file.name))
    job_id = manifest.get('job_id')
    profiles, errors = _parse_power(root / files.get('power', POWER_NAME),
                                    job_id)
    records, training_errors = _parse_training(
        root / files.get('training', TRAINING_NAME), job_id)
    errors.extend(training_errors)
    if errors:
        raise TraceValidationError(errors, prefix='Cannot parse trace bundle')

    truth = None
    if files.get('ground_truth'):
        truth = _parse_ground_truth(root / files['ground_truth'])
    bundle = TraceBundle(tuple(profiles), tuple(records), manifest, truth)
    check_bundle(bundle)
    logger.info('Loaded bundle %r from "%s": %d profiles, %d records',
                bundle.job_id, root, len(profiles), len(records))
    return bundle


def write_bundle(bundle, path):
    """Write a bundle directory that :func:`load_bundle` reads back equal.

    Invalid bundles are refused rather than written.

    Returns
    -------
    Path
        The manifest written.
    """
    check_bundle(bundle)
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    job_id = bundle.job_id

    power = pd.DataFrame(
        [[job_id, str(prof.batch_size), format_float(prof.power_limit),
          format_float(prof.avg_power), format_float(prof.throughput),
          str(prof.slice_index)] for prof in bundle.power],
        columns=POWER_COLUMNS)
    power.to_csv(str(root / POWER_NAME), index=False, lineterminator='\n')

    training = pd.DataFrame(
        [[job_id, str(rec.batch_size), str(rec.seed_index),
          str(rec.slice_index),
          '' if rec.epochs_to_target is None else str(rec.epochs_to_target),
          'true' if rec.converged else 'false'] for rec in bundle.training],
        columns=TRAINING_COLUMNS)
    training.to_csv(str(root / TRAINING_NAME), index=False,
                    lineterminator='\n')

    files = {'power': POWER_NAME, 'training': TRAINING_NAME}
    if bundle.ground_truth is not None:
        truth = pd.DataFrame(
            [[str(s), str(b), '' if epochs is None else format_float(epochs)]
             for s, per_b in sorted(bundle.ground_truth.items())
             for b, epochs in sorted(per_b.items())],
            columns=GROUND_TRUTH_COLUMNS)
        truth.to_csv(str(root / GROUND_TRUTH_NAME), index=False,
                     lineterminator='\n')
        files['ground_truth'] = GROUND_TRUTH_NAME

    manifest = dict(bundle.metadata, files=files)
    manifest_file = root / MANIFEST_NAME
    with open(str(manifest_file), 'w') as handle:
        yaml.safe_dump(manifest, handle, sort_keys=True)
    logger.info('Wrote bundle %r to "%s"', job_id, root)
    return manifest_file


@dataclass(frozen=True)
class GeneratorParams:
    """Curve parameters of a synthetic trace.

    Epochs to target are convex in log2(b) with their minimum at
    ``optimal_batch_size``; batch sizes more than ``failure_distance`` octaves
    from it never converge. A batch size draws up to ``idle_power +
    dynamic_power * (b/32)**power_exponent`` watts; a power limit caps that
    draw smoothly, and throughput grows with the fraction of the draw allowed
    raised to ``power_efficiency`` (diminishing returns of power).
    """
    batch_sizes: Tuple[int, ...] = (8, 16, 24, 32, 48, 64)
    power_limits: Tuple[float, ...] = (100.0, 125.0, 150.0, 200.0, 250.0)
    default_batch_size: int = 64
    optimal_batch_size: int = 32
    min_epochs: float = 20.0
    epochs_curvature: float = 0.5
    failure_distance: float = 1.5
    max_epochs: int = 100
    idle_power: float = 60.0
    dynamic_power: float = 60.0
    power_exponent: float = 1.2
    peak_throughput: float = 0.05
    half_throughput_batch: float = 64.0
    power_efficiency: float = 0.3
    noise: float = 0.02
    replicas: int = 4
    slices: int = 1
    job_id: str = 'synthetic'

    def __post_init__(self):
        object.__setattr__(self, 'batch_sizes',
                           tuple(int(b) for b in self.batch_sizes))
        object.__setattr__(self, 'power_limits',
                           tuple(float(p) for p in self.power_limits))

    def validate(self):
        """Every problem with the parameters, as a list of strings."""
        errors = []
        if not self.batch_sizes or not self.power_limits:
            errors.append('batch sizes and power limits must be non-empty')
        if list(self.batch_sizes) != sorted(set(self.batch_sizes)):
            errors.append('batch sizes must be strictly increasing')
        if list(self.power_limits) != sorted(set(self.power_limits)):
            errors.append('power limits must be strictly increasing')
        if self.default_batch_size not in self.batch_sizes:
            errors.append('default batch size {0} not in {1}'.format(
                self.default_batch_size, list(self.batch_sizes)))
        if self.power_limits and self.idle_power >= min(self.power_limits):
            errors.append('idle power must be below every power limit')
        if not self.power_efficiency > 0 or self.power_efficiency > 1:
            errors.append('power_efficiency must be in (0, 1] for throughput '
                          'to increase concavely with power, got {0}'.format(
                              self.power_efficiency))
        for name in ('optimal_batch_size', 'min_epochs', 'idle_power',
                     'dynamic_power', 'peak_throughput',
                     'half_throughput_batch', 'max_epochs', 'replicas',
                     'slices', 'failure_distance'):
            if not getattr(self, name) > 0:
                errors.append('{0} must be positive'.format(name))
        if self.epochs_curvature < 0:
            errors.append('epochs_curvature must be non-negative')
        if not 0 <= self.noise < 1 / 3:
            errors.append('noise must be in [0, 1/3), got {0}'.format(
                self.noise))
        return errors

    def to_dict(self):
        data = asdict(self)
        data['batch_sizes'] = list(self.batch_sizes)
        data['power_limits'] = list(self.power_limits)
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


PRESETS = {
    # Frontier endpoints: min ETA at (32, 100W), min TTA at (48, 250W)
    'deepspeech2-like': GeneratorParams(job_id='deepspeech2-like'),
    'drift-two-regime': GeneratorParams(batch_sizes=(16, 32, 64),
                                        default_batch_size=32,
                                        failure_distance=1.0,
                                        slices=2,
                                        job_id='drift-two-regime'),
}


def preset(name):
    """Generator parameters of a named preset."""
    try:
        return PRESETS[name]
    except KeyError:
        raise InputError('Unknown preset {0!r}; choose from {1}'.format(
            name, sorted(PRESETS)))


def expected_epochs_curve(params, batch_size, optimal_batch_size=None):
    """Analytic expected epochs to target, None if it never converges."""
    optimal = optimal_batch_size or params.optimal_batch_size
    distance = math.log2(batch_size / optimal)
    if abs(distance) > params.failure_distance + 1e-12:
        return None
    return params.min_epochs * (1 + params.epochs_curvature * distance ** 2)


def _power_headroom(params, batch_size, power_limit):
    """Dynamic power range of the batch size and the share a limit allows."""
    demand = params.dynamic_power * (batch_size / 32) ** params.power_exponent
    share = 1 - math.exp(-(power_limit - params.idle_power) / demand)
    return demand, share


def avg_power_curve(params, batch_size, power_limit):
    """Average power draw in watts, between idle power and the limit."""
    demand, share = _power_headroom(params, batch_size, power_limit)
    return params.idle_power + demand * share


def throughput_curve(params, batch_size, power_limit):
    """Throughput in epochs per second, increasing and concave in the limit."""
    _, share = _power_headroom(params, batch_size, power_limit)
    scale = batch_size / (batch_size + params.half_throughput_batch)
    return params.peak_throughput * scale * share ** params.power_efficiency


def _check_change_points(params, change_points):
    errors = []
    previous = 0
    for slice_index, optimal in change_points:
        if not 0 < slice_index < params.slices:
            errors.append('change point slice {0} outside [1, {1})'.format(
                slice_index, params.slices))
        if slice_index <= previous and previous:
            errors.append('change points must be strictly ordered by slice')
        if optimal <= 0:
            errors.append('optimal batch size must be positive, got {0}'
                          ''.format(optimal))
        previous = slice_index
    if errors:
        raise InputError('; '.join(errors))


def drift_slices(params, change_points, seed=0):
    """Synthetic bundle whose optimal batch size moves between slices.

    Parameters
    ----------
    params : GeneratorParams
        ``params.slices`` sets the number of slices.

    change_points : list of (int, int)
        ``(slice, new optimal batch size)`` pairs in increasing slice order.
        Every slice from ``slice`` on uses the new optimum until the next
        change.

    seed : int

    Returns
    -------
    TraceBundle
        Complete over every slice, with ground truth. Each seed replica keeps
        the same noise draw in every slice, so slices only differ where the
        optimum differs.
    """
    errors = params.validate()
    if errors:
        raise InputError('Invalid generator parameters: {0}'.format(
            '; '.join(errors)))
    change_points = [(int(s), int(b)) for s, b in change_points]
    _check_change_points(params, change_points)

    rng = np.random.default_rng(seed)
    # Truncated at 3 sigma so replicas never stray beyond it
    noise = np.clip(rng.standard_normal((len(params.batch_sizes),
                                         params.replicas)), -3.0, 3.0)

    optimum = {}
    current = params.optimal_batch_size
    changes = dict(change_points)
    for slice_index in range(params.slices):
        current = changes.get(slice_index, current)
        optimum[slice_index] = current

    power, training, truth = [], [], {}
    for slice_index in range(params.slices):
        truth[slice_index] = {}
        for i, b in enumerate(params.batch_sizes):
            for p in params.power_limits:
                power.append(PowerProfile(b, p,
                                          avg_power_curve(params, b, p),
                                          throughput_curve(params, b, p),
                                          slice_index))
            mean = expected_epochs_curve(params, b, optimum[slice_index])
            truth[slice_index][b] = mean
            for replica in range(params.replicas):
                epochs = None
                if mean is not None:
                    epochs = max(1, int(round(
                        mean * (1 + params.noise * noise[i, replica]))))
                    if epochs > params.max_epochs:
                        epochs = None
                training.append(TrainingRecord(b, replica, epochs,
                                               epochs is not None,
                                               slice_index))

    metadata = {'job_id': params.job_id,
                'default_batch_size': params.default_batch_size,
                'units': dict(UNITS),
                'generator': dict(params.to_dict(), seed=int(seed),
                                  change_points=[list(cp)
                                                 for cp in change_points])}
    bundle = TraceBundle(tuple(power), tuple(training), metadata, truth)
    logger.info('Generated bundle %r: %d slices, optimum per slice %s',
                params.job_id, params.slices,
                sorted(set(optimum.values())))
    return check_bundle(bundle)


def generate_synthetic(params, seed=0):
    """Synthetic bundle with a fixed optimum in every slice.

    Returns
    -------
    TraceBundle
        The generator's analytic expected epochs are in ``ground_truth``.
    """
    return drift_slices(params, [], seed)
