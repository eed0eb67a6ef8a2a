"""Command line front end.

``etsim gen`` writes synthetic trace bundles, ``etsim simulate`` replays a
policy over a bundle, ``etsim sweep`` tabulates the oracle over eta (and Zeus
over beta) and ``etsim regret`` lines up the cumulative regret of two results.
Every results file embeds a manifest of the parameters that produced it and
holds nothing else that could vary between runs, so equal manifests give
byte-identical files.

Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 invalid traces.
"""
import io
import sys
import json
import logging
import argparse
from dataclasses import replace
from logging.handlers import RotatingFileHandler
from pathlib import Path

import pandas as pd
import yaml

from . import __version__
from . import cost, sim, traceio
from .config import load_config
from .domain import validate
from .exceptions import EtsimException, InputError, ValidationError
from .utils import bundle_hash, dump_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 3

LOG_FORMAT = ('%(asctime)s.%(msecs)03d '
              '%(module)-13s '
              '%(levelname)-8s '
              '%(threadName)-10s '
              '%(message)s')

SWEEP_COLUMNS = ['kind', 'eta', 'beta', 'batch_size', 'power_limit_w',
                 'tta_s', 'eta_energy_j', 'cost_jeq', 'pareto',
                 'total_cost_ratio']
REGRET_COLUMNS = ['recurrence', 'cumulative_regret_jeq_a',
                  'cumulative_regret_jeq_b', 'difference_jeq']

UNBOUNDED = 'inf'

_handlers = []


def setup_logging(level='INFO', logfile=None):
    """Log to stderr and, optionally, to a rotating file."""
    log_level = getattr(logging, str(level).upper(), None)
    if not isinstance(log_level, int):
        raise InputError('Invalid log level : {0}'.format(level))
    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)
    # Replace the handlers of an earlier call in the same process
    while _handlers:
        handler = _handlers.pop()
        root_logger.removeHandler(handler)
        handler.close()
    formatter = logging.Formatter(fmt=LOG_FORMAT, datefmt='%H:%M:%S')
    handlers = [logging.StreamHandler(sys.stderr)]
    if logfile:
        log_file = Path(logfile)
        log_file.parent.mkdir(parents=True, exist_ok=True)
        do_rollover = log_file.exists()
        handler = RotatingFileHandler(str(log_file), backupCount=5)
        if do_rollover:
            handler.doRollover()
        handlers.append(handler)
    for handler in handlers:
        handler.setFormatter(formatter)
        root_logger.addHandler(handler)
        _handlers.append(handler)


def _float_list(text):
    try:
        return [float(item) for item in text.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            'expected comma separated numbers, got {0!r}'.format(text))


def _int_list(text):
    try:
        return [int(item) for item in text.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            'expected comma separated integers, got {0!r}'.format(text))


def _recurrences(text):
    if text == 'auto':
        return text
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            'expected an integer or "auto", got {0!r}'.format(text))
    if value < 1:
        raise argparse.ArgumentTypeError('recurrences must be positive')
    return value


def _window(text):
    if text.lower() in ('inf', 'none'):
        return UNBOUNDED
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            'expected an integer or "inf", got {0!r}'.format(text))


def _drift(text):
    try:
        slice_index, batch_size = text.split(':')
        return int(slice_index), int(batch_size)
    except ValueError:
        raise argparse.ArgumentTypeError(
            'expected SLICE:BATCH_SIZE, got {0!r}'.format(text))


def build_parser():
    parser = argparse.ArgumentParser(
        prog='etsim',
        description='Trace-driven energy and time tuning simulator.')
    parser.add_argument('--version', action='version',
                        version='%(prog)s {0}'.format(__version__))
    parser.add_argument('--log', default='INFO',
                        help='Set the level of the log')
    parser.add_argument('--logfile', default=None,
                        help='Also write the log to a rotating file')
    parser.add_argument('--config', default=None,
                        help='Settings file, defaults to $ETSIM_CONFIG or '
                             'conf.yml')
    commands = parser.add_subparsers(dest='command', metavar='COMMAND')
    commands.required = True

    gen = commands.add_parser('gen', help='Write a synthetic trace bundle')
    gen.add_argument('--preset', default='deepspeech2-like',
                     choices=sorted(traceio.PRESETS))
    gen.add_argument('--seed', type=int, default=0)
    gen.add_argument('--out', required=True, help='Bundle directory')
    gen.add_argument('--noise', type=float, default=None,
                     help='Relative epochs noise (standard deviation)')
    gen.add_argument('--replicas', type=int, default=None)
    gen.add_argument('--slices', type=int, default=None)
    gen.add_argument('--drift', type=_drift, action='append', default=[],
                     metavar='SLICE:BATCH_SIZE',
                     help='Optimal batch size from this slice on')
    gen.add_argument('--job-id', default=None)
    gen.set_defaults(handler=cmd_gen)

    simulate = commands.add_parser('simulate', help='Replay a policy')
    _add_job_arguments(simulate)
    simulate.add_argument('--policy', default='zeus',
                          choices=[policy.value for policy in sim.Policy])
    simulate.add_argument('--schedule', default=None,
                          help='CSV of recurrence,submit_time_s')
    simulate.add_argument('--change-points', type=_int_list, default=[],
                          help='Recurrences at which the next slice starts')
    simulate.add_argument('--no-early-stop', action='store_true')
    simulate.add_argument('--no-pruning', action='store_true')
    simulate.add_argument('--no-jit', action='store_true')
    simulate.add_argument('--format', choices=['csv', 'json'], default=None)
    simulate.add_argument('--out', default=None)
    simulate.set_defaults(handler=cmd_simulate)

    sweep = commands.add_parser('sweep', help='Oracle over eta, Zeus over '
                                              'beta, and the Pareto front')
    _add_job_arguments(sweep)
    sweep.add_argument('--eta-grid', type=_float_list,
                       default=[round(0.1 * i, 1) for i in range(11)])
    sweep.add_argument('--beta-grid', type=_float_list, default=[])
    sweep.add_argument('--out', default=None)
    sweep.set_defaults(handler=cmd_sweep)

    regret = commands.add_parser('regret',
                                 help='Compare cumulative regret of two '
                                      'results files')
    regret.add_argument('--results', action='append', required=True,
                        help='Results file, given twice (A then B)')
    regret.add_argument('--out', default=None)
    regret.set_defaults(handler=cmd_regret)
    return parser


def _add_job_arguments(parser):
    parser.add_argument('--trace', required=True, help='Bundle directory')
    parser.add_argument('--eta', type=float, default=None)
    parser.add_argument('--beta', type=float, default=None)
    parser.add_argument('--recurrences', type=_recurrences, default='auto',
                        help='Number of recurrences, "auto" is 2|B||P|')
    parser.add_argument('--window', type=_window, default=None,
                        help='Cost history per batch size, "inf" for all')
    parser.add_argument('--max-epochs', type=int, default=None)
    parser.add_argument('--seed', type=int, default=None)


def _resolve_job(args, settings, bundle):
    """JobSpec from flags, falling back on the settings file."""
    def pick(name, key=None):
        value = getattr(args, name)
        return settings[key or name] if value is None else value

    recurrences = args.recurrences
    if recurrences == 'auto':
        recurrences = 2 * len(bundle.batch_sizes) * len(bundle.power_limits)
    job = bundle.job_spec(eta=pick('eta'), beta=pick('beta'),
                          recurrences=recurrences,
                          max_epochs=pick('max_epochs'),
                          rng_seed=pick('seed'))
    window = pick('window')
    job = replace(job, window=None if window == UNBOUNDED else window)
    errors = validate(job)
    if errors:
        raise InputError('Invalid job parameters: {0}'.format(
            '; '.join(errors)))
    return job


def _output_path(args, settings, name):
    if args.out:
        return Path(args.out)
    return Path(settings['output_dir']) / name


def _manifest(command, parameters, trace, outputs):
    return {'command': command,
            'parameters': parameters,
            'bundle_hash': bundle_hash(traceio.manifest_path(trace)),
            'outputs': [str(path) for path in outputs],
            'version': __version__}


def _write_text(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(str(path), 'w', newline='\n') as handle:
        handle.write(text)
    logger.info('Wrote "%s"', path)


def write_table(path, frame, manifest, summary, fmt='csv'):
    """Write a table with its manifest and summary."""
    if fmt == 'json':
        records = json.loads(frame.to_json(orient='records',
                                           double_precision=15))
        text = dump_json({'manifest': manifest, 'summary': summary,
                          'recurrences': records}, indent=1) + '\n'
    else:
        buffer = io.StringIO()
        buffer.write('# manifest: {0}\n'.format(dump_json(manifest)))
        buffer.write('# summary: {0}\n'.format(dump_json(summary)))
        frame.to_csv(buffer, index=False, lineterminator='\n')
        text = buffer.getvalue()
    _write_text(path, text)


def read_results(path):
    """Manifest, summary and table of a results file of either format."""
    path = Path(path)
    with open(str(path), 'r') as handle:
        text = handle.read()
    if text.lstrip().startswith('{'):
        data = json.loads(text)
        return (data['manifest'], data['summary'],
                pd.DataFrame.from_records(data['recurrences']))
    header = {}
    for line in text.splitlines():
        if not line.startswith('# '):
            break
        key, _, value = line[2:].partition(': ')
        header[key] = json.loads(value)
    if 'manifest' not in header:
        raise InputError('"{0}" has no manifest'.format(path))
    frame = pd.read_csv(io.StringIO(text), comment='#')
    return header['manifest'], header.get('summary', {}), frame


def cmd_gen(args, settings):
    params = traceio.preset(args.preset)
    overrides = {'noise': args.noise, 'replicas': args.replicas,
                 'slices': args.slices, 'job_id': args.job_id}
    params = replace(params, **{key: val for key, val in overrides.items()
                                if val is not None})
    if args.drift and args.slices is None:
        params = replace(params, slices=max(s for s, _ in args.drift) + 1)
    bundle = traceio.drift_slices(params, args.drift, seed=args.seed)
    manifest_file = traceio.write_bundle(bundle, args.out)
    with open(str(manifest_file), 'r') as handle:
        sys.stdout.write(handle.read())
    return EXIT_OK


def _policy_options(args):
    return {'early_stopping': not args.no_early_stop,
            'pruning': not args.no_pruning,
            'jit_profiling': not args.no_jit}


def cmd_simulate(args, settings):
    bundle = traceio.load_bundle(args.trace)
    job = _resolve_job(args, settings, bundle)
    schedule = None
    if args.schedule:
        schedule = sim.ArrivalSchedule.from_csv(args.schedule)
        job = replace(job, recurrences=len(schedule))
    slices = None
    if args.change_points:
        slices = sim.slice_schedule(job.recurrences, args.change_points)
    options = _policy_options(args) if args.policy == 'zeus' else {}

    result = sim.run_experiment(job, bundle, args.policy, schedule=schedule,
                                slices=slices, **options)
    baseline = result
    if args.policy != sim.Policy.DEFAULT.value:
        baseline = sim.run_experiment(job, bundle, sim.Policy.DEFAULT,
                                      schedule=schedule, slices=slices)
    summary = dict(result.summary(),
                   default_total_cost=baseline.total_cost,
                   default_last_mean_cost=baseline.last_mean_cost(),
                   savings=sim.savings(result, baseline),
                   early_stop_violations=len(sim.audit_early_stop(result)),
                   accounting_violations=len(sim.audit_accounting(result)),
                   arms=list(result.arms))

    fmt = args.format or settings['format']
    out = _output_path(args, settings, '{0}_{1}_s{2}.{3}'.format(
        bundle.job_id, args.policy, job.rng_seed, fmt))
    parameters = dict(job.to_dict(), policy=args.policy,
                      schedule=args.schedule,
                      change_points=list(args.change_points),
                      format=fmt, **options)
    write_table(out, result.to_frame(),
                _manifest('simulate', parameters, args.trace, [out]),
                summary, fmt)
    return EXIT_OK


def cmd_sweep(args, settings):
    bundle = traceio.load_bundle(args.trace)
    job = _resolve_job(args, settings, bundle)
    epochs = bundle.expected_epochs(0)
    profiles = bundle.profiles(0)
    front = cost.pareto_front(cost.grid_points(epochs, profiles))
    on_front = {point.config for point in front}

    rows = []
    for point in cost.eta_sweep(epochs, profiles, args.eta_grid,
                                job.max_power):
        rows.append({'kind': 'eta', 'eta': point.eta,
                     'batch_size': point.config.batch_size,
                     'power_limit_w': point.config.power_limit,
                     'tta_s': point.tta, 'eta_energy_j': point.eta_energy,
                     'cost_jeq': point.cost,
                     'pareto': point.config in on_front})
    if args.beta_grid:
        for beta, total, ratio in sim.beta_sweep(job, bundle, args.beta_grid):
            rows.append({'kind': 'beta', 'eta': job.eta, 'beta': beta,
                         'cost_jeq': total, 'total_cost_ratio': ratio})
    for point in front:
        rows.append({'kind': 'front', 'batch_size': point.config.batch_size,
                     'power_limit_w': point.config.power_limit,
                     'tta_s': point.tta, 'eta_energy_j': point.eta_energy,
                     'pareto': True})
    frame = pd.DataFrame.from_records(rows, columns=SWEEP_COLUMNS)

    low, high = cost.power_band(profiles)
    summary = {'front_size': len(front), 'min_avg_power_w': low,
               'max_avg_power_w': high}
    out = _output_path(args, settings, '{0}_sweep.csv'.format(bundle.job_id))
    parameters = dict(job.to_dict(), eta_grid=list(args.eta_grid),
                      beta_grid=list(args.beta_grid))
    write_table(out, frame, _manifest('sweep', parameters, args.trace, [out]),
                summary)
    return EXIT_OK


def cmd_regret(args, settings):
    if len(args.results) != 2:
        raise InputError('regret compares exactly two results files, got {0}'
                         ''.format(len(args.results)))
    (manifest_a, _, frame_a), (manifest_b, _, frame_b) = (
        read_results(path) for path in args.results)
    if manifest_a['bundle_hash'] != manifest_b['bundle_hash']:
        raise InputError('Results come from different bundles')
    eta_a = manifest_a['parameters'].get('eta')
    eta_b = manifest_b['parameters'].get('eta')
    if eta_a != eta_b:
        raise InputError('Results use different eta: {0} and {1}'.format(
            eta_a, eta_b))

    column = 'cumulative_regret_jeq'
    for path, table in zip(args.results, (frame_a, frame_b)):
        if column not in table.columns:
            raise InputError('"{0}" has no {1} column'.format(path, column))
    frame = pd.merge(frame_a[['recurrence', column]],
                     frame_b[['recurrence', column]],
                     on='recurrence', suffixes=('_a', '_b'))
    first, second = column + '_a', column + '_b'
    frame['difference_jeq'] = frame[second] - frame[first]
    final_a = float(frame[first].iloc[-1]) if len(frame) else 0.0
    final_b = float(frame[second].iloc[-1]) if len(frame) else 0.0
    if final_a:
        ratio = final_b / final_a
    else:
        ratio = 1.0 if final_b == final_a else None

    out = _output_path(args, settings, 'regret_comparison.csv')
    manifest = {'command': 'regret',
                'parameters': {'results': [str(p) for p in args.results],
                               'eta': eta_a},
                'bundle_hash': manifest_a['bundle_hash'],
                'outputs': [str(out)],
                'version': __version__}
    summary = {'final_regret_a': final_a, 'final_regret_b': final_b,
               'ratio': ratio,
               'policy_a': manifest_a['parameters'].get('policy'),
               'policy_b': manifest_b['parameters'].get('policy')}
    write_table(out, frame[REGRET_COLUMNS], manifest, summary)
    return EXIT_OK


def main(argv=None):
    """Run the command line; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    try:
        setup_logging(args.log, args.logfile)
        settings = load_config(args.config)
        return args.handler(args, settings)
    except InputError as exc:
        logger.error('%s', exc)
        return EXIT_USAGE
    except (ValidationError, EtsimException) as exc:
        logger.error('%s', exc)
        return EXIT_VALIDATION
    except OSError as exc:
        logger.error('%s', exc)
        return EXIT_IO
    except yaml.YAMLError as exc:
        logger.error('Cannot read settings: %s', exc)
        return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())
