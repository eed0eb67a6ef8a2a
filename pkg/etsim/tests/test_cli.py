import logging

import pytest
import yaml

from etsim import cli, traceio

logger = logging.getLogger(__name__)

JOB_ID = traceio.preset('deepspeech2-like').job_id


@pytest.fixture(scope='function')
def trace(tmp_path):
    out = tmp_path / 'ds2'
    assert cli.main(['gen', '--preset', 'deepspeech2-like', '--seed', '0',
                     '--out', str(out)]) == cli.EXIT_OK
    return out


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    monkeypatch.delenv('ETSIM_CONFIG', raising=False)
    monkeypatch.setenv('ETSIM_OUTPUT_DIR', str(tmp_path / 'results'))
    yield
    # Leave the root logger as the session found it
    cli.setup_logging('INFO')


def simulate(trace, out, *extra):
    return cli.main(['simulate', '--trace', str(trace), '--out', str(out),
                     '--recurrences', '24'] + list(extra))


def test_gen_writes_bundle(trace):
    bundle = traceio.load_bundle(trace)
    assert bundle == traceio.generate_synthetic(
        traceio.preset('deepspeech2-like'), 0)
    manifest = yaml.safe_load((trace / 'bundle.yml').read_text())
    assert manifest['job_id'] == JOB_ID
    assert manifest['files']['training'] == 'training.csv'


def test_gen_with_drift(tmp_path):
    out = tmp_path / 'drift'
    assert cli.main(['gen', '--preset', 'drift-two-regime', '--drift', '1:64',
                     '--out', str(out)]) == cli.EXIT_OK
    bundle = traceio.load_bundle(out)
    assert bundle.slices == (0, 1)
    assert bundle.optimum(0.5, 250.0, 1)[0].batch_size == 64


def test_simulate_is_reproducible(trace, tmp_path):
    out = tmp_path / 'run.csv'
    assert simulate(trace, out) == cli.EXIT_OK
    first = out.read_bytes()
    assert simulate(trace, out) == cli.EXIT_OK
    assert out.read_bytes() == first


def test_simulate_results(trace, tmp_path):
    out = tmp_path / 'run.csv'
    assert simulate(trace, out, '--seed', '3') == cli.EXIT_OK
    manifest, summary, frame = cli.read_results(out)
    assert list(frame.columns) == cli.sim.RESULT_COLUMNS
    assert len(frame) == 24
    assert manifest['command'] == 'simulate'
    assert manifest['parameters']['rng_seed'] == 3
    assert manifest['parameters']['policy'] == 'zeus'
    assert manifest['bundle_hash'] == cli.bundle_hash(trace / 'bundle.yml')
    assert summary['early_stop_violations'] == 0
    assert summary['accounting_violations'] == 0
    assert summary['recurrences'] == 24
    assert summary['arms']
    batch_sizes = [arm['batch_size'] for arm in summary['arms']]
    assert batch_sizes == sorted(batch_sizes)
    assert all(len(arm['history']) >= 2 for arm in summary['arms'])


def test_simulate_default_policy_auto_recurrences(trace, tmp_path):
    out = tmp_path / 'default.csv'
    assert cli.main(['simulate', '--trace', str(trace), '--out', str(out),
                     '--policy', 'default']) == cli.EXIT_OK
    _, summary, frame = cli.read_results(out)
    # 2 * |B| * |P| for six batch sizes and five power limits
    assert len(frame) == 60
    assert set(frame['batch_size']) == {64}
    assert set(frame['power_limit_w']) == {250.0}
    assert summary['savings']['cost'] == 0.0


def test_simulate_json(trace, tmp_path):
    out = tmp_path / 'run.json'
    assert simulate(trace, out, '--format', 'json',
                    '--no-jit') == cli.EXIT_OK
    manifest, summary, frame = cli.read_results(out)
    assert manifest['parameters']['format'] == 'json'
    assert manifest['parameters']['jit_profiling'] is False
    assert len(frame) == 24
    assert not frame['profiled'].any()


def test_simulate_default_output_dir(trace, tmp_path):
    assert cli.main(['simulate', '--trace', str(trace), '--recurrences',
                     '5']) == cli.EXIT_OK
    name = '{0}_zeus_s0.csv'.format(JOB_ID)
    assert (tmp_path / 'results' / name).exists()


def test_sweep(trace, tmp_path):
    out = tmp_path / 'sweep.csv'
    assert cli.main(['sweep', '--trace', str(trace), '--out', str(out),
                     '--recurrences', '20', '--beta-grid', '3']) == cli.EXIT_OK
    _, summary, frame = cli.read_results(out)
    etas = frame[frame['kind'] == 'eta']
    assert len(etas) == 11
    assert etas['pareto'].astype(bool).all()
    front = frame[frame['kind'] == 'front']
    assert len(front) == summary['front_size']
    betas = frame[frame['kind'] == 'beta']
    assert list(betas['beta']) == [2.0, 3.0]
    assert betas['total_cost_ratio'].iloc[0] == 1.0
    assert summary['min_avg_power_w'] < summary['max_avg_power_w']


def test_regret_of_identical_runs(trace, tmp_path):
    first, second = tmp_path / 'a.csv', tmp_path / 'b.csv'
    assert simulate(trace, first) == cli.EXIT_OK
    assert simulate(trace, second) == cli.EXIT_OK
    out = tmp_path / 'regret.csv'
    assert cli.main(['regret', '--results', str(first), '--results',
                     str(second), '--out', str(out)]) == cli.EXIT_OK
    _, summary, frame = cli.read_results(out)
    assert summary['ratio'] == 1.0
    assert (frame['difference_jeq'] == 0).all()
    assert list(frame.columns) == cli.REGRET_COLUMNS


def test_regret_zeus_against_grid(trace, tmp_path):
    zeus, grid = tmp_path / 'zeus.csv', tmp_path / 'grid.csv'
    assert simulate(trace, zeus) == cli.EXIT_OK
    assert simulate(trace, grid, '--policy', 'grid') == cli.EXIT_OK
    out = tmp_path / 'regret.csv'
    assert cli.main(['regret', '--results', str(zeus), '--results',
                     str(grid), '--out', str(out)]) == cli.EXIT_OK
    _, summary, _ = cli.read_results(out)
    assert summary['policy_a'] == 'zeus'
    assert summary['policy_b'] == 'grid'


def test_regret_rejects_other_bundle(trace, tmp_path):
    other = tmp_path / 'other'
    assert cli.main(['gen', '--seed', '1', '--out', str(other)]) == 0
    first, second = tmp_path / 'a.csv', tmp_path / 'b.csv'
    assert simulate(trace, first) == cli.EXIT_OK
    assert simulate(other, second) == cli.EXIT_OK
    assert cli.main(['regret', '--results', str(first), '--results',
                     str(second)]) == cli.EXIT_USAGE


def test_regret_rejects_other_eta(trace, tmp_path):
    first, second = tmp_path / 'a.csv', tmp_path / 'b.csv'
    assert simulate(trace, first) == cli.EXIT_OK
    assert simulate(trace, second, '--eta', '1.0') == cli.EXIT_OK
    assert cli.main(['regret', '--results', str(first), '--results',
                     str(second)]) == cli.EXIT_USAGE


def test_invalid_trace_exit_code(trace, tmp_path):
    path = trace / 'power.csv'
    lines = path.read_text().splitlines()
    fields = lines[2].split(',')
    fields[1] = 'x' + fields[1]
    lines[2] = ','.join(fields)
    path.write_text('\n'.join(lines) + '\n')
    assert simulate(trace, tmp_path / 'run.csv') == cli.EXIT_VALIDATION


def test_missing_trace_exit_code(tmp_path):
    assert simulate(tmp_path / 'nowhere', tmp_path / 'run.csv') == cli.EXIT_IO


@pytest.mark.parametrize('argv', [['simulate'],
                                  ['simulate', '--trace', 'x',
                                   '--recurrences', '0'],
                                  ['gen', '--out', 'x', '--preset', 'resnet'],
                                  ['nope']])
def test_usage_errors(argv):
    assert cli.main(argv) == cli.EXIT_USAGE


@pytest.mark.parametrize('flag,value', [('--eta', '1.5'), ('--eta', '-0.1'),
                                        ('--beta', '1.0'), ('--window', '0'),
                                        ('--max-epochs', '0')])
def test_out_of_range_flags_are_usage_errors(trace, tmp_path, flag, value):
    out = tmp_path / 'run.csv'
    assert simulate(trace, out, flag, value) == cli.EXIT_USAGE
    assert not out.exists()


def test_bad_settings_file(trace, tmp_path):
    conf = tmp_path / 'conf.yml'
    conf.write_text('eta: 0.5\ncolour: blue\n')
    assert cli.main(['--config', str(conf), 'simulate', '--trace',
                     str(trace)]) == cli.EXIT_USAGE


def test_settings_file_supplies_defaults(trace, tmp_path):
    conf = tmp_path / 'conf.yml'
    conf.write_text('eta: 1.0\nseed: 4\n')
    out = tmp_path / 'run.csv'
    assert cli.main(['--config', str(conf), 'simulate', '--trace', str(trace),
                     '--recurrences', '5', '--out', str(out)]) == cli.EXIT_OK
    manifest, _, _ = cli.read_results(out)
    assert manifest['parameters']['eta'] == 1.0
    assert manifest['parameters']['rng_seed'] == 4


def test_logfile(trace, tmp_path):
    logfile = tmp_path / 'logs' / 'etsim.log'
    assert cli.main(['--logfile', str(logfile), 'simulate', '--trace',
                     str(trace), '--recurrences', '3', '--out',
                     str(tmp_path / 'run.csv')]) == cli.EXIT_OK
    assert 'Replaying 3 recurrences' in logfile.read_text()
