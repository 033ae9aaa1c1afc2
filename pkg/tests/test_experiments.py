import csv
import json
import os

import numpy as np
import pytest

from calculus.errors import ConfigError, InfeasibleError, SymbolParseError, ToleranceError
from experiments.report import Check, RunManifest, RunWriter
from experiments.settings import CONVERGE, DEFAULT_TOLERANCES, ExperimentConfig
from experiments.studies import default_samples, run_experiment
from main import main

PROPAGATE_T0 = {
    'experiment': 'propagate', 'modes': 1, 'cutoff': 16,
    'symbol': 'n1 + 0.3*(c1 + cstar1)', 't': 0.0, 'n_list': [1, 2],
    'alpha': [[0.4, 0.1]], 'beta': [[0.2, -0.3]],
}

SMALL_CONVERGE = {
    'experiment': 'converge', 'modes': 1, 'cutoff': 8,
    'symbol': 'n1', 't': 1.0, 'n_list': [8, 16, 32, 64],
    'alpha': [[0.5, 0.0]], 'beta': [[0.5, 0.0]],
    'quadrature': {'radial_order': 32, 'angular_order': 64},
}


def read_csv(path):
    with open(path, newline='', encoding='utf-8') as handle:
        return list(csv.reader(handle))


def test_settings_from_dict():
    cfg = ExperimentConfig.from_dict(SMALL_CONVERGE, name='small')
    assert cfg.kind == CONVERGE
    assert cfg.name == 'small'
    assert cfg.mode_config.cutoff == 8
    assert (cfg.quadrature.radial_order, cfg.quadrature.angular_order) == (32, 64)
    assert cfg.tolerances == DEFAULT_TOLERANCES
    assert cfg.job().n_list == [8, 16, 32, 64]
    echo = cfg.echo()
    assert echo['symbol'] == 'n1'
    assert echo['resolved']['mode_config'] == {'modes': 1, 'cutoff': 8, 'pad': 4}


@pytest.mark.parametrize('changes', [
    {'color': 'blue'},
    {'experiment': 'simulate'},
    {'n_list': []},
    {'n_list': [16, 8]},
    {'symbol': 'c1'},
    {'alpha': [[0.5, 0.0], [0.1, 0.0]]},
    {'alpha': [[0.5]]},
    {'cutoff': 8.5},
    {'tolerances': {'rate_mid': -1.0}},
    {'quadrature': {'radial_order': 8, 'angular_order': 10}},
    {'scheme': 'midpoint'},
])
def test_settings_rejects_bad_documents(changes):
    data = dict(SMALL_CONVERGE, **changes)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(data)


def test_settings_missing_keys_are_named():
    data = dict(SMALL_CONVERGE)
    del data['beta']
    with pytest.raises(ConfigError, match='beta'):
        ExperimentConfig.from_dict(data)


def test_settings_parse_errors_keep_their_offset():
    with pytest.raises(SymbolParseError) as info:
        ExperimentConfig.from_dict(dict(SMALL_CONVERGE, symbol='n1 + '))
    assert info.value.offset == 5


def test_settings_load(tmp_path, write_config):
    cfg = ExperimentConfig.load(write_config('t0_check', PROPAGATE_T0))
    assert cfg.name == 't0_check'
    broken = tmp_path / 'broken.json'
    broken.write_text('{"experiment": ', encoding='utf-8')
    with pytest.raises(ConfigError, match='Invalid JSON'):
        ExperimentConfig.load(str(broken))
    with pytest.raises(ConfigError):
        ExperimentConfig.load(str(tmp_path / 'missing.json'))


def test_substitution_mixing():
    data = {
        'experiment': 'substitute', 'modes': 2, 'cutoff': 4, 'symbol': 'n1 + n2', 't': 1.0, 'n_list': [2],
        'alpha': [[0.1, 0.0], [0.0, 0.1]], 'beta': [[0.1, 0.0], [0.0, 0.0]],
    }
    cfg = ExperimentConfig.from_dict(data)
    np.testing.assert_allclose(cfg.mixing.conj().T @ cfg.mixing, np.eye(2), atol=1e-14)
    swap = ExperimentConfig.from_dict(dict(data, mixing=[[[0, 0], [1, 0]], [[1, 0], [0, 0]]]))
    np.testing.assert_allclose(swap.mixing, [[0, 1], [1, 0]])
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(data, mixing=[[[1, 0], [1, 0]], [[0, 0], [1, 0]]]))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(data, mixing={'angle': 1.0}))


PLANCHEREL_SWEEP = {'experiment': 'plancherel', 'modes': 1, 'cutoff': 4, 'radial_orders': [4, 6]}
QUANTIZE_DUMP = {'experiment': 'quantize-dump', 'modes': 1, 'cutoff': 4, 'symbol': 'n1'}


@pytest.mark.parametrize('base, changes', [
    (SMALL_CONVERGE, {'tolerances': {'plancherel': 'tight'}}),
    (SMALL_CONVERGE, {'tolerances': {'rate_min': None}}),
    (SMALL_CONVERGE, {'n_list': ['x', 16]}),
    (SMALL_CONVERGE, {'n_list': [4.9, 16]}),
    (SMALL_CONVERGE, {'n_list': [True, 16]}),
    (PLANCHEREL_SWEEP, {'radial_orders': ['four']}),
    (PLANCHEREL_SWEEP, {'radial_orders': [4.7]}),
    (PLANCHEREL_SWEEP, {'radial_orders': [0, 4]}),
    (QUANTIZE_DUMP, {'export_grid': 'yes'}),
])
def test_malformed_values_are_config_errors(base, changes, write_config):
    data = dict(base, **changes)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(data)
    assert main(['validate', write_config('malformed', data)]) == 1


def test_malformed_mixing_angles_are_config_errors():
    data = {
        'experiment': 'substitute', 'modes': 2, 'cutoff': 4, 'symbol': 'n1 + n2', 't': 1.0, 'n_list': [2],
        'alpha': [[0.1, 0.0], [0.0, 0.1]], 'beta': [[0.1, 0.0], [0.0, 0.0]],
    }
    for mixing in ({'theta': 'quarter'}, {'phi': [0.0]}, {'theta': True}):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(dict(data, mixing=mixing))


def test_integral_floats_are_accepted():
    cfg = ExperimentConfig.from_dict(dict(SMALL_CONVERGE, n_list=[8.0, 16, 32.0]))
    assert cfg.n_list == [8, 16, 32]
    assert all(isinstance(n, int) for n in cfg.n_list)
    sweep = ExperimentConfig.from_dict(dict(PLANCHEREL_SWEEP, radial_orders=[4.0, 6]))
    assert sweep.radial_orders == [4, 6]


def test_feasibility_guards():
    plancherel = {'experiment': 'plancherel', 'modes': 1, 'cutoff': 4, 'radial_orders': [2000]}
    with pytest.raises(InfeasibleError):
        ExperimentConfig.from_dict(plancherel).check_feasibility()
    with pytest.raises(InfeasibleError):
        ExperimentConfig.from_dict({'experiment': 'plancherel', 'modes': 6, 'cutoff': 40}).check_feasibility()


def test_output_dir_resolution(output_root):
    cfg = ExperimentConfig.from_dict(PROPAGATE_T0, name='t0')
    assert cfg.resolved_output_dir() == os.path.join(str(output_root), 't0')
    cfg.output_dir = 'nested/here'
    assert cfg.resolved_output_dir() == os.path.join(str(output_root), 'nested/here')


def test_default_samples_stay_small():
    points = np.array(default_samples(2))
    assert points.shape == (4, 2)
    assert np.max(np.abs(points)) < 1.0


def test_checks_and_manifest():
    assert Check('a', 1.0, 2.0).passed
    assert not Check('a', 3.0, 2.0).passed
    assert Check('rate', -1.0, -1.15, '>=').passed
    assert not Check('missing', None, 1.0).passed
    assert not Check('nan', float('nan'), 1.0).passed
    manifest = RunManifest('converge', {}, checks=[Check('a', 1.0, 2.0), Check('b', 3.0, 2.0)])
    assert not manifest.passed
    assert manifest.exit_code == 2
    assert [c.name for c in manifest.failures()] == ['b']
    with pytest.raises(ToleranceError, match='b'):
        manifest.raise_for_failures()


def test_run_writer_outputs(tmp_path):
    writer = RunWriter(str(tmp_path / 'out'))
    writer.write_convergence([(4, 1 + 2j, 1 + 1j, 1.0)])
    assert read_csv(writer.path('convergence.csv')) == [
        ['n', 'value_re', 'value_im', 'exact_re', 'exact_im', 'abs_error'], ['4', '1', '2', '1', '1', '1'],
    ]
    writer.write_substitution({8: 1e-9, 4: 2e-9})
    assert [row[0] for row in read_csv(writer.path('substitution.csv'))] == ['n', '4', '8']
    manifest = RunManifest('propagate', {'alpha': [[0.1, 0.0]]}, summary={'exact': 0.5 - 0.25j})
    writer.write_manifest(manifest)
    data = json.loads((tmp_path / 'out' / 'manifest.json').read_text(encoding='utf-8'))
    assert data['summary']['exact'] == [0.5, -0.25]
    assert data['files'] == ['convergence.csv', 'substitution.csv']
    assert data['passed'] is True
    assert not os.path.exists(writer.path('manifest.json.tmp'))


def test_convergence_plot_is_reproducible(tmp_path):
    texts = []
    for name in ('a', 'b'):
        writer = RunWriter(str(tmp_path / name))
        path = writer.write_convergence_plot({'exponential': ([8, 16, 32], [0.1, 0.05, 0.025])}, {'exponential': -1.0})
        with open(path, encoding='utf-8') as handle:
            texts.append(handle.read())
    assert texts[0] == texts[1]
    assert 'slope -1.000' in texts[0]


def test_run_writer_rejects_unusable_directory(tmp_path):
    blocker = tmp_path / 'file'
    blocker.write_text('x', encoding='utf-8')
    with pytest.raises(ConfigError):
        RunWriter(str(blocker / 'run'))


def test_zero_time_propagate_run(output_root):
    manifest = run_experiment(ExperimentConfig.from_dict(PROPAGATE_T0, name='t0'))
    run_dir = output_root / 't0'
    assert manifest.passed
    assert {c.name for c in manifest.checks} == {'t0_identity', 'truncation_estimate'}
    rows = read_csv(run_dir / 'convergence.csv')
    assert [row[0] for row in rows[1:]] == ['1', '2']
    assert all(float(row[-1]) == 0.0 for row in rows[1:])
    assert (run_dir / 'checks.csv').exists()
    assert json.loads((run_dir / 'manifest.json').read_text(encoding='utf-8'))['exit_code'] == 0


def test_converge_run_is_deterministic(output_root):
    outputs = []
    for name in ('first', 'second'):
        manifest = run_experiment(ExperimentConfig.from_dict(SMALL_CONVERGE, name=name))
        assert manifest.passed, manifest.failures()
        run_dir = output_root / name
        outputs.append(((run_dir / 'convergence.csv').read_bytes(), (run_dir / 'convergence.svg').read_bytes()))
    assert outputs[0] == outputs[1]
    assert -1.15 <= manifest.summary['fitted_rate'] <= -0.85


def test_plancherel_run(output_root):
    data = {'experiment': 'plancherel', 'modes': 1, 'cutoff': 4, 'pad': 0, 'radial_orders': [4, 6, 8, 10]}
    manifest = run_experiment(ExperimentConfig.from_dict(data, name='plancherel'))
    assert manifest.passed
    rows = read_csv(output_root / 'plancherel' / 'plancherel.csv')
    assert rows[0] == ['K', 'M', 'defect']
    assert [(r[0], r[1]) for r in rows[1:]] == [('4', '10'), ('6', '14'), ('8', '18'), ('10', '22')]


def test_weyl_roundtrip_run(output_root):
    data = {
        'experiment': 'symbol-roundtrip', 'modes': 1, 'cutoff': 12, 'pad': 8,
        'symbol': 'cstar1*c1 + 0.5*cstar1^2*c1^2', 'kernel': 'weyl',
    }
    manifest = run_experiment(ExperimentConfig.from_dict(data, name='weyl'))
    assert manifest.passed, manifest.failures()
    assert {c.name for c in manifest.checks} == {'roundtrip', 'product_rule'}
    assert manifest.summary['kernel'] == 'weyl'
    rows = read_csv(output_root / 'weyl' / 'roundtrip.csv')
    assert rows[-1][0] == 'inverse_transform'


def test_quantize_dump_run(output_root):
    data = {
        'experiment': 'quantize-dump', 'modes': 1, 'cutoff': 8, 'symbol': 'n1^2 + 0.5*(c1^2 + cstar1^2)',
        'export_grid': True, 'samples': [[[0.1, 0.2]], [[-0.3, 0.0]]],
    }
    manifest = run_experiment(ExperimentConfig.from_dict(data, name='dump'))
    run_dir = output_root / 'dump'
    assert manifest.passed
    assert manifest.summary['hermitian'] is True
    assert manifest.summary['reported_dimension'] == 9
    assert read_csv(run_dir / 'operator.csv')[0] == ['row', 'col', 're', 'im']
    assert read_csv(run_dir / 'grid.csv')[0] == ['xi1_re', 'xi1_im', 'weight']
    assert len(read_csv(run_dir / 'wick_samples.csv')) == 3


def test_main_exit_codes(output_root, write_config, capsys):
    assert main(['version']) == 0
    assert 'antiwick-calculus' in capsys.readouterr().out
    assert main(['validate', write_config('ok', PROPAGATE_T0)]) == 0
    assert main(['run', write_config('ok', PROPAGATE_T0)]) == 0
    assert (output_root / 'ok' / 'manifest.json').exists()

    malformed = dict(PROPAGATE_T0, symbol='n1 + * c1')
    assert main(['run', write_config('malformed', malformed)]) == 1
    assert main(['run', 'no/such/config.json']) == 1

    strict = dict(SMALL_CONVERGE, experiment='propagate', n_list=[1, 2], tolerances={'propagate_error': 1e-12})
    assert main(['run', write_config('strict', strict)]) == 2
    assert (output_root / 'strict' / 'manifest.json').exists()

    huge = {'experiment': 'plancherel', 'modes': 6, 'cutoff': 40}
    assert main(['run', write_config('huge', huge)]) == 3


def test_output_dir_override(output_root, tmp_path, write_config):
    target = tmp_path / 'elsewhere'
    assert main(['run', write_config('t0', PROPAGATE_T0), '--output-dir', str(target)]) == 0
    assert (target / 'manifest.json').exists()
    assert not (output_root / 't0').exists()
