"""End-to-end studies at production sizes. Run with `pytest -m slow`."""

import glob
import os

import numpy as np
import pytest

from calculus.fock import ModeConfig
from calculus.parser import parse_symbol
from calculus.propagator import (
    EXPONENTIAL, RESOLVENT, EvolutionJob, PropagatorPipeline, path_integral_direct, sliced_propagator_element,
    slice_grid, slice_operator, telescoping_gap,
)
from calculus.quadrature import QuadratureSpec, build_grid
from experiments.settings import ExperimentConfig
from experiments.studies import run_experiment

pytestmark = pytest.mark.slow

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'experiments', 'configs')
N_LIST = [4, 8, 16, 32, 64]
SYMBOLS = ['n1', 'n1 + 0.1*n1^2', 'n1 + 0.3*(c1 + cstar1)']


def evolution_job(source, scheme, n_list=N_LIST, t=1.0):
    return EvolutionJob(parse_symbol(source), t, n_list, [0.5], [0.5], ModeConfig(1, 24),
                        grid=QuadratureSpec(128, 256), scheme=scheme)


@pytest.mark.parametrize('scheme', [EXPONENTIAL, RESOLVENT])
@pytest.mark.parametrize('source', SYMBOLS)
def test_first_order_slice_convergence(source, scheme):
    result = sliced_propagator_element(evolution_job(source, scheme))
    assert -1.15 <= result.fitted_rate <= -0.85
    assert result.errors[64] < result.errors[4] / 8
    assert result.truncation_report['estimate'] < result.errors[64]


def test_harmonic_anchor_is_approached_at_the_rated_order():
    result = sliced_propagator_element(evolution_job('n1', EXPONENTIAL))
    t = 1.0
    expected = np.exp(-1j * t) * np.exp(0.25 * np.exp(-1j * t)) * np.exp(-0.25)
    assert result.exact_value == pytest.approx(expected, abs=1e-9)
    assert result.fit_passed()


def test_telescoping_gaps_halve():
    config = ModeConfig(1, 4)
    symbol = parse_symbol('n1')
    grid = slice_grid(config, QuadratureSpec(64, 128))
    gaps = [telescoping_gap(symbol, 1.0, n, config, grid) for n in N_LIST]
    for attr in ('resolvent_gap', 'exponential_gap'):
        ratios = [getattr(fine, attr) / getattr(coarse, attr) for coarse, fine in zip(gaps, gaps[1:])]
        # the vacuum block sets the norm and its ratio falls to 1/2 from above as 1/2 + O(t/n)
        assert 0.5 < ratios[0] <= 0.70
        assert all(0.35 <= r <= 0.65 for r in ratios[1:])
        assert all(b < a for a, b in zip(ratios, ratios[1:]))
        assert ratios[-1] == pytest.approx(0.5, abs=0.05)


@pytest.mark.parametrize('n', [1, 2])
def test_direct_path_integral_matches_operator_power(n):
    t = 0.5
    job = EvolutionJob(parse_symbol('n1'), t, [n], [0.5], [0.5], ModeConfig(1, 24), grid=QuadratureSpec(64, 128))
    pipeline = PropagatorPipeline(job)
    operator_value = pipeline.sliced_value(n)
    direct = path_integral_direct(job.symbol, t, n, job.alpha, job.beta, build_grid(1, QuadratureSpec(24, 48)))
    assert direct == pytest.approx(operator_value, abs=1e-8)


def test_slice_operator_is_a_contraction():
    config = ModeConfig(1, 24)
    op = slice_operator(parse_symbol('n1 + 0.1*n1^2'), 1.0, 4, RESOLVENT, QuadratureSpec(128, 256), config)
    assert np.linalg.norm(op.reported, 2) <= 1.0 + 1e-10


@pytest.mark.parametrize('path', sorted(glob.glob(os.path.join(CONFIG_DIR, '*.json'))),
                         ids=lambda p: os.path.splitext(os.path.basename(p))[0])
def test_shipped_configs_pass(path, output_root):
    manifest = run_experiment(ExperimentConfig.load(path))
    assert manifest.passed, [c.to_dict() for c in manifest.failures()]


def test_beamsplitter_substitution_at_32_slices(output_root):
    settings = ExperimentConfig.load(os.path.join(CONFIG_DIR, 'beamsplitter.json'))
    run_experiment(settings)
    rows = (output_root / 'beamsplitter' / 'substitution.csv').read_text(encoding='utf-8').splitlines()
    mismatches = dict(line.split(',') for line in rows[1:])
    assert float(mismatches['32']) < 1e-7


def test_repeated_runs_are_byte_identical(output_root):
    settings = ExperimentConfig.load(os.path.join(CONFIG_DIR, 'converge_number.json'))
    outputs = []
    for name in ('first', 'second'):
        settings.output_dir = name
        run_experiment(settings)
        outputs.append(sorted(
            (p.name, p.read_bytes()) for p in (output_root / name).glob('*.csv')
        ))
    assert outputs[0] == outputs[1]
