"""
Experiment kinds and the runner that executes them.

Independent slice counts of a propagator job run on worker threads (bounded by
Config.MAX_WORKERS); results are merged in n order before anything is written,
so the output bytes never depend on scheduling.
"""

import asyncio
import logging
import time
from contextlib import contextmanager
from typing import Dict, List, Optional

import numpy as np

from config import Config
from calculus.errors import ConfigError
from calculus.fock import FockOperator
from calculus.propagator import PropagatorPipeline, PropagatorResult, substitution_check
from calculus.quadrature import build_grid, minimal_spec, plancherel_sweep
from calculus.quantize import quantize_poly, wick_symbol_samples
from calculus.symbols import OmegaKernel, antiwick_product, omega_transform
from experiments.report import Check, RunManifest, RunWriter
from experiments.settings import (
    CONVERGE, PLANCHEREL, PROPAGATE, QUANTIZE_DUMP, SUBSTITUTE, SYMBOL_ROUNDTRIP, ExperimentConfig,
)

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES = (0.0, 0.3 + 0.1j, -0.2 + 0.4j, 0.5 - 0.25j)


def default_samples(modes: int) -> List[List[complex]]:
    """A fixed set of small sample points, one row per point"""
    points = []
    for i, z in enumerate(DEFAULT_SAMPLES):
        points.append([z * (1 if (i + j) % 2 == 0 else 1j) for j in range(modes)])
    return points


def convergence_checks(result: PropagatorResult, tolerances: Dict[str, float]) -> List[Check]:
    checks = []
    ns = sorted(result.errors)
    if result.fitted_rate is None:
        return checks
    checks.append(Check('rate_min', result.fitted_rate, tolerances['rate_min'], '>='))
    checks.append(Check('rate_max', result.fitted_rate, tolerances['rate_max'], '<='))
    checks.append(Check('fit_residual', result.fit_residual, tolerances['fit_residual'], '<='))
    first, last = result.errors[ns[0]], result.errors[ns[-1]]
    if first > 0:
        # first-order decay with a factor 2 of slack
        checks.append(Check('error_reduction', last / first, 2.0 * ns[0] / ns[-1], '<=',
                            detail=f"error(n={ns[-1]}) / error(n={ns[0]})"))
    return checks


class ExperimentRunner:
    """Runs one experiment config and writes its run directory"""

    def __init__(self, settings: ExperimentConfig, writer: Optional[RunWriter] = None,
                 max_workers: Optional[int] = None):
        self.settings = settings
        self.writer = writer or RunWriter(settings.resolved_output_dir())
        self.max_workers = max_workers or Config.MAX_WORKERS
        self.manifest = RunManifest(settings.kind, settings.echo())
        self.results: Dict[str, object] = {}

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        logger.info(f"[{self.settings.name}] {name} started")
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self.manifest.timings[name] = self.manifest.timings.get(name, 0.0) + elapsed
            logger.info(f"[{self.settings.name}] {name} finished in {elapsed:.3f}s")

    async def run(self) -> RunManifest:
        studies = {
            PROPAGATE: self._propagate,
            CONVERGE: self._converge,
            SYMBOL_ROUNDTRIP: self._symbol_roundtrip,
            PLANCHEREL: self._plancherel,
            SUBSTITUTE: self._substitute,
            QUANTIZE_DUMP: self._quantize_dump,
        }
        with self.stage('feasibility'):
            self.settings.check_feasibility()
        await studies[self.settings.kind]()
        self.writer.write_checks(self.manifest.checks)
        self.writer.write_manifest(self.manifest)
        return self.manifest

    async def evolve(self, job) -> PropagatorResult:
        """Exact value and every slice count of `job`, the slice counts in parallel"""
        pipeline = PropagatorPipeline(job)
        semaphore = asyncio.Semaphore(self.max_workers)

        async def bounded(func, *args):
            async with semaphore:
                return await asyncio.to_thread(func, *args)

        with self.stage('slice grid'):
            if job.t != 0:
                await asyncio.to_thread(lambda: pipeline.grid)
        with self.stage('evolution'):
            tasks = [bounded(pipeline.exact_value)] + [bounded(pipeline.sliced_value, n) for n in job.n_list]
            outcomes = await asyncio.gather(*tasks)
        exact, values = outcomes[0], dict(zip(job.n_list, outcomes[1:]))
        return pipeline.result(exact, values)

    def _record_evolution(self, result: PropagatorResult, plot: bool):
        self.writer.write_convergence(result.rows())
        self.manifest.summary.update({
            'exact': result.exact_value,
            'fitted_rate': result.fitted_rate,
            'fit_residual': result.fit_residual,
            'truncation': result.truncation_report,
            'scheme': result.scheme,
        })
        ns = sorted(result.errors)
        if plot and result.fitted_rate is not None:
            self.writer.write_convergence_plot(
                {result.scheme: (ns, [result.errors[n] for n in ns])},
                {result.scheme: result.fitted_rate},
                title=f"{self.settings.symbol.to_text()}, t={result.t}",
            )

    async def _propagate(self):
        settings = self.settings
        result = await self.evolve(settings.job())
        self.results['propagator'] = result
        last = max(result.errors)
        if settings.t == 0:
            self.manifest.checks.append(Check('t0_identity', result.errors[last], 0.0, '<='))
        else:
            self.manifest.checks.append(Check('final_error', result.errors[last], settings.tolerances['propagate_error'],
                                              '<=', detail=f"n={last}"))
        self.manifest.checks.append(Check('truncation_estimate', result.truncation_report['estimate'],
                                          settings.tolerances['propagate_error'], '<='))
        self._record_evolution(result, plot=result.fitted_rate is not None)

    async def _converge(self):
        settings = self.settings
        if len(settings.n_list) < 3:
            raise ConfigError("A convergence study needs at least 3 slice counts")
        result = await self.evolve(settings.job())
        self.results['propagator'] = result
        if settings.t != 0:
            self.manifest.checks.extend(convergence_checks(result, settings.tolerances))
        self._record_evolution(result, plot=True)

    async def _substitute(self):
        settings = self.settings
        with self.stage('substitution'):
            outcome = await asyncio.to_thread(substitution_check, settings.job(), settings.mixing)
        self.results['substitution'] = outcome
        self.writer.write_substitution(outcome.mismatches)
        self.writer.write_convergence(outcome.original.rows(), name='original.csv')
        self.writer.write_convergence(outcome.transformed.rows(), name='transformed.csv')
        tol = settings.tolerances['substitution']
        self.manifest.checks.append(Check('max_mismatch', max(outcome.mismatches.values()), tol, '<='))
        self.manifest.checks.append(Check('exact_mismatch', outcome.exact_mismatch, tol, '<='))
        self.manifest.summary['mixing'] = [[complex(z) for z in row] for row in settings.mixing]

    async def _plancherel(self):
        settings = self.settings
        with self.stage('plancherel sweep'):
            rows = await asyncio.to_thread(plancherel_sweep, settings.mode_config, settings.radial_orders,
                                           settings.quadrature.scheme)
        self.results['plancherel'] = rows
        self.writer.write_plancherel(rows)
        defects = [d for _, _, d in rows]
        rise = max((b - a for a, b in zip(defects, defects[1:])), default=0.0)
        self.manifest.checks.append(Check('final_defect', defects[-1], settings.tolerances['plancherel'], '<='))
        self.manifest.checks.append(Check('monotone', rise, settings.tolerances['monotone_slack'], '<=',
                                          detail='largest increase between consecutive radial orders'))

    def _roundtrip_rows(self, operator: FockOperator):
        """(label, value, reference) rows for the kernel round trip"""
        settings = self.settings
        symbol = settings.symbol
        kernel = settings.kernel or OmegaKernel.wick()
        points = settings.samples or default_samples(symbol.modes)
        omega_symbol = omega_transform(symbol, kernel)
        back_to_wick = OmegaKernel('to-wick', -1.0 - kernel.u, -kernel.v, -kernel.w)
        wick = omega_transform(omega_symbol, back_to_wick)
        inverse = OmegaKernel('inverse', -kernel.u, -kernel.v, -kernel.w)
        recovered = omega_transform(omega_symbol, inverse)

        oracle = wick_symbol_samples(operator, points)
        predicted = np.atleast_1d(wick.evaluate(np.asarray(points, dtype=complex)))
        rows = []
        for i, (value, reference) in enumerate(zip(predicted, oracle)):
            rows.append((f"wick[{i}].re", value.real, reference.real))
            rows.append((f"wick[{i}].im", value.imag, reference.imag))
        rows.append(('inverse_transform', 0.0, max((abs(c) for c in (recovered - symbol).terms.values()), default=0.0)))
        self.manifest.summary['omega_symbol'] = omega_symbol.to_text()
        self.manifest.summary['kernel'] = kernel.kind
        return rows, points, oracle

    async def _symbol_roundtrip(self):
        settings = self.settings
        config = settings.mode_config
        with self.stage('quantize'):
            operator = await asyncio.to_thread(quantize_poly, settings.symbol, config)
        with self.stage('round trip'):
            rows, points, oracle = self._roundtrip_rows(operator)
        self.writer.write_roundtrip(rows)
        self.writer.write_wick_samples('wick_samples.csv', np.asarray(points, dtype=complex), oracle)
        tol = settings.tolerances['roundtrip']
        worst = max(abs(value - reference) for _, value, reference in rows)
        self.manifest.checks.append(Check('roundtrip', worst, tol, '<='))

        # the product rule is exact on the reported block once the pad absorbs both factors
        if 2 * settings.symbol.antiholomorphic_degree <= config.pad:
            with self.stage('product'):
                square = quantize_poly(antiwick_product(settings.symbol, settings.symbol), config)
                product = operator.matrix @ operator.matrix
                k = config.reported_dimension
                defect = float(np.max(np.abs(product[:k, :k] - square.matrix[:k, :k])))
            self.manifest.checks.append(Check('product_rule', defect, tol * max(1.0, float(np.max(np.abs(product[:k, :k])))), '<='))
        else:
            logger.info(f"Product check skipped: pad {config.pad} below twice the symbol degree")

    async def _quantize_dump(self):
        settings = self.settings
        config = settings.mode_config
        with self.stage('quantize'):
            operator = await asyncio.to_thread(quantize_poly, settings.symbol, config)
        self.writer.write_operator('operator.csv', operator)
        if settings.export_grid:
            self.writer.write_grid('grid.csv', build_grid(config.modes, minimal_spec(config)))
        if settings.samples:
            points = np.asarray(settings.samples, dtype=complex)
            self.writer.write_wick_samples('wick_samples.csv', points, wick_symbol_samples(operator, settings.samples))
        self.manifest.summary.update({
            'dimension': config.dimension,
            'reported_dimension': config.reported_dimension,
            'hermitian': operator.hermitian,
            'label': operator.label,
        })
        if operator.hermitian:
            self.manifest.checks.append(Check('hermiticity', operator.hermiticity_defect(),
                                              settings.tolerances['hermitian'], '<='))


def run_experiment(settings: ExperimentConfig, writer: Optional[RunWriter] = None) -> RunManifest:
    """Synchronous wrapper around ExperimentRunner.run"""
    return asyncio.run(ExperimentRunner(settings, writer).run())
