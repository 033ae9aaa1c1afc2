"""
Run directory output: CSV data files, the SVG convergence plot and the manifest.

A RunWriter owns one run directory; every file of a run goes through it.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from config import Config  # noqa: E402
from calculus.errors import ConfigError, ToleranceError  # noqa: E402
from calculus.export import export_grid, export_operator, export_wick_samples, fmt, write_rows  # noqa: E402

logger = logging.getLogger(__name__)

CONVERGE_HEADER = ['n', 'value_re', 'value_im', 'exact_re', 'exact_im', 'abs_error']
PLANCHEREL_HEADER = ['K', 'M', 'defect']
SUBSTITUTE_HEADER = ['n', 'mismatch']
ROUNDTRIP_HEADER = ['check', 'value', 'reference', 'abs_error']
CHECKS_HEADER = ['name', 'value', 'limit', 'passed']

EXIT_PASS = 0
EXIT_CONFIG = 1
EXIT_TOLERANCE = 2
EXIT_INFEASIBLE = 3


@dataclass
class Check:
    """One acceptance check: `value` compared against `limit` by `relation`"""
    name: str
    value: float
    limit: float
    relation: str = '<='
    detail: str = ''

    @property
    def passed(self) -> bool:
        if self.value is None or not np.isfinite(self.value):
            return False
        if self.relation == '<=':
            return self.value <= self.limit
        if self.relation == '>=':
            return self.value >= self.limit
        raise ConfigError(f"Unknown check relation {self.relation!r}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name, 'value': self.value, 'limit': self.limit,
            'relation': self.relation, 'passed': self.passed, 'detail': self.detail,
        }


@dataclass
class RunManifest:
    experiment: str
    config: Dict[str, Any]
    version: str = Config.APP_VERSION
    timings: Dict[str, float] = field(default_factory=dict)
    checks: List[Check] = field(default_factory=list)
    files: List[str] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def exit_code(self) -> int:
        return EXIT_PASS if self.passed else EXIT_TOLERANCE

    def failures(self) -> List[Check]:
        return [check for check in self.checks if not check.passed]

    def raise_for_failures(self):
        failed = self.failures()
        if failed:
            names = ', '.join(f"{c.name} ({c.value:.4g} {c.relation} {c.limit:.4g} fails)" for c in failed)
            raise ToleranceError(f"{len(failed)} check(s) failed: {names}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'app': Config.APP_NAME,
            'version': self.version,
            'experiment': self.experiment,
            'config': self.config,
            'timings': {k: round(v, 6) for k, v in self.timings.items()},
            'checks': [check.to_dict() for check in self.checks],
            'summary': self.summary,
            'files': sorted(self.files),
            'passed': self.passed,
            'exit_code': self.exit_code,
        }


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value


class RunWriter:
    """Single writer for a run directory"""

    def __init__(self, output_dir: str):
        self.output_dir = output_dir
        self.files: List[str] = []
        try:
            os.makedirs(output_dir, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"Cannot create output directory {output_dir}: {e}") from e
        if not os.access(output_dir, os.W_OK):
            raise ConfigError(f"Output directory {output_dir} is not writable")

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def _track(self, name: str):
        if name not in self.files:
            self.files.append(name)

    def write_csv(self, name: str, header: Sequence[str], rows) -> str:
        write_rows(self.path(name), header, rows)
        self._track(name)
        logger.info(f"Wrote {name}")
        return self.path(name)

    def write_convergence(self, rows, name: str = 'convergence.csv') -> str:
        """rows of (n, value, exact, abs_error)"""
        return self.write_csv(name, CONVERGE_HEADER, (
            [str(n), fmt(value.real), fmt(value.imag), fmt(exact.real), fmt(exact.imag), fmt(error)]
            for n, value, exact, error in rows
        ))

    def write_plancherel(self, rows, name: str = 'plancherel.csv') -> str:
        return self.write_csv(name, PLANCHEREL_HEADER, ([str(k), str(m), fmt(d)] for k, m, d in rows))

    def write_substitution(self, mismatches: Dict[int, float], name: str = 'substitution.csv') -> str:
        return self.write_csv(name, SUBSTITUTE_HEADER, ([str(n), fmt(mismatches[n])] for n in sorted(mismatches)))

    def write_roundtrip(self, rows, name: str = 'roundtrip.csv') -> str:
        return self.write_csv(name, ROUNDTRIP_HEADER, (
            [label, fmt(value), fmt(reference), fmt(abs(value - reference))] for label, value, reference in rows
        ))

    def write_checks(self, checks: Sequence[Check], name: str = 'checks.csv') -> str:
        return self.write_csv(name, CHECKS_HEADER, (
            [c.name, fmt(c.value), fmt(c.limit), str(c.passed).lower()] for c in checks
        ))

    def write_operator(self, name: str, operator, reported_only: bool = True) -> str:
        export_operator(self.path(name), operator, reported_only)
        self._track(name)
        return self.path(name)

    def write_grid(self, name: str, grid) -> str:
        export_grid(self.path(name), grid)
        self._track(name)
        return self.path(name)

    def write_wick_samples(self, name: str, points, values) -> str:
        export_wick_samples(self.path(name), points, values)
        self._track(name)
        return self.path(name)

    def write_convergence_plot(self, series: Dict[str, Sequence], slopes: Dict[str, Optional[float]],
                               name: str = 'convergence.svg', title: str = '') -> str:
        """
        Log-log error against n, one series per label, with the fitted line
        over the points the slope was fitted on and the slope in the legend.

        `series` maps a label to (ns, errors).
        """
        plt.rcParams['svg.hashsalt'] = Config.APP_NAME
        fig, ax = plt.subplots(figsize=(6, 4.5))
        for label, (ns, errors) in series.items():
            ns = np.asarray(ns, dtype=float)
            errors = np.asarray(errors, dtype=float)
            positive = errors > 0
            points, = ax.loglog(ns[positive], errors[positive], 'o', label=f"{label} error")
            slope = slopes.get(label)
            if slope is not None and positive.sum() >= 2:
                count = int(np.ceil(len(ns) / 2))
                x = np.log(ns[-count:])
                intercept = float(np.mean(np.log(errors[-count:])) - slope * np.mean(x))
                ax.loglog(ns, np.exp(intercept) * ns ** slope, '--', color=points.get_color(),
                          label=f"{label} fit, slope {slope:.3f}")
        ax.set_xlabel('slices n')
        ax.set_ylabel('|sliced - exact|')
        if title:
            ax.set_title(title)
        ax.grid(True, which='both', linewidth=0.4)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(self.path(name), format='svg', metadata={'Date': None})
        plt.close(fig)
        self._track(name)
        logger.info(f"Wrote {name}")
        return self.path(name)

    def write_manifest(self, manifest: RunManifest, name: str = 'manifest.json') -> str:
        """Atomic: written to a temporary file, then renamed over the target"""
        manifest.files = list(self.files)
        text = json.dumps(_jsonable(manifest.to_dict()), sort_keys=True, indent=2, ensure_ascii=False)
        target = self.path(name)
        tmp = target + '.tmp'
        with open(tmp, 'w', encoding='utf-8') as handle:
            handle.write(text + '\n')
        os.replace(tmp, target)
        logger.info(f"Manifest written to {target} (passed={manifest.passed})")
        return target
