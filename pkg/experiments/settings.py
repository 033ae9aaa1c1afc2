"""
Experiment configuration documents.

One JSON object per run, e.g.

    {
      "experiment": "converge",
      "modes": 1, "cutoff": 24,
      "symbol": "n1", "t": 1.0, "n_list": [4, 8, 16, 32],
      "alpha": [[0.5, 0.0]], "beta": [[0.5, 0.0]],
      "quadrature": {"radial_order": 128, "angular_order": 256},
      "scheme": "exponential",
      "tolerances": {"rate_min": -1.15, "rate_max": -0.85}
    }

Every key is validated before any computation starts; unknown keys are errors.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from config import Config
from calculus.errors import ConfigError, InfeasibleError
from calculus.fock import CoherentAmplitude, ModeConfig, check_safe_radius, fock_basis
from calculus.parser import parse_symbol
from calculus.propagator import DEFAULT_SLICE_SPEC, EvolutionJob, SliceScheme, beamsplitter, check_unitary
from calculus.quadrature import QuadratureSpec, slice_grid_spec
from calculus.symbols import OmegaKernel, PolySymbol

logger = logging.getLogger(__name__)

PROPAGATE = 'propagate'
CONVERGE = 'converge'
SYMBOL_ROUNDTRIP = 'symbol-roundtrip'
PLANCHEREL = 'plancherel'
SUBSTITUTE = 'substitute'
QUANTIZE_DUMP = 'quantize-dump'
EXPERIMENTS = (PROPAGATE, CONVERGE, SYMBOL_ROUNDTRIP, PLANCHEREL, SUBSTITUTE, QUANTIZE_DUMP)

DEFAULT_TOLERANCES = {
    'rate_min': -1.15,
    'rate_max': -0.85,
    'fit_residual': Config.FIT_RESIDUAL_TOL,
    'propagate_error': 5e-2,
    'roundtrip': 1e-9,
    'plancherel': 1e-8,
    'monotone_slack': 1e-13,
    'substitution': 1e-7,
    'hermitian': Config.HERMITIAN_TOL,
}

_COMMON_KEYS = {'experiment', 'name', 'modes', 'cutoff', 'pad', 'output_dir', 'tolerances', 'quadrature'}
_KIND_KEYS = {
    PROPAGATE: {'symbol', 't', 'n_list', 'alpha', 'beta', 'scheme'},
    CONVERGE: {'symbol', 't', 'n_list', 'alpha', 'beta', 'scheme'},
    SUBSTITUTE: {'symbol', 't', 'n_list', 'alpha', 'beta', 'scheme', 'mixing'},
    SYMBOL_ROUNDTRIP: {'symbol', 'kernel', 'kernel_parameter', 'samples'},
    PLANCHEREL: {'radial_orders'},
    QUANTIZE_DUMP: {'symbol', 'export_grid', 'samples'},
}
_REQUIRED = {
    PROPAGATE: {'symbol', 't', 'n_list', 'alpha', 'beta'},
    CONVERGE: {'symbol', 't', 'n_list', 'alpha', 'beta'},
    SUBSTITUTE: {'symbol', 't', 'n_list', 'alpha', 'beta'},
    SYMBOL_ROUNDTRIP: {'symbol'},
    PLANCHEREL: set(),
    QUANTIZE_DUMP: {'symbol'},
}


def _pairs_to_complex(value: Any, name: str) -> List[complex]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{name} must be a non-empty list of [re, im] pairs")
    out = []
    for item in value:
        if not (isinstance(item, list) and len(item) == 2 and all(isinstance(x, (int, float)) for x in item)):
            raise ConfigError(f"{name} entries must be [re, im] number pairs, got {item!r}")
        out.append(complex(item[0], item[1]))
    return out


def _number(data: Dict[str, Any], key: str, kind=float):
    return _checked(data[key], key, kind)


def _checked(value: Any, key: str, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(f"{key} must be finite")
    if kind is int:
        if int(value) != value:
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return int(value)
    return float(value)


def _mixing_matrix(value: Any, modes: int) -> np.ndarray:
    if isinstance(value, dict):
        unknown = set(value) - {'theta', 'phi'}
        if unknown:
            raise ConfigError(f"Unknown mixing keys: {sorted(unknown)}")
        if modes != 2:
            raise ConfigError("Beamsplitter mixing needs exactly 2 modes")
        theta = _number(value, 'theta') if 'theta' in value else math.pi / 4
        phi = _number(value, 'phi') if 'phi' in value else 0.0
        return beamsplitter(theta, phi)
    if isinstance(value, list):
        rows = [_pairs_to_complex(row, 'mixing row') for row in value]
        return check_unitary(np.array(rows), modes)
    raise ConfigError("mixing must be {'theta', 'phi'} or a matrix of [re, im] pairs")


@dataclass
class ExperimentConfig:
    kind: str
    mode_config: ModeConfig
    raw: Dict[str, Any]
    name: str = 'run'
    symbol: Optional[PolySymbol] = None
    t: float = 0.0
    n_list: List[int] = field(default_factory=list)
    alpha: Optional[CoherentAmplitude] = None
    beta: Optional[CoherentAmplitude] = None
    quadrature: QuadratureSpec = DEFAULT_SLICE_SPEC
    scheme: SliceScheme = field(default_factory=SliceScheme)
    output_dir: Optional[str] = None
    tolerances: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    radial_orders: List[int] = field(default_factory=lambda: [4, 6, 8, 10])
    mixing: Optional[np.ndarray] = None
    kernel: Optional[OmegaKernel] = None
    samples: List[List[complex]] = field(default_factory=list)
    export_grid: bool = False

    @classmethod
    def from_dict(cls, data: Dict[str, Any], name: str = 'run') -> 'ExperimentConfig':
        if not isinstance(data, dict):
            raise ConfigError("Experiment config must be a JSON object")
        kind = data.get('experiment')
        if kind not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {kind!r}")
        allowed = _COMMON_KEYS | _KIND_KEYS[kind]
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigError(f"Unknown keys for {kind}: {unknown}")
        missing = sorted((_REQUIRED[kind] | {'modes', 'cutoff'}) - set(data))
        if missing:
            raise ConfigError(f"Missing keys for {kind}: {missing}")

        modes, cutoff = _number(data, 'modes', int), _number(data, 'cutoff', int)
        pad = _number(data, 'pad', int) if data.get('pad') is not None else None
        mode_config = ModeConfig(modes, cutoff, pad)
        cfg = cls(kind=kind, mode_config=mode_config, raw=data, name=str(data.get('name', name)))

        tolerances = data.get('tolerances', {})
        if not isinstance(tolerances, dict):
            raise ConfigError("tolerances must be an object")
        unknown = sorted(set(tolerances) - set(DEFAULT_TOLERANCES))
        if unknown:
            raise ConfigError(f"Unknown tolerance keys: {unknown}")
        cfg.tolerances.update({k: _checked(v, f"tolerances.{k}") for k, v in tolerances.items()})

        if 'quadrature' in data:
            quad = data['quadrature']
            if not isinstance(quad, dict) or set(quad) - {'radial_order', 'angular_order', 'scheme'}:
                raise ConfigError("quadrature must be an object with radial_order, angular_order, scheme")
            k = _number(quad, 'radial_order', int) if 'radial_order' in quad else DEFAULT_SLICE_SPEC.radial_order
            m = _number(quad, 'angular_order', int) if 'angular_order' in quad else 2 * k
            cfg.quadrature = QuadratureSpec(k, m, quad.get('scheme', DEFAULT_SLICE_SPEC.scheme))

        if 'symbol' in data:
            if not isinstance(data['symbol'], str):
                raise ConfigError("symbol must be a string")
            cfg.symbol = parse_symbol(data['symbol'], modes)
        if 't' in data:
            cfg.t = _number(data, 't')
        if 'n_list' in data:
            n_list = data['n_list']
            if not isinstance(n_list, list) or not n_list:
                raise ConfigError("n_list must be a non-empty list of slice counts")
            cfg.n_list = [_checked(n, 'n_list entry', int) for n in n_list]
        for key in ('alpha', 'beta'):
            if key in data:
                amp = CoherentAmplitude(np.array(_pairs_to_complex(data[key], key)))
                if amp.modes != modes:
                    raise ConfigError(f"{key} has {amp.modes} modes, expected {modes}")
                setattr(cfg, key, check_safe_radius(mode_config, amp))
        if 'scheme' in data:
            cfg.scheme = SliceScheme(data['scheme'])
        if 'output_dir' in data:
            cfg.output_dir = str(data['output_dir'])
        if 'radial_orders' in data:
            orders = data['radial_orders']
            if not isinstance(orders, list) or not orders:
                raise ConfigError("radial_orders must be a non-empty list of positive integers")
            cfg.radial_orders = [_checked(k, 'radial_orders entry', int) for k in orders]
            if any(k < 1 for k in cfg.radial_orders):
                raise ConfigError(f"radial_orders must be positive, got {cfg.radial_orders}")
        if kind == SUBSTITUTE:
            cfg.mixing = _mixing_matrix(data.get('mixing', {}), modes)
        if 'kernel' in data:
            parameter = data.get('kernel_parameter')
            if isinstance(parameter, list):
                parameter = _pairs_to_complex([parameter], 'kernel_parameter')[0]
            elif parameter is not None:
                parameter = _checked(parameter, 'kernel_parameter')
            cfg.kernel = OmegaKernel.from_name(data['kernel'], parameter)
        if 'samples' in data:
            cfg.samples = [_pairs_to_complex(point, 'samples') for point in data['samples']]
            for point in cfg.samples:
                check_safe_radius(mode_config, np.array(point))
        if 'export_grid' in data:
            if not isinstance(data['export_grid'], bool):
                raise ConfigError(f"export_grid must be true or false, got {data['export_grid']!r}")
            cfg.export_grid = data['export_grid']

        if cfg.symbol is not None and kind in (PROPAGATE, CONVERGE, SUBSTITUTE):
            cfg.job()  # validates reality, n_list and amplitudes together
        return cfg

    @classmethod
    def load(cls, path: str) -> 'ExperimentConfig':
        try:
            with open(path, 'r', encoding='utf-8') as handle:
                data = json.load(handle)
        except OSError as e:
            raise ConfigError(f"Cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"Invalid JSON in {path} at line {e.lineno}, column {e.colno}: {e.msg}") from e
        stem = os.path.splitext(os.path.basename(path))[0]
        return cls.from_dict(data, name=stem)

    def job(self, **changes) -> EvolutionJob:
        values = dict(
            symbol=self.symbol, t=self.t, n_list=self.n_list, alpha=self.alpha, beta=self.beta,
            config=self.mode_config, grid=self.quadrature, scheme=self.scheme, label=self.name,
        )
        values.update(changes)
        return EvolutionJob(**values)

    def resolved_output_dir(self) -> str:
        if self.output_dir is None:
            return os.path.join(Config.OUTPUT_ROOT, self.name)
        if os.path.isabs(self.output_dir):
            return self.output_dir
        return os.path.join(Config.OUTPUT_ROOT, self.output_dir)

    def check_feasibility(self):
        """Dimension and node-count guards, without building operators"""
        fock_basis(self.mode_config)
        if self.kind in (PROPAGATE, CONVERGE, SUBSTITUTE):
            spec = slice_grid_spec(self.mode_config, self.quadrature)
            nodes = spec.nodes_per_mode ** self.mode_config.modes
            if nodes > Config.MAX_GRID_NODES:
                raise InfeasibleError(f"Slice grid needs {nodes} nodes, limit {Config.MAX_GRID_NODES}")
        if self.kind == PLANCHEREL:
            top = max(self.radial_orders)
            nodes = (top * (2 * top + 2)) ** self.mode_config.modes
            if nodes > Config.MAX_GRID_NODES:
                raise InfeasibleError(f"Plancherel sweep needs {nodes} nodes, limit {Config.MAX_GRID_NODES}")
        return True

    def echo(self) -> Dict[str, Any]:
        """Config as written, plus the resolved defaults"""
        echo = dict(self.raw)
        echo['resolved'] = {
            'mode_config': self.mode_config.to_dict(),
            'quadrature': self.quadrature.to_dict(),
            'tolerances': dict(sorted(self.tolerances.items())),
        }
        return echo
