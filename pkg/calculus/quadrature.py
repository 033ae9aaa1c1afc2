"""
Gaussian-weighted quadrature on finite-dimensional complex phase space.

Every grid integrates against the probability-normalized Gaussian:

    integrate(grid, f) ~ integral of e^{-xi* xi} f(xi*, xi) dmu,   sum of weights = 1.

The default polar scheme uses, per mode, the Gauss-Laguerre rule in x = |xi|^2
(weight e^{-x}) times M equispaced angles; the cartesian scheme uses
Gauss-Hermite rules in Re xi and Im xi.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, List, Sequence, Tuple, Union

import numpy as np
from scipy.special import roots_hermite, roots_laguerre

from config import Config
from calculus.errors import ConfigError, InfeasibleError, QuadratureError
from calculus.fock import ModeConfig, coherent_rows

logger = logging.getLogger(__name__)

POLAR_LAGUERRE = 'polar-laguerre'
CARTESIAN_HERMITE = 'cartesian-hermite'
SCHEMES = (POLAR_LAGUERRE, CARTESIAN_HERMITE)

Integrand = Union[Callable[[np.ndarray], np.ndarray], np.ndarray]


@dataclass(frozen=True)
class QuadratureSpec:
    radial_order: int
    angular_order: int
    scheme: str = POLAR_LAGUERRE

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"Unknown quadrature scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.radial_order < 1:
            raise ConfigError(f"radial_order must be >= 1, got {self.radial_order}")
        if self.scheme == POLAR_LAGUERRE and self.angular_order < 2 * self.radial_order:
            raise ConfigError(
                f"angular_order {self.angular_order} must be at least 2 * radial_order = {2 * self.radial_order}"
            )

    @property
    def nodes_per_mode(self) -> int:
        if self.scheme == POLAR_LAGUERRE:
            return self.radial_order * self.angular_order
        return self.radial_order ** 2

    def to_dict(self) -> dict:
        return {'radial_order': self.radial_order, 'angular_order': self.angular_order, 'scheme': self.scheme}


@dataclass(frozen=True, eq=False)
class PhaseGrid:
    nodes: np.ndarray
    weights: np.ndarray
    spec: QuadratureSpec
    modes: int

    def __post_init__(self):
        for name in ('nodes', 'weights'):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def shifted(self, c: Sequence[complex]) -> 'PhaseGrid':
        """Grid whose nodes are translated by c; integrates e^{-|xi|^2} f(xi + c)"""
        shift = np.asarray(c, dtype=complex).reshape(1, self.modes)
        return PhaseGrid(self.nodes + shift, self.weights, self.spec, self.modes)


@lru_cache(maxsize=64)
def _one_mode_rule(spec: QuadratureSpec) -> Tuple[np.ndarray, np.ndarray]:
    if spec.scheme == POLAR_LAGUERRE:
        x, wx = roots_laguerre(spec.radial_order)
        theta = 2.0 * np.pi * np.arange(spec.angular_order) / spec.angular_order
        nodes = (np.sqrt(x)[:, None] * np.exp(1j * theta)[None, :]).ravel()
        weights = np.repeat(wx / spec.angular_order, spec.angular_order)
    else:
        y, wy = roots_hermite(spec.radial_order)
        nodes = (y[:, None] + 1j * y[None, :]).ravel()
        weights = (wy[:, None] * wy[None, :]).ravel() / np.pi
    return nodes, weights


def build_grid(modes: int, spec: QuadratureSpec) -> PhaseGrid:
    """Tensor-product grid over `modes` copies of the one-mode rule"""
    if modes < 1:
        raise ConfigError(f"modes must be >= 1, got {modes}")
    total = spec.nodes_per_mode ** modes
    if total > Config.MAX_GRID_NODES:
        raise InfeasibleError(f"Grid of {total} nodes ({spec.nodes_per_mode} per mode, {modes} modes) exceeds {Config.MAX_GRID_NODES}")
    z, w = _one_mode_rule(spec)
    node_mesh = np.meshgrid(*([z] * modes), indexing='ij')
    weight_mesh = np.meshgrid(*([w] * modes), indexing='ij')
    nodes = np.stack([m.ravel() for m in node_mesh], axis=-1)
    weights = np.prod(np.stack([m.ravel() for m in weight_mesh], axis=-1), axis=-1)
    logger.debug(f"Built {spec.scheme} grid with {total} nodes for {modes} mode(s)")
    return PhaseGrid(nodes, weights, spec, modes)


def _node_values(grid: PhaseGrid, f: Integrand) -> np.ndarray:
    values = f(grid.nodes) if callable(f) else f
    values = np.broadcast_to(np.asarray(values, dtype=complex), (grid.size,))
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise QuadratureError(f"Integrand is not finite at node {bad[0]}: {grid.nodes[bad[0]]}", node_index=int(bad[0]))
    return values


def integrate(grid: PhaseGrid, f: Integrand) -> complex:
    """Weighted node sum (numpy's pairwise summation keeps the reduction order fixed)"""
    return complex(np.sum(grid.weights * _node_values(grid, f)))


def resolve_operator(grid: PhaseGrid, config: ModeConfig, f: Integrand) -> np.ndarray:
    """
    Matrix of sum_m w_m f(xi_m) |Omega_xi_m><Omega_xi_m| on the padded basis.

    Assembled in node blocks of Config.GRID_CHUNK so memory stays bounded.
    """
    return resolve_operators(grid, config, [f])[0]


def resolve_operators(grid: PhaseGrid, config: ModeConfig, fs: Sequence[Integrand]) -> List[np.ndarray]:
    """Several resolved operators sharing one pass over the coherent rows"""
    if grid.modes != config.modes:
        raise ConfigError(f"Grid has {grid.modes} modes, configuration has {config.modes}")
    values = [grid.weights * _node_values(grid, f) for f in fs]
    outs = [np.zeros((config.dimension, config.dimension), dtype=complex) for _ in fs]
    for start in range(0, grid.size, Config.GRID_CHUNK):
        stop = min(start + Config.GRID_CHUNK, grid.size)
        rows = coherent_rows(config, grid.nodes[start:stop])
        conj_rows = rows.conj()
        for out, v in zip(outs, values):
            out += rows.T @ (v[start:stop, None] * conj_rows)
    return outs


def plancherel_defect(grid: PhaseGrid, config: ModeConfig) -> float:
    """Spectral-norm distance of the discrete coherent-state resolution from I on |n| <= cutoff"""
    k = config.reported_dimension
    resolution = resolve_operator(grid, config, np.ones(grid.size))[:k, :k]
    return float(np.linalg.norm(resolution - np.eye(k), 2))


def plancherel_sweep(config: ModeConfig, radial_orders: Sequence[int], scheme: str = POLAR_LAGUERRE) -> List[Tuple[int, int, float]]:
    """Defects for K in `radial_orders` with M = 2K + 2"""
    rows = []
    for k in radial_orders:
        spec = QuadratureSpec(k, 2 * k + 2, scheme)
        defect = plancherel_defect(build_grid(config.modes, spec), config)
        logger.info(f"Plancherel defect K={k}, M={spec.angular_order}: {defect:.3e}")
        rows.append((k, spec.angular_order, defect))
    return rows


def quasi_radial_floor(modes: int, scheme: str = POLAR_LAGUERRE) -> int:
    """Config.QUASI_RADIAL_ORDER, lowered until a (K, 2K) grid fits in Config.QUASI_GRID_NODES"""
    k = Config.QUASI_RADIAL_ORDER
    while k > 1 and QuadratureSpec(k, 2 * k, scheme).nodes_per_mode ** modes > Config.QUASI_GRID_NODES:
        k -= 1
    return k


def minimal_spec(config: ModeConfig, extra_degree: int = 0, scheme: str = POLAR_LAGUERRE,
                 quasi: bool = False) -> QuadratureSpec:
    """
    Smallest polar rule integrating every moment needed by the padded basis exactly.

    With `quasi` the radial order is also lifted to quasi_radial_floor, since
    non-polynomial symbols are only resolved to the accuracy of the rule.
    """
    top = config.total_cutoff + extra_degree
    # Laguerre in x = |xi|^2 is exact to x^{2K-1}; Hermite per coordinate to degree 2K-1
    k = (top + 2) // 2 + 1 if scheme == POLAR_LAGUERRE else top + 1
    if quasi:
        k = max(k, quasi_radial_floor(config.modes, scheme))
    return QuadratureSpec(k, max(2 * k, 2 * top + 2), scheme)


def slice_grid_spec(config: ModeConfig, spec: QuadratureSpec) -> QuadratureSpec:
    """Raise K and M of `spec` to what the padded basis and the slice symbols need"""
    floor = minimal_spec(config, scheme=spec.scheme, quasi=True)
    k = max(spec.radial_order, floor.radial_order)
    m = max(spec.angular_order, floor.angular_order, 2 * k)
    if (k, m) != (spec.radial_order, spec.angular_order):
        logger.warning(f"Raised quadrature from K={spec.radial_order}, M={spec.angular_order} to K={k}, M={m}")
    return QuadratureSpec(k, m, spec.scheme)


def fourier_reconstruction(grid: PhaseGrid, alpha: Sequence[complex], coeffs: np.ndarray, config: ModeConfig) -> complex:
    """<Omega_alpha|Psi> rebuilt as the integral of e^{alpha* psi} <Omega_psi|Psi>"""
    alpha = np.asarray(alpha, dtype=complex)
    overlaps = coherent_rows(config, grid.nodes).conj() @ np.asarray(coeffs, dtype=complex)
    return integrate(grid, np.exp(grid.nodes @ alpha.conj()) * overlaps)


def bargmann_projection(grid: PhaseGrid, f: Callable[[np.ndarray], np.ndarray], psi: Sequence[complex]) -> complex:
    """Integral of e^{psi* xi} f(xi*, xi); fixes holomorphic functionals of xi*"""
    psi = np.asarray(psi, dtype=complex)
    return integrate(grid, lambda nodes: np.exp(nodes @ psi.conj()) * f(nodes))
