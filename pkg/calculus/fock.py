"""
Truncated multi-mode bosonic Fock space in the occupation-number representation.

States |n> = |n_1, ..., n_d> with total occupation |n| <= cutoff + pad are kept.
The basis is ordered by total degree, then lexicographically, so the reported
(unpadded) subspace |n| <= cutoff is always a leading block of every vector
and matrix.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import factorial, gammainc

from config import Config
from calculus.errors import ConfigError, InfeasibleError

logger = logging.getLogger(__name__)

MultiIndex = Tuple[int, ...]


@dataclass(frozen=True)
class ModeConfig:
    """Number of modes, reported cutoff, and internal padding of the basis."""
    modes: int
    cutoff: int
    pad: Optional[int] = None

    def __post_init__(self):
        if self.modes < 1:
            raise ConfigError(f"modes must be >= 1, got {self.modes}")
        if self.cutoff < 0:
            raise ConfigError(f"cutoff must be >= 0, got {self.cutoff}")
        if self.pad is None:
            object.__setattr__(self, 'pad', max(4, math.ceil(self.cutoff / 4)))
        if self.pad < 0:
            raise ConfigError(f"pad must be >= 0, got {self.pad}")

    @property
    def total_cutoff(self) -> int:
        return self.cutoff + self.pad

    @property
    def dimension(self) -> int:
        return math.comb(self.total_cutoff + self.modes, self.modes)

    @property
    def reported_dimension(self) -> int:
        return math.comb(self.cutoff + self.modes, self.modes)

    def to_dict(self) -> Dict[str, int]:
        return {'modes': self.modes, 'cutoff': self.cutoff, 'pad': self.pad}


def compositions(total: int, parts: int) -> Iterator[MultiIndex]:
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


class FockBasis:
    """Enumerated basis plus the index <-> position map"""

    def __init__(self, config: ModeConfig):
        if config.dimension > Config.MAX_BASIS_DIMENSION:
            raise InfeasibleError(
                f"Basis dimension {config.dimension} for {config.modes} modes at cutoff "
                f"{config.total_cutoff} exceeds the limit {Config.MAX_BASIS_DIMENSION}"
            )
        self.config = config
        self.states: List[MultiIndex] = [
            n for total in range(config.total_cutoff + 1) for n in compositions(total, config.modes)
        ]
        self.positions: Dict[MultiIndex, int] = {n: i for i, n in enumerate(self.states)}
        self.occupations = np.array(self.states, dtype=np.int64).reshape(len(self.states), config.modes)
        self.occupations.setflags(write=False)
        self.totals = self.occupations.sum(axis=1)
        self.dimension = len(self.states)
        self.reported_dimension = config.reported_dimension

    def index(self, n: Sequence[int]) -> int:
        try:
            return self.positions[tuple(n)]
        except KeyError:
            raise ConfigError(f"Occupation {tuple(n)} is not in the basis of {self.config}") from None


@lru_cache(maxsize=64)
def fock_basis(config: ModeConfig) -> FockBasis:
    basis = FockBasis(config)
    logger.debug(f"Enumerated {basis.dimension} basis states for {config}")
    return basis


def enumerate_basis(config: ModeConfig) -> List[MultiIndex]:
    """Ordered list of all multi-indices with |n| <= cutoff + pad"""
    return list(fock_basis(config).states)


@dataclass(frozen=True, eq=False)
class CoherentAmplitude:
    """Label alpha of the coherent state Omega_alpha"""
    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=complex)).copy()
        if alpha.ndim != 1:
            raise ConfigError("Coherent amplitude must be a one-dimensional vector")
        if not np.all(np.isfinite(alpha)):
            raise ConfigError(f"Coherent amplitude has non-finite entries: {alpha}")
        alpha.setflags(write=False)
        object.__setattr__(self, 'alpha', alpha)

    @classmethod
    def from_pairs(cls, pairs: Sequence[Sequence[float]]) -> 'CoherentAmplitude':
        return cls(np.array([complex(re, im) for re, im in pairs]))

    @property
    def modes(self) -> int:
        return self.alpha.shape[0]

    @property
    def norm_squared(self) -> float:
        return float(np.vdot(self.alpha, self.alpha).real)

    def transformed(self, c: np.ndarray) -> 'CoherentAmplitude':
        return CoherentAmplitude(np.asarray(c) @ self.alpha)


@dataclass(frozen=True, eq=False)
class FockVector:
    coeffs: np.ndarray
    config: ModeConfig
    tail_bound: float = 0.0

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=complex).copy()
        if coeffs.shape != (self.config.dimension,):
            raise ConfigError(f"Vector length {coeffs.shape} does not match basis dimension {self.config.dimension}")
        coeffs.setflags(write=False)
        object.__setattr__(self, 'coeffs', coeffs)

    @property
    def reported(self) -> np.ndarray:
        return self.coeffs[:self.config.reported_dimension]

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))


@dataclass(frozen=True, eq=False)
class FockOperator:
    matrix: np.ndarray
    config: ModeConfig
    hermitian: bool = False
    label: str = field(default='', compare=False)

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=complex).copy()
        dim = self.config.dimension
        if matrix.shape != (dim, dim):
            raise ConfigError(f"Operator shape {matrix.shape} does not match basis dimension {dim}")
        matrix.setflags(write=False)
        object.__setattr__(self, 'matrix', matrix)
        if self.hermitian:
            defect = self.hermiticity_defect()
            if defect > 1e-12:
                raise ConfigError(f"Operator flagged Hermitian has defect {defect:.3e}")

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T), initial=0.0))

    @property
    def reported(self) -> np.ndarray:
        k = self.config.reported_dimension
        return self.matrix[:k, :k]

    def dagger(self) -> 'FockOperator':
        return FockOperator(self.matrix.conj().T, self.config, self.hermitian)

    def apply(self, vector: FockVector) -> FockVector:
        _check_same(self.config, vector.config)
        return FockVector(self.matrix @ vector.coeffs, self.config)

    def __matmul__(self, other: 'FockOperator') -> 'FockOperator':
        _check_same(self.config, other.config)
        return FockOperator(self.matrix @ other.matrix, self.config)

    def __add__(self, other: 'FockOperator') -> 'FockOperator':
        _check_same(self.config, other.config)
        return FockOperator(self.matrix + other.matrix, self.config)

    def __sub__(self, other: 'FockOperator') -> 'FockOperator':
        _check_same(self.config, other.config)
        return FockOperator(self.matrix - other.matrix, self.config)

    def scaled(self, c: complex) -> 'FockOperator':
        return FockOperator(c * self.matrix, self.config)

    def reported_norm(self) -> float:
        """Largest singular value on the unpadded subspace"""
        return float(np.linalg.norm(self.reported, 2))


def _check_same(a: ModeConfig, b: ModeConfig):
    if a != b:
        raise ConfigError(f"Mode configurations differ: {a} vs {b}")


def _check_mode(config: ModeConfig, mode: int):
    if not 0 <= mode < config.modes:
        raise ConfigError(f"Mode {mode} out of range [0, {config.modes - 1}]")


def identity(config: ModeConfig) -> FockOperator:
    return FockOperator(np.eye(config.dimension), config, hermitian=True, label='I')


@lru_cache(maxsize=128)
def _creation_array(config: ModeConfig, mode: int) -> np.ndarray:
    basis = fock_basis(config)
    op = np.zeros((basis.dimension, basis.dimension), dtype=complex)
    for i, state in enumerate(basis.states):
        if basis.totals[i] >= config.total_cutoff:
            continue  # a† leaves the padded basis
        target = list(state)
        target[mode] += 1
        op[basis.positions[tuple(target)], i] = np.sqrt(state[mode] + 1)
    op.setflags(write=False)
    return op


def creation_matrix(config: ModeConfig, mode: int) -> FockOperator:
    """
    Creation operator a†_mode on the padded basis.

    a†|n> = sqrt(n_mode + 1)|n + e_mode>, dropping states past cutoff + pad.
    """
    _check_mode(config, mode)
    return FockOperator(_creation_array(config, mode), config, label=f'a+_{mode}')


def annihilation_matrix(config: ModeConfig, mode: int) -> FockOperator:
    """Annihilation operator, built as the conjugate transpose of the creation matrix"""
    _check_mode(config, mode)
    return FockOperator(_creation_array(config, mode).conj().T, config, label=f'a_{mode}')


def number_matrix(config: ModeConfig, mode: Optional[int] = None) -> FockOperator:
    basis = fock_basis(config)
    diag = basis.totals if mode is None else basis.occupations[:, mode]
    return FockOperator(np.diag(diag.astype(complex)), config, hermitian=True)


def vacuum(config: ModeConfig) -> FockVector:
    coeffs = np.zeros(config.dimension, dtype=complex)
    coeffs[0] = 1.0
    return FockVector(coeffs, config)


def number_state(config: ModeConfig, n: Sequence[int]) -> FockVector:
    coeffs = np.zeros(config.dimension, dtype=complex)
    coeffs[fock_basis(config).index(n)] = 1.0
    return FockVector(coeffs, config)


def _as_amplitude(config: ModeConfig, alpha) -> CoherentAmplitude:
    amp = alpha if isinstance(alpha, CoherentAmplitude) else CoherentAmplitude(alpha)
    if amp.modes != config.modes:
        raise ConfigError(f"Amplitude has {amp.modes} modes, configuration has {config.modes}")
    return amp


def creation_combination(config: ModeConfig, alpha) -> FockOperator:
    """q+(alpha) = sum_j alpha_j a†_j"""
    amp = _as_amplitude(config, alpha)
    matrix = sum(amp.alpha[j] * _creation_array(config, j) for j in range(config.modes))
    return FockOperator(matrix, config)


def hermite_monomial(config: ModeConfig, alpha, n: int) -> FockVector:
    """q+(alpha)^n applied to the vacuum"""
    if n < 0 or n > config.cutoff:
        raise ConfigError(f"Hermite order {n} outside [0, {config.cutoff}]")
    op = creation_combination(config, alpha)
    coeffs = vacuum(config).coeffs
    for _ in range(n):
        coeffs = op.matrix @ coeffs
    return FockVector(coeffs, config)


def safe_radius_squared(config: ModeConfig) -> float:
    return Config.SAFE_RADIUS_FRACTION * config.cutoff


def check_safe_radius(config: ModeConfig, alpha, radius_squared: Optional[float] = None) -> CoherentAmplitude:
    amp = _as_amplitude(config, alpha)
    limit = safe_radius_squared(config) if radius_squared is None else radius_squared
    if amp.norm_squared > limit + 1e-15:
        raise InfeasibleError(
            f"Coherent amplitude |alpha|^2 = {amp.norm_squared:.4g} exceeds the safe radius {limit:.4g} "
            f"for cutoff {config.cutoff}"
        )
    return amp


def coherent_tail_bound(config: ModeConfig, alpha) -> float:
    """Squared norm of Omega_alpha carried by states beyond the padded cutoff"""
    x = _as_amplitude(config, alpha).norm_squared
    if x == 0.0:
        return 0.0
    return float(np.exp(x) * gammainc(config.total_cutoff + 1, x))


def coherent_rows(config: ModeConfig, nodes: np.ndarray) -> np.ndarray:
    """
    Coefficients of Omega_xi for every row xi of `nodes` (shape (N, d)).

    Row k holds prod_j xi_j^{n_j} / sqrt(n_j!) over the basis states.
    """
    basis = fock_basis(config)
    nodes = np.asarray(nodes, dtype=complex).reshape(-1, config.modes)
    levels = np.arange(config.total_cutoff + 1)
    scale = 1.0 / np.sqrt(factorial(levels))
    rows = np.ones((nodes.shape[0], basis.dimension), dtype=complex)
    for j in range(config.modes):
        table = nodes[:, j, None] ** levels[None, :] * scale[None, :]
        rows *= table[:, basis.occupations[:, j]]
    return rows


def coherent_vector(config: ModeConfig, alpha, check_radius: bool = True) -> FockVector:
    """Non-normalized coherent state Omega_alpha (the n = 0 term included)"""
    amp = check_safe_radius(config, alpha) if check_radius else _as_amplitude(config, alpha)
    coeffs = coherent_rows(config, amp.alpha[None, :])[0]
    return FockVector(coeffs, config, tail_bound=coherent_tail_bound(config, amp))


def inner_product(x: FockVector, y: FockVector) -> complex:
    """<x|y>, antilinear in x"""
    _check_same(x.config, y.config)
    return complex(np.vdot(x.coeffs, y.coeffs))


@lru_cache(maxsize=32)
def _sobolev_weights(config: ModeConfig, s: float, h_spectrum: Tuple[float, ...], radial_points: int) -> np.ndarray:
    # Angular integrals are exact (number states stay orthogonal under the
    # phase-invariant weight); only the radial variables are discretized.
    basis = fock_basis(config)
    nodes_count = radial_points ** config.modes
    if nodes_count > Config.MAX_GRID_NODES:
        raise InfeasibleError(f"Radial grid of {nodes_count} nodes exceeds {Config.MAX_GRID_NODES}")
    top = config.total_cutoff
    reach = np.sqrt(top + 0.5) + 9.0
    t, w = leggauss(radial_points)
    r = 0.5 * reach * (t + 1.0)
    w = 0.5 * reach * w
    levels = np.arange(top + 1)
    # w * 2 r^{2n+1} e^{-r^2} / n!, assembled in logs to stay finite
    log_r = np.log(r)
    log_table = (
        np.log(2.0 * w)[:, None] + (2 * levels[None, :] + 1) * log_r[:, None]
        - r[:, None] ** 2 - np.cumsum(np.log(np.maximum(levels, 1)))[None, :]
    )
    table = np.exp(log_table)

    mesh = np.meshgrid(*([r] * config.modes), indexing='ij')
    minus_norm = np.sqrt(sum(m ** 2 / (1.0 + h) for m, h in zip(mesh, h_spectrum)))
    tensor = (1.0 + minus_norm) ** s
    for _ in range(config.modes):
        tensor = np.tensordot(tensor, table, axes=([0], [0]))
    return tensor[tuple(basis.occupations.T)]


def sobolev_diagnostic_norm(x: FockVector, s: float, h_spectrum: Optional[Sequence[float]] = None,
                            radial_points: int = 96) -> float:
    """
    Squared weighted norm: integral of (1 + |psi|_-)^s |Psi(psi*)|^2 e^{-psi* psi}.

    |psi|_-^2 = sum_j |psi_j|^2 / (1 + h_j). With s = 0 this is |x|^2.
    """
    h = tuple(float(v) for v in (h_spectrum if h_spectrum is not None else [0.0] * x.config.modes))
    if len(h) != x.config.modes:
        raise ConfigError(f"h_spectrum has {len(h)} entries for {x.config.modes} modes")
    if any(v < 0 for v in h):
        raise ConfigError(f"h_spectrum entries must be non-negative: {h}")
    weights = _sobolev_weights(x.config, float(s), h, radial_points)
    return float(np.sum(np.abs(x.coeffs) ** 2 * weights))


def sobolev_weights(config: ModeConfig, s: float, h_spectrum: Optional[Sequence[float]] = None,
                    radial_points: int = 96) -> np.ndarray:
    """Squared diagnostic norms of the basis states"""
    h = tuple(float(v) for v in (h_spectrum if h_spectrum is not None else [0.0] * config.modes))
    return _sobolev_weights(config, float(s), h, radial_points).copy()
