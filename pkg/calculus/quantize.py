"""
Antiwick quantization A -> Q(A) on the padded Fock basis.

Polynomial symbols are quantized exactly by anti-normal ladder products
(c psi*^k psi^l -> c a^l a+^k); any symbol can be quantized by quadrature,
Q(A) = integral of A(xi) |Omega_xi><Omega_xi| e^{-xi* xi}.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np

from config import Config
from calculus.errors import ConfigError, InfeasibleError, QuadratureError, SymbolError
from calculus.fock import (
    FockOperator, ModeConfig, _creation_array, check_safe_radius, coherent_vector, fock_basis,
)
from calculus.quadrature import PhaseGrid, build_grid, minimal_spec, resolve_operators
from calculus.symbols import PolySymbol, Symbol

logger = logging.getLogger(__name__)


@lru_cache(maxsize=256)
def _ladder_power(config: ModeConfig, mode: int, power: int, creation: bool) -> np.ndarray:
    base = _creation_array(config, mode)
    if not creation:
        base = base.conj().T
    out = np.linalg.matrix_power(base, power)
    out.setflags(write=False)
    return out


def _hermitian_part(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.conj().T)


def quantize_poly(symbol: PolySymbol, config: ModeConfig) -> FockOperator:
    """Exact Q(A) for a polynomial symbol: annihilators left of creators"""
    if symbol.modes != config.modes:
        raise ConfigError(f"Symbol has {symbol.modes} modes, configuration has {config.modes}")
    if symbol.antiholomorphic_degree > config.pad:
        raise InfeasibleError(
            f"Symbol raises occupation by {symbol.antiholomorphic_degree} but the basis pad is {config.pad}; "
            f"the truncation edge would reach the reported subspace"
        )
    dim = config.dimension
    out = np.zeros((dim, dim), dtype=complex)
    for (k, l), c in symbol.terms.items():
        term = np.eye(dim, dtype=complex)
        for j in range(config.modes):
            if l[j]:
                term = term @ _ladder_power(config, j, l[j], False)
        for j in range(config.modes):
            if k[j]:
                term = term @ _ladder_power(config, j, k[j], True)
        out += c * term
    real = symbol.is_real(tol=1e-14 * max((abs(c) for c in symbol.terms.values()), default=1.0))
    if real:
        out = _hermitian_part(out)
    logger.debug(f"Quantized {len(symbol.terms)} term(s) on a basis of dimension {dim}")
    return FockOperator(out, config, hermitian=real, label=symbol.to_text())


def identity_defect(matrix: np.ndarray) -> float:
    return float(np.max(np.abs(matrix - np.eye(matrix.shape[0])), initial=0.0))


def quantize_quadrature(symbol: Symbol, grid: PhaseGrid, config: ModeConfig, self_test: bool = True) -> FockOperator:
    """
    Q(A) with <m|Q|n> = sum_i w_i A(xi_i) xi_i^m conj(xi_i)^n / sqrt(m! n!).

    The same grid first resolves the identity; a defect above
    Config.IDENTITY_DEFECT_TOL means the grid is too coarse for the basis.
    """
    if symbol.modes != config.modes:
        raise ConfigError(f"Symbol has {symbol.modes} modes, configuration has {config.modes}")
    values = np.asarray(symbol.evaluate(grid.nodes), dtype=complex).reshape(-1)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise SymbolError(f"Symbol is not finite at node {bad[0]}: {grid.nodes[bad[0]]}")
    if self_test:
        resolved_identity, matrix = resolve_operators(grid, config, [np.ones(grid.size), values])
        defect = identity_defect(resolved_identity)
        if defect > Config.IDENTITY_DEFECT_TOL:
            required = minimal_spec(config, scheme=grid.spec.scheme).radial_order
            raise QuadratureError(
                f"Grid K={grid.spec.radial_order}, M={grid.spec.angular_order} resolves the identity with defect "
                f"{defect:.3e}; use radial order >= {required}",
                required_order=required,
            )
    else:
        matrix = resolve_operators(grid, config, [values])[0]
    scale = float(np.max(np.abs(values), initial=0.0))
    real = scale == 0.0 or float(np.max(np.abs(values.imag))) <= 1e-14 * scale
    if real:
        matrix = _hermitian_part(matrix)
    return FockOperator(matrix, config, hermitian=real, label=getattr(symbol, 'label', ''))


def quantize(symbol: Symbol, config: ModeConfig, grid: Optional[PhaseGrid] = None) -> FockOperator:
    """Exact route for polynomials, quadrature otherwise (a quasi-resolving minimal grid when none is given)"""
    if isinstance(symbol, PolySymbol):
        return quantize_poly(symbol, config)
    if grid is None:
        grid = build_grid(config.modes, minimal_spec(config, extra_degree=8, quasi=True))
    return quantize_quadrature(symbol, grid, config)


def coherent_matrix_element(operator: FockOperator, alpha, beta) -> complex:
    """<Omega_alpha|Q|Omega_beta> on the padded basis"""
    left = coherent_vector(operator.config, alpha)
    right = coherent_vector(operator.config, beta)
    return complex(np.vdot(left.coeffs, operator.matrix @ right.coeffs))


def wick_symbol_of(operator: FockOperator, psi) -> complex:
    """Normal symbol <Omega_psi|Q|Omega_psi> e^{-psi* psi}"""
    amp = check_safe_radius(operator.config, psi)
    return coherent_matrix_element(operator, amp, amp) * np.exp(-amp.norm_squared)


def wick_symbol_samples(operator: FockOperator, points: Sequence[Sequence[complex]]) -> np.ndarray:
    return np.array([wick_symbol_of(operator, p) for p in points], dtype=complex)


@dataclass
class NormBoundReport:
    operator_norm: float
    symbol_sup: float
    min_rayleigh: Optional[float]
    symbol_inf: Optional[float]
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            'operator_norm': self.operator_norm, 'symbol_sup': self.symbol_sup,
            'min_rayleigh': self.min_rayleigh, 'symbol_inf': self.symbol_inf,
            'tolerance': self.tolerance, 'passed': self.passed,
        }


def norm_bound_check(symbol: Symbol, operator: FockOperator, grid: PhaseGrid,
                     lower_bound: Optional[float] = None, tol: float = 1e-9) -> NormBoundReport:
    """
    ||Q(A)|| <= sup |A| and, for real A >= c, <x|Q(A)|x> >= c |x|^2.

    Both sides are measured on the unpadded subspace; sup and inf of A are
    sampled on the grid nodes unless `lower_bound` fixes c.
    """
    values = np.asarray(symbol.evaluate(grid.nodes), dtype=complex)
    block = operator.reported
    op_norm = float(np.linalg.norm(block, 2))
    sup = float(np.max(np.abs(values)))
    passed = op_norm <= sup + tol
    min_rayleigh = inf = None
    if operator.hermitian or float(np.max(np.abs(values.imag))) <= 1e-14 * max(sup, 1.0):
        min_rayleigh = float(np.linalg.eigvalsh(_hermitian_part(block))[0])
        inf = float(np.min(values.real)) if lower_bound is None else float(lower_bound)
        passed = passed and min_rayleigh >= inf - tol
    report = NormBoundReport(op_norm, sup, min_rayleigh, inf, tol, passed)
    logger.info(f"Norm bound: ||Q|| = {op_norm:.6g} vs sup|A| = {sup:.6g}; passed={passed}")
    return report


def product_kernel_element(b: Symbol, c: Symbol, alpha, beta, grid: PhaseGrid) -> complex:
    """
    <Omega_alpha|Q(B)Q(C)|Omega_beta> e^{-beta* beta} as a double phase-space integral.

    The inner overlap <Omega_xi2|Omega_xi1> = e^{xi2* xi1} couples the two grids;
    angular aliasing of that kernel falls off like 2^{-M}.
    """
    alpha = np.asarray(alpha, dtype=complex).reshape(grid.modes)
    beta = np.asarray(beta, dtype=complex).reshape(grid.modes)
    nodes = grid.nodes
    outer = grid.weights * np.asarray(b.evaluate(nodes)) * np.exp(nodes @ alpha.conj())
    inner = grid.weights * np.asarray(c.evaluate(nodes)) * np.exp(nodes.conj() @ beta)
    total = 0.0 + 0.0j
    for start in range(0, grid.size, Config.GRID_CHUNK):
        stop = min(start + Config.GRID_CHUNK, grid.size)
        kernel = np.exp(nodes[start:stop].conj() @ nodes.T)
        total += outer[start:stop] @ (kernel @ inner)
    return complex(total * np.exp(-np.vdot(beta, beta).real))


def weighted_operator_norm(operator: Union[FockOperator, np.ndarray], config: ModeConfig, rho: float) -> float:
    """||X diag((1 + |n|)^{-rho})||_2 on the unpadded subspace"""
    matrix = operator.matrix if isinstance(operator, FockOperator) else np.asarray(operator)
    k = config.reported_dimension
    totals = fock_basis(config).totals[:k]
    weights = (1.0 + totals) ** (-float(rho))
    return float(np.linalg.norm(matrix[:k, :k] * weights[None, :], 2))
