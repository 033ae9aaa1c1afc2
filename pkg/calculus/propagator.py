"""
Time-sliced coherent-state propagators.

The kernel <Omega_alpha| U |Omega_beta> e^{-beta* beta} of U = e^{-iQ(A)t} is
approached by n-th powers of quantized slice symbols, either the exponential
slice e^{-iAt/n} or the resolvent slice (1 + iAt/n)^{-1}.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import Config
from calculus.errors import ConfigError, InfeasibleError
from calculus.fock import (
    CoherentAmplitude, FockOperator, ModeConfig, check_safe_radius, coherent_tail_bound, coherent_vector, identity,
)
from calculus.quadrature import PhaseGrid, QuadratureSpec, build_grid, slice_grid_spec
from calculus.quantize import quantize, quantize_quadrature, weighted_operator_norm
from calculus.symbols import PolySymbol, QuasiSymbol, Symbol

logger = logging.getLogger(__name__)

EXPONENTIAL = 'exponential'
RESOLVENT = 'resolvent'

DEFAULT_SLICE_SPEC = QuadratureSpec(128, 256)


@dataclass(frozen=True)
class SliceScheme:
    kind: str = EXPONENTIAL

    def __post_init__(self):
        if self.kind not in (EXPONENTIAL, RESOLVENT):
            raise ConfigError(f"Unknown slice scheme {self.kind!r}; expected {EXPONENTIAL!r} or {RESOLVENT!r}")

    def slice_symbol(self, symbol: Symbol, t: float, n: int) -> QuasiSymbol:
        """e^{-iAt/n} or (1 + iAt/n)^{-1}; both have modulus <= 1 for real A"""
        eps = t / n

        def real_values(nodes: np.ndarray) -> np.ndarray:
            return np.asarray(symbol.evaluate(nodes)).real

        if self.kind == EXPONENTIAL:
            evaluator = lambda nodes: np.exp(-1j * eps * real_values(nodes))
        else:
            evaluator = lambda nodes: 1.0 / (1.0 + 1j * eps * real_values(nodes))
        return QuasiSymbol(evaluator, 0.0, symbol.modes, label=f"{self.kind}[t={t}, n={n}]")


def _is_real(symbol: Symbol) -> bool:
    if isinstance(symbol, PolySymbol):
        scale = max((abs(c) for c in symbol.terms.values()), default=1.0)
        return symbol.is_real(tol=1e-14 * scale)
    return True


@dataclass
class EvolutionJob:
    symbol: Symbol
    t: float
    n_list: Sequence[int]
    alpha: CoherentAmplitude
    beta: CoherentAmplitude
    config: ModeConfig
    grid: QuadratureSpec = DEFAULT_SLICE_SPEC
    scheme: SliceScheme = field(default_factory=SliceScheme)
    label: str = ''

    def __post_init__(self):
        if not isinstance(self.alpha, CoherentAmplitude):
            self.alpha = CoherentAmplitude(self.alpha)
        if not isinstance(self.beta, CoherentAmplitude):
            self.beta = CoherentAmplitude(self.beta)
        if isinstance(self.scheme, str):
            self.scheme = SliceScheme(self.scheme)
        self.n_list = [int(n) for n in self.n_list]
        if not self.n_list:
            raise ConfigError("n_list must not be empty")
        if self.n_list[0] < 1 or any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise ConfigError(f"n_list must be strictly increasing positive integers, got {self.n_list}")
        if self.symbol.modes != self.config.modes:
            raise ConfigError(f"Symbol has {self.symbol.modes} modes, configuration has {self.config.modes}")
        if not _is_real(self.symbol):
            raise ConfigError("Evolution needs a real-valued symbol (Hermitian generator)")
        check_safe_radius(self.config, self.alpha)
        check_safe_radius(self.config, self.beta)

    def with_changes(self, **changes) -> 'EvolutionJob':
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return EvolutionJob(**values)


@dataclass
class PropagatorResult:
    exact_value: complex
    sliced_values: Dict[int, complex]
    errors: Dict[int, float]
    fitted_rate: Optional[float]
    fit_residual: Optional[float]
    truncation_report: Dict[str, float]
    scheme: str
    t: float

    def rows(self) -> List[Tuple[int, complex, complex, float]]:
        return [(n, self.sliced_values[n], self.exact_value, self.errors[n]) for n in sorted(self.sliced_values)]

    def fit_passed(self, residual_tol: Optional[float] = None) -> bool:
        tol = Config.FIT_RESIDUAL_TOL if residual_tol is None else residual_tol
        return self.fit_residual is not None and self.fit_residual < tol


def exact_propagator(operator: FockOperator, t: float) -> FockOperator:
    """e^{-iQt} by eigendecomposition of the Hermitian matrix Q"""
    defect = operator.hermiticity_defect()
    if defect > Config.HERMITIAN_TOL:
        raise ConfigError(f"Generator is not Hermitian (defect {defect:.3e})")
    if t == 0:
        return identity(operator.config)
    matrix = 0.5 * (operator.matrix + operator.matrix.conj().T)
    evals, evecs = np.linalg.eigh(matrix)
    unitary = (evecs * np.exp(-1j * evals * t)[None, :]) @ evecs.conj().T
    return FockOperator(unitary, operator.config, label=f"exp(-i t Q), t={t}")


def slice_grid(config: ModeConfig, spec: QuadratureSpec) -> PhaseGrid:
    return build_grid(config.modes, slice_grid_spec(config, spec))


def slice_operator(symbol: Symbol, t: float, n: int, scheme: Union[SliceScheme, str],
                   grid: Union[PhaseGrid, QuadratureSpec], config: ModeConfig) -> FockOperator:
    """Q of the slice symbol, quantized by quadrature"""
    if isinstance(scheme, str):
        scheme = SliceScheme(scheme)
    if n < 1:
        raise ConfigError(f"Slice count must be >= 1, got {n}")
    if not _is_real(symbol):
        raise ConfigError("Slices need a real-valued symbol")
    if t == 0:
        return identity(config)
    if isinstance(grid, QuadratureSpec):
        grid = slice_grid(config, grid)
    return quantize_quadrature(scheme.slice_symbol(symbol, t, n), grid, config)


def fit_rate(ns: Sequence[int], errors: Sequence[float]) -> Tuple[float, float]:
    """
    Least-squares slope of log error against log n over the last ceil(len/2) points.

    Returns (slope, rms residual of the fit in log space).
    """
    if len(ns) < 3:
        raise ConfigError(f"Rate fit needs at least 3 slice counts, got {len(ns)}")
    count = math.ceil(len(ns) / 2)
    x = np.log(np.asarray(ns[-count:], dtype=float))
    errs = np.asarray(errors[-count:], dtype=float)
    if np.any(errs <= 0):
        raise ConfigError("Rate fit needs positive errors")
    y = np.log(errs)
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return float(slope), residual


class PropagatorPipeline:
    """
    Shared state for one evolution job.

    `sliced_value(n)` for different n are independent and may run on worker
    threads; `result(values)` merges them in n order.
    """

    def __init__(self, job: EvolutionJob):
        self.job = job
        self.config = job.config
        self.left = coherent_vector(job.config, job.alpha)
        self.right = coherent_vector(job.config, job.beta)
        self.kernel_factor = float(np.exp(-job.beta.norm_squared))
        self._grid: Optional[PhaseGrid] = None

    @property
    def grid(self) -> PhaseGrid:
        if self._grid is None:
            self._grid = slice_grid(self.config, self.job.grid)
        return self._grid

    def kernel(self, coeffs: np.ndarray) -> complex:
        return complex(np.vdot(self.left.coeffs, coeffs)) * self.kernel_factor

    def exact_value(self) -> complex:
        job = self.job
        if job.t == 0:
            return self.kernel(self.right.coeffs)
        generator = quantize(job.symbol, self.config, None if isinstance(job.symbol, PolySymbol) else self.grid)
        unitary = exact_propagator(generator, job.t)
        return self.kernel(unitary.matrix @ self.right.coeffs)

    def sliced_value(self, n: int) -> complex:
        job = self.job
        if job.t == 0:
            return self.kernel(self.right.coeffs)
        op = slice_operator(job.symbol, job.t, n, job.scheme, self.grid, self.config)
        vector = self.right.coeffs
        for _ in range(n):
            vector = op.matrix @ vector
        logger.info(f"{job.scheme.kind} slices n={n} done")
        return self.kernel(vector)

    def truncation_report(self, exact: complex) -> Dict[str, float]:
        tail_alpha = coherent_tail_bound(self.config, self.job.alpha)
        tail_beta = coherent_tail_bound(self.config, self.job.beta)
        bound = (np.sqrt(tail_alpha) * self.right.norm() + np.sqrt(tail_beta) * self.left.norm()) * self.kernel_factor
        roundoff = 64 * np.finfo(float).eps * self.config.dimension * max(1.0, abs(exact))
        return {
            'tail_alpha': float(tail_alpha), 'tail_beta': float(tail_beta),
            'estimate': float(bound + roundoff), 'dimension': float(self.config.dimension),
        }

    def result(self, exact: complex, values: Dict[int, complex]) -> PropagatorResult:
        job = self.job
        ns = sorted(values)
        errors = {n: float(abs(values[n] - exact)) for n in ns}
        slope = residual = None
        if job.t != 0 and len(ns) >= 3:
            slope, residual = fit_rate(ns, [errors[n] for n in ns])
            logger.info(f"Fitted rate {slope:.4f} (residual {residual:.3e}) for {job.scheme.kind} slices")
        return PropagatorResult(exact, {n: values[n] for n in ns}, errors, slope, residual,
                                self.truncation_report(exact), job.scheme.kind, job.t)


def sliced_propagator_element(job: EvolutionJob) -> PropagatorResult:
    pipeline = PropagatorPipeline(job)
    exact = pipeline.exact_value()
    values = {n: pipeline.sliced_value(n) for n in job.n_list}
    return pipeline.result(exact, values)


def discrete_action(path: np.ndarray, symbol: Symbol, t: float, include_boundary_phase: bool = False) -> np.ndarray:
    """
    Exponent of the time-sliced integrand for paths psi_0 = beta, ..., psi_{n+1} = alpha.

    sum_{j=0}^{n} [(psi_{j+1} - psi_j)* psi_j - i A(psi_j) t/n], where the j = 0
    phase term is kept only with `include_boundary_phase`. `path` has shape
    (..., n + 2, d).
    """
    path = np.asarray(path, dtype=complex)
    n = path.shape[-2] - 2
    if n < 1:
        raise ConfigError("A path needs at least one intermediate point")
    eps = t / n
    step = path[..., 1:, :] - path[..., :-1, :]
    kinetic = np.sum(step.conj() * path[..., :-1, :], axis=(-2, -1))
    first = 0 if include_boundary_phase else 1
    points = path[..., first:n + 1, :]
    values = np.asarray(symbol.evaluate(points.reshape(-1, symbol.modes))).real.reshape(points.shape[:-1])
    return kinetic - 1j * eps * np.sum(values, axis=-1)


def path_integral_direct(symbol: Symbol, t: float, n: int, alpha, beta, grid: PhaseGrid,
                         include_boundary_phase: bool = False) -> complex:
    """
    Nested quadrature of the n-fold phase-space integral for the propagator kernel.

    The Gaussians e^{-psi_j* psi_j} of the intermediate points live in the grid
    weights; the remaining factor e^{psi_{j+1}* psi_j - iA(psi_j)t/n} is applied
    as a transfer matrix between consecutive time slices.
    """
    if not 1 <= n <= 3:
        raise InfeasibleError(f"Direct path integrals are limited to n <= 3 slices, got {n}")
    work = n * grid.size ** 2
    if work > Config.MAX_GRID_NODES * 100:
        raise InfeasibleError(f"Path integral needs {work} kernel evaluations, limit {Config.MAX_GRID_NODES * 100}")
    alpha = np.asarray(alpha.alpha if isinstance(alpha, CoherentAmplitude) else alpha, dtype=complex).reshape(grid.modes)
    beta = np.asarray(beta.alpha if isinstance(beta, CoherentAmplitude) else beta, dtype=complex).reshape(grid.modes)
    nodes = grid.nodes
    eps = t / n
    phase = np.exp(-1j * eps * np.asarray(symbol.evaluate(nodes)).real)
    local = grid.weights * phase

    vector = local * np.exp(nodes.conj() @ beta)
    for _ in range(n - 1):
        nxt = np.empty_like(vector)
        for start in range(0, grid.size, Config.GRID_CHUNK):
            stop = min(start + Config.GRID_CHUNK, grid.size)
            nxt[start:stop] = np.exp(nodes[start:stop].conj() @ nodes.T) @ vector
        vector = local * nxt
    value = complex(np.exp(nodes @ alpha.conj()) @ vector)
    value *= np.exp(-np.vdot(beta, beta).real)
    if include_boundary_phase:
        value *= np.exp(-1j * eps * complex(symbol.evaluate(beta)).real)
    return value


@dataclass
class TelescopingGap:
    n: int
    resolvent_gap: float
    exponential_gap: float
    rho: float


def telescoping_gap(symbol: Symbol, t: float, n: int, config: ModeConfig,
                    grid: Union[PhaseGrid, QuadratureSpec], rho: Optional[float] = None) -> TelescopingGap:
    """
    Distances of Q(A_{t/n})^n from (1 + iQ(A)t/n)^{-n} and from Q(e^{-iAt/n})^n.

    Measured in the weighted norm ||X diag((1+|n|)^{-rho})|| on the unpadded
    subspace, rho defaulting to the symbol order.
    """
    rho = symbol.order if rho is None else rho
    if t == 0:
        return TelescopingGap(n, 0.0, 0.0, rho)
    if isinstance(grid, QuadratureSpec):
        grid = slice_grid(config, grid)
    resolvent = slice_operator(symbol, t, n, RESOLVENT, grid, config).matrix
    exponential = slice_operator(symbol, t, n, EXPONENTIAL, grid, config).matrix
    generator = quantize(symbol, config, None if isinstance(symbol, PolySymbol) else grid).matrix
    dim = config.dimension
    operator_resolvent = np.linalg.solve(np.eye(dim) + 1j * (t / n) * generator, np.eye(dim))

    powered = np.linalg.matrix_power(resolvent, n)
    gap_r = weighted_operator_norm(powered - np.linalg.matrix_power(operator_resolvent, n), config, rho)
    gap_e = weighted_operator_norm(powered - np.linalg.matrix_power(exponential, n), config, rho)
    logger.info(f"Telescoping gaps n={n}: resolvent {gap_r:.4e}, exponential {gap_e:.4e}")
    return TelescopingGap(n, gap_r, gap_e, rho)


@dataclass
class SubstitutionResult:
    mismatches: Dict[int, float]
    exact_mismatch: float
    original: PropagatorResult
    transformed: PropagatorResult


def check_unitary(c: np.ndarray, modes: int) -> np.ndarray:
    c = np.asarray(c, dtype=complex)
    if c.shape != (modes, modes):
        raise ConfigError(f"Mode mixing matrix has shape {c.shape}, expected {(modes, modes)}")
    defect = float(np.max(np.abs(c.conj().T @ c - np.eye(modes))))
    if defect > Config.UNITARY_CHECK_TOL:
        raise ConfigError(f"Mode mixing matrix is not unitary (defect {defect:.3e})")
    return c


def beamsplitter(theta: float = math.pi / 4, phi: float = 0.0) -> np.ndarray:
    """Two-mode unitary mixing; theta = pi/4 is the balanced beamsplitter"""
    return np.array([
        [math.cos(theta), -np.exp(-1j * phi) * math.sin(theta)],
        [np.exp(1j * phi) * math.sin(theta), math.cos(theta)],
    ], dtype=complex)


def substitution_check(job: EvolutionJob, c: np.ndarray) -> SubstitutionResult:
    """
    Compare the job with its image under psi -> c psi.

    The transformed job evolves A o c^{-1} = A(c+ psi) between c alpha and c beta;
    the substitution rule predicts identical kernels.
    """
    c = check_unitary(c, job.config.modes)
    transformed_symbol = job.symbol.substitute(c.conj().T)
    transformed = job.with_changes(
        symbol=transformed_symbol, alpha=job.alpha.transformed(c), beta=job.beta.transformed(c),
        label=f"{job.label} (substituted)",
    )
    original_result = sliced_propagator_element(job)
    transformed_result = sliced_propagator_element(transformed)
    mismatches = {
        n: float(abs(original_result.sliced_values[n] - transformed_result.sliced_values[n])) for n in job.n_list
    }
    exact_mismatch = float(abs(original_result.exact_value - transformed_result.exact_value))
    logger.info(f"Substitution mismatches: {mismatches}")
    return SubstitutionResult(mismatches, exact_mismatch, original_result, transformed_result)
