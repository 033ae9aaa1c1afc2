"""
Phase-space symbols A(psi*, psi) and their calculus.

PolySymbol stores the coefficient map c[(k, l)] of A = sum c psi*^k psi^l
exactly; QuasiSymbol wraps a vectorized evaluator with a declared growth order
and optional closed-form derivatives. Both evaluate on a single point of shape
(d,) or on a batch of nodes of shape (N, d).
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import Config
from calculus.errors import ConfigError, SymbolError
from calculus.fock import MultiIndex, compositions

logger = logging.getLogger(__name__)

HOLOMORPHIC = 'holomorphic'          # d/d psi_j
ANTIHOLOMORPHIC = 'antiholomorphic'  # d/d psi*_j

TermKey = Tuple[MultiIndex, MultiIndex]
Evaluator = Callable[[np.ndarray], np.ndarray]


def _as_nodes(psi, modes: int) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(psi, dtype=complex)
    single = arr.ndim <= 1
    nodes = arr.reshape(-1, modes) if arr.size else arr.reshape(0, modes)
    if nodes.shape[1] != modes:
        raise ConfigError(f"Point has {nodes.shape[1]} components, symbol has {modes} modes")
    if single and nodes.shape[0] != 1:
        raise ConfigError(f"Expected a point with {modes} components, got shape {arr.shape}")
    return nodes, single


def _falling(n: int, k: int) -> int:
    return math.perm(n, k) if n >= k else 0


def _multi_factorial(index: Iterable[int]) -> int:
    return math.prod(math.factorial(i) for i in index)


def _unit(modes: int, j: int) -> MultiIndex:
    return tuple(1 if m == j else 0 for m in range(modes))


def _add(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    return tuple(x + y for x, y in zip(a, b))


def _minus_norm(nodes: np.ndarray, h_spectrum: Optional[Sequence[float]]) -> np.ndarray:
    if h_spectrum is None:
        return np.linalg.norm(nodes, axis=1)
    h = np.asarray(h_spectrum, dtype=float)
    return np.sqrt(np.sum(np.abs(nodes) ** 2 / (1.0 + h[None, :]), axis=1))


class PolySymbol:
    """Polynomial symbol A = sum_{k,l} c_{k,l} psi*^k psi^l over `modes` modes."""

    def __init__(self, terms: Dict[TermKey, complex], modes: int):
        if modes < 1:
            raise ConfigError(f"modes must be >= 1, got {modes}")
        cleaned: Dict[TermKey, complex] = {}
        for (k, l), c in terms.items():
            k, l = tuple(int(v) for v in k), tuple(int(v) for v in l)
            if len(k) != modes or len(l) != modes or min(k + l) < 0:
                raise ConfigError(f"Term exponents {k}, {l} do not fit {modes} modes")
            c = complex(c)
            if not np.isfinite(c):
                raise SymbolError(f"Non-finite coefficient {c} for term {k}, {l}")
            if c != 0:
                cleaned[(k, l)] = cleaned.get((k, l), 0) + c
        self._terms = {key: c for key, c in sorted(cleaned.items()) if c != 0}
        self.modes = modes

    # Constructors

    @classmethod
    def constant(cls, value: complex, modes: int = 1) -> 'PolySymbol':
        zero = (0,) * modes
        return cls({(zero, zero): value}, modes)

    @classmethod
    def monomial(cls, k: Sequence[int], l: Sequence[int], coeff: complex = 1.0) -> 'PolySymbol':
        if len(k) != len(l):
            raise ConfigError(f"Exponents {k} and {l} differ in length")
        return cls({(tuple(k), tuple(l)): coeff}, len(k))

    @classmethod
    def psi(cls, mode: int, modes: int = 1) -> 'PolySymbol':
        return cls.monomial((0,) * modes, _unit(modes, mode))

    @classmethod
    def psi_star(cls, mode: int, modes: int = 1) -> 'PolySymbol':
        return cls.monomial(_unit(modes, mode), (0,) * modes)

    @classmethod
    def number(cls, mode: int, modes: int = 1) -> 'PolySymbol':
        """psi*_j psi_j"""
        e = _unit(modes, mode)
        return cls.monomial(e, e)

    # Structure

    @property
    def terms(self) -> Dict[TermKey, complex]:
        return dict(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    @property
    def total_degree(self) -> int:
        return max((sum(k) + sum(l) for k, l in self._terms), default=0)

    @property
    def antiholomorphic_degree(self) -> int:
        return max((sum(k) for k, _ in self._terms), default=0)

    @property
    def holomorphic_degree(self) -> int:
        return max((sum(l) for _, l in self._terms), default=0)

    @property
    def order(self) -> float:
        return float(self.total_degree)

    def is_real(self, tol: float = 0.0) -> bool:
        """A is real-valued iff c_{k,l} = conj(c_{l,k}) for every term"""
        for (k, l), c in self._terms.items():
            if abs(c - np.conj(self._terms.get((l, k), 0))) > tol:
                return False
        return True

    def pruned(self, tol: float) -> 'PolySymbol':
        return PolySymbol({key: c for key, c in self._terms.items() if abs(c) > tol}, self.modes)

    def conj(self) -> 'PolySymbol':
        return PolySymbol({(l, k): np.conj(c) for (k, l), c in self._terms.items()}, self.modes)

    # Arithmetic

    def _coerce(self, other) -> 'PolySymbol':
        if isinstance(other, PolySymbol):
            if other.modes != self.modes:
                raise ConfigError(f"Symbols have {self.modes} and {other.modes} modes")
            return other
        if isinstance(other, (int, float, complex, np.number)):
            return PolySymbol.constant(other, self.modes)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms = dict(self._terms)
        for key, c in other._terms.items():
            terms[key] = terms.get(key, 0) + c
        return PolySymbol(terms, self.modes)

    __radd__ = __add__

    def __neg__(self):
        return PolySymbol({key: -c for key, c in self._terms.items()}, self.modes)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms: Dict[TermKey, complex] = {}
        for (k1, l1), c1 in self._terms.items():
            for (k2, l2), c2 in other._terms.items():
                key = (_add(k1, k2), _add(l1, l2))
                terms[key] = terms.get(key, 0) + c1 * c2
        return PolySymbol(terms, self.modes)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return PolySymbol({key: c / scalar for key, c in self._terms.items()}, self.modes)

    def __pow__(self, n: int) -> 'PolySymbol':
        if not isinstance(n, int) or n < 0:
            raise SymbolError(f"Symbols only take non-negative integer powers, got {n}")
        result = PolySymbol.constant(1.0, self.modes)
        for _ in range(n):
            result = result * self
        return result

    def __eq__(self, other):
        if not isinstance(other, PolySymbol):
            return NotImplemented
        return self.modes == other.modes and self._terms == other._terms

    __hash__ = None

    def isclose(self, other: 'PolySymbol', tol: float = 1e-12) -> bool:
        diff = self - other
        return all(abs(c) <= tol for c in diff._terms.values())

    # Evaluation and derivatives

    def evaluate(self, psi) -> Union[complex, np.ndarray]:
        nodes, single = _as_nodes(psi, self.modes)
        values = np.zeros(nodes.shape[0], dtype=complex)
        if self._terms:
            top = max(max(k + l) for k, l in self._terms)
            levels = np.arange(top + 1)
            pow_star = nodes.conj()[:, :, None] ** levels[None, None, :]
            pow_holo = nodes[:, :, None] ** levels[None, None, :]
            modes = np.arange(self.modes)
            for (k, l), c in self._terms.items():
                factors = pow_star[:, modes, list(k)] * pow_holo[:, modes, list(l)]
                values += c * np.prod(factors, axis=1)
        return complex(values[0]) if single else values

    __call__ = evaluate

    def differentiate(self, which: str, mode: int) -> 'PolySymbol':
        if not 0 <= mode < self.modes:
            raise ConfigError(f"Mode {mode} out of range [0, {self.modes - 1}]")
        e = _unit(self.modes, mode)
        zero = (0,) * self.modes
        if which == ANTIHOLOMORPHIC:
            return self.derivative(e, zero)
        if which == HOLOMORPHIC:
            return self.derivative(zero, e)
        raise ConfigError(f"Unknown derivative direction {which!r}")

    def derivative(self, k: Sequence[int], l: Sequence[int]) -> 'PolySymbol':
        """d^k/d psi*^k d^l/d psi^l at the coefficient level"""
        terms: Dict[TermKey, complex] = {}
        for (kk, ll), c in self._terms.items():
            factor = math.prod(_falling(a, b) for a, b in zip(kk, k)) * math.prod(_falling(a, b) for a, b in zip(ll, l))
            if factor:
                key = (tuple(a - b for a, b in zip(kk, k)), tuple(a - b for a, b in zip(ll, l)))
                terms[key] = c * factor
        return PolySymbol(terms, self.modes)

    def derivative_values(self, k: Sequence[int], l: Sequence[int], psi) -> Union[complex, np.ndarray]:
        return self.derivative(k, l).evaluate(psi)

    def has_derivative(self, k: Sequence[int], l: Sequence[int]) -> bool:
        return True

    def substitute(self, u: np.ndarray) -> 'PolySymbol':
        """Symbol B with B(psi) = A(U psi), expanded exactly"""
        u = np.asarray(u, dtype=complex)
        if u.shape != (self.modes, self.modes):
            raise ConfigError(f"Substitution matrix has shape {u.shape}, expected {(self.modes, self.modes)}")
        zero = (0,) * self.modes
        lin = [PolySymbol({(zero, _unit(self.modes, m)): u[j, m] for m in range(self.modes)}, self.modes)
               for j in range(self.modes)]
        lin_star = [item.conj() for item in lin]
        result = PolySymbol({}, self.modes)
        for (k, l), c in self._terms.items():
            term = PolySymbol.constant(c, self.modes)
            for j in range(self.modes):
                term = term * lin_star[j] ** k[j] * lin[j] ** l[j]
            result = result + term
        scale = max((abs(c) for c in result._terms.values()), default=0.0)
        return result.pruned(1e-15 * scale)

    def as_quasi(self) -> 'QuasiSymbol':
        """Evaluator view carrying exact derivatives up to second order"""
        derivatives = {}
        for total in (1, 2):
            for e in compositions(total, 2 * self.modes):
                k, l = e[:self.modes], e[self.modes:]
                derivatives[(k, l)] = self.derivative(k, l).evaluate
        return QuasiSymbol(self.evaluate, self.order, self.modes, derivatives, label=self.to_text())

    def to_text(self) -> str:
        """Text form accepted by the symbol parser"""
        if not self._terms:
            return '0'
        parts = []
        for (k, l), c in self._terms.items():
            coeff = f"{c.real:.17g}" if c.imag == 0 else f"({c.real:.17g}{c.imag:+.17g}j)"
            factors = [coeff]
            for j in range(self.modes):
                if k[j]:
                    factors.append(f"cstar_{j + 1}^{k[j]}")
                if l[j]:
                    factors.append(f"c_{j + 1}^{l[j]}")
            parts.append('*'.join(factors))
        return ' + '.join(parts)

    def __repr__(self):
        return f"PolySymbol({self.to_text()!r}, modes={self.modes})"


class QuasiSymbol:
    """
    Black-box symbol of declared growth order rho.

    `evaluator` maps nodes of shape (N, d) to values of shape (N,). Closed-form
    derivatives are keyed by (k, l) with |k| + |l| <= 2; missing ones fall back
    to central Wirtinger differences when `finite_differences` is set.
    """

    def __init__(self, evaluator: Evaluator, order: float, modes: int,
                 derivatives: Optional[Dict[TermKey, Evaluator]] = None, label: str = '',
                 finite_differences: bool = True):
        if modes < 1:
            raise ConfigError(f"modes must be >= 1, got {modes}")
        self._evaluator = evaluator
        self.order = float(order)
        self.modes = modes
        self.derivatives = {(tuple(k), tuple(l)): f for (k, l), f in (derivatives or {}).items()}
        self.label = label
        self.finite_differences = finite_differences
        self._warned = False

    def evaluate(self, psi) -> Union[complex, np.ndarray]:
        nodes, single = _as_nodes(psi, self.modes)
        values = np.broadcast_to(np.asarray(self._evaluator(nodes), dtype=complex), (nodes.shape[0],))
        return complex(values[0]) if single else np.array(values)

    __call__ = evaluate

    def has_derivative(self, k: Sequence[int], l: Sequence[int]) -> bool:
        key = (tuple(k), tuple(l))
        if sum(key[0]) + sum(key[1]) == 0 or key in self.derivatives:
            return True
        return self.finite_differences and sum(key[0]) + sum(key[1]) <= 2

    def derivative_values(self, k: Sequence[int], l: Sequence[int], psi) -> Union[complex, np.ndarray]:
        key = (tuple(k), tuple(l))
        degree = sum(key[0]) + sum(key[1])
        nodes, single = _as_nodes(psi, self.modes)
        if degree == 0:
            values = self.evaluate(nodes)
        elif key in self.derivatives:
            values = np.broadcast_to(np.asarray(self.derivatives[key](nodes), dtype=complex), (nodes.shape[0],))
        elif self.finite_differences and degree <= 2:
            if not self._warned:
                logger.warning(f"Using finite differences for derivatives of symbol {self.label or '<anonymous>'}")
                self._warned = True
            values = self._finite_difference(key, nodes)
        else:
            raise SymbolError(f"Symbol {self.label or '<anonymous>'} has no derivative evaluator for {key}")
        return complex(values[0]) if single else np.asarray(values)

    def _finite_difference(self, key: TermKey, nodes: np.ndarray) -> np.ndarray:
        k, l = key
        steps = [(j, True) for j in range(self.modes) for _ in range(k[j])]
        steps += [(j, False) for j in range(self.modes) for _ in range(l[j])]
        # nested second differences need a wider step to stay above roundoff
        step = Config.FINITE_DIFFERENCE_STEP if len(steps) == 1 else Config.FINITE_DIFFERENCE_STEP ** (2.0 / 3.0)
        f: Evaluator = self.evaluate
        for mode, star in steps:
            f = _wirtinger_difference(f, mode, star, step, self.modes)
        return f(nodes)

    def growth_constant(self, nodes: np.ndarray, h_spectrum: Optional[Sequence[float]] = None) -> float:
        """Largest |A| / (1 + |psi|_-)^rho over the sampled nodes"""
        nodes, _ = _as_nodes(nodes, self.modes)
        if nodes.ndim == 2 and nodes.shape[0] == 0:
            return 0.0
        weight = (1.0 + _minus_norm(nodes, h_spectrum)) ** self.order
        return float(np.max(np.abs(self.evaluate(nodes)) / weight))

    def substitute(self, u: np.ndarray) -> 'QuasiSymbol':
        u = np.asarray(u, dtype=complex)
        if u.shape != (self.modes, self.modes):
            raise ConfigError(f"Substitution matrix has shape {u.shape}, expected {(self.modes, self.modes)}")
        return QuasiSymbol(lambda nodes: self.evaluate(nodes @ u.T), self.order, self.modes,
                           label=f"{self.label}(U psi)", finite_differences=self.finite_differences)

    def as_quasi(self) -> 'QuasiSymbol':
        return self

    def __repr__(self):
        return f"QuasiSymbol({self.label or '<anonymous>'}, order={self.order}, modes={self.modes})"


def _wirtinger_difference(f: Evaluator, mode: int, star: bool, step: float, modes: int) -> Evaluator:
    # d/dpsi = (d/dx - i d/dy) / 2 and d/dpsi* = (d/dx + i d/dy) / 2
    def derivative(nodes: np.ndarray) -> np.ndarray:
        h = step * (1.0 + np.linalg.norm(nodes, axis=1))
        shift = np.zeros((nodes.shape[0], modes), dtype=complex)
        shift[:, mode] = h
        dx = (f(nodes + shift) - f(nodes - shift)) / (2.0 * h)
        dy = (f(nodes + 1j * shift) - f(nodes - 1j * shift)) / (2.0 * h)
        return 0.5 * (dx + 1j * dy) if star else 0.5 * (dx - 1j * dy)
    return derivative


Symbol = Union[PolySymbol, QuasiSymbol]


def evaluate(symbol: Symbol, psi) -> Union[complex, np.ndarray]:
    """Value of the symbol at a point (or at every row of a node array)"""
    value = symbol.evaluate(psi)
    if not np.all(np.isfinite(value)):
        raise SymbolError(f"Symbol {symbol!r} is not finite at {psi}")
    return value


def differentiate(symbol: PolySymbol, which: str, mode: int) -> PolySymbol:
    if not isinstance(symbol, PolySymbol):
        raise SymbolError("Exact differentiation needs a polynomial symbol")
    return symbol.differentiate(which, mode)


@dataclass(frozen=True)
class OmegaKernel:
    """
    Gaussian kernel omega = exp(u psi*.psi + v psi*.psi* + w psi.psi).

    The transform A -> omega(d/dpsi*, -d/dpsi) A is applied as the operator
    exp(-u d*.d + v d*.d* + w d.d).
    """
    kind: str
    u: complex = 0.0
    v: complex = 0.0
    w: complex = 0.0
    parameter: Optional[complex] = None

    @classmethod
    def antiwick(cls) -> 'OmegaKernel':
        return cls('antiwick')

    @classmethod
    def wick(cls) -> 'OmegaKernel':
        return cls('wick', u=-1.0)

    @classmethod
    def weyl(cls) -> 'OmegaKernel':
        return cls('weyl', u=-0.5)

    @classmethod
    def left(cls) -> 'OmegaKernel':
        return cls('left', u=-0.5, v=-0.25, w=0.25)

    @classmethod
    def right(cls) -> 'OmegaKernel':
        return cls('right', u=-0.5, v=0.25, w=-0.25)

    @classmethod
    def sigma(cls, sigma: complex) -> 'OmegaKernel':
        return cls('sigma', u=sigma - 0.5, parameter=sigma)

    @classmethod
    def tau(cls, tau: complex) -> 'OmegaKernel':
        return cls('tau', u=-0.5, v=tau, w=-tau, parameter=tau)

    @classmethod
    def from_name(cls, name: str, parameter: Optional[complex] = None) -> 'OmegaKernel':
        simple = {'antiwick': cls.antiwick, 'wick': cls.wick, 'weyl': cls.weyl, 'left': cls.left, 'right': cls.right}
        if name in simple:
            return simple[name]()
        if name in ('sigma', 'tau'):
            if parameter is None:
                raise ConfigError(f"Kernel {name!r} needs a parameter")
            return getattr(cls, name)(parameter)
        raise ConfigError(f"Unknown omega kernel {name!r}")

    @property
    def formal(self) -> bool:
        """True when the kernel leaves the class of operator-level transforms"""
        return self.v != 0 or self.w != 0

    def compose(self, other: 'OmegaKernel') -> 'OmegaKernel':
        return OmegaKernel(f"{self.kind}+{other.kind}", self.u + other.u, self.v + other.v, self.w + other.w)


def _second_order_part(symbol: PolySymbol, kernel: OmegaKernel) -> PolySymbol:
    result = PolySymbol({}, symbol.modes)
    zero = (0,) * symbol.modes
    for j in range(symbol.modes):
        e = _unit(symbol.modes, j)
        two = tuple(2 * x for x in e)
        if kernel.u:
            result = result - kernel.u * symbol.derivative(e, e)
        if kernel.v:
            result = result + kernel.v * symbol.derivative(two, zero)
        if kernel.w:
            result = result + kernel.w * symbol.derivative(zero, two)
    return result


def omega_transform(symbol: PolySymbol, kernel: OmegaKernel) -> PolySymbol:
    """Exact on polynomials: the exponential series stops once the degree is exhausted"""
    if not isinstance(symbol, PolySymbol):
        raise SymbolError("omega_transform is exact only for polynomial symbols")
    if kernel.formal:
        logger.warning(f"Kernel {kernel.kind} is applied as a formal coefficient transform only")
    result = symbol
    term = symbol
    m = 0
    while True:
        m += 1
        term = _second_order_part(term, kernel) / m
        if term.is_zero():
            break
        result = result + term
    return result


def antiwick_product_terms(b: PolySymbol, c: PolySymbol, order: Optional[int] = None) -> List[PolySymbol]:
    """
    Contraction terms of the antiwick product, one per order n.

    Term n is (-1)^n sum_{|g|=n} (1/g!) d*^g B d^g C: antiholomorphic derivatives
    of the left factor contract against holomorphic derivatives of the right.
    """
    if b.modes != c.modes:
        raise ConfigError(f"Symbols have {b.modes} and {c.modes} modes")
    top = min(b.antiholomorphic_degree, c.holomorphic_degree)
    order = top if order is None else min(order, top)
    zero = (0,) * b.modes
    terms = []
    for n in range(order + 1):
        total = PolySymbol({}, b.modes)
        for gamma in compositions(n, b.modes):
            weight = (-1) ** n / _multi_factorial(gamma)
            total = total + weight * (b.derivative(gamma, zero) * c.derivative(zero, gamma))
        terms.append(total)
    return terms


def antiwick_product(b: PolySymbol, c: PolySymbol, order: Optional[int] = None) -> PolySymbol:
    """Symbol of Q(B) Q(C) through contraction order `order` (exact when omitted)"""
    if not isinstance(b, PolySymbol) or not isinstance(c, PolySymbol):
        raise SymbolError("antiwick_product works on polynomial symbols")
    result = PolySymbol({}, b.modes)
    for term in antiwick_product_terms(b, c, order):
        result = result + term
    return result


@dataclass
class EllipticityReport:
    sigma: float
    threshold: float
    nodes_checked: int
    lower_constant: float
    derivative_constant: float
    imaginary_ratio: float
    lower_margin: float
    derivative_margin: float
    passed: bool
    worst_derivative: Optional[TermKey] = None
    derivative_constants: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            'sigma': self.sigma, 'threshold': self.threshold, 'nodes_checked': self.nodes_checked,
            'lower_constant': self.lower_constant, 'derivative_constant': self.derivative_constant,
            'imaginary_ratio': self.imaginary_ratio, 'lower_margin': self.lower_margin,
            'derivative_margin': self.derivative_margin, 'passed': self.passed,
            'derivative_constants': dict(self.derivative_constants),
        }


def ellipticity_check(symbol: Symbol, grid, sigma: float, threshold: float = 2.0,
                      h_spectrum: Optional[Sequence[float]] = None, lower_margin: float = 1e-2,
                      derivative_margin: float = 1e2) -> EllipticityReport:
    """
    Sampled ellipticity test on nodes with |psi|_- >= threshold.

    (i)  |psi|_-^sigma <~ A: worst constant min Re A / |psi|_-^sigma
    (ii) |d*^k d^l A| <~ A |psi|_-^{-(k+l)}, k + l <= 2: worst constant of the ratio
    """
    if sigma > symbol.order + 1e-12:
        raise ConfigError(f"sigma = {sigma} exceeds the symbol order {symbol.order}")
    nodes = grid.nodes if hasattr(grid, 'nodes') else np.asarray(grid, dtype=complex)
    nodes, _ = _as_nodes(nodes, symbol.modes)
    radius = _minus_norm(nodes, h_spectrum)
    mask = radius >= threshold
    if not np.any(mask):
        raise ConfigError(f"No grid nodes with |psi|_- >= {threshold}")
    nodes, radius = nodes[mask], radius[mask]

    keys = []
    for total in (1, 2):
        for e in compositions(total, 2 * symbol.modes):
            keys.append((e[:symbol.modes], e[symbol.modes:]))
    missing = [key for key in keys if not symbol.has_derivative(*key)]
    if missing:
        raise SymbolError(f"Symbol {symbol!r} lacks derivative evaluators for {missing}")

    values = evaluate(symbol, nodes)
    size = np.abs(values)
    lower_constant = float(np.min(values.real / radius ** sigma))
    imaginary_ratio = float(np.max(np.divide(np.abs(values.imag), size, out=np.zeros_like(size), where=size > 0)))

    constants: Dict[str, float] = {}
    worst, worst_key = 0.0, None
    for k, l in keys:
        deriv = np.abs(np.asarray(symbol.derivative_values(k, l, nodes)))
        scaled = deriv * radius ** (sum(k) + sum(l))
        ratio = np.divide(scaled, size, out=np.full_like(scaled, np.inf), where=size > 0)
        ratio = np.where((size == 0) & (scaled == 0), 0.0, ratio)
        value = float(np.max(ratio))
        constants[f"{k}|{l}"] = value
        if value > worst or worst_key is None:
            worst, worst_key = value, (k, l)

    passed = lower_constant >= lower_margin and worst <= derivative_margin
    report = EllipticityReport(
        sigma=sigma, threshold=threshold, nodes_checked=int(nodes.shape[0]), lower_constant=lower_constant,
        derivative_constant=worst, imaginary_ratio=imaginary_ratio, lower_margin=lower_margin,
        derivative_margin=derivative_margin, passed=passed, worst_derivative=worst_key,
        derivative_constants=constants,
    )
    logger.info(f"Ellipticity check sigma={sigma}: lower {lower_constant:.4g}, derivative {worst:.4g}, passed={passed}")
    return report


@lru_cache(maxsize=32)
def _jet_monomials(variables: int, order: int) -> Tuple[MultiIndex, ...]:
    return tuple(e for total in range(order + 1) for e in compositions(total, variables))


class Jet:
    """
    Truncated Taylor expansion in the 2d variables (psi*, psi) at a batch of nodes.

    Exponent tuples list the psi* powers first, then the psi powers.
    Coefficients are exact through total degree `order`.
    """

    def __init__(self, coeffs: Dict[MultiIndex, np.ndarray], modes: int, order: int, size: int):
        self.modes = modes
        self.order = order
        self.size = size
        self.coeffs = {e: coeffs[e] for e in _jet_monomials(2 * modes, order) if e in coeffs}

    @classmethod
    def from_symbol(cls, symbol: Symbol, nodes: np.ndarray, order: int) -> 'Jet':
        if isinstance(symbol, QuasiSymbol) and order > 2:
            raise SymbolError(f"Quasi symbols provide derivatives up to order 2, jet of order {order} requested")
        d = symbol.modes
        coeffs = {}
        for e in _jet_monomials(2 * d, order):
            k, l = e[:d], e[d:]
            values = np.asarray(symbol.derivative_values(k, l, nodes), dtype=complex).reshape(-1)
            coeffs[e] = values / _multi_factorial(e)
        return cls(coeffs, d, order, nodes.shape[0])

    def _get(self, e: MultiIndex) -> np.ndarray:
        return self.coeffs.get(e, np.zeros(self.size, dtype=complex))

    @property
    def value(self) -> np.ndarray:
        return self._get((0,) * (2 * self.modes))

    def derivative_value(self, k: Sequence[int], l: Sequence[int]) -> np.ndarray:
        e = tuple(k) + tuple(l)
        if sum(e) > self.order:
            raise SymbolError(f"Jet of order {self.order} cannot supply derivative {e}")
        return self._get(e) * _multi_factorial(e)

    def differentiated(self, k: Sequence[int], l: Sequence[int]) -> 'Jet':
        """Jet of d*^k d^l of this function, exact through order - |k| - |l|"""
        shift = tuple(k) + tuple(l)
        order = self.order - sum(shift)
        if order < 0:
            raise SymbolError(f"Jet of order {self.order} cannot be differentiated by {shift}")
        coeffs = {}
        for e in _jet_monomials(2 * self.modes, order):
            source = _add(e, shift)
            if source in self.coeffs:
                factor = math.prod(math.perm(s, t) for s, t in zip(source, shift))
                coeffs[e] = self.coeffs[source] * factor
        return Jet(coeffs, self.modes, order, self.size)

    def scaled(self, factor) -> 'Jet':
        return Jet({e: c * factor for e, c in self.coeffs.items()}, self.modes, self.order, self.size)

    def __add__(self, other: 'Jet') -> 'Jet':
        order = min(self.order, other.order)
        coeffs = {e: self._get(e) + other._get(e) for e in _jet_monomials(2 * self.modes, order)}
        return Jet(coeffs, self.modes, order, self.size)

    def __sub__(self, other: 'Jet') -> 'Jet':
        return self + other.scaled(-1.0)

    def __mul__(self, other: 'Jet') -> 'Jet':
        order = min(self.order, other.order)
        coeffs: Dict[MultiIndex, np.ndarray] = {}
        for e1, c1 in self.coeffs.items():
            budget = order - sum(e1)
            if budget < 0:
                continue
            for e2, c2 in other.coeffs.items():
                if sum(e2) <= budget:
                    key = _add(e1, e2)
                    coeffs[key] = coeffs.get(key, 0) + c1 * c2
        return Jet(coeffs, self.modes, order, self.size)

    def reciprocal(self, floor: float) -> 'Jet':
        a0 = self.value
        small = np.flatnonzero(np.abs(a0) < floor)
        if small.size:
            raise SymbolError(f"|A| = {abs(a0[small[0]]):.3e} below the parametrix floor {floor} at node {small[0]}")
        zero = (0,) * (2 * self.modes)
        # 1/a = (1/a0) sum_m (-t)^m with t = a/a0 - 1 free of a constant term
        t = self.scaled(1.0 / a0)
        t.coeffs.pop(zero, None)
        one = Jet({zero: np.ones(self.size, dtype=complex)}, self.modes, self.order, self.size)
        total, power = one, one
        for _ in range(self.order):
            power = power * t.scaled(-1.0)
            total = total + power
        return total.scaled(1.0 / a0)


def _parametrix_jet(symbol: Symbol, n_order: int, nodes: np.ndarray, jet_order: int) -> Jet:
    d = symbol.modes
    zero = (0,) * d
    a = Jet.from_symbol(symbol, nodes, jet_order)
    inverse = a.reciprocal(Config.PARAMETRIX_FLOOR)
    pieces = [inverse]
    for level in range(1, n_order + 1):
        acc = None
        for m in range(level):
            n = level - m
            for gamma in compositions(n, d):
                term = (a.differentiated(gamma, zero) * pieces[m].differentiated(zero, gamma))
                term = term.scaled((-1) ** (n + 1) / _multi_factorial(gamma))
                acc = term if acc is None else acc + term
        pieces.append(acc * inverse)
    total = pieces[0]
    for piece in pieces[1:]:
        total = total + piece
    return total


def parametrix_expansion(symbol: Symbol, n_order: int, sigma: Optional[float] = None,
                         report: Optional[EllipticityReport] = None) -> QuasiSymbol:
    """
    Parametrix P = P_0 + ... + P_N of an elliptic symbol A.

    P_0 = 1/A and P_L = (1/A) sum_{m<L, |g|=L-m} (-1)^{|g|+1}/g! d*^g A d^g P_m,
    so that the antiwick product A # P equals 1 through order N. Values and
    derivatives come from forward-mode jets at the requested nodes.
    """
    if n_order < 0:
        raise ConfigError(f"Parametrix order must be >= 0, got {n_order}")
    if report is not None and not report.passed:
        raise SymbolError(f"Ellipticity check failed (lower {report.lower_constant:.3g}, "
                          f"derivative {report.derivative_constant:.3g}); no parametrix")
    if isinstance(symbol, PolySymbol):
        jet_order = n_order + 2
    else:
        if n_order > 2:
            raise SymbolError(f"Quasi symbols support parametrix orders up to 2, got {n_order}")
        jet_order = 2
    spare = jet_order - n_order
    d = symbol.modes

    def evaluator(nodes: np.ndarray) -> np.ndarray:
        return _parametrix_jet(symbol, n_order, nodes, jet_order).value

    derivatives = {}
    for total in range(1, spare + 1):
        for e in compositions(total, 2 * d):
            k, l = e[:d], e[d:]
            derivatives[(k, l)] = (lambda nodes, k=k, l=l:
                                   _parametrix_jet(symbol, n_order, nodes, jet_order).derivative_value(k, l))
    order = -(symbol.order if sigma is None else sigma)
    label = f"parametrix[{n_order}]({getattr(symbol, 'label', '') or symbol!r})"
    logger.debug(f"Built {label} with jet order {jet_order}")
    return QuasiSymbol(evaluator, order, d, derivatives, label=label)
