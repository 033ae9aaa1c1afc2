import logging

import numpy as np
import pytest

from calculus.errors import ConfigError, SymbolError
from calculus.fock import ModeConfig
from calculus.parser import parse_symbol
from calculus.quadrature import QuadratureSpec, build_grid
from calculus.quantize import quantize, quantize_poly
from calculus.symbols import (
    ANTIHOLOMORPHIC, HOLOMORPHIC, Jet, OmegaKernel, PolySymbol, QuasiSymbol, antiwick_product,
    antiwick_product_terms, differentiate, ellipticity_check, evaluate, omega_transform, parametrix_expansion,
)

POINTS = np.array([[0.3 - 0.2j], [1.1 + 0.4j], [-0.7j]])


def number():
    return PolySymbol.number(0)


def test_constructors_and_degrees():
    a = PolySymbol.monomial((2, 0), (1, 1), 3.0)
    assert a.modes == 2
    assert a.total_degree == 4
    assert a.antiholomorphic_degree == 2
    assert a.holomorphic_degree == 2
    assert a.order == 4.0
    assert PolySymbol.constant(0.0).is_zero()
    assert (PolySymbol.psi_star(0) * PolySymbol.psi(0)) == number()


def test_evaluation_is_vectorized():
    a = number() + 0.5 * PolySymbol.psi(0) ** 2
    values = a.evaluate(POINTS)
    expected = np.abs(POINTS[:, 0]) ** 2 + 0.5 * POINTS[:, 0] ** 2
    np.testing.assert_allclose(values, expected)
    assert a(POINTS[1]) == pytest.approx(expected[1])
    assert isinstance(a.evaluate([0.1]), complex)


def test_arithmetic():
    a = number()
    b = PolySymbol.psi(0) + PolySymbol.psi_star(0)
    assert (a + 1 - 1) == a
    assert (2 * a / 2) == a
    assert (b ** 2).terms[((1,), (1,))] == 2
    assert (-a + a).is_zero()
    assert (3 - a).evaluate([1.0]) == pytest.approx(2.0)
    with pytest.raises(SymbolError):
        a ** -1
    with pytest.raises(ConfigError):
        a + PolySymbol.number(0, modes=2)


def test_reality_and_conjugation():
    b = PolySymbol.psi(0) + PolySymbol.psi_star(0)
    assert b.is_real()
    c = PolySymbol.psi(0) * 1j
    assert not c.is_real()
    assert (c + c.conj()).is_real()
    z = 0.4 + 0.9j
    assert c.conj().evaluate([z]) == pytest.approx(np.conj(c.evaluate([z])))


def test_derivatives():
    a = PolySymbol.monomial((2,), (1,), 1.0)  # psi*^2 psi
    assert differentiate(a, ANTIHOLOMORPHIC, 0) == PolySymbol.monomial((1,), (1,), 2.0)
    assert differentiate(a, HOLOMORPHIC, 0) == PolySymbol.monomial((2,), (0,), 1.0)
    assert a.derivative((3,), (0,)).is_zero()
    z = 0.5 - 0.1j
    assert a.derivative_values((1,), (1,), [z]) == pytest.approx(2 * np.conj(z))
    with pytest.raises(ConfigError):
        a.differentiate('sideways', 0)
    with pytest.raises(ConfigError):
        a.differentiate(ANTIHOLOMORPHIC, 3)


def test_linear_substitution():
    a = parse_symbol('n1 + 2*n2 + 0.3*cstar1*c2 + 0.3*cstar2*c1 + 0.1*n1*n2', 2)
    theta = 0.4
    u = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]) * np.exp(0.3j)
    b = a.substitute(u)
    rng = np.random.default_rng(3)
    nodes = rng.normal(size=(5, 2)) + 1j * rng.normal(size=(5, 2))
    np.testing.assert_allclose(b.evaluate(nodes), a.evaluate(nodes @ u.T), atol=1e-12)
    assert b.is_real(tol=1e-12)
    with pytest.raises(ConfigError):
        a.substitute(np.eye(3))


def test_text_form_parses_back():
    a = parse_symbol('n1^2 + (0.5-0.25j)*c1*c2 + (0.5+0.25j)*cstar1*cstar2 - 3', 2)
    assert parse_symbol(a.to_text(), 2) == a
    assert PolySymbol({}, 1).to_text() == '0'


def test_module_level_evaluate_rejects_non_finite():
    a = QuasiSymbol(lambda nodes: 1.0 / np.abs(nodes[:, 0]), 0.0, 1)
    with pytest.raises(SymbolError):
        evaluate(a, [0.0])
    assert evaluate(number(), [2.0]) == pytest.approx(4.0)


def test_wick_and_weyl_transforms_of_number():
    assert omega_transform(number(), OmegaKernel.wick()) == number() + 1
    assert omega_transform(number(), OmegaKernel.weyl()) == number() + 0.5
    assert omega_transform(number(), OmegaKernel.antiwick()) == number()
    assert omega_transform(number(), OmegaKernel.sigma(0.5)) == number()


def test_kernels_compose_additively():
    a = parse_symbol('n1^2 + 0.5*c1^2 + 0.5*cstar1^2')
    weyl = OmegaKernel.weyl()
    twice = omega_transform(omega_transform(a, weyl), weyl)
    assert twice.isclose(omega_transform(a, weyl.compose(weyl)))
    assert twice.isclose(omega_transform(a, OmegaKernel.wick()))
    back = omega_transform(omega_transform(a, OmegaKernel.wick()), OmegaKernel('inverse', u=1.0))
    assert back.isclose(a)


def test_formal_kernels_warn(caplog):
    a = parse_symbol('cstar1^2 + c1^2')
    with caplog.at_level(logging.WARNING, logger='calculus.symbols'):
        left = omega_transform(a, OmegaKernel.left())
    assert 'formal' in caplog.text
    # d*.d* of psi*^2 is 2, d.d of psi^2 is 2: v * 2 + w * 2 = 0 for the left kernel
    assert left.isclose(a)
    right = omega_transform(parse_symbol('cstar1^2'), OmegaKernel.right())
    assert right.isclose(parse_symbol('cstar1^2 + 0.5'))
    assert OmegaKernel.tau(0.2).formal and not OmegaKernel.weyl().formal


def test_kernel_names():
    assert OmegaKernel.from_name('weyl') == OmegaKernel.weyl()
    assert OmegaKernel.from_name('sigma', 0.25).u == pytest.approx(-0.25)
    with pytest.raises(ConfigError):
        OmegaKernel.from_name('sigma')
    with pytest.raises(ConfigError):
        OmegaKernel.from_name('husimi')


def test_antiwick_product_direction():
    star, psi = PolySymbol.psi_star(0), PolySymbol.psi(0)
    assert antiwick_product(star, psi) == number() - 1
    assert antiwick_product(psi, star) == number()
    terms = antiwick_product_terms(parse_symbol('cstar1^2'), parse_symbol('c1^2'))
    assert [t.total_degree for t in terms] == [4, 2, 0]
    assert terms[2] == PolySymbol.constant(2.0)
    assert len(antiwick_product_terms(parse_symbol('cstar1^2'), parse_symbol('c1^2'), order=1)) == 2


def test_quasi_symbol_finite_differences_match_exact(caplog):
    a = parse_symbol('n1^2 + 0.5*c1^2 + 0.5*cstar1^2')
    quasi = QuasiSymbol(a.evaluate, a.order, 1, label='quartic')
    with caplog.at_level(logging.WARNING, logger='calculus.symbols'):
        for k, l in [((1,), (0,)), ((0,), (1,)), ((1,), (1,)), ((2,), (0,))]:
            np.testing.assert_allclose(quasi.derivative_values(k, l, POINTS),
                                       a.derivative_values(k, l, POINTS), rtol=1e-4, atol=1e-4)
    assert caplog.text.count('finite differences') == 1
    assert not quasi.has_derivative((3,), (0,))
    with pytest.raises(SymbolError):
        quasi.derivative_values((2,), (1,), POINTS)


def test_quasi_symbol_without_fallback_needs_closed_forms():
    quasi = QuasiSymbol(lambda nodes: np.ones(nodes.shape[0]), 0.0, 1, finite_differences=False)
    assert not quasi.has_derivative((1,), (0,))
    with pytest.raises(SymbolError):
        quasi.derivative_values((1,), (0,), POINTS)


def test_quasi_growth_and_substitution():
    a = number().as_quasi()
    assert a.growth_constant(POINTS) <= 1.0
    u = np.array([[1j]])
    np.testing.assert_allclose(a.substitute(u).evaluate(POINTS), a.evaluate(POINTS), atol=1e-14)
    np.testing.assert_allclose(a.derivative_values((1,), (1,), POINTS), 1.0)


def test_ellipticity_of_shifted_number_symbol():
    a = number() + 1
    grid = build_grid(1, QuadratureSpec(8, 16))
    report = ellipticity_check(a, grid, sigma=2.0)
    assert report.passed
    assert report.lower_constant >= 1.0
    assert report.derivative_constant <= 1.0 + 1e-12
    assert report.nodes_checked > 0
    assert report.to_dict()['passed'] is True


def test_ellipticity_failures():
    grid = build_grid(1, QuadratureSpec(8, 16))
    assert not ellipticity_check(-number(), grid, sigma=2.0).passed
    with pytest.raises(ConfigError):
        ellipticity_check(number(), grid, sigma=3.0)
    with pytest.raises(ConfigError):
        ellipticity_check(number(), grid, sigma=2.0, threshold=1e3)
    opaque = QuasiSymbol(lambda nodes: 1 + np.abs(nodes[:, 0]) ** 2, 2.0, 1, finite_differences=False)
    with pytest.raises(SymbolError):
        ellipticity_check(opaque, grid, sigma=2.0)


def test_linear_symbol_is_not_elliptic():
    grid = build_grid(1, QuadratureSpec(8, 16))
    report = ellipticity_check(parse_symbol('c1 + cstar1'), grid, sigma=1.0)
    assert not report.passed
    assert report.lower_constant < 0


def test_square_root_symbol_is_elliptic_of_order_one():
    def root(nodes):
        return np.sqrt(1 + np.abs(nodes[:, 0]) ** 2)

    derivatives = {
        ((1,), (0,)): lambda nodes: nodes[:, 0] / (2 * root(nodes)),
        ((0,), (1,)): lambda nodes: np.conj(nodes[:, 0]) / (2 * root(nodes)),
        ((2,), (0,)): lambda nodes: -nodes[:, 0] ** 2 / (4 * root(nodes) ** 3),
        ((0,), (2,)): lambda nodes: -np.conj(nodes[:, 0]) ** 2 / (4 * root(nodes) ** 3),
        ((1,), (1,)): lambda nodes: 1 / (2 * root(nodes)) - np.abs(nodes[:, 0]) ** 2 / (4 * root(nodes) ** 3),
    }
    symbol = QuasiSymbol(root, 1.0, 1, derivatives, label='sqrt(1 + n1)', finite_differences=False)
    report = ellipticity_check(symbol, build_grid(1, QuadratureSpec(8, 16)), sigma=1.0)
    assert report.passed
    assert report.lower_constant >= 1.0
    assert report.derivative_constant <= 0.5 + 1e-12


def parametrix_residual(n_order, cutoff):
    """|diag(Q(A) Q(P_N)) - 1| on the reported levels, A = 1 + |psi|^2"""
    config = ModeConfig(1, cutoff)
    a = number() + 1
    product = quantize_poly(a, config).matrix @ quantize(parametrix_expansion(a, n_order), config).matrix
    k = config.reported_dimension
    return np.abs(np.diag(product)[:k] - 1)


def test_parametrix_residual_decays_with_occupation():
    window_maxima = []
    for cutoff in (16, 24, 32):
        residual = parametrix_residual(0, cutoff)
        window_maxima.append(residual[cutoff // 2:].max())
    assert all(b < a for a, b in zip(window_maxima, window_maxima[1:]))
    # 2 e E1(1) - 1 on the vacuum
    assert parametrix_residual(0, 4)[0] == pytest.approx(0.192695, abs=1e-5)


def test_first_parametrix_correction_shrinks_the_residual():
    assert parametrix_residual(1, 4).max() < parametrix_residual(0, 4).max()
    assert parametrix_residual(1, 32)[16:].max() < parametrix_residual(0, 32)[16:].max()


def test_parametrix_leading_terms():
    a = number() + 1
    r2 = np.abs(POINTS[:, 0]) ** 2
    p0 = parametrix_expansion(a, 0)
    np.testing.assert_allclose(p0.evaluate(POINTS), 1 / (1 + r2), rtol=1e-13)
    assert p0.order == -2.0
    # d*P0 = -psi / A^2
    np.testing.assert_allclose(p0.derivative_values((1,), (0,), POINTS), -POINTS[:, 0] / (1 + r2) ** 2, rtol=1e-12)
    p1 = parametrix_expansion(a, 1)
    np.testing.assert_allclose(p1.evaluate(POINTS), 1 / (1 + r2) - r2 / (1 + r2) ** 3, rtol=1e-12)


def test_parametrix_from_quasi_matches_polynomial_route():
    a = parse_symbol('1 + n1 + 0.2*n1^2')
    exact = parametrix_expansion(a, 1).evaluate(POINTS)
    via_quasi = parametrix_expansion(a.as_quasi(), 1).evaluate(POINTS)
    np.testing.assert_allclose(via_quasi, exact, rtol=1e-12)
    with pytest.raises(SymbolError):
        parametrix_expansion(a.as_quasi(), 3)


def test_parametrix_refuses_small_values_and_failed_reports():
    p = parametrix_expansion(number(), 0)
    with pytest.raises(SymbolError):
        p.evaluate([0.0])
    grid = build_grid(1, QuadratureSpec(8, 16))
    report = ellipticity_check(-number(), grid, sigma=2.0)
    with pytest.raises(SymbolError):
        parametrix_expansion(-number(), 0, report=report)
    with pytest.raises(ConfigError):
        parametrix_expansion(number() + 1, -1)


def test_jet_reciprocal_inverts_through_its_order():
    a = parse_symbol('2 + n1 + 0.3*c1^2 + 0.3*cstar1^2')
    jet = Jet.from_symbol(a, POINTS, 3)
    product = jet * jet.reciprocal(1e-6)
    np.testing.assert_allclose(product.value, 1.0, atol=1e-13)
    for key, coeff in product.coeffs.items():
        if sum(key):
            np.testing.assert_allclose(coeff, 0.0, atol=1e-12)
    np.testing.assert_allclose(jet.derivative_value((1,), (1,)), a.derivative_values((1,), (1,), POINTS))
    with pytest.raises(SymbolError):
        jet.derivative_value((2,), (2,))
