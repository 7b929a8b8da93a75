import numpy as np
import pytest
import sympy

from qbath.bath_models import ThermalParams, build_bath, disjoint_union, load_preset, thermal_state
from qbath.correlations import (
    RECONSTRUCTED, CorrelationIndex, CorrelationTensor, bath_correlation, correlations_up_to, cumulant,
    cumulants_from_moments,
)
from qbath.dynamics import GridMoments


def symbolic_moment(block):
    return sympy.Symbol("m" + "".join(str(p) for p in block))


def test_second_order_cumulant():
    m = sympy.symbols("m0 m1 m01")
    expr = cumulant((0, 1), symbolic_moment)
    assert sympy.expand(expr - (m[2] - m[0] * m[1])) == 0


def test_third_order_cumulant():
    m0, m1, m2, m01, m02, m12, m012 = sympy.symbols("m0 m1 m2 m01 m02 m12 m012")
    expected = m012 - m0 * m12 - m1 * m02 - m2 * m01 + 2 * m0 * m1 * m2
    assert sympy.expand(cumulant((0, 1, 2), symbolic_moment) - expected) == 0


def test_fourth_order_cumulant_of_zero_mean():
    """With vanishing odd moments the fourth cumulant is M4 minus the three pairings"""
    def moment(block):
        if len(block) % 2:
            return 0
        return symbolic_moment(block)

    m = {k: sympy.Symbol("m" + k) for k in ("01", "02", "03", "12", "13", "23", "0123")}
    expected = m["0123"] - m["01"] * m["23"] - m["02"] * m["13"] - m["03"] * m["12"]
    assert sympy.expand(cumulant((0, 1, 2, 3), moment) - expected) == 0


def test_cumulant_accepts_arrays():
    values = {(0,): np.array([1.0, 2.0]), (1,): np.array([3.0, 4.0]), (0, 1): np.array([5.0, 6.0])}
    assert np.allclose(cumulant((0, 1), values.__getitem__), [2.0, -2.0])


def test_p1_second_cumulant_equals_moment(p1):
    bath, rho = p1
    moments = correlations_up_to(bath, rho, 2, [0.0, 0.4, 1.0], axes=("z",), include_null_signs=False)
    kappas = cumulants_from_moments(moments.filter(lambda i: "-" not in i.sign_string))
    idx = CorrelationIndex.build("zz", "++", [0.0, 1.0])
    assert np.isclose(kappas.value(idx), moments.value(idx))


def test_third_cumulant_of_tilted_bath(p1_tilted):
    bath, rho = p1_tilted
    times = [0.0, 0.5, 1.0]
    moments = correlations_up_to(bath, rho, 3, times, axes=("z",), include_null_signs=False)
    kappas = cumulants_from_moments(moments.filter(lambda i: "-" not in i.sign_string))
    idx = CorrelationIndex.build("zzz", "+++", times)
    m = lambda pos: moments.value(idx.sub_index(pos))
    expected = (m((0, 1, 2)) - m((0,)) * m((1, 2)) - m((1,)) * m((0, 2)) - m((2,)) * m((0, 1))
                + 2 * m((0,)) * m((1,)) * m((2,)))
    assert np.isclose(kappas.value(idx), expected, atol=1e-12)
    assert abs(m((0,))) > 0.1


def test_cumulant_stderr_by_delta_method():
    tensor = CorrelationTensor()
    times = [0.0, 1.0]
    tensor.set(CorrelationIndex.build("z", "+", [0.0]), 0.5, RECONSTRUCTED, 0.1)
    tensor.set(CorrelationIndex.build("z", "+", [1.0]), 0.2, RECONSTRUCTED, 0.0)
    tensor.set(CorrelationIndex.build("zz", "++", times), 0.7, RECONSTRUCTED, 0.05)
    kappas = cumulants_from_moments(tensor)
    pair = kappas[CorrelationIndex.build("zz", "++", times)]
    assert np.isclose(pair.value, 0.7 - 0.5 * 0.2)
    # d kappa / d m0 = -m1 = -0.2
    assert np.isclose(pair.stderr, np.hypot(0.05, 0.2 * 0.1))
    assert pair.source == RECONSTRUCTED


@pytest.mark.parametrize("order", [2, 3, 4])
def test_grid_cumulants_agree_with_tensor_cumulants(p1_tilted, order):
    bath, rho = p1_tilted
    times = np.linspace(0.0, 1.2, 5)
    grid = GridMoments.from_bath(bath, rho, times, order).cumulants()
    moments = correlations_up_to(bath, rho, order, times, axes=("z",), include_null_signs=False)
    kappas = cumulants_from_moments(moments.filter(lambda i: set(i.sign_string) == {"+"}))
    positions = tuple(range(order))
    idx = CorrelationIndex.build("z" * order, "+" * order, [times[k] for k in positions])
    assert np.isclose(grid[order - 1][positions], kappas.value(idx), atol=1e-10)


def gaussian_moment(mean, cov):
    """Isserlis: E[x_S] = mu_i E[x_rest] + sum_j cov_ij E[x_rest - j]"""
    def moment(block):
        if not block:
            return 1.0
        first, rest = block[0], block[1:]
        value = mean[first] * moment(rest)
        for k, j in enumerate(rest):
            value += cov[first, j] * moment(rest[:k] + rest[k + 1:])
        return value
    return moment


@pytest.mark.parametrize("order", [3, 4, 5])
def test_gaussian_higher_cumulants_vanish(rng, order):
    mean = rng.normal(size=order)
    A = rng.normal(size=(order, order))
    moment = gaussian_moment(mean, A @ A.T)
    assert abs(cumulant(tuple(range(order)), moment)) < 1e-12
    assert cumulant((0, 1), moment) == pytest.approx((A @ A.T)[0, 1], abs=1e-12)


@pytest.mark.parametrize("signs", ["+++", "+-+", "++++"])
def test_cumulants_add_over_independent_baths(signs):
    first, second = load_preset("P1", tilt=np.pi / 4), load_preset("P1", g=0.5, omega=2.0, tilt=0.3)
    built = [build_bath(s) for s in (first, second, disjoint_union(first, second))]
    states = [thermal_state(b.hamiltonian, ThermalParams(0.8)) for b in built]
    idx = CorrelationIndex.build("z" * len(signs), signs, [0.0, 0.4, 0.9, 1.5][:len(signs)])
    positions = tuple(range(len(signs)))
    k1, k2, union = (cumulant(positions, lambda pos, b=b, r=r: bath_correlation(idx.sub_index(pos), b, r))
                     for b, r in zip(built, states))
    assert abs(k1) + abs(k2) > 1e-4
    assert union == pytest.approx(k1 + k2, abs=1e-10)
