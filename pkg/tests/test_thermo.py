import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zrp import ThermoTable, builtin_rate
from zrp.thermo import DensityRangeError

RHO_GRID = np.round(np.arange(1, 51) * 0.1, 10)


def test_partition_function_linear(linear_thermo):
    assert linear_thermo.partition_function(1.0) == pytest.approx(np.e, rel=1e-14)
    assert linear_thermo.partition_function(2.0, order=1) == pytest.approx(np.exp(2.0), rel=1e-13)
    assert linear_thermo.partition_function(2.0, order=2) == pytest.approx(np.exp(2.0), rel=1e-13)


def test_partition_function_at_zero(e1_thermo, queue_thermo):
    assert e1_thermo.partition_function(0.0) == 1.0
    assert queue_thermo.partition_function(0.0) == 1.0


def test_partition_function_geometric(queue_thermo):
    assert queue_thermo.partition_function(0.5) == pytest.approx(2.0, rel=1e-14)
    # Z' = 1/(1-phi)^2
    assert queue_thermo.partition_function(0.5, order=1) == pytest.approx(4.0, rel=1e-13)


def test_fugacity_examples(linear_thermo, queue_thermo, e1_thermo):
    assert linear_thermo.fugacity_of_density(2.0) == pytest.approx(2.0, rel=1e-12)
    assert queue_thermo.fugacity_of_density(1.0) == pytest.approx(0.5, rel=1e-12)
    assert e1_thermo.fugacity_of_density(0.0) == 0.0


def test_linear_transport(linear_thermo):
    tc = linear_thermo.transport_coefficients(3.0)
    assert tc.D == pytest.approx(1.0, abs=1e-12)
    assert tc.S == pytest.approx(1.0, abs=1e-12)
    assert tc.chi == pytest.approx(3.0, rel=1e-12)


def test_queue_transport(queue_thermo):
    tc = queue_thermo.transport_coefficients(1.0)
    assert (tc.phi, tc.D, tc.S, tc.chi) == pytest.approx((0.5, 0.25, 0.5, 2.0), rel=1e-11)
    assert tc.S * tc.rho == pytest.approx(tc.chi * tc.D, rel=1e-11)
    assert tc.Sprime_rho == pytest.approx(tc.D - tc.S)


def test_zero_density_limits(e1_thermo):
    tc = e1_thermo.transport_coefficients(0.0)
    assert tc.S == tc.D == 1.5
    assert tc.chi == 0.0
    assert e1_thermo.self_diffusion_of(np.array([0.0]))[0] == 1.5
    assert e1_thermo.dphi_of(np.array([0.0]))[0] == pytest.approx(1.5, rel=1e-8)


@pytest.mark.parametrize("name", ["linear_thermo", "e1_thermo", "queue_thermo"])
def test_transport_identity(name, request):
    th = request.getfixturevalue(name)
    for rho in RHO_GRID:
        tc = th.transport_coefficients(rho)
        assert abs(tc.S * rho - tc.chi * tc.D) <= 1e-8 * max(1.0, tc.S * rho)


def test_colour_linear_identity(linear_thermo):
    cc = linear_thermo.colour_coefficients([1.0, 2.0])
    np.testing.assert_allclose(cc.D_matrix, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(cc.A_matrix, np.diag([1.0, 2.0]), rtol=1e-12)


def test_colour_queue_matrix(queue_thermo):
    cc = queue_thermo.colour_coefficients([0.5, 0.5])
    np.testing.assert_allclose(cc.D_matrix, [[0.375, -0.125], [-0.125, 0.375]], atol=1e-11)
    np.testing.assert_allclose(cc.D_matrix.sum(axis=0), 0.25, atol=1e-11)


def test_single_colour_contracts(e1_thermo):
    cc = e1_thermo.colour_coefficients([1.3])
    tc = e1_thermo.transport_coefficients(1.3)
    assert cc.D_matrix[0, 0] == pytest.approx(tc.D, rel=1e-14)
    assert cc.A_matrix[0, 0] == pytest.approx(tc.chi * tc.D, rel=1e-14)


def test_colour_errors(e1_thermo):
    with pytest.raises(ValueError):
        e1_thermo.colour_coefficients([0.0, 0.0])
    with pytest.raises(ValueError):
        e1_thermo.colour_coefficients([1.0, -0.1])


@given(st.lists(st.floats(0.0, 2.0), min_size=2, max_size=4).filter(lambda v: sum(v) > 0.05))
def test_colour_column_sums(e1_thermo, rho_vec):
    cc = e1_thermo.colour_coefficients(rho_vec)
    D = e1_thermo.transport_coefficients(sum(rho_vec)).D
    np.testing.assert_allclose(cc.D_matrix.sum(axis=0), D, atol=1e-10)
    assert cc.phi_vec.sum() == pytest.approx(e1_thermo.fugacity_of_density(sum(rho_vec)), rel=1e-12)
    assert np.all(np.diag(cc.A_matrix) >= 0)


@given(st.floats(1e-3, 10.0))
def test_inversion_round_trip(e1_thermo, rho):
    phi = e1_thermo.fugacity_of_density(rho)
    assert e1_thermo.density_of_fugacity(phi) == pytest.approx(rho, rel=1e-10)


@given(st.floats(0.05, 2.0), st.floats(0.05, 2.0), st.floats(0.01, 1.0))
def test_colour_fugacity_monotone(e1_thermo, r1, r2, bump):
    a = e1_thermo.colour_coefficients([r1, r2]).phi_vec[0]
    b = e1_thermo.colour_coefficients([r1 + bump, r2]).phi_vec[0]
    assert b > a


def test_sigma2_over_rho_bounded(e1_thermo):
    ratios = [e1_thermo.transport_coefficients(r).sigma2 / r for r in RHO_GRID]
    assert 0.5 < min(ratios) and max(ratios) < 2.0


def test_partition_function_increasing(e1_thermo):
    z = [e1_thermo.partition_function(p) for p in np.linspace(0, 5, 30)]
    assert np.all(np.diff(z) > 0)


def test_vectorised_matches_scalar(e1_thermo):
    rhos = np.array([0.05, 0.7, 1.0, 2.3, 4.9])
    tc = [e1_thermo.transport_coefficients(r) for r in rhos]
    np.testing.assert_allclose(e1_thermo.phi_of(rhos), [t.phi for t in tc], rtol=1e-10)
    np.testing.assert_allclose(e1_thermo.dphi_of(rhos), [t.D for t in tc], rtol=1e-9)
    np.testing.assert_allclose(e1_thermo.sigma2_of(rhos), [t.sigma2 for t in tc], rtol=1e-9)


def test_profile_range_checked(e1_thermo):
    with pytest.raises(DensityRangeError):
        e1_thermo.phi_of(np.array([1.0, 50.0]))


def test_moment_ratios_poisson(linear_thermo):
    # Poisson(1) central moments: 1, 4, 41
    r = linear_thermo.moment_ratios(1.0, kmax=3)
    np.testing.assert_allclose(r, [1.0, 4.0, 41.0], rtol=1e-10)


def test_queue_density_out_of_reach():
    th = ThermoTable(builtin_rate("custom_table", {"table": [0, 1, 1]}), phi_max=0.9)
    with pytest.raises(DensityRangeError):
        th.fugacity_of_density(100.0)
