import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

import oracles
from parabolic_orbits.applications import (PRESETS, CentresPerturbation, HgonSpec,
                                           MovingCentres, RestrictedNHPerturbation,
                                           hgon_bs_direct, hgon_bs_threshold,
                                           hgon_closed_form_u, hgon_configuration,
                                           hgon_potential, kepler_ellipse, make_kepler_ncentre,
                                           make_restricted_nh, preset)
from parabolic_orbits.central_config import cc_residual, check_bs
from parabolic_orbits.core_model import (ConeRegion, fd_derivative_check, homogeneity_identity_residuals,
                                         perturbation_decay_slope)
from parabolic_orbits.exceptions import ConfigError, ContractViolation
from parabolic_orbits.transform import omega_from

# tests/oracles.py hgon_threshold (mpmath, 30 digits)
THRESHOLD_H4 = 3.367175148507369
THRESHOLD_H5 = 0.7367845451377246
# tests/oracles.py hgon_direct_u (pair loops)
DIRECT_U = {2: 3.5355339059327378, 3: 8.19615242270663, 4: 15.65685424949238,
            5: 26.568757573375215}


def test_centres_at_origin_give_zero():
    mc = MovingCentres.fixed([0.4, 0.6], np.zeros((2, 2)))
    _, w = make_kepler_ncentre(mc)
    assert w.is_zero
    W, G, H = w.evaluate(1.0, [3.0, 4.0])
    assert W == 0.0 and not np.any(G) and not np.any(H)
    w2 = RestrictedNHPerturbation(mc, [1.0, 1.0])
    assert w2.evaluate(0.0, [3.0, 4.0, -3.0, -4.0])[0] == 0.0


@pytest.mark.parametrize("m", [0.5, 1.0, 2.0])
def test_omega_for_assembled_problem(m):
    pr = preset("two-centre", masses=[m / 2, m / 2])
    cc = pr.configuration()
    assert_allclose(omega_from(cc.u_value, cc.alpha), (4.5 * m) ** (1.0 / 3.0), rtol=1e-14)


def test_two_centre_value():
    _, w = make_kepler_ncentre(MovingCentres.fixed([0.5, 0.5], [[-0.3, 0.0], [0.3, 0.0]]))
    W = w.evaluate(0.0, [5.0, 0.0])[0]
    assert_allclose(W, 0.5 / 4.7 + 0.5 / 5.3 - 0.2, rtol=1e-13)
    assert_allclose(W, 0.00072260136, rtol=1e-8)


def test_moving_centres_fd_and_decay():
    for mc in (MovingCentres.circular([0.3, 0.7], [0.7, 0.3], phases=[math.pi, 0.0]),
               MovingCentres.elliptic_r3bp(0.3, 0.2)):
        _, w = make_kepler_ncentre(mc)
        assert w.time_dependent
        for t in (0.0, 1.3, 4.0):
            ge, he = fd_derivative_check(w, [4.0, -3.0], t)
            assert ge <= 1e-6 and he <= 1e-5
        slope = perturbation_decay_slope(w, np.array([0.6, 0.8]), np.geomspace(10, 1e4, 12),
                                         t=0.7)
        assert slope <= -2.0 + 0.05


def test_elliptic_r3bp_positions():
    mc = MovingCentres.elliptic_r3bp(0.3, 0.2)
    P = mc.positions(np.array([0.0]))
    q0 = kepler_ellipse(0.0, 0.2)
    assert_allclose(P[0, 0], -0.3 * q0, rtol=1e-15)
    assert_allclose(P[0, 1], 0.7 * q0, rtol=1e-15)
    assert_allclose(np.linalg.norm(q0), 0.8, rtol=1e-14)


def test_kepler_ellipse_solves_kepler_equation():
    t = np.linspace(0, 10, 50)
    q = kepler_ellipse(t, 0.5)
    r = np.linalg.norm(q, axis=1)
    assert np.all(r >= 0.5 - 1e-12) and np.all(r <= 1.5 + 1e-12)


def test_restricted_nh_identities_and_decay():
    pr = preset("restricted-nh")
    rng = np.random.default_rng(0)
    cone = ConeRegion(pr.xi_plus, pr.R, pr.eta, pr.potential.metric)
    for x in cone.sample(10, rng):
        e, r = homogeneity_identity_residuals(pr.potential, x)
        assert max(e, r) <= 1e-10
        assert pr.perturbation.valid(0.0, x[None])[0]
    # single-satellite term W_j along a ray
    single = RestrictedNHPerturbation(pr.perturbation.centres, [1.0])
    slope = perturbation_decay_slope(single, np.array([0.6, 0.8]), np.geomspace(10, 1e3, 10))
    assert slope <= -2.0 + 0.05


def test_restricted_nh_mass_contract():
    mc = MovingCentres.fixed([0.5, 0.5], [[-0.3, 0.0], [0.3, 0.0]])
    with pytest.raises(ContractViolation):
        make_restricted_nh(mc, 2, [1.0, 1.0], primary_mass=2.0)
    with pytest.raises(ContractViolation):
        make_restricted_nh(mc, 1)


@pytest.mark.parametrize("H", [2, 3])
def test_hgon_closed_form_agrees(H):
    xi, u_cf, u_dir = hgon_configuration(HgonSpec(H, 1.0))
    assert abs(u_cf - u_dir) <= 1e-12 * u_cf
    assert_allclose(u_dir, DIRECT_U[H], rtol=1e-13)
    assert cc_residual(hgon_potential(HgonSpec(H, 1.0)), xi) <= 1e-10


def test_hgon2_value():
    _, u_cf, u_dir = hgon_configuration(HgonSpec(2, 1.0))
    assert abs(u_cf - 2.5 * math.sqrt(2)) <= 1e-12
    assert abs(u_dir - 2.5 * math.sqrt(2)) <= 1e-12


@pytest.mark.parametrize("H", [4, 5])
def test_hgon_gap_reported(H):
    _, u_cf, u_dir = hgon_configuration(HgonSpec(H, 1.0))
    assert_allclose(u_dir, DIRECT_U[H], rtol=1e-13)
    assert_allclose(u_cf, hgon_closed_form_u(H, 1.0))
    assert u_cf - u_dir > 0.5


def test_hgon_thresholds():
    assert_allclose(hgon_bs_threshold(4), THRESHOLD_H4, rtol=1e-14)
    assert_allclose(hgon_bs_threshold(5), THRESHOLD_H5, rtol=1e-14)
    assert_allclose(hgon_bs_threshold(4), 100 * (math.sqrt(2) / 2) ** 3 / (3 * (8 - 4.5)),
                    rtol=1e-14)
    assert abs(hgon_bs_threshold(4) - 3.3672) <= 1e-4
    assert abs(hgon_bs_threshold(5) - 0.7369) <= 1e-3
    assert hgon_bs_threshold(2) == math.inf and hgon_bs_threshold(3) == math.inf
    with pytest.raises(ContractViolation):
        hgon_bs_threshold(1)


def test_hgon_oracle_thresholds():
    assert_allclose(oracles.hgon_threshold(4), THRESHOLD_H4, rtol=1e-14)
    assert_allclose(oracles.hgon_threshold(5), THRESHOLD_H5, rtol=1e-14)


def test_hgon_direct_bs():
    assert hgon_bs_direct(HgonSpec(2, 1.0))[1]
    assert hgon_bs_direct(HgonSpec(3, 1.0))[1]
    nu1, holds = hgon_bs_direct(HgonSpec(4, 0.5 * THRESHOLD_H4))
    assert holds
    # beyond the sufficient bound: computed and reported, no claim either way
    nu1_big, _ = hgon_bs_direct(HgonSpec(4, 10 * THRESHOLD_H4))
    assert np.isfinite(nu1_big)


def test_hgon_direct_spectrum_matches_oracle():
    m = 0.5 * THRESHOLD_H4
    _, x, f, mu = oracles.hgon_direct_u(4, m)
    ev, U = oracles.tangent_spectrum(f, mu, x)
    nu1, _ = hgon_bs_direct(HgonSpec(4, m))
    assert_allclose(nu1, ev[0], rtol=1e-9, atol=1e-9 * U)


@pytest.mark.parametrize("name", PRESETS)
def test_presets_construct(name):
    pr = preset(name)
    cc = pr.configuration()
    assert cc.cc_residual <= 1e-10
    assert check_bs(cc)[0] == (name != "anisotropic")


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset("three-centre")


def test_centres_validity_region():
    w = CentresPerturbation(MovingCentres.fixed([1.0], [[0.5, 0.0]]))
    assert not w.valid(0.0, np.array([[1.0, 0.0]]))[0]
    assert w.valid(0.0, np.array([[2.0, 0.0]]))[0]
