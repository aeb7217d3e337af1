import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

import oracles
from parabolic_orbits.applications import HgonSpec, hgon_configuration, hgon_potential, preset
from parabolic_orbits.core_model import (AnisotropicPotential, ConeRegion, KeplerPotential,
                                         MassMetric, NBodyPotential, RestrictedNHPotential,
                                         ScaledPerturbation, ZeroPerturbation, check_compatible,
                                         fd_derivative_check, homogeneity_chain_residuals,
                                         homogeneity_identity_residuals, mass_inner, mass_norm,
                                         perturbation_decay_slope, potential_eval)
from parabolic_orbits.exceptions import (ContractViolation, DimensionError, DomainError)


def test_mass_inner_examples():
    assert mass_inner(MassMetric(np.ones(2)), [3, 4], [3, 4]) == 25.0
    assert mass_norm(MassMetric(np.ones(2)), [3, 4]) == 5.0
    assert mass_inner(MassMetric(np.array([2.0, 1.0])), [1, 0], [1, 0]) == 2.0


def test_hgon_xi_has_unit_mass_norm():
    xi, _, _ = hgon_configuration(HgonSpec(2, 1.0))
    metric = MassMetric(np.full(4, 1.0))
    assert_allclose(metric.norm(xi), 1.0, rtol=0, atol=1e-14)


def test_metric_rejects_bad_weights():
    with pytest.raises(ContractViolation):
        MassMetric(np.array([1.0, 0.0]))
    with pytest.raises(DimensionError):
        MassMetric(np.ones(2)).inner(np.ones(2), np.ones(3))


def test_kepler_values():
    U, g, H = potential_eval(KeplerPotential(), [2.0, 0.0])
    assert U == 0.5
    assert_allclose(g, [-0.25, 0.0], atol=1e-15)
    assert_allclose(H, np.diag([0.25, -0.125]), atol=1e-15)


def test_hgon_value_at_xi():
    xi, _, _ = hgon_configuration(HgonSpec(2, 1.0))
    U, _, _ = hgon_potential(HgonSpec(2, 1.0)).evaluate(xi)
    assert_allclose(U, 2.5 * math.sqrt(2.0), rtol=1e-13)


@pytest.mark.parametrize("masses", [[1.0, 1.0, 1.0], [1.0, 2.0, 0.5], [3.0, 1.0, 1.0, 0.2]])
def test_nbody_matches_pair_oracle(masses):
    rng = np.random.default_rng(1)
    p = NBodyPotential(masses, 2)
    f, mu = oracles.nbody_euclid(masses, 2)
    for _ in range(5):
        x = rng.standard_normal(p.dim)
        U, g, H = p.evaluate(x)
        U0, D0, H0 = f(x)
        assert_allclose(U, U0, rtol=1e-13)
        assert_allclose(g, D0 / mu, rtol=1e-12, atol=1e-12 * np.max(np.abs(D0)))
        assert_allclose(H, H0 / mu[:, None], rtol=1e-11, atol=1e-11 * np.max(np.abs(H0)))


def test_restricted_matches_pair_oracle():
    rng = np.random.default_rng(2)
    p = RestrictedNHPotential([0.3, 0.7], primary_mass=2.0, k=2)
    f, mu = oracles.nbody_euclid([0.3, 0.7], 2, primaries=2.0)
    x = rng.standard_normal(4)
    U, g, _ = p.evaluate(x)
    U0, D0, _ = f(x)
    assert_allclose(U, U0, rtol=1e-13)
    assert_allclose(g, D0 / mu, rtol=1e-12)


def test_domain_errors():
    with pytest.raises(DomainError):
        KeplerPotential().evaluate([0.0, 0.0])
    with pytest.raises(DomainError):
        NBodyPotential([1.0, 1.0], 2).evaluate([1.0, 1.0, 1.0, 1.0])


def _potentials():
    xi_h, _, _ = hgon_configuration(HgonSpec(3, 1.0))
    return [
        (KeplerPotential(), np.array([1.0, 0.0])),
        (KeplerPotential(strength=2.0, dim=3, alpha=0.5), np.array([1.0, 0.0, 0.0])),
        (NBodyPotential([1.0, 1.0, 1.0]), oracles.lagrange_configuration()),
        (RestrictedNHPotential([1.0, 1.0]), hgon_configuration(HgonSpec(2, 1.0))[0]),
        (hgon_potential(HgonSpec(3, 1.0)), xi_h),
        (AnisotropicPotential(-0.2), np.array([1.0, 0.0])),
    ]


@pytest.mark.parametrize("p,xi", _potentials())
def test_identities_on_cone(p, xi):
    cone = ConeRegion(xi, 1.0, 0.9, p.metric)
    for x in cone.sample(20, np.random.default_rng(3)):
        e, r = homogeneity_identity_residuals(p, x)
        assert e <= 1e-10 and r <= 1e-10
        ge, he = fd_derivative_check(p, x)
        assert ge <= 1e-7 and he <= 1e-5


def test_kepler_identities_exact():
    e, r = homogeneity_identity_residuals(KeplerPotential(), [2.0, 0.0])
    assert e == 0.0 and r == 0.0
    assert fd_derivative_check(KeplerPotential(), [2.0, 0.0])[0] <= 1e-7


def test_hgon_fd_hessian_at_xi():
    spec = HgonSpec(4, 1.0)
    xi, _, _ = hgon_configuration(spec)
    assert fd_derivative_check(hgon_potential(spec), xi)[1] <= 1e-5


def test_two_centre_perturbation_value_and_fd():
    pr = preset("two-centre")
    W, _, _ = pr.perturbation.evaluate(0.0, [5.0, 0.0])
    assert_allclose(W, 0.5 / 4.7 + 0.5 / 5.3 - 1.0 / 5.0, rtol=1e-13)
    assert fd_derivative_check(pr.perturbation, [5.0, 0.0], 0.0)[0] <= 1e-7


@settings(max_examples=50, deadline=None)
@given(st.floats(0.2, 1.9), st.floats(0.1, 10.0),
       st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_homogeneity_scaling(alpha, lam, x):
    x = np.asarray(x)
    if np.linalg.norm(x) < 1e-2:
        return
    p = KeplerPotential(dim=3, alpha=alpha)
    ru, rg, rh = homogeneity_chain_residuals(p, x, lam)
    assert max(ru, rg, rh) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6), st.floats(0.5, 4.0))
def test_nbody_value_scales(x, lam):
    x = np.asarray(x)
    q = x.reshape(3, 2)
    if min(np.linalg.norm(q[i] - q[j]) for i in range(3) for j in range(i + 1, 3)) < 1e-2:
        return
    p = NBodyPotential([1.0, 2.0, 3.0])
    assert_allclose(p.evaluate(lam * x)[0], lam ** -1 * p.evaluate(x)[0], rtol=1e-12)


def test_cone_membership():
    c = ConeRegion(np.array([1.0, 0.0]), 1.0, 0.5)
    assert c.contains([2.0, 0.0])
    assert not c.contains([0.0, 2.0])
    assert not c.contains([0.5, 0.0])


def test_cone_samples_inside():
    c = ConeRegion(np.array([0.6, 0.8]), 2.0, 0.7)
    pts = c.sample(200, np.random.default_rng(0))
    assert all(c.contains(x) for x in pts)


def test_compatibility_rule():
    pr = preset("two-centre")
    check_compatible(pr.potential, pr.perturbation)
    weak = ScaledPerturbation(pr.perturbation, 0.5)
    check_compatible(pr.potential, weak)
    with pytest.raises(ContractViolation):
        check_compatible(KeplerPotential(dim=3), ZeroPerturbation(dim=2))


def test_two_centre_decay_exponent():
    pr = preset("two-centre")
    slope = perturbation_decay_slope(pr.perturbation, np.array([0.6, 0.8]),
                                     np.geomspace(10, 1e4, 20))
    # symmetric centres cancel the dipole term, so the decay beats beta = 2
    assert slope <= -2.0
    assert_allclose(slope, -3.0, atol=0.01)


def test_zero_perturbation_is_zero():
    W, G, H = ZeroPerturbation(dim=2).evaluate(3.0, [1.0, 2.0])
    assert W == 0.0 and not np.any(G) and not np.any(H)
