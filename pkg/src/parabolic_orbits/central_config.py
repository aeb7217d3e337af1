"""Central configurations on the inertia ellipsoid and the spectral (BS) test.

A central configuration is a critical point of ``U`` restricted to the unit
sphere of the mass norm.  For a ``-alpha`` homogeneous potential the
Riemannian gradient at a unit vector ``xi`` is ``grad U(xi) + alpha U(xi) xi``
and the Riemannian Hessian, expressed in a mass-orthonormal tangent basis
``B``, is ``B^T D^2U(xi) B + alpha U(xi) I``.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_random_state, check_vector
from .core_model import PotentialSpec
from .exceptions import (ContractViolation, ConvergenceError, DomainError,
                         NotCentralConfigurationError)

UNIT_TOL = 1e-9
CC_TOL_SPECTRUM = 1e-8
BS_DEGENERACY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CentralConfiguration:
    xi_plus: np.ndarray
    u_value: float
    cc_residual: float
    tangent_spectrum: np.ndarray
    nu1: float
    bs_margin: float
    alpha: float
    newton_iters: int = 0
    gradient_iters: int = 0
    metric_weights: np.ndarray = field(default=None, repr=False)

    @property
    def threshold(self):
        """``-(2 - alpha)^2 / 8 * U(xi)``; (BS) asks for ``nu1`` strictly above it."""
        return -(2.0 - self.alpha) ** 2 / 8.0 * self.u_value

    def to_certificate(self):
        holds, margin, zeta = check_bs(self)
        return {
            "xi_plus": self.xi_plus.tolist(),
            "u_value": self.u_value,
            "alpha": self.alpha,
            "cc_residual": self.cc_residual,
            "spectrum": self.tangent_spectrum.tolist(),
            "nu1": self.nu1,
            "bs_margin": margin,
            "bs_threshold": self.threshold,
            "zeta": zeta,
            "holds": holds,
        }


def tangent_basis(metric, xi):
    """Mass-orthonormal basis of ``{v : <v, xi> = 0}`` as columns of a ``(d, d-1)`` array.

    Orthonormalisation is carried out in the coordinates ``z = M^{1/2} x``
    (Householder QR, i.e. numerically stable Gram-Schmidt).
    """
    sw = np.sqrt(metric.weights)
    z = sw * xi
    d = z.size
    Q, _ = np.linalg.qr(np.column_stack([z, np.eye(d)]))
    return Q[:, 1:d] / sw[:, None]


def _check_unit(p, xi):
    xi = check_vector(xi, p.dim, name="xi")
    n = p.metric.norm(xi)
    if abs(n - 1.0) > UNIT_TOL:
        raise ContractViolation(f"xi must have unit mass norm, got |xi| = {n!r}")
    return xi


def _riemannian(p, xi):
    """Value, Riemannian gradient (ambient vector) and tangent Hessian matrix."""
    U, g, _ = p.evaluate(xi)
    _, _, D2 = p.euclidean_many(xi[None, :])
    B = tangent_basis(p.metric, xi)
    rgrad = g + p.alpha * U * xi
    S = B.T @ D2[0] @ B + p.alpha * U * np.eye(B.shape[1])
    return U, rgrad, 0.5 * (S + S.T), B


def cc_residual(p, xi):
    """``|grad U(xi) + alpha U(xi) xi|`` in the mass norm, for unit ``xi``."""
    xi = _check_unit(p, xi)
    U, g, _ = p.evaluate(xi)
    return float(p.metric.norm(g + p.alpha * U * xi))


def tangent_hessian_spectrum(p, xi, tol=CC_TOL_SPECTRUM):
    """Sorted eigenvalues of the Hessian of ``U`` restricted to the ellipsoid at ``xi``."""
    xi = _check_unit(p, xi)
    res = cc_residual(p, xi)
    if res > tol:
        raise NotCentralConfigurationError(
            f"xi is not a central configuration (residual {res:.3e} > {tol:.1e})")
    _, _, S, _ = _riemannian(p, xi)
    return np.linalg.eigvalsh(S)


def certify(p, xi, newton_iters=0, gradient_iters=0):
    """Build a :class:`CentralConfiguration` from a known unit critical point."""
    xi = _check_unit(p, xi)
    xi = xi / p.metric.norm(xi)
    spectrum = tangent_hessian_spectrum(p, xi)
    U = p.evaluate(xi)[0]
    nu1 = float(spectrum[0]) if spectrum.size else 0.0
    return CentralConfiguration(
        xi_plus=xi, u_value=U, cc_residual=cc_residual(p, xi),
        tangent_spectrum=spectrum, nu1=nu1,
        bs_margin=nu1 + (2.0 - p.alpha) ** 2 / 8.0 * U, alpha=p.alpha,
        newton_iters=newton_iters, gradient_iters=gradient_iters,
        metric_weights=p.metric.weights)


def _descend(p, xi, max_iter, tol, max_step=0.2):
    """Hybrid Riemannian Newton / projected-gradient iteration from a unit ``xi``.

    A Newton step (least-squares solve, so flat directions such as rotations
    are harmless) is accepted when it reduces the residual; otherwise a
    damped gradient step on the merit ``0.5 |grad|^2`` is taken, with
    Levenberg-Marquardt damping increased until the residual decreases.
    """
    m = p.metric
    n_newton = n_grad = 0
    U, rg, S, B = _riemannian(p, xi)
    res = m.norm(rg)
    for _ in range(max_iter):
        if res <= tol:
            break
        coeff = B.T @ (m.weights * rg)
        c, *_ = np.linalg.lstsq(S, -coeff, rcond=None)
        step = B @ c
        sn = m.norm(step)
        if sn > max_step:
            step *= max_step / sn
        accepted = False
        for _ in range(8):
            cand = xi + step
            cand /= m.norm(cand)
            if p.in_domain(cand):
                Uc, rgc, Sc, Bc = _riemannian(p, cand)
                if m.norm(rgc) < res:
                    xi, U, rg, S, B = cand, Uc, rgc, Sc, Bc
                    n_newton += 1
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            # Levenberg-Marquardt on 0.5 |grad|^2: stays near saddles, unlike
            # descent on U itself
            lam = 1e-3 * max(np.max(np.abs(S)), 1.0)
            for _ in range(60):
                c = np.linalg.solve(S @ S + lam * np.eye(S.shape[0]), -S @ coeff)
                cand = xi + B @ c
                cand /= m.norm(cand)
                if p.in_domain(cand):
                    Uc, rgc, Sc, Bc = _riemannian(p, cand)
                    if m.norm(rgc) < res:
                        break
                lam *= 4.0
            else:
                raise ConvergenceError("Levenberg-Marquardt step failed to reduce the residual")
            xi, U, rg, S, B = cand, Uc, rgc, Sc, Bc
            n_grad += 1
        res = m.norm(rg)
    if res > tol:
        raise ConvergenceError(
            f"no central configuration within {max_iter} iterations (residual {res:.3e})")
    return xi, n_newton, n_grad


def find_central_configuration(p, seed, max_iter=200, tol=1e-12, n_restarts=0,
                               noise=0.05, random_state=0):
    """Locate a central configuration near ``seed``.

    With ``n_restarts > 0`` additional starts are drawn around the seed from
    a fixed RNG; the converged configuration of lowest ``U`` wins, ties broken
    by lexicographic order of ``xi``.
    """
    if not isinstance(p, PotentialSpec):
        raise TypeError("p must be a PotentialSpec")
    seed = check_vector(seed, p.dim, name="seed")
    n = p.metric.norm(seed)
    if n == 0.0:
        raise ContractViolation("seed must be nonzero")
    starts = [seed / n]
    rng = check_random_state(random_state)
    for _ in range(n_restarts):
        s = starts[0] + noise * rng.standard_normal(p.dim)
        starts.append(s / p.metric.norm(s))
    found = []
    last_error = None
    for s in starts:
        if not p.in_domain(s):
            raise DomainError("seed direction lies outside the potential domain")
        try:
            xi, nn, ng = _descend(p, s, max_iter, tol)
        except ConvergenceError as exc:
            last_error = exc
            continue
        found.append(certify(p, xi, nn, ng))
    if not found:
        raise last_error
    found.sort(key=lambda cc: (round(cc.u_value, 10), tuple(np.round(cc.xi_plus, 10))))
    return found[0]


def check_bs(cc):
    """Return ``(holds, margin, zeta)`` for the (BS) condition.

    ``zeta = min((2 - alpha)^2 / 8, margin / U(xi))`` is the constant used
    for the coercivity bound ``8 zeta / (alpha + 2)^2``.
    """
    c = (2.0 - cc.alpha) ** 2 / 8.0
    margin = float(cc.nu1 + c * cc.u_value)
    holds = bool(margin > BS_DEGENERACY_TOL)
    zeta = float(min(c, margin / cc.u_value))
    return holds, margin, zeta


class CentralConfigurationFinder(BaseEstimator):
    """Estimator wrapper around :func:`find_central_configuration`.

    Parameters
    ----------
    seed : array-like or None
        Starting direction. ``None`` uses the normalised all-ones vector.
    max_iter, tol, n_restarts, noise, random_state
        Passed to :func:`find_central_configuration`.

    Attributes
    ----------
    configuration_ : CentralConfiguration
    xi_plus_, nu1_, bs_margin_, holds_, zeta_
    """

    def __init__(self, seed=None, max_iter=200, tol=1e-12, n_restarts=0,
                 noise=0.05, random_state=0):
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol
        self.n_restarts = n_restarts
        self.noise = noise
        self.random_state = random_state

    def fit(self, potential, y=None):
        seed = np.ones(potential.dim) if self.seed is None else self.seed
        cc = find_central_configuration(
            potential, seed, max_iter=self.max_iter, tol=self.tol,
            n_restarts=self.n_restarts, noise=self.noise,
            random_state=self.random_state)
        self.configuration_ = cc
        self.xi_plus_ = cc.xi_plus
        self.nu1_ = cc.nu1
        self.holds_, self.bs_margin_, self.zeta_ = check_bs(cc)
        return self

    def certificate(self):
        return self.configuration_.to_certificate()
