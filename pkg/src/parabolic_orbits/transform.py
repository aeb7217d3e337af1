"""Change of variables around the homothetic parabolic solution.

With ``y(t) = eps^{3/(2+alpha)} x((t - t0) / eps^{3/2})`` the equation
``x'' = grad U(x) + grad W(t, x)`` becomes ``y'' = grad U(y) + grad W_eps(t, y)``
where ``W_eps`` is the rescaled perturbation.  Solutions are sought as
``y = y_sigma + phi`` with ``y_sigma = y0 + sigma w`` and ``phi(t0) = 0``.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_scalar, check_vector
from .core_model import ConeRegion, MassMetric
from .exceptions import ContractViolation, DomainError


def omega_from(u_value, alpha):
    """``omega = ((alpha+2)^2 U(xi) / 2)^{1/(alpha+2)}``."""
    return ((alpha + 2.0) ** 2 * u_value / 2.0) ** (1.0 / (alpha + 2.0))


def angle_exponent(alpha):
    return (2.0 - alpha) / (2.0 * (alpha + 2.0))


def angle_lower_bound(t, alpha):
    """``(2 t^s - 1) / (2 t^s + 1)`` with ``s = (2 - alpha) / (2 (alpha + 2))``."""
    ts = np.asarray(t, dtype=float) ** angle_exponent(alpha)
    return (2.0 * ts - 1.0) / (2.0 * ts + 1.0)


@dataclass(frozen=True, eq=False)
class ScalingParams:
    epsilon: float
    sigma: np.ndarray
    t0: float
    omega: float
    xi_plus: np.ndarray
    alpha: float
    metric: MassMetric

    def __post_init__(self):
        check_scalar(self.epsilon, "epsilon", low=0.0, high=1.0, include_high=False)
        check_scalar(self.t0, "t0", low=1.0)
        sigma = check_vector(self.sigma, self.metric.dim, name="sigma").copy()
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @classmethod
    def from_configuration(cls, cc, epsilon=0.0, sigma=None, t0=1.0):
        metric = MassMetric(cc.metric_weights)
        if sigma is None:
            sigma = np.zeros(metric.dim)
        return cls(epsilon=epsilon, sigma=sigma, t0=t0,
                   omega=omega_from(cc.u_value, cc.alpha), xi_plus=cc.xi_plus,
                   alpha=cc.alpha, metric=metric)

    @property
    def dim(self):
        return self.metric.dim

    @property
    def power(self):
        return 2.0 / (self.alpha + 2.0)

    @property
    def r(self):
        """Trust radius for ``|sigma|``: ``omega / (4 max|w|)`` with ``max|w| = 1``."""
        return self.omega / 4.0

    @property
    def rho(self):
        """Trust radius for ``||phi||``."""
        return self.omega / 4.0

    @property
    def space_scale(self):
        """``eps^{3/(2+alpha)}``: ``y = space_scale * x``."""
        return self.epsilon ** (3.0 / (2.0 + self.alpha))

    @property
    def time_scale(self):
        """``eps^{3/2}``: ``t_y = t0 + time_scale * t_x``."""
        return self.epsilon ** 1.5

    def replace(self, **kw):
        fields = dict(epsilon=self.epsilon, sigma=self.sigma, t0=self.t0,
                      omega=self.omega, xi_plus=self.xi_plus, alpha=self.alpha,
                      metric=self.metric)
        fields.update(kw)
        return ScalingParams(**fields)

    def describe(self):
        return {"epsilon": self.epsilon, "sigma": self.sigma.tolist(), "t0": self.t0,
                "omega": self.omega, "alpha": self.alpha, "r": self.r, "rho": self.rho}


def cond_t0_holds(t0, R, eta, omega, alpha):
    """Both start-time conditions: radius ``(omega/2) t0^p > R`` and the angle bound."""
    radius = 0.5 * omega * t0 ** (2.0 / (alpha + 2.0)) > R
    angle = float(angle_lower_bound(t0, alpha)) > eta
    return bool(radius), bool(angle)


def select_t0(R, eta, omega, alpha):
    """Smallest ``t0 >= 1`` on the 0.01 grid satisfying both start-time conditions."""
    R = check_scalar(R, "R", low=0.0, include_low=False)
    eta = check_scalar(eta, "eta", low=0.0, high=1.0, include_low=False, include_high=False)
    t_r = (2.0 * R / omega) ** ((alpha + 2.0) / 2.0)
    t_eta = ((1.0 + eta) / (2.0 * (1.0 - eta))) ** (1.0 / angle_exponent(alpha))
    t = max(1.0, t_r, t_eta)
    t = math.ceil(round(t * 100.0, 9)) / 100.0
    while not all(cond_t0_holds(t, R, eta, omega, alpha)):
        t = round(t + 0.01, 2)
    return t


class CutoffW:
    """Quintic smoothstep ``w(t0 + u) = 1 - (10u^3 - 15u^4 + 6u^5)`` on ``[0, 1]``, zero after."""

    coefficients = np.array([1.0, 0.0, 0.0, -10.0, 15.0, -6.0])

    def __init__(self, t0=1.0):
        self.t0 = float(t0)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t0 - 1e-12):
            raise DomainError("cutoff evaluated before t0")
        u = np.clip(t - self.t0, 0.0, 1.0)
        inside = (t - self.t0) < 1.0
        w = np.where(inside, 1.0 - u ** 3 * (10.0 - 15.0 * u + 6.0 * u ** 2), 0.0)
        dw = np.where(inside, -30.0 * u ** 2 * (1.0 - u) ** 2, 0.0)
        ddw = np.where(inside, -60.0 * u * (1.0 - u) * (1.0 - 2.0 * u), 0.0)
        return w, dw, ddw


def cutoff_w(t, t0=1.0):
    w, dw, ddw = CutoffW(t0)(t)
    if np.ndim(w) == 0:
        return float(w), float(dw), float(ddw)
    return w, dw, ddw


def y_sigma_eval(sp, t):
    """``y_sigma`` and its first two derivatives; batched over ``t``."""
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    p = sp.power
    w, dw, ddw = CutoffW(sp.t0)(t)
    xi, s = sp.xi_plus, sp.sigma
    y = (sp.omega * t ** p)[:, None] * xi + w[:, None] * s
    dy = (sp.omega * p * t ** (p - 1.0))[:, None] * xi + dw[:, None] * s
    ddy = (sp.omega * p * (p - 1.0) * t ** (p - 2.0))[:, None] * xi + ddw[:, None] * s
    if scalar:
        return y[0], dy[0], ddy[0]
    return y, dy, ddy


def scaled_perturbation_many(sp, w, t, Y):
    """``W_eps`` with mass-metric derivatives at a batch of ``(t, y)`` pairs."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n, d = Y.shape
    if sp.epsilon == 0.0 or w.is_zero:
        return np.zeros(n), np.zeros((n, d)), np.zeros((n, d, d))
    t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
    s = sp.space_scale
    a = sp.alpha
    X = Y / s
    tau = (t - sp.t0) / sp.time_scale
    bad = np.flatnonzero(~w.valid(tau, X))
    if bad.size:
        i = int(bad[0])
        raise DomainError("rescaled point outside the perturbation's validity region",
                          where=float(t[i]))
    W, G, H = w.evaluate_many(tau, X)
    return s ** (-a) * W, s ** (-a - 1.0) * G, s ** (-a - 2.0) * H


def scaled_perturbation(sp, w, t, y):
    W, G, H = scaled_perturbation_many(sp, w, np.array([float(t)]), np.asarray(y)[None, :])
    return float(W[0]), G[0], H[0]


def u_eps_many(sp, p, w, t, Y):
    """``U + W_eps`` with mass-metric derivatives at a batch of points."""
    U, G, H = p.evaluate_many(Y)
    We, Ge, He = scaled_perturbation_many(sp, w, t, Y)
    return U + We, G + Ge, H + He


def forcing_h(sp, p, w, t):
    """``h(t) = y_sigma''(t) - grad U_eps(t, y_sigma(t))``; batched over ``t``."""
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    y, _, ddy = y_sigma_eval(sp, t)
    _, g, _ = u_eps_many(sp, p, w, t, y)
    h = ddy - g
    return h[0] if scalar else h


_S_NODES, _S_WEIGHTS = np.polynomial.legendre.leggauss(3)
_S_NODES = 0.5 * (_S_NODES + 1.0)
_S_WEIGHTS = 0.5 * _S_WEIGHTS
# below this |phi|/|y| the direct difference loses more digits than the
# integral form of the remainder
_SMALL_RATIO = 1e-2


def remainder_K(sp, p, w, t, phi):
    """Second-order Taylor remainder ``K`` of ``U_eps`` around ``y_sigma(t)``.

    Returns ``(K, grad K, hess K)``; batched when ``t`` is an array and
    ``phi`` has one row per time.  For ``|phi| << |y|`` the value is taken
    from ``int_0^1 (1-s) <hess U_eps(y + s phi) phi, phi> ds`` (3-point
    Gauss) to avoid cancellation.
    """
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    y, _, _ = y_sigma_eval(sp, t)
    V0, G0, _ = u_eps_many(sp, p, w, t, y)
    V1, G1, H1 = u_eps_many(sp, p, w, t, y + phi)
    K = V1 - V0 - sp.metric.inner(G0, phi)
    small = sp.metric.norm(phi) < _SMALL_RATIO * sp.metric.norm(y)
    if np.any(small):
        ys, ps, ts = y[small], phi[small], t[small]
        Ks = np.zeros(ys.shape[0])
        for s_, w_ in zip(_S_NODES, _S_WEIGHTS):
            _, _, Hs = u_eps_many(sp, p, w, ts, ys + s_ * ps)
            Ks += w_ * (1.0 - s_) * sp.metric.inner(np.einsum("nij,nj->ni", Hs, ps), ps)
        K[small] = Ks
    dK = G1 - G0
    if scalar:
        return float(K[0]), dK[0], H1[0]
    return K, dK, H1


def params_from_initial(x0, cc, alpha=None, t0=1.0):
    """``(eps, sigma)`` such that the transformed start point is ``x0``.

    With ``a = omega t0^{2/(alpha+2)}``: ``eps = (a / <x0, xi>)^{(2+alpha)/3}``
    and ``sigma = a (x0 / <x0, xi> - xi)``, so that
    ``x0 = eps^{-3/(2+alpha)} (a xi + sigma)``.
    """
    alpha = cc.alpha if alpha is None else alpha
    if abs(alpha - cc.alpha) > 0.0:
        raise ContractViolation("alpha does not match the central configuration")
    metric = MassMetric(cc.metric_weights)
    x0 = check_vector(x0, metric.dim, name="x0")
    xi = cc.xi_plus
    proj = float(metric.inner(x0, xi))
    if proj <= 0.0:
        raise ContractViolation("x0 must satisfy <x0, xi_plus> > 0")
    omega = omega_from(cc.u_value, alpha)
    a = omega * t0 ** (2.0 / (alpha + 2.0))
    eps = (a / proj) ** ((2.0 + alpha) / 3.0)
    if eps >= 1.0:
        raise ContractViolation(f"x0 too close to the origin: epsilon = {eps:.4g} >= 1")
    sigma = a * (x0 / proj - xi)
    sigma = sigma - metric.inner(sigma, xi) * xi
    return ScalingParams(epsilon=eps, sigma=sigma, t0=t0, omega=omega, xi_plus=xi,
                         alpha=alpha, metric=metric)


def initial_from_params(sp):
    """``x0 = eps^{-3/(2+alpha)} (omega t0^{2/(alpha+2)} xi + sigma)``."""
    if sp.epsilon == 0.0:
        raise ContractViolation("epsilon = 0 has no physical start point")
    return (sp.omega * sp.t0 ** sp.power * sp.xi_plus + sp.sigma) / sp.space_scale


def admissible_cone(cc, eps_star, r_star, R, eta, t0=1.0):
    """Cone of start points mapped into ``]0, eps*[ x B_{r*}``.

    ``R' = max(eps*^{-3/(2+alpha)} sqrt(a^2 + r*^2), R)`` and
    ``eta' = max(eta, a / sqrt(a^2 + r*^2))`` with ``a = omega t0^{2/(alpha+2)}``.
    """
    check_scalar(eps_star, "eps_star", low=0.0, high=1.0, include_low=False,
                 include_high=False)
    check_scalar(r_star, "r_star", low=0.0, include_low=False)
    alpha = cc.alpha
    a = omega_from(cc.u_value, alpha) * t0 ** (2.0 / (alpha + 2.0))
    hyp = math.hypot(a, r_star)
    R_prime = max(eps_star ** (-3.0 / (2.0 + alpha)) * hyp, R)
    eta_prime = max(eta, a / hyp)
    return ConeRegion(cc.xi_plus, R_prime, eta_prime, MassMetric(cc.metric_weights))
