"""Catalog of problems: N-centre / restricted bodies, restricted (N+H)-body and the H-gon."""

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_scalar, check_vector
from .central_config import certify, check_bs, find_central_configuration
from .core_model import (AnisotropicPotential, KeplerPotential, MassMetric, NBodyPotential, PerturbationSpec,
                         RestrictedNHPotential, ZeroPerturbation, _inverse_power)
from .exceptions import ConfigError, ContractViolation

TWO_PI = 2.0 * math.pi


def kepler_ellipse(t, eccentricity):
    """Relative position on a unit-semi-major-axis Kepler ellipse with mean motion 1."""
    e = check_scalar(eccentricity, "eccentricity", low=0.0, high=1.0, include_high=False)
    M = np.mod(np.asarray(t, dtype=float), TWO_PI)
    E = M + e * np.sin(M)
    for _ in range(50):
        dE = (E - e * np.sin(E) - M) / (1.0 - e * np.cos(E))
        E = E - dE
        if np.all(np.abs(dE) < 1e-15):
            break
    return np.stack([np.cos(E) - e, math.sqrt(1.0 - e * e) * np.sin(E)], axis=-1)


class MovingCentres:
    """Primaries of masses ``m_i`` moving on bounded trajectories in R^k.

    ``positions(t)`` maps a time array of shape ``(n,)`` to ``(n, N, k)``.
    ``bound`` is ``Xi = sup_t max_i |c_i(t)|``; when not supplied it is
    estimated from 4096 samples over ``window``.
    """

    def __init__(self, masses, positions, k=2, bound=None, window=TWO_PI, kind="custom",
                 params=None):
        masses = check_vector(masses, name="masses")
        if masses.size < 1 or np.any(masses <= 0):
            raise ContractViolation("centre masses must be positive")
        self.masses = masses
        self.k = int(k)
        self._positions = positions
        self.kind = kind
        self.params = dict(params or {})
        if bound is None:
            ts = np.linspace(0.0, window, 4096)
            P = self.positions(ts)
            bound = float(np.max(np.linalg.norm(P, axis=-1)))
            if not np.isfinite(bound) or bound > 1e8:
                raise ContractViolation("centre trajectories appear unbounded")
        self.bound = float(bound)

    @property
    def total_mass(self):
        return float(np.sum(self.masses))

    @property
    def n_centres(self):
        return self.masses.size

    def positions(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        P = np.asarray(self._positions(t), dtype=float)
        return P.reshape(t.size, self.n_centres, self.k)

    @classmethod
    def fixed(cls, masses, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        masses = np.asarray(masses, dtype=float)
        if pts.shape[0] != masses.size:
            raise ContractViolation("one point per centre mass is required")

        def positions(t):
            return np.broadcast_to(pts, (t.size,) + pts.shape)

        return cls(masses, positions, k=pts.shape[1],
                   bound=float(np.max(np.linalg.norm(pts, axis=1))), kind="fixed",
                   params={"points": pts.tolist()})

    @classmethod
    def circular(cls, masses, radii, frequency=1.0, phases=None):
        masses = np.asarray(masses, dtype=float)
        radii = np.broadcast_to(np.asarray(radii, dtype=float), masses.shape)
        phases = np.zeros(masses.size) if phases is None else np.asarray(phases, dtype=float)

        def positions(t):
            ang = frequency * t[:, None] + phases[None, :]
            return np.stack([radii * np.cos(ang), radii * np.sin(ang)], axis=-1)

        return cls(masses, positions, k=2, bound=float(np.max(np.abs(radii))), kind="circular",
                   params={"radii": radii.tolist(), "frequency": frequency,
                           "phases": phases.tolist()})

    @classmethod
    def elliptic_r3bp(cls, mu=0.3, eccentricity=0.2):
        """``m1 = mu, m2 = 1 - mu, c1 = -mu q0(t), c2 = (1 - mu) q0(t)``, ``q0`` a Kepler ellipse."""
        mu = check_scalar(mu, "mu", low=0.0, high=1.0, include_low=False, include_high=False)

        def positions(t):
            q0 = kepler_ellipse(t, eccentricity)
            return np.stack([-mu * q0, (1.0 - mu) * q0], axis=1)

        bound = max(mu, 1.0 - mu) * (1.0 + eccentricity)
        return cls([mu, 1.0 - mu], positions, k=2, bound=bound, kind="elliptic",
                   params={"mu": mu, "eccentricity": eccentricity})

    def describe(self):
        return {"kind": self.kind, "masses": self.masses.tolist(), "bound": self.bound,
                **self.params}


class CentresPerturbation(PerturbationSpec):
    """``W(t, x) = sum_i m_i / |x - c_i(t)| - m / |x|`` with ``m = sum_i m_i``; ``beta = 2``."""

    name = "n-centre"
    beta = 2.0

    def __init__(self, centres):
        super().__init__(MassMetric.euclidean(centres.k))
        self.centres = centres
        self.time_dependent = centres.kind not in ("fixed",)
        self.valid_radius = centres.bound + 1.0

    @property
    def is_zero(self):
        return self.centres.bound == 0.0

    def valid(self, t, X):
        X = np.atleast_2d(X)
        return np.einsum("ni,ni->n", X, X) > self.valid_radius ** 2

    def _domain_violation(self, t, X):
        if np.any(np.einsum("ni,ni->n", X, X) == 0.0):
            return "evaluation at the origin", None
        P = self.centres.positions(t)
        for i in range(self.centres.n_centres):
            d = X - P[:, i, :]
            hit = np.flatnonzero(np.einsum("ni,ni->n", d, d) == 0.0)
            if hit.size:
                return f"collision with centre {i}", (float(t[hit[0]]), i)
        return None

    def _euclidean(self, t, X):
        P = self.centres.positions(t)
        m = self.centres.total_mass
        v, g, h = _inverse_power(X, 1.0)
        W, G, H = -m * v, -m * g, -m * h
        for i, mi in enumerate(self.centres.masses):
            v, g, h = _inverse_power(X - P[:, i, :], 1.0)
            W += mi * v
            G += mi * g
            H += mi * h
        return W, G, H

    def describe(self):
        out = super().describe()
        out["centres"] = self.centres.describe()
        return out


class RestrictedNHPerturbation(PerturbationSpec):
    """``W = sum_j m_j (sum_i m~_i / |q_j - c_i(t)| - m~ / |q_j|)``; ``beta = 2``."""

    name = "restricted-nh"
    beta = 2.0

    def __init__(self, centres, satellite_masses):
        self.masses = check_vector(satellite_masses, name="satellite_masses")
        self.k = centres.k
        super().__init__(MassMetric.for_bodies(self.masses, self.k))
        self.centres = centres
        self.time_dependent = centres.kind not in ("fixed",)
        self.valid_radius = centres.bound + 1.0

    @property
    def is_zero(self):
        return self.centres.bound == 0.0

    def _bodies(self, X):
        return X.reshape(X.shape[0], self.masses.size, self.k)

    def valid(self, t, X):
        Q = self._bodies(np.atleast_2d(X))
        return np.all(np.linalg.norm(Q, axis=-1) > self.valid_radius, axis=1)

    def _domain_violation(self, t, X):
        Q = self._bodies(X)
        P = self.centres.positions(t)
        for j in range(self.masses.size):
            if np.any(np.einsum("ni,ni->n", Q[:, j], Q[:, j]) == 0.0):
                return f"satellite {j} at the origin", (None, j)
            for i in range(self.centres.n_centres):
                d = Q[:, j] - P[:, i]
                hit = np.flatnonzero(np.einsum("ni,ni->n", d, d) == 0.0)
                if hit.size:
                    return f"satellite {j} collides with centre {i}", (float(t[hit[0]]), j, i)
        return None

    def _euclidean(self, t, X):
        n = X.shape[0]
        Q = self._bodies(X)
        P = self.centres.positions(t)
        H_s, k = self.masses.size, self.k
        mt = self.centres.total_mass
        W = np.zeros(n)
        G = np.zeros((n, H_s, k))
        Hm = np.zeros((n, H_s, k, H_s, k))
        for j, mj in enumerate(self.masses):
            v, g, h = _inverse_power(Q[:, j], 1.0)
            wj, gj, hj = -mt * v, -mt * g, -mt * h
            for i, mi in enumerate(self.centres.masses):
                v, g, h = _inverse_power(Q[:, j] - P[:, i], 1.0)
                wj += mi * v
                gj += mi * g
                hj += mi * h
            W += mj * wj
            G[:, j] = mj * gj
            Hm[:, j, :, j, :] = mj * hj
        d = H_s * k
        return W, G.reshape(n, d), Hm.reshape(n, d, d)


def make_kepler_ncentre(mc, d=None):
    """``U = m / |x|`` and the N-centre remainder ``W``; ``alpha = 1``, ``beta = 2``."""
    if d is not None and d != mc.k:
        raise ContractViolation("dimension does not match the centre trajectories")
    if not np.isfinite(mc.bound):
        raise ContractViolation("centre trajectories must be bounded")
    return KeplerPotential(mc.total_mass, dim=mc.k), CentresPerturbation(mc)


def make_restricted_nh(mc, H, masses=None, primary_mass=None):
    """Restricted (N+H)-body potential and perturbation on ``d = k H``."""
    if H < 2:
        raise ContractViolation("H must be at least 2")
    masses = np.ones(H) if masses is None else check_vector(masses, H, name="masses")
    m_tilde = mc.total_mass if primary_mass is None else primary_mass
    if abs(m_tilde - mc.total_mass) > 1e-12:
        raise ContractViolation("primary_mass must equal the total centre mass")
    return (RestrictedNHPotential(masses, m_tilde, mc.k),
            RestrictedNHPerturbation(mc, masses))


def restricted_nh_cone_radius(xi, masses, k, eta, bound):
    """Radius ``R`` such that ``|x| > R`` in the cone forces ``|q_j| > bound + 1`` for all j.

    For a unit ``x`` at mass-angle ``theta`` from ``xi`` (``cos theta >= eta``),
    ``|q_j| >= eta |xi_j| - sqrt(1 - eta^2) / sqrt(m_j)``.
    """
    masses = np.asarray(masses, dtype=float)
    Z = np.asarray(xi, dtype=float).reshape(masses.size, k)
    lower = eta * np.linalg.norm(Z, axis=1) - math.sqrt(1.0 - eta * eta) / np.sqrt(masses)
    if np.any(lower <= 0.0):
        raise ContractViolation(
            f"aperture eta={eta} too wide: the cone reaches a collision with the origin")
    return float((bound + 1.0) / np.min(lower))


# --------------------------------------------------------------------------
# regular H-gon


@dataclass(frozen=True)
class HgonSpec:
    H: int
    m: float = 1.0
    m_tilde: float = 1.0
    k: int = 2

    def __post_init__(self):
        if int(self.H) != self.H or self.H < 2:
            raise ContractViolation("H must be an integer >= 2")
        check_scalar(self.m, "m", low=0.0, include_low=False)


def hgon_potential(spec):
    return RestrictedNHPotential(np.full(spec.H, spec.m), spec.m_tilde, spec.k)


def hgon_closed_form_u(H, m):
    """Closed-form ``U(xi)`` built on the equal-distance premise for all pairs."""
    return (H * m) ** 1.5 + H ** 1.5 * (H - 1) * m ** 2.5 / (4.0 * math.sin(math.pi / H))


def hgon_configuration(spec):
    """Regular H-gon on the circle of radius ``1/sqrt(H m)``.

    Returns ``(xi_plus, u_closed_form, u_direct)``.
    """
    H, m = spec.H, spec.m
    rad = 1.0 / math.sqrt(H * m)
    ang = TWO_PI * np.arange(H) / H
    Z = np.zeros((H, spec.k))
    Z[:, 0] = rad * np.cos(ang)
    Z[:, 1] = rad * np.sin(ang)
    xi = Z.ravel()
    u_direct = hgon_potential(spec).evaluate(xi)[0]
    return xi, hgon_closed_form_u(H, m), u_direct


def hgon_bs_threshold(H):
    """Mass below which the closed-form quadratic-form bound gives (BS); ``inf`` for H in {2, 3}."""
    if int(H) != H or H < 2:
        raise ContractViolation("H must be an integer >= 2")
    if H <= 3:
        return math.inf
    s = math.sin(math.pi / H)
    return 100.0 * s ** 3 / ((H - 1) * (2 * H - 9 * s * s))


def hgon_bs_direct(spec):
    """Direct spectral check of (BS) at the geometric H-gon; returns ``(nu1, holds)``."""
    xi, _, _ = hgon_configuration(spec)
    cc = certify(hgon_potential(spec), xi)
    holds, _, _ = check_bs(cc)
    return cc.nu1, holds


# --------------------------------------------------------------------------
# presets


@dataclass(eq=False)
class Problem:
    name: str
    potential: object
    perturbation: object
    seed: np.ndarray
    R: float
    eta: float
    xi_plus: np.ndarray = None
    info: dict = field(default_factory=dict)

    def configuration(self):
        """Certified central configuration: exact ``xi_plus`` if given, else searched from ``seed``."""
        if self.xi_plus is not None:
            return certify(self.potential, self.xi_plus)
        return find_central_configuration(self.potential, self.seed)


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def preset(name, **kw):
    """Build a named problem; keyword arguments override the defaults."""
    if name == "kepler":
        d = kw.get("dim", 2)
        pot = KeplerPotential(kw.get("strength", 1.0), dim=d, alpha=kw.get("alpha", 1.0))
        xi = _unit(kw.get("xi", np.eye(d)[0]))
        return Problem(name, pot, ZeroPerturbation(metric=pot.metric), xi,
                       kw.get("R", 1.0), kw.get("eta", 0.5), xi_plus=xi)
    if name == "two-centre":
        half = kw.get("half_distance", 0.3)
        masses = kw.get("masses", [0.5, 0.5])
        mc = MovingCentres.fixed(masses, [[-half, 0.0], [half, 0.0]])
        pot, pert = make_kepler_ncentre(mc)
        xi = _unit(kw.get("xi", [0.6, 0.8]))
        return Problem(name, pot, pert, xi, kw.get("R", mc.bound + 1.0), kw.get("eta", 0.5),
                       xi_plus=xi, info={"centres": mc.describe()})
    if name == "elliptic-r3bp":
        mc = MovingCentres.elliptic_r3bp(kw.get("mu", 0.3), kw.get("eccentricity", 0.2))
        pot, pert = make_kepler_ncentre(mc)
        xi = _unit(kw.get("xi", [0.6, 0.8]))
        return Problem(name, pot, pert, xi, kw.get("R", mc.bound + 1.0), kw.get("eta", 0.5),
                       xi_plus=xi, info={"centres": mc.describe()})
    if name == "nbody":
        masses = kw.get("masses", [1.0, 1.0, 1.0])
        pot = NBodyPotential(masses, kw.get("k", 2))
        if "seed" in kw:
            seed = np.asarray(kw["seed"], dtype=float)
        else:
            ang = TWO_PI * np.arange(len(masses)) / len(masses)
            seed = np.column_stack([np.cos(ang), np.sin(ang)]).ravel()
        return Problem(name, pot, ZeroPerturbation(metric=pot.metric), seed,
                       kw.get("R", 1.0), kw.get("eta", 0.5))
    if name in ("restricted-nh", "hgon"):
        H = int(kw.get("H", 2 if name == "restricted-nh" else 3))
        m = kw.get("m", 1.0)
        spec = HgonSpec(H, m)
        xi, u_cf, u_dir = hgon_configuration(spec)
        half = kw.get("half_distance", 0.3)
        mc = MovingCentres.fixed([0.5, 0.5], [[-half, 0.0], [half, 0.0]])
        pot, pert = make_restricted_nh(mc, H, np.full(H, m), 1.0)
        eta = kw.get("eta", 0.95)
        R = kw.get("R", restricted_nh_cone_radius(xi, np.full(H, m), 2, eta, mc.bound))
        return Problem(name, pot, pert, xi, R, eta, xi_plus=xi,
                       info={"H": H, "m": m, "u_closed_form": u_cf, "u_direct": u_dir,
                             "threshold": hgon_bs_threshold(H), "centres": mc.describe()})
    if name == "anisotropic":
        # synthetic potential whose xi = e_0 fails (BS) when anisotropy < -(2-alpha)^2/16
        pot = AnisotropicPotential(kw.get("anisotropy", -0.2), dim=2, alpha=kw.get("alpha", 1.0))
        xi = np.array([1.0, 0.0])
        return Problem(name, pot, ZeroPerturbation(metric=pot.metric), xi,
                       kw.get("R", 1.0), kw.get("eta", 0.5), xi_plus=xi)
    raise ConfigError(f"unknown preset {name!r}")


PRESETS = ("kepler", "two-centre", "elliptic-r3bp", "nbody", "restricted-nh", "hgon",
           "anisotropic")
