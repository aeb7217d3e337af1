"""Mass-metric geometry, homogeneous potentials, perturbations and cones.

All gradients and Hessians returned by :meth:`PotentialSpec.evaluate` and
:meth:`PerturbationSpec.evaluate` are taken with respect to the mass scalar
product ``<x, y> = sum_j mu_j x_j y_j``, i.e. ``grad = M^{-1} D`` and
``hess = M^{-1} D^2`` with ``M = diag(mu)``.  Subclasses only implement the
Euclidean derivatives, vectorised over a batch of points.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_alpha, check_points, check_scalar, check_vector
from .exceptions import ContractViolation, DimensionError, DomainError

_FD_STEP = np.finfo(float).eps ** (1.0 / 3.0)
_FD_STEP5 = np.finfo(float).eps ** (1.0 / 5.0)


@dataclass(frozen=True, eq=False)
class MassMetric:
    """Diagonal metric ``diag(mu_1, ..., mu_d)`` with strictly positive weights."""

    weights: np.ndarray

    def __post_init__(self):
        w = check_vector(self.weights, name="weights")
        if w.size < 1 or np.any(w <= 0):
            raise ContractViolation("mass weights must be strictly positive")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def euclidean(cls, dim):
        return cls(np.ones(dim))

    @classmethod
    def for_bodies(cls, masses, k):
        """Weights ``(m_1 x k, m_2 x k, ...)`` for ``len(masses)`` bodies in R^k."""
        return cls(np.repeat(np.asarray(masses, dtype=float), k))

    @property
    def dim(self):
        return self.weights.shape[0]

    def inner(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape[-1] != self.dim or y.shape[-1] != self.dim:
            raise DimensionError(
                f"vectors of dimension {x.shape[-1]} and {y.shape[-1]} "
                f"do not match metric dimension {self.dim}")
        return np.sum(self.weights * x * y, axis=-1)

    def norm(self, x):
        return np.sqrt(self.inner(x, x))

    def normalize(self, x):
        x = np.asarray(x, dtype=float)
        return x / self.norm(x)

    def __eq__(self, other):
        return (isinstance(other, MassMetric)
                and np.array_equal(self.weights, other.weights))

    def __hash__(self):
        return hash(self.weights.tobytes())


def mass_inner(metric, x, y):
    """Mass scalar product of ``x`` and ``y``."""
    return float(metric.inner(check_vector(x, metric.dim), check_vector(y, metric.dim)))


def mass_norm(metric, x):
    return float(np.sqrt(mass_inner(metric, x, x)))


# --------------------------------------------------------------------------
# potentials


class PotentialSpec:
    """Positive potential, positively homogeneous of degree ``-alpha``.

    Subclasses set ``alpha`` and ``metric`` and implement
    ``_euclidean(X)`` returning ``(U, DU, D2U)`` with shapes ``(n,)``,
    ``(n, d)`` and ``(n, d, d)`` for a batch ``X`` of shape ``(n, d)``,
    plus ``_domain_violation(X)`` returning ``None`` or a description of the
    first offending point.
    """

    alpha = 1.0
    name = "potential"

    def __init__(self, alpha, metric):
        self.alpha = check_alpha(alpha)
        if not isinstance(metric, MassMetric):
            metric = MassMetric(metric)
        self.metric = metric

    @property
    def dim(self):
        return self.metric.dim

    def _euclidean(self, X):
        raise NotImplementedError

    def _domain_violation(self, X):
        return None

    def in_domain(self, x):
        X = check_points(x, self.dim)
        return self._domain_violation(X) is None

    def check_domain(self, X):
        X = check_points(X, self.dim)
        bad = self._domain_violation(X)
        if bad is not None:
            message, where = bad
            raise DomainError(f"{self.name}: {message}", where=where)
        return X

    def euclidean_many(self, X):
        """Value, Euclidean gradient and Euclidean Hessian for a batch."""
        X = self.check_domain(X)
        return self._euclidean(X)

    def evaluate_many(self, X):
        """Value, mass-metric gradient and mass-metric Hessian for a batch."""
        U, G, H = self.euclidean_many(X)
        w = self.metric.weights
        return U, G / w, H / w[:, None]

    def evaluate(self, x):
        x = check_vector(x, self.dim)
        U, G, H = self.evaluate_many(x[None, :])
        return float(U[0]), G[0], H[0]

    def describe(self):
        return {"kind": self.name, "alpha": self.alpha,
                "weights": self.metric.weights.tolist()}


def potential_eval(p, x):
    """``(U(x), grad U(x), hess U(x))`` in the mass metric."""
    return p.evaluate(x)


def _inverse_power(X, power):
    """Derivatives of ``|x|_E^{-power}`` for a batch of points."""
    r2 = np.einsum("ni,ni->n", X, X)
    r = np.sqrt(r2)
    d = X.shape[1]
    val = r ** (-power)
    grad = -power * (r ** (-power - 2))[:, None] * X
    hess = (-power * (r ** (-power - 2)))[:, None, None] * np.eye(d) \
        + (power * (power + 2) * r ** (-power - 4))[:, None, None] \
        * X[:, :, None] * X[:, None, :]
    return val, grad, hess


class KeplerPotential(PotentialSpec):
    """``U(x) = strength / ||x||^alpha`` (Euclidean norm), defined off the origin."""

    name = "kepler"

    def __init__(self, strength=1.0, dim=2, alpha=1.0, metric=None):
        self.strength = check_scalar(strength, "strength", low=0.0, include_low=False)
        super().__init__(alpha, metric if metric is not None else MassMetric.euclidean(dim))

    def _domain_violation(self, X):
        zero = np.flatnonzero(np.einsum("ni,ni->n", X, X) == 0.0)
        if zero.size:
            return "evaluation at the origin", int(zero[0])
        return None

    def _euclidean(self, X):
        v, g, h = _inverse_power(X, self.alpha)
        return self.strength * v, self.strength * g, self.strength * h

    def describe(self):
        out = super().describe()
        out["strength"] = self.strength
        return out


class AnisotropicPotential(PotentialSpec):
    """``U(x) = |x|^-alpha (1 + a (x_axis / |x|)^2)`` with Euclidean metric.

    ``e_0`` is a central configuration with tangent eigenvalue ``2a`` along
    ``e_axis``; choosing ``a`` below ``-(2 - alpha)^2 / 16`` makes the
    spectral condition fail, which is how the synthetic negative tests are
    built.
    """

    name = "anisotropic"

    def __init__(self, anisotropy, dim=2, alpha=1.0, axis=1):
        self.anisotropy = check_scalar(anisotropy, "anisotropy", low=-1.0, include_low=False)
        if not 0 <= axis < dim:
            raise DimensionError("axis out of range")
        self.axis = axis
        super().__init__(alpha, MassMetric.euclidean(dim))

    def _domain_violation(self, X):
        zero = np.flatnonzero(np.einsum("ni,ni->n", X, X) == 0.0)
        if zero.size:
            return "evaluation at the origin", int(zero[0])
        return None

    def _euclidean(self, X):
        a, k = self.anisotropy, self.axis
        d = X.shape[1]
        v0, g0, h0 = _inverse_power(X, self.alpha)
        v1, g1, h1 = _inverse_power(X, self.alpha + 2.0)
        y = X[:, k]
        e = np.zeros(d)
        e[k] = 1.0
        val = v0 + a * y ** 2 * v1
        grad = g0 + a * (2.0 * y[:, None] * v1[:, None] * e + y[:, None] ** 2 * g1)
        outer_eg = e[None, :, None] * g1[:, None, :] + g1[:, :, None] * e[None, None, :]
        hess = h0 + a * (2.0 * v1[:, None, None] * np.outer(e, e)
                         + 2.0 * y[:, None, None] * outer_eg
                         + y[:, None, None] ** 2 * h1)
        return val, grad, hess

    def describe(self):
        out = super().describe()
        out.update(anisotropy=self.anisotropy, axis=self.axis)
        return out


def _pair_terms(Q, pairs, coupling):
    """Accumulate ``sum c_ij / |q_i - q_j|`` and its derivatives.

    ``Q`` has shape ``(n, N, k)``.  Returns arrays shaped for the flattened
    ``d = N k`` coordinates.
    """
    n, N, k = Q.shape
    U = np.zeros(n)
    G = np.zeros((n, N, k))
    H = np.zeros((n, N, k, N, k))
    eye = np.eye(k)
    for (i, j), c in zip(pairs, coupling):
        r = Q[:, i, :] - Q[:, j, :]
        rn = np.sqrt(np.einsum("ni,ni->n", r, r))
        U += c / rn
        g = -c * r / rn[:, None] ** 3
        G[:, i, :] += g
        G[:, j, :] -= g
        B = c * (3.0 * r[:, :, None] * r[:, None, :] / rn[:, None, None] ** 5
                 - eye / rn[:, None, None] ** 3)
        H[:, i, :, i, :] += B
        H[:, j, :, j, :] += B
        H[:, i, :, j, :] -= B
        H[:, j, :, i, :] -= B
    return U, G.reshape(n, N * k), H.reshape(n, N * k, N * k)


def _first_collision(Q, pairs):
    for i, j in pairs:
        d = Q[:, i, :] - Q[:, j, :]
        hit = np.flatnonzero(np.einsum("ni,ni->n", d, d) == 0.0)
        if hit.size:
            return f"collision between bodies {i} and {j}", (int(hit[0]), i, j)
    return None


class NBodyPotential(PotentialSpec):
    """Newtonian ``U = sum_{i<j} m_i m_j / |q_i - q_j|`` for N bodies in R^k."""

    name = "nbody"

    def __init__(self, masses, k=2):
        masses = check_vector(masses, name="masses")
        if masses.size < 2 or np.any(masses <= 0):
            raise ContractViolation("need at least two positive masses")
        self.masses = masses
        self.k = int(k)
        self.pairs = [(i, j) for i in range(masses.size) for j in range(i + 1, masses.size)]
        super().__init__(1.0, MassMetric.for_bodies(masses, self.k))

    @property
    def n_bodies(self):
        return self.masses.size

    def _bodies(self, X):
        return X.reshape(X.shape[0], self.n_bodies, self.k)

    def _domain_violation(self, X):
        return _first_collision(self._bodies(X), self.pairs)

    def _euclidean(self, X):
        coupling = [self.masses[i] * self.masses[j] for i, j in self.pairs]
        return _pair_terms(self._bodies(X), self.pairs, coupling)

    def describe(self):
        out = super().describe()
        out.update(masses=self.masses.tolist(), k=self.k)
        return out


class RestrictedNHPotential(PotentialSpec):
    """``U = m~ sum_j m_j/|q_j| + sum_{l<j} m_l m_j/|q_l - q_j|`` for H satellites.

    ``primary_mass`` is the total mass ``m~`` of the primaries.  With equal
    satellite masses and ``primary_mass = 1`` this is the regular H-gon
    potential.
    """

    name = "restricted-nh"

    def __init__(self, satellite_masses, primary_mass=1.0, k=2):
        masses = check_vector(satellite_masses, name="satellite_masses")
        if masses.size < 1 or np.any(masses <= 0):
            raise ContractViolation("satellite masses must be positive")
        self.masses = masses
        self.primary_mass = check_scalar(primary_mass, "primary_mass", low=0.0,
                                         include_low=False)
        self.k = int(k)
        self.pairs = [(i, j) for i in range(masses.size) for j in range(i + 1, masses.size)]
        super().__init__(1.0, MassMetric.for_bodies(masses, self.k))

    @property
    def n_bodies(self):
        return self.masses.size

    def _bodies(self, X):
        return X.reshape(X.shape[0], self.n_bodies, self.k)

    def _domain_violation(self, X):
        Q = self._bodies(X)
        for j in range(self.n_bodies):
            hit = np.flatnonzero(np.einsum("ni,ni->n", Q[:, j], Q[:, j]) == 0.0)
            if hit.size:
                return f"satellite {j} at the origin", (int(hit[0]), j)
        return _first_collision(Q, self.pairs)

    def _euclidean(self, X):
        n = X.shape[0]
        Q = self._bodies(X)
        coupling = [self.masses[i] * self.masses[j] for i, j in self.pairs]
        U, G, H = _pair_terms(Q, self.pairs, coupling)
        H = H.reshape(n, self.n_bodies, self.k, self.n_bodies, self.k)
        G = G.reshape(n, self.n_bodies, self.k)
        for j in range(self.n_bodies):
            c = self.primary_mass * self.masses[j]
            v, g, h = _inverse_power(Q[:, j, :], 1.0)
            U += c * v
            G[:, j, :] += c * g
            H[:, j, :, j, :] += c * h
        d = self.dim
        return U, G.reshape(n, d), H.reshape(n, d, d)

    def describe(self):
        out = super().describe()
        out.update(satellite_masses=self.masses.tolist(),
                   primary_mass=self.primary_mass, k=self.k)
        return out


# --------------------------------------------------------------------------
# perturbations


class PerturbationSpec:
    """Lower-order term ``W(t, x)`` with ``|W| + |x||grad W| + |x|^2|hess W| = O(|x|^-beta)``.

    Subclasses implement ``_euclidean(t, X)`` where ``t`` is an array with
    one time per row of ``X``, and ``_domain_violation(t, X)``.
    """

    name = "perturbation"
    beta = np.inf
    time_dependent = False

    def __init__(self, metric):
        if not isinstance(metric, MassMetric):
            metric = MassMetric(metric)
        self.metric = metric

    @property
    def dim(self):
        return self.metric.dim

    @property
    def is_zero(self):
        return False

    def _euclidean(self, t, X):
        raise NotImplementedError

    def _domain_violation(self, t, X):
        return None

    def valid(self, t, X):
        """Boolean mask of points inside the region where the decay bound holds."""
        X = check_points(X, self.dim)
        return np.ones(X.shape[0], dtype=bool)

    def _broadcast(self, t, X):
        X = check_points(X, self.dim)
        t = np.broadcast_to(np.asarray(t, dtype=float), (X.shape[0],))
        bad = self._domain_violation(t, X)
        if bad is not None:
            message, where = bad
            raise DomainError(f"{self.name}: {message}", where=where)
        return t, X

    def euclidean_many(self, t, X):
        t, X = self._broadcast(t, X)
        if self.is_zero:
            # exact zeros, not the rounding residue of cancelling terms
            n, d = X.shape
            return np.zeros(n), np.zeros((n, d)), np.zeros((n, d, d))
        return self._euclidean(t, X)

    def evaluate_many(self, t, X):
        W, G, H = self.euclidean_many(t, X)
        w = self.metric.weights
        return W, G / w, H / w[:, None]

    def evaluate(self, t, x):
        x = check_vector(x, self.dim)
        W, G, H = self.evaluate_many(np.array([float(t)]), x[None, :])
        return float(W[0]), G[0], H[0]

    def in_domain(self, t, x):
        X = check_points(x, self.dim)
        t = np.broadcast_to(np.asarray(t, dtype=float), (X.shape[0],))
        return self._domain_violation(t, X) is None

    def describe(self):
        return {"kind": self.name, "beta": None if np.isinf(self.beta) else self.beta,
                "time_dependent": self.time_dependent}


class ZeroPerturbation(PerturbationSpec):
    """``W = 0``; compatible with every potential."""

    name = "none"

    def __init__(self, dim=None, metric=None):
        if metric is None:
            metric = MassMetric.euclidean(dim)
        super().__init__(metric)

    @property
    def is_zero(self):
        return True

    def _euclidean(self, t, X):
        n, d = X.shape
        return np.zeros(n), np.zeros((n, d)), np.zeros((n, d, d))


class ScaledPerturbation(PerturbationSpec):
    """``c W(t, x)`` for a fixed factor ``c``."""

    def __init__(self, base, factor):
        super().__init__(base.metric)
        self.base = base
        self.factor = float(factor)
        self.beta = base.beta
        self.time_dependent = base.time_dependent
        self.name = f"scaled-{base.name}"

    @property
    def is_zero(self):
        return self.base.is_zero or self.factor == 0.0

    def _domain_violation(self, t, X):
        return self.base._domain_violation(t, X)

    def valid(self, t, X):
        return self.base.valid(t, X)

    def _euclidean(self, t, X):
        W, G, H = self.base._euclidean(t, X)
        return self.factor * W, self.factor * G, self.factor * H

    def describe(self):
        out = self.base.describe()
        out["factor"] = self.factor
        return out


def check_compatible(potential, perturbation):
    """Raise unless dimensions/metrics agree and ``4 beta - 3 alpha > 2``."""
    if potential.metric != perturbation.metric:
        raise ContractViolation("potential and perturbation use different mass metrics")
    if not perturbation.is_zero and not 4.0 * perturbation.beta - 3.0 * potential.alpha > 2.0:
        raise ContractViolation(
            f"decay condition 4*beta - 3*alpha > 2 fails "
            f"(beta={perturbation.beta}, alpha={potential.alpha})")


# --------------------------------------------------------------------------
# cones


@dataclass(frozen=True, eq=False)
class ConeRegion:
    """``{x : |x| > R and <x/|x|, xi> > eta}`` in the mass metric."""

    xi_plus: np.ndarray
    R: float
    eta: float
    metric: MassMetric = field(default=None)

    def __post_init__(self):
        xi = check_vector(self.xi_plus, name="xi_plus")
        metric = self.metric if self.metric is not None else MassMetric.euclidean(xi.size)
        if metric.dim != xi.size:
            raise DimensionError("xi_plus does not match metric dimension")
        if abs(metric.norm(xi) - 1.0) > 1e-12:
            raise ContractViolation("xi_plus must have unit mass norm")
        check_scalar(self.R, "R", low=0.0, include_low=False)
        check_scalar(self.eta, "eta", low=0.0, high=1.0, include_low=False,
                     include_high=False)
        xi = xi.copy()
        xi.setflags(write=False)
        object.__setattr__(self, "xi_plus", xi)
        object.__setattr__(self, "metric", metric)
        object.__setattr__(self, "R", float(self.R))
        object.__setattr__(self, "eta", float(self.eta))

    def contains(self, x):
        x = check_vector(x, self.metric.dim)
        n = self.metric.norm(x)
        if n == 0.0:
            return False
        return bool(n > self.R and self.metric.inner(x, self.xi_plus) / n > self.eta)

    def sample(self, n, rng, radius_factor=10.0):
        """Draw ``n`` points of the cone with ``R < |x| < radius_factor * R``.

        The angle to ``xi_plus`` is uniform in ``[0, arccos(eta))`` and the
        tangent direction is uniform on the tangent sphere.
        """
        d = self.metric.dim
        xi = self.xi_plus
        theta_max = np.arccos(self.eta)
        out = np.empty((n, d))
        for i in range(n):
            v = rng.standard_normal(d)
            v = v - self.metric.inner(v, xi) * xi
            v = v / self.metric.norm(v)
            theta = theta_max * rng.uniform(0.0, 1.0) * (1.0 - 1e-9)
            r = self.R * np.exp(rng.uniform(1e-9, np.log(radius_factor)))
            out[i] = r * (np.cos(theta) * xi + np.sin(theta) * v)
        return out


def cone_contains(c, x):
    return c.contains(x)


# --------------------------------------------------------------------------
# identity and finite-difference checks


def homogeneity_identity_residuals(p, x):
    """Relative residuals of Euler's formula and ``hess U x = -(alpha+1) grad U``."""
    U, g, H = p.evaluate(x)
    x = np.asarray(x, dtype=float)
    m = p.metric
    euler = abs(m.inner(g, x) + p.alpha * U) / abs(U)
    radial = m.norm(H @ x + (p.alpha + 1.0) * g) / m.norm(g)
    return float(euler), float(radial)


def homogeneity_chain_residuals(p, x, lam):
    """Relative residuals of the scaling laws of ``U``, its gradient and Hessian."""
    a = p.alpha
    U0, g0, H0 = p.evaluate(x)
    U1, g1, H1 = p.evaluate(lam * np.asarray(x, dtype=float))
    return (abs(U1 * lam ** a - U0) / abs(U0),
            float(np.max(np.abs(g1 * lam ** (a + 1) - g0)) / np.max(np.abs(g0))),
            float(np.max(np.abs(H1 * lam ** (a + 2) - H0)) / np.max(np.abs(H0))))


def fd_derivative_check(obj, x, t=0.0):
    """Relative errors of analytic derivatives against central differences.

    ``obj`` is a :class:`PotentialSpec` or :class:`PerturbationSpec`.  The
    fourth-order five-point stencil uses the step ``eps^(1/5) * max(1, |x_i|)``
    on coordinate ``i``, which keeps rounding small for perturbations built
    from nearly cancelling terms.  Comparisons are made on the Euclidean
    derivatives (max-norm).
    """
    x = check_vector(x, obj.dim)
    if isinstance(obj, PerturbationSpec):
        def euclid(X):
            return obj.euclidean_many(np.full(X.shape[0], float(t)), X)
    else:
        euclid = obj.euclidean_many
    d = x.size
    steps = _FD_STEP5 * np.maximum(1.0, np.abs(x))
    offsets = np.array([2.0, 1.0, -1.0, -2.0])
    coef = np.array([-1.0, 8.0, -8.0, 1.0]) / 12.0
    stencil = np.tile(x, (4 * d + 1, 1))
    for i in range(d):
        stencil[1 + 4 * i:5 + 4 * i, i] += offsets * steps[i]
    V, G, H = euclid(stencil)
    g_fd = np.array([coef @ V[1 + 4 * i:5 + 4 * i] / steps[i] for i in range(d)])
    h_fd = np.array([coef @ G[1 + 4 * i:5 + 4 * i] / steps[i] for i in range(d)])
    h_fd = 0.5 * (h_fd + h_fd.T)
    g, h = G[0], H[0]
    gscale = max(np.max(np.abs(g)), np.finfo(float).tiny)
    hscale = max(np.max(np.abs(h)), np.finfo(float).tiny)
    return (float(np.max(np.abs(g_fd - g)) / gscale),
            float(np.max(np.abs(h_fd - h)) / hscale))


def perturbation_decay_slope(w, direction, radii, t=0.0):
    """Least-squares log-log slope of ``|W(t, r direction)|`` against ``r``."""
    radii = np.asarray(radii, dtype=float)
    direction = w.metric.normalize(direction)
    X = radii[:, None] * direction[None, :]
    W, _, _ = w.evaluate_many(np.full(radii.size, float(t)), X)
    slope, _ = np.polyfit(np.log(radii * 1.0), np.log(np.abs(W)), 1)
    return float(slope)


def perturbation_decay_constant(w, points, times):
    """Fitted ``C`` in ``|W| + |x||grad W| + |x|^2 |hess W| <= C |x|^-beta``."""
    W, G, H = w.evaluate_many(times, points)
    m = w.metric
    r = m.norm(points)
    sw = np.sqrt(m.weights)
    # operator norm in the mass metric = spectral norm of M^{1/2} A M^{-1/2}
    Hs = sw[None, :, None] * H / sw[None, None, :]
    hn = np.linalg.norm(Hs, ord=2, axis=(1, 2))
    total = np.abs(W) + r * m.norm(G) + r ** 2 * hn
    return float(np.max(total * r ** w.beta))


def third_derivative_decay_probe(p, xi, radii, direction=None):
    """Diagnostic: log-log slope of a finite-difference third derivative along a ray.

    For a ``-alpha`` homogeneous potential the slope is ``-alpha - 3``.
    """
    xi = check_vector(xi, p.dim)
    v = xi if direction is None else check_vector(direction, p.dim)
    vals = []
    for r in np.asarray(radii, dtype=float):
        h = _FD_STEP * r
        x = r * xi
        _, _, Hp = p.evaluate(x + h * v)
        _, _, Hm = p.evaluate(x - h * v)
        vals.append(np.max(np.abs((Hp - Hm) / (2 * h))))
    slope, _ = np.polyfit(np.log(radii), np.log(vals), 1)
    return float(slope)
