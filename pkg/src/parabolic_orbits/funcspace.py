"""Piecewise-linear discretisation of D^{1,2}_0(t0, T) on a graded mesh.

Functions vanish at ``t0`` and are normed by ``||phi||^2 = int |phi'|^2 dt``
(mass norm on values).  For piecewise-linear functions the norm is exact;
integrals of non-polynomial integrands use 3-point Gauss-Legendre per
element.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._validation import check_scalar
from .exceptions import ContractViolation, DimensionError

GAUSS_X, GAUSS_W = np.polynomial.legendre.leggauss(3)
# reference element [0, 1]
GAUSS_U = 0.5 * (GAUSS_X + 1.0)
GAUSS_WU = 0.5 * GAUSS_W


@dataclass(frozen=True, eq=False)
class Mesh:
    t0: float
    T: float
    gamma: float
    band_step: float
    nodes: np.ndarray

    @property
    def n_elements(self):
        return self.nodes.size - 1

    @property
    def steps(self):
        return np.diff(self.nodes)

    def band_index(self):
        """Index of the node at ``t0 + 1``."""
        return int(np.argmin(np.abs(self.nodes - (self.t0 + 1.0))))

    def quadrature(self):
        """Gauss points ``(n_el, 3)``, weights ``(n_el, 3)`` and hat values ``(3,)``.

        On element ``k`` the left hat function equals ``1 - u`` and the right
        one ``u`` at reference coordinate ``u``.
        """
        h = self.steps
        tq = self.nodes[:-1, None] + h[:, None] * GAUSS_U[None, :]
        wq = h[:, None] * GAUSS_WU[None, :]
        return tq, wq, 1.0 - GAUSS_U, GAUSS_U

    def same_as(self, other):
        return self is other or np.array_equal(self.nodes, other.nodes)


def build_mesh(t0, T, gamma=1.05, band_step=0.1):
    """Uniform band on ``[t0, t0+1]`` followed by geometric grading to ``T``.

    The band uses ``ceil(1/band_step)`` equal steps so that a node sits at
    ``t0 + 1``.  Beyond it ``tau_{k+1} = gamma tau_k``; the last node is
    clipped to ``T`` and a final sliver shorter than a quarter of the
    previous step is merged into it.
    """
    t0 = check_scalar(t0, "t0", low=1.0)
    T = check_scalar(T, "T", low=t0 + 1.0)
    gamma = check_scalar(gamma, "gamma", low=1.0, high=1.25, include_low=False)
    band_step = check_scalar(band_step, "band_step", low=0.0, high=1.0, include_low=False)
    n_band = math.ceil(1.0 / band_step - 1e-12)
    nodes = list(t0 + np.linspace(0.0, 1.0, n_band + 1))
    nodes[-1] = t0 + 1.0
    tau = nodes[-1]
    while tau * gamma < T:
        tau *= gamma
        nodes.append(tau)
    if T > nodes[-1]:
        if len(nodes) > n_band + 1 and T - nodes[-1] < 0.25 * (nodes[-1] - nodes[-2]):
            nodes[-1] = T
        else:
            nodes.append(T)
    arr = np.asarray(nodes, dtype=float)
    arr.setflags(write=False)
    return Mesh(t0=t0, T=T, gamma=gamma, band_step=band_step, nodes=arr)


class MeshedFunction:
    """R^d-valued continuous piecewise-linear function with ``phi(t0) = 0``."""

    def __init__(self, mesh, values, weights=None):
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != mesh.nodes.size:
            raise DimensionError(
                f"expected {mesh.nodes.size} rows of nodal values, got {values.shape[0]}")
        if np.any(values[0] != 0.0):
            raise ContractViolation("meshed functions must vanish at t0")
        if weights is None:
            weights = np.ones(values.shape[1])
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (values.shape[1],):
            raise DimensionError("weights do not match the value dimension")
        self.mesh = mesh
        self.values = values
        self.weights = weights

    @classmethod
    def zeros(cls, mesh, dim, weights=None):
        return cls(mesh, np.zeros((mesh.nodes.size, dim)), weights)

    @classmethod
    def from_free(cls, mesh, free, dim, weights=None):
        """Build from the flattened unknowns at nodes ``1..M``."""
        vals = np.zeros((mesh.nodes.size, dim))
        vals[1:] = np.asarray(free, dtype=float).reshape(-1, dim)
        return cls(mesh, vals, weights)

    @classmethod
    def interpolate(cls, mesh, f, weights=None):
        """Nodal interpolant of ``f(t) -> R^d``; ``f(t0)`` is forced to zero."""
        vals = np.array([np.atleast_1d(f(t)) for t in mesh.nodes], dtype=float)
        vals[0] = 0.0
        return cls(mesh, vals, weights)

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def free(self):
        return self.values[1:].ravel()

    def __call__(self, t):
        """Values at ``t``; constant extension ``phi(T)`` beyond the mesh."""
        t = np.asarray(t, dtype=float)
        out = np.stack([np.interp(t, self.mesh.nodes, self.values[:, j])
                        for j in range(self.dim)], axis=-1)
        return out

    def derivative(self, t):
        """Piecewise-constant derivative; right-continuous, zero beyond ``T``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        nodes = self.mesh.nodes
        slopes = np.diff(self.values, axis=0) / self.mesh.steps[:, None]
        k = np.clip(np.searchsorted(nodes, t, side="right") - 1, 0, nodes.size - 2)
        out = slopes[k]
        out[t > nodes[-1]] = 0.0
        return out

    def __add__(self, other):
        _check_same(self, other)
        return MeshedFunction(self.mesh, self.values + other.values, self.weights)

    def __sub__(self, other):
        _check_same(self, other)
        return MeshedFunction(self.mesh, self.values - other.values, self.weights)

    def __mul__(self, a):
        return MeshedFunction(self.mesh, float(a) * self.values, self.weights)

    __rmul__ = __mul__

    def norm(self):
        return d12_norm(self)


def _check_same(phi, psi):
    if not phi.mesh.same_as(psi.mesh):
        raise ContractViolation("meshed functions live on different meshes")
    if phi.dim != psi.dim or not np.array_equal(phi.weights, psi.weights):
        raise DimensionError("meshed functions have different value spaces")


def d12_inner(phi, psi):
    """``sum_k <dphi_k, dpsi_k> / dtau_k``, exact for piecewise-linear functions."""
    _check_same(phi, psi)
    dphi = np.diff(phi.values, axis=0)
    dpsi = np.diff(psi.values, axis=0)
    return float(np.sum((dphi * dpsi) @ phi.weights / phi.mesh.steps))


def d12_norm(phi):
    return math.sqrt(max(d12_inner(phi, phi), 0.0))


def hardy_numerator(phi):
    """``int_{t0}^{T} |phi(t)|^2 / t^2 dt`` by 3-point Gauss per element."""
    tq, wq, nl, nr = phi.mesh.quadrature()
    v = phi.values
    vals = v[:-1, None, :] * nl[None, :, None] + v[1:, None, :] * nr[None, :, None]
    sq = (vals ** 2) @ phi.weights
    return float(np.sum(wq * sq / tq ** 2))


def hardy_ratio(phi, normalized=False):
    """``int |phi|^2/t^2 / ||phi||^2``; at most 4 by Hardy's inequality.

    With ``normalized=True`` the ratio is divided by the Hardy constant 4,
    so the bound reads ``<= 1``.
    """
    n2 = d12_inner(phi, phi)
    if n2 <= 0.0:
        raise ContractViolation("hardy_ratio is undefined for the zero function")
    r = hardy_numerator(phi) / n2
    return r / 4.0 if normalized else r


def pointwise_bound_check(phi):
    """``max_k |phi(tau_k)| / (||phi|| sqrt(tau_k))``; zero for the zero function."""
    n = d12_norm(phi)
    if n == 0.0:
        return 0.0
    mags = np.sqrt((phi.values ** 2) @ phi.weights)
    return float(np.max(mags / (n * np.sqrt(phi.mesh.nodes))))


def stiffness_matrix(mesh, weights):
    """Sparse Gram matrix of the D^{1,2} inner product on the free nodes ``1..M``.

    Unknowns are ordered node-major: index ``(k - 1) * d + j``.
    """
    weights = np.asarray(weights, dtype=float)
    inv = 1.0 / mesh.steps
    M = mesh.n_elements
    main = inv.copy()
    main[:-1] += inv[1:]
    off = -inv[1:]
    scalar = sp.diags([off, main, off], [-1, 0, 1], shape=(M, M), format="csr")
    return sp.kron(scalar, sp.diags(weights), format="csr")


def write_csv(phi, path):
    """Write ``(tau_k, phi_1(tau_k), ..., phi_d(tau_k))`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"phi_{j}" for j in range(phi.dim)])
        for t, row in zip(phi.mesh.nodes, phi.values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
