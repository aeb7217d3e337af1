"""Galerkin discretisation of the renormalised action and Newton continuation.

For ``phi`` in D^{1,2}_0 the action is

    A(phi) = int 1/2 |phi'|^2 + K(t, phi) - <h(t), phi> dt,

whose critical points solve ``phi'' = grad K(t, phi) - h(t)``.  On a
piecewise-linear space with unknowns at nodes ``1..M`` (node-major,
``index = (k - 1) d + j``) the Hessian is the stiffness matrix plus a
block-tridiagonal term from ``D^2 U_eps``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core_model import check_compatible
from .exceptions import (ConeBreachError, ContractViolation, ConvergenceError, DomainError,
                         PositivityLostError, SolverError, TrustRegionError)
from .funcspace import MeshedFunction, d12_norm, hardy_ratio, stiffness_matrix
from .transform import angle_lower_bound, forcing_h, remainder_K, y_sigma_eval

DENSE_EIG_LIMIT = 1500


@dataclass(eq=False)
class ActionProblem:
    """Potential, perturbation, base scaling parameters and mesh.

    ``params`` fixes ``t0``, ``omega``, ``xi_plus`` and the metric; the
    ``epsilon`` and ``sigma`` stored there are the current continuation
    values.  ``zeta`` is the (BS) constant of the configuration, used only
    for diagnostics.
    """

    potential: object
    perturbation: object
    params: object
    mesh: object
    zeta: float = float("nan")
    quadrature_order: int = 3

    def __post_init__(self):
        check_compatible(self.potential, self.perturbation)
        if self.mesh.t0 != self.params.t0:
            raise ContractViolation("mesh.t0 differs from params.t0")
        if self.params.metric.norm(self.params.sigma) >= self.params.r:
            raise TrustRegionError("|sigma| >= r")
        if self.quadrature_order != 3:
            raise ContractViolation("only 3-point Gauss quadrature is implemented")

    @property
    def dim(self):
        return self.params.dim

    @property
    def weights(self):
        return self.params.metric.weights

    def with_params(self, epsilon=None, sigma=None):
        sp_ = self.params.replace(
            epsilon=self.params.epsilon if epsilon is None else epsilon,
            sigma=self.params.sigma if sigma is None else sigma)
        return ActionProblem(self.potential, self.perturbation, sp_, self.mesh, self.zeta)


@dataclass
class DiagnosticsReport:
    C_h: float
    C_K1: float
    C_K2: float
    C_K3: float
    kappa_estimate: float
    zeta: float
    hardy_slack: float
    alpha: float = 1.0

    @property
    def C_K(self):
        return max(self.C_K1, self.C_K2, self.C_K3)

    def to_dict(self):
        return {"C_h": self.C_h, "C_K": self.C_K, "C_K1": self.C_K1, "C_K2": self.C_K2,
                "C_K3": self.C_K3, "kappa_estimate": self.kappa_estimate,
                "kappa_bound": (8.0 * self.zeta / (self.alpha + 2.0) ** 2
                                if np.isfinite(self.zeta) else None),
                "zeta": self.zeta, "hardy_slack": self.hardy_slack}


@dataclass(eq=False)
class SolveResult:
    phi: MeshedFunction
    gradient_norm: float
    newton_iters: int
    continuation_path: list
    hessian_min_eig: float
    diagnostics: DiagnosticsReport = None
    iters_per_step: list = field(default_factory=list)
    params: object = None

    @property
    def phi_norm(self):
        return d12_norm(self.phi)

    def to_dict(self):
        return {
            "epsilon": self.params.epsilon,
            "sigma": self.params.sigma.tolist(),
            "t0": self.params.t0,
            "omega": self.params.omega,
            "phi_norm": self.phi_norm,
            "rho": self.params.rho,
            "gradient_norm": self.gradient_norm,
            "newton_iters": self.newton_iters,
            "iters_per_step": list(self.iters_per_step),
            "continuation_path": [
                {"epsilon": e, "sigma_norm": s, "phi_norm": p} for e, s, p in
                self.continuation_path],
            "hessian_min_eig": self.hessian_min_eig,
            "diagnostics": None if self.diagnostics is None else self.diagnostics.to_dict(),
        }


class _Assembler:
    """Caches quadrature data, stiffness factorisation and the forcing for one problem."""

    def __init__(self, ap):
        self.ap = ap
        mesh = ap.mesh
        d = ap.dim
        self.d = d
        self.tq, self.wq, self.nl, self.nr = mesh.quadrature()
        self.tflat = self.tq.ravel()
        self.stiff = stiffness_matrix(mesh, ap.weights)
        self._stiff_lu = spla.splu(self.stiff.tocsc())
        n_el = mesh.n_elements
        # sparsity pattern of the full (node 0 included) block-tridiagonal matrix
        rows, cols = [], []
        for a, b in ((0, 0), (0, 1), (1, 0), (1, 1)):
            ia = (np.arange(n_el) + a)[:, None, None] * d + np.arange(d)[None, :, None]
            ib = (np.arange(n_el) + b)[:, None, None] * d + np.arange(d)[None, None, :]
            rows.append(np.broadcast_to(ia, (n_el, d, d)).ravel())
            cols.append(np.broadcast_to(ib, (n_el, d, d)).ravel())
        self._rows = np.concatenate(rows)
        self._cols = np.concatenate(cols)
        self._nfull = (n_el + 1) * d
        self._h = None

    def forcing(self):
        if self._h is None:
            try:
                h = forcing_h(self.ap.params, self.ap.potential, self.ap.perturbation, self.tflat)
            except DomainError as exc:
                raise ConeBreachError(f"forcing undefined: {exc}") from exc
            self._h = h.reshape(self.tq.shape + (self.d,))
        return self._h

    def at_quadrature(self, values):
        return (values[:-1, None, :] * self.nl[None, :, None]
                + values[1:, None, :] * self.nr[None, :, None])

    def dual_norm(self, g):
        return math.sqrt(max(float(g @ self._stiff_lu.solve(g)), 0.0))

    def guard(self, phi_q):
        """Check the lower radius bound and angle bound at every quadrature point."""
        ps = self.ap.params
        y, _, _ = y_sigma_eval(ps, self.tflat)
        z = y + phi_q.reshape(-1, self.d)
        nz = ps.metric.norm(z)
        t = self.tflat
        bad = nz < 0.5 * ps.omega * t ** ps.power * (1.0 - 1e-12)
        cosang = ps.metric.inner(z, ps.xi_plus) / nz
        bad |= cosang <= angle_lower_bound(t, ps.alpha)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise ConeBreachError(f"iterate left the admissible cone at t = {t[i]:.6g}")

    def evaluate(self, free, need_hess=True):
        ap = self.ap
        d = self.d
        phi = MeshedFunction.from_free(ap.mesh, free, d, ap.weights)
        if d12_norm(phi) >= ap.params.rho:
            raise TrustRegionError(f"||phi|| = {d12_norm(phi):.4g} >= rho = {ap.params.rho:.4g}")
        phi_q = self.at_quadrature(phi.values)
        self.guard(phi_q)
        h = self.forcing()
        try:
            K, dK, HK = remainder_K(ap.params, ap.potential, ap.perturbation, self.tflat,
                                    phi_q.reshape(-1, d))
        except DomainError as exc:
            raise ConeBreachError(str(exc)) from exc
        shape = self.tq.shape
        K = K.reshape(shape)
        dK = dK.reshape(shape + (d,))
        w = ap.weights
        # action
        kin = 0.5 * float(free @ (self.stiff @ free))
        pot = float(np.sum(self.wq * (K - np.einsum("eqj,eqj,j->eq", h, phi_q, w))))
        # gradient
        gq = self.wq[:, :, None] * (dK - h) * w
        nodal = np.zeros((ap.mesh.nodes.size, d))
        nodal[:-1] += np.einsum("eqj,q->ej", gq, self.nl)
        nodal[1:] += np.einsum("eqj,q->ej", gq, self.nr)
        grad = self.stiff @ free + nodal[1:].ravel()
        if not need_hess:
            return kin + pot, grad, None
        # Hessian: D^2 U_eps = M * (mass-metric Hessian)
        Hq = self.wq[:, :, None, None] * (w[:, None] * HK).reshape(shape + (d, d))
        blocks = [np.einsum("eqij,q->eij", Hq, self.nl * self.nl),
                  np.einsum("eqij,q->eij", Hq, self.nl * self.nr),
                  np.einsum("eqij,q->eij", Hq, self.nr * self.nl),
                  np.einsum("eqij,q->eij", Hq, self.nr * self.nr)]
        data = np.concatenate([b.ravel() for b in blocks])
        full = sp.coo_matrix((data, (self._rows, self._cols)),
                             shape=(self._nfull, self._nfull)).tocsr()
        hess = self.stiff + full[d:, d:]
        hess = 0.5 * (hess + hess.T)
        return kin + pot, grad, hess.tocsr()


def assemble(ap, phi):
    """Discrete action, gradient (dual vector on free nodes) and sparse Hessian at ``phi``."""
    if not phi.mesh.same_as(ap.mesh):
        raise ContractViolation("phi lives on a different mesh")
    return _Assembler(ap).evaluate(phi.free)


def hessian_lower_bound(ap, phi=None):
    """Hardy-based lower bound ``1 - 4 max_t t^2 ||D^2 K||`` for the generalized spectrum."""
    asm = _Assembler(ap)
    phi_q = np.zeros(asm.tq.shape + (asm.d,)) if phi is None else asm.at_quadrature(phi.values)
    _, _, HK = remainder_K(ap.params, ap.potential, ap.perturbation, asm.tflat,
                           phi_q.reshape(-1, asm.d))
    m = ap.params.metric
    sw = np.sqrt(m.weights)
    Hs = sw[None, :, None] * HK / sw[None, None, :]
    nrm = np.linalg.norm(Hs, ord=2, axis=(1, 2))
    return 1.0 - 4.0 * float(np.max(asm.tflat ** 2 * nrm))


def smallest_generalized_eigenvalue(H, K, lower_bound=None):
    """Smallest ``lambda`` with ``H v = lambda K v`` for sparse SPD ``K``.

    Dense LAPACK for small systems; otherwise shift-invert Lanczos with the
    shift placed below the spectrum.
    """
    n = H.shape[0]
    if n <= DENSE_EIG_LIMIT:
        vals = sla.eigh(H.toarray(), K.toarray(), eigvals_only=True, subset_by_index=[0, 0])
        return float(vals[0])
    shift = (min(lower_bound, 0.0) if lower_bound is not None else -1.0) - 1.0
    vals = spla.eigsh(H.tocsc(), k=1, M=K.tocsc(), sigma=shift, which="LM",
                      return_eigenvectors=False)
    return float(vals[0])


def coercivity_estimate(ap):
    """Smallest eigenvalue of the discrete second differential at ``(eps, sigma, phi) = 0``."""
    base = ap.with_params(epsilon=0.0, sigma=np.zeros(ap.dim))
    asm = _Assembler(base)
    _, _, H = asm.evaluate(np.zeros(base.mesh.n_elements * base.dim))
    return smallest_generalized_eigenvalue(H, asm.stiff, hessian_lower_bound(base))


def _newton(asm, free, tol, max_iter):
    """Damped Newton with Armijo backtracking on the dual gradient norm."""
    _, g, H = asm.evaluate(free)
    gn = asm.dual_norm(g)
    iters = 0
    while gn > tol:
        if iters >= max_iter:
            raise ConvergenceError(
                f"Newton did not converge in {max_iter} iterations (|g| = {gn:.3e})")
        try:
            step = spla.spsolve(H.tocsc(), -g)
        except RuntimeError as exc:
            raise ConvergenceError(f"singular Newton system: {exc}") from exc
        if not np.all(np.isfinite(step)):
            raise ConvergenceError("singular Newton system")
        lam = 1.0
        last_exc = None
        for _ in range(30):
            trial = free + lam * step
            try:
                _, gt, Ht = asm.evaluate(trial)
            except (TrustRegionError, ConeBreachError) as exc:
                last_exc = exc
                lam *= 0.5
                continue
            gtn = asm.dual_norm(gt)
            if gtn <= (1.0 - 1e-4 * lam) * gn:
                break
            last_exc = None
            lam *= 0.5
        else:
            if last_exc is not None:
                raise last_exc
            raise ConvergenceError(f"line search failed (|g| = {gn:.3e})")
        free, g, H, gn = trial, gt, Ht, gtn
        iters += 1
    return free, g, H, gn, iters


def _diagnostics(ap, phi, kappa):
    ps = ap.params
    asm = _Assembler(ap)
    t = asm.tflat
    d = ap.dim
    m = ps.metric
    h = asm.forcing().reshape(-1, d)
    beta = ap.perturbation.beta
    hn = m.norm(h)
    if np.all(hn == 0.0):
        C_h = 0.0
    else:
        expo = 2.0 * (beta + 1.0) / (ps.alpha + 2.0) if np.isfinite(beta) else 0.0
        C_h = float(np.max(hn * t ** expo))
    phi_q = asm.at_quadrature(phi.values).reshape(-1, d)
    K, dK, HK = remainder_K(ps, ap.potential, ap.perturbation, t, phi_q)
    pn = m.norm(phi_q)
    nz = pn > 0.0
    C1 = float(np.max(np.abs(K[nz]) * t[nz] ** 2 / pn[nz] ** 2)) if np.any(nz) else 0.0
    C2 = float(np.max(m.norm(dK[nz]) * t[nz] ** 2 / pn[nz])) if np.any(nz) else 0.0
    sw = np.sqrt(m.weights)
    Hs = sw[None, :, None] * HK / sw[None, None, :]
    C3 = float(np.max(np.linalg.norm(Hs, ord=2, axis=(1, 2)) * t ** 2))
    slack = 4.0 - hardy_ratio(phi) if d12_norm(phi) > 0.0 else 4.0
    return DiagnosticsReport(C_h=C_h, C_K1=C1, C_K2=C2, C_K3=C3, kappa_estimate=kappa,
                             zeta=ap.zeta, hardy_slack=slack, alpha=ps.alpha)


def continuation_path(epsilon, sigma, steps):
    """Straight segments ``(0, 0) -> (eps, 0) -> (eps, sigma)``, ``steps`` points each."""
    sigma = np.asarray(sigma, dtype=float)
    path = []
    if epsilon != 0.0:
        path += [(epsilon * (i + 1) / steps, np.zeros_like(sigma)) for i in range(steps)]
    if np.any(sigma != 0.0):
        path += [(epsilon, sigma * (i + 1) / steps) for i in range(steps)]
    return path


def newton_continuation_solve(ap, epsilon, sigma=None, steps=10, tol=1e-10, max_iter=10,
                              check_positivity=True, diagnostics=True, phi0=None):
    """Follow the critical point of the action from ``(0, 0)`` to ``(epsilon, sigma)``.

    Each continuation step starts Newton from the previous solution and must
    reach a dual gradient norm ``<= tol`` within ``max_iter`` iterations.
    The smallest generalized Hessian eigenvalue is checked at every accepted
    step; a nonpositive value raises :class:`PositivityLostError`.
    """
    d = ap.dim
    sigma = np.zeros(d) if sigma is None else np.asarray(sigma, dtype=float)
    if not 0.0 <= epsilon < 1.0:
        raise ContractViolation("epsilon must lie in [0, 1)")
    if ap.params.metric.norm(sigma) >= ap.params.r:
        raise TrustRegionError(f"|sigma| >= r = {ap.params.r:.4g}")
    if steps < 1:
        raise ContractViolation("steps must be positive")
    n_free = ap.mesh.n_elements * d
    free = np.zeros(n_free) if phi0 is None else np.asarray(phi0.free, dtype=float).copy()

    # base point: (0, 0) and phi = 0 should already be critical
    current = ap.with_params(epsilon=0.0, sigma=np.zeros(d))
    asm = _Assembler(current)
    free, g, H, gn, it0 = _newton(asm, free, tol, max_iter)
    history = [(0.0, 0.0, d12_norm(MeshedFunction.from_free(ap.mesh, free, d, ap.weights)))]
    per_step = [it0]
    min_eig = smallest_generalized_eigenvalue(H, asm.stiff) if check_positivity else float("nan")
    if check_positivity and min_eig <= 0.0:
        raise PositivityLostError(f"Hessian not positive at the base point ({min_eig:.3e})")

    for eps_k, sig_k in continuation_path(epsilon, sigma, steps):
        current = ap.with_params(epsilon=eps_k, sigma=sig_k)
        asm = _Assembler(current)
        free, g, H, gn, it = _newton(asm, free, tol, max_iter)
        per_step.append(it)
        phi_k = MeshedFunction.from_free(ap.mesh, free, d, ap.weights)
        history.append((float(eps_k), float(current.params.metric.norm(sig_k)),
                        d12_norm(phi_k)))
        if check_positivity:
            min_eig = smallest_generalized_eigenvalue(H, asm.stiff)
            if min_eig <= 0.0:
                raise PositivityLostError(
                    f"outside the perturbative regime: Hessian eigenvalue {min_eig:.3e} "
                    f"at epsilon = {eps_k:.4g}")

    phi = MeshedFunction.from_free(ap.mesh, free, d, ap.weights)
    diag = None
    if diagnostics:
        kappa = coercivity_estimate(ap)
        diag = _diagnostics(current, phi, kappa)
    return SolveResult(phi=phi, gradient_norm=gn, newton_iters=int(sum(per_step)),
                       continuation_path=history, hessian_min_eig=min_eig,
                       diagnostics=diag, iters_per_step=per_step, params=current.params)


def empirical_epsilon_star(ap, sigma_grid=None, eps_max=0.5, n_bisect=10, steps=5,
                           tol=1e-10, max_iter=10):
    """Largest ``epsilon`` (by bisection) for which continuation succeeds on the whole grid."""
    d = ap.dim
    grid = [np.zeros(d)] if sigma_grid is None else [np.asarray(s, float) for s in sigma_grid]

    def ok(eps):
        for s in grid:
            try:
                newton_continuation_solve(ap, eps, s, steps=steps, tol=tol, max_iter=max_iter,
                                          diagnostics=False)
            except (SolverError, ContractViolation, DomainError):
                return False
        return True

    if ok(eps_max):
        return float(eps_max)
    lo, hi = 0.0, float(eps_max)
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def equation_residual(ap, phi):
    """Second-difference residual of ``phi'' = grad K - h`` at interior band nodes.

    Returns ``(max_residual, band_step)``; the residual is ``O(step^2)``.
    """
    mesh = ap.mesh
    kb = mesh.band_index()
    idx = np.arange(1, kb)
    tk = mesh.nodes[idx]
    hstep = mesh.nodes[1] - mesh.nodes[0]
    v = phi.values
    second = (v[idx + 1] - 2.0 * v[idx] + v[idx - 1]) / hstep ** 2
    _, dK, _ = remainder_K(ap.params, ap.potential, ap.perturbation, tk, v[idx])
    h = forcing_h(ap.params, ap.potential, ap.perturbation, tk)
    res = second - (dK - h)
    return float(np.max(ap.params.metric.norm(res))), float(hstep)


def initial_velocity(ap, phi):
    """``phi'(t0)`` from the Galerkin residual at the constrained node (flux recovery)."""
    asm = _Assembler(ap)
    d = ap.dim
    phi_q = asm.at_quadrature(phi.values)[0]
    t = asm.tq[0]
    _, dK, _ = remainder_K(ap.params, ap.potential, ap.perturbation, t, phi_q)
    h = forcing_h(ap.params, ap.potential, ap.perturbation, t)
    integral = np.sum(asm.wq[0][:, None] * (dK - h) * asm.nl[:, None], axis=0)
    return (phi.values[1] - phi.values[0]) / ap.mesh.steps[0] - integral


def write_triplets(matrix, path):
    """Write a sparse matrix as ``row col value`` lines (0-based), preceded by its shape."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")
