"""Physical orbit reconstruction and independent verification.

The solved ``phi`` gives ``y = y_sigma + phi`` on ``[t0, T]``; the physical
orbit is ``x(t) = eps^{-3/(2+alpha)} y(eps^{3/2} t + t0)`` for
``t in [0, T_phys]`` with ``T_phys = (T - t0) / eps^{3/2}``.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from sklearn.base import BaseEstimator

from ._validation import check_random_state
from .action_solver import ActionProblem, initial_velocity, newton_continuation_solve
from .central_config import check_bs
from .exceptions import ContractViolation
from .funcspace import MeshedFunction, build_mesh, d12_norm
from .transform import (ScalingParams, angle_lower_bound, forcing_h, initial_from_params,
                        omega_from, params_from_initial, remainder_K, select_t0,
                        u_eps_many, y_sigma_eval)


def _nodal_derivatives(ap, phi):
    """Second-order nodal estimates of ``phi'``; flux recovery at ``t0``."""
    h = ap.mesh.steps
    s = np.diff(phi.values, axis=0) / h[:, None]
    out = np.empty_like(phi.values)
    out[0] = initial_velocity(ap, phi)
    out[1:-1] = (h[1:, None] * s[:-1] + h[:-1, None] * s[1:]) / (h[:-1] + h[1:])[:, None]
    out[-1] = s[-1]
    return out


@dataclass(eq=False)
class ParabolicOrbit:
    params: ScalingParams
    phi: MeshedFunction
    problem: ActionProblem
    x0: np.ndarray
    v0: np.ndarray
    frame: str = "x"
    phi_dot: np.ndarray = field(default=None, repr=False)
    verification: object = None

    @property
    def T_phys(self):
        ps = self.params
        T = self.problem.mesh.T
        return (T - ps.t0) / ps.time_scale if self.frame == "x" else T - ps.t0

    def y_state(self, ty):
        """``(y, y')`` at transformed times; beyond ``T`` the tail is ``y0 + phi(T)``."""
        ty = np.atleast_1d(np.asarray(ty, dtype=float))
        y, dy, _ = y_sigma_eval(self.params, ty)
        nodes = self.phi.mesh.nodes
        d = self.phi.dim
        ph = np.stack([np.interp(ty, nodes, self.phi.values[:, j]) for j in range(d)], -1)
        pd = np.stack([np.interp(ty, nodes, self.phi_dot[:, j]) for j in range(d)], -1)
        pd[ty > nodes[-1]] = 0.0
        return y + ph, dy + pd

    def state(self, t):
        """``(x(t), x'(t))`` at physical times ``t >= 0``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        ps = self.params
        if self.frame == "y":
            return self.y_state(ps.t0 + t)
        y, dy = self.y_state(ps.t0 + ps.time_scale * t)
        s = ps.space_scale
        return y / s, dy * ps.time_scale / s

    def position(self, t):
        return self.state(t)[0]

    def radial_ratio(self, t):
        x = self.position(t)
        p = self.params
        return p.metric.norm(x) / (p.omega * np.asarray(t, dtype=float) ** p.power)

    def direction(self, t):
        x = self.position(t)
        m = self.params.metric
        return m.inner(x, self.params.xi_plus) / m.norm(x)

    def log_grid(self, n=61):
        """Log-spaced physical times from ``eps^{-3/2}`` to ``T_phys``."""
        start = 1.0 / self.params.time_scale if self.frame == "x" else 1.0
        return np.geomspace(start, self.T_phys, n)

    def write_csv(self, path, t=None):
        t = self.log_grid() if t is None else np.asarray(t, dtype=float)
        x, v = self.state(t)
        rr = self.radial_ratio(t)
        dr = self.direction(t)
        d = x.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x_{j}" for j in range(d)] + [f"v_{j}" for j in range(d)]
                       + ["radial_ratio", "direction"])
            for i in range(t.size):
                w.writerow([repr(float(t[i]))] + [repr(float(a)) for a in x[i]]
                           + [repr(float(a)) for a in v[i]]
                           + [repr(float(rr[i])), repr(float(dr[i]))])


def reconstruct_orbit(sr, ap):
    """Assemble ``y = y_sigma + phi`` and pull it back to physical coordinates.

    For ``epsilon = 0`` there is no physical pullback; the orbit is returned
    in the transformed frame with ``frame = "y"``.
    """
    ps = sr.params
    final = ap.with_params(epsilon=ps.epsilon, sigma=ps.sigma)
    phi_dot = _nodal_derivatives(final, sr.phi)
    y0, dy0, _ = y_sigma_eval(ps, ps.t0)
    if ps.epsilon == 0.0:
        return ParabolicOrbit(ps, sr.phi, final, y0.copy(), dy0 + phi_dot[0], frame="y",
                              phi_dot=phi_dot)
    s = ps.space_scale
    x0 = initial_from_params(ps)
    v0 = (dy0 + phi_dot[0]) * ps.time_scale / s
    return ParabolicOrbit(ps, sr.phi, final, x0, v0, frame="x", phi_dot=phi_dot)


@dataclass
class VerificationReport:
    t_grid: np.ndarray
    ode_window: tuple
    ode_deviation: float
    radial_ratio: np.ndarray
    speed_tail: np.ndarray
    direction_tail: np.ndarray
    lemma_bounds: dict
    integrator_ok: bool = True
    integrator_message: str = ""

    def final_decade(self):
        return self.t_grid >= self.t_grid[-1] / 10.0 * (1.0 - 1e-12)

    def summary(self):
        fd = self.final_decade()
        sp_ = self.speed_tail[fd]
        return {
            "ode_deviation": self.ode_deviation,
            "radial_ratio_final_min": float(np.min(self.radial_ratio[fd])),
            "radial_ratio_final_max": float(np.max(self.radial_ratio[fd])),
            "direction_final_min": float(np.min(self.direction_tail[fd])),
            "speed_final_max": float(np.max(sp_)),
            "speed_final": float(self.speed_tail[-1]),
            "speed_decreasing": bool(np.all(np.diff(sp_) <= 0.0)),
            "direction_increasing": bool(np.all(np.diff(self.direction_tail[fd]) >= -1e-15)),
        }

    def to_dict(self):
        return {
            "t_grid": self.t_grid.tolist(),
            "ode_window": list(self.ode_window),
            "ode_deviation": self.ode_deviation,
            "radial_ratio": self.radial_ratio.tolist(),
            "speed_tail": self.speed_tail.tolist(),
            "direction_tail": self.direction_tail.tolist(),
            "lemma_bounds": self.lemma_bounds,
            "integrator_ok": self.integrator_ok,
            "integrator_message": self.integrator_message,
            "summary": self.summary(),
        }


def physical_rhs(potential, perturbation):
    """Right-hand side of ``x'' = grad U(x) + grad W(t, x)`` as a first-order system."""
    d = potential.dim

    def rhs(t, z):
        x = z[:d]
        _, g, _ = potential.evaluate(x)
        if not perturbation.is_zero:
            _, gw, _ = perturbation.evaluate(t, x)
            g = g + gw
        return np.concatenate([z[d:], g])

    return rhs


def integrate_orbit(po, t_end, rtol=1e-10, atol=1e-12):
    """Dormand-Prince 5(4) integration from ``(x(0), x'(0))``; dense output."""
    ap = po.problem
    if po.frame == "x":
        rhs = physical_rhs(ap.potential, ap.perturbation)
    else:
        ps = po.params

        def rhs(t, z, _d=ap.dim):
            _, g, _ = u_eps_many(ps, ap.potential, ap.perturbation, ps.t0 + t, z[None, :_d])
            return np.concatenate([z[_d:], g[0]])

    z0 = np.concatenate([po.x0, po.v0])
    return solve_ivp(rhs, (0.0, t_end), z0, method="RK45", rtol=rtol, atol=atol,
                     dense_output=True)


def lemma_bounds_report(po, ap=None, n_random=4, random_state=0):
    """Node-wise checks of the a-priori estimates with fitted constants."""
    ap = po.problem if ap is None else ap
    ps = po.params
    m = ps.metric
    mesh = ap.mesh
    t = mesh.nodes
    y, _, _ = y_sigma_eval(ps, t)
    z = y + po.phi.values
    nz = m.norm(z)
    lower = 0.5 * ps.omega * t ** ps.power
    radius_ok = bool(np.all(nz >= lower))
    cosang = m.inner(z, ps.xi_plus) / nz
    angle_ok = bool(np.all(cosang > angle_lower_bound(t, ps.alpha)))

    beta = ap.perturbation.beta
    sel = t >= ps.t0 + 1.0
    h = forcing_h(ps, ap.potential, ap.perturbation, t[sel])
    hn = m.norm(h)
    if np.all(hn == 0.0) or not np.isfinite(beta):
        h_slope, h_target, h_ok = None, None, True
    else:
        keep = hn > 0.0
        h_slope = float(np.polyfit(np.log(t[sel][keep]), np.log(hn[keep]), 1)[0])
        h_target = -2.0 * (beta + 1.0) / (ps.alpha + 2.0)
        h_ok = bool(h_slope <= h_target + 0.1)

    # K1-K3 on the solution and on random functions inside the trust region
    rng = check_random_state(random_state)
    samples = [po.phi]
    for _ in range(n_random):
        v = np.cumsum(rng.standard_normal(po.phi.values.shape)
                      * np.sqrt(mesh.steps.min()), axis=0)
        v[0] = 0.0
        f = MeshedFunction(mesh, v - v[0], po.phi.weights)
        samples.append(f * (0.5 * ps.rho / d12_norm(f)))
    C1 = C2 = C3 = 0.0
    for f in samples:
        K, dK, HK = remainder_K(ps, ap.potential, ap.perturbation, t, f.values)
        pn = m.norm(f.values)
        nzm = pn > 0.0
        if np.any(nzm):
            C1 = max(C1, float(np.max(np.abs(K[nzm]) * t[nzm] ** 2 / pn[nzm] ** 2)))
            C2 = max(C2, float(np.max(m.norm(dK[nzm]) * t[nzm] ** 2 / pn[nzm])))
        sw = np.sqrt(m.weights)
        Hs = sw[None, :, None] * HK / sw[None, None, :]
        C3 = max(C3, float(np.max(np.linalg.norm(Hs, ord=2, axis=(1, 2)) * t ** 2)))
    k_ok = bool(np.all(np.isfinite([C1, C2, C3])))

    # |y'(T)| against the integrated tail bound of |y''|
    a = ps.alpha
    _, g, _ = u_eps_many(ps, ap.potential, ap.perturbation, t, z)
    C2dd = float(np.max(m.norm(g) * nz ** (a + 1.0)))
    T = mesh.T
    tail_bound = (2.0 ** (a + 1.0) * C2dd / ps.omega ** (a + 1.0)) * (a + 2.0) / a \
        * T ** (-a / (a + 2.0))
    _, dyT = po.y_state(T)
    ydot_T = float(m.norm(dyT[0]))

    return {
        "y_plus_phi": {"pass": radius_ok, "min_ratio": float(np.min(nz / lower))},
        "y_plus_phi_angle": {"pass": angle_ok,
                             "min_gap": float(np.min(cosang - angle_lower_bound(t, ps.alpha)))},
        "h_decay": {"pass": h_ok, "slope": h_slope, "theory": h_target},
        "K_bounds": {"pass": k_ok, "C_K1": C1, "C_K2": C2, "C_K3": C3},
        "ydot_tail": {"pass": bool(ydot_T <= tail_bound), "ydot_T": ydot_T,
                      "bound": tail_bound, "C_second": C2dd},
    }


def verify_orbit(po, rtol=1e-10, atol=1e-12, n_grid=61, window_decades=1.0):
    """Independent integration over the first decade plus tail-trend sampling."""
    start = 1.0 / po.params.time_scale if po.frame == "x" else 1.0
    t_end = min(start * 10.0 ** window_decades, po.T_phys)
    sol = integrate_orbit(po, t_end, rtol=rtol, atol=atol)
    ok = bool(sol.success)
    if ok:
        tt = np.linspace(0.0, t_end, 401)
        x_rk = sol.sol(tt)[:po.params.dim].T
        x_rec = po.position(tt)
        m = po.params.metric
        dev = float(np.max(m.norm(x_rk - x_rec) / m.norm(x_rec)))
    else:
        dev = float("nan")
    grid = po.log_grid(n_grid)
    x, v = po.state(grid)
    m = po.params.metric
    report = VerificationReport(
        t_grid=grid, ode_window=(0.0, float(t_end)), ode_deviation=dev,
        radial_ratio=po.radial_ratio(grid), speed_tail=m.norm(v),
        direction_tail=po.direction(grid), lemma_bounds=lemma_bounds_report(po),
        integrator_ok=ok, integrator_message=str(sol.message))
    po.verification = report
    return report


def write_report(report, path):
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)


class ParabolicOrbitSolver(BaseEstimator):
    """Estimator front end: certify the configuration, solve, reconstruct.

    Parameters
    ----------
    T : float
        Truncation horizon of the transformed problem.
    gamma, band_step : float
        Mesh grading ratio and step of the uniform band on ``[t0, t0+1]``.
    steps : int
        Continuation steps per stage.
    tol : float
        Dual gradient norm at which Newton stops.
    max_iter : int
        Newton iterations allowed per continuation step.
    t0 : float or None
        Start time; ``None`` selects the smallest admissible value.

    Attributes
    ----------
    configuration_, result_, orbit_, problem_
    """

    def __init__(self, T=1e5, gamma=1.05, band_step=0.1, steps=10, tol=1e-10, max_iter=10,
                 t0=None, check_positivity=True):
        self.T = T
        self.gamma = gamma
        self.band_step = band_step
        self.steps = steps
        self.tol = tol
        self.max_iter = max_iter
        self.t0 = t0
        self.check_positivity = check_positivity

    def _setup(self, problem):
        cc = problem.configuration()
        holds, _, zeta = check_bs(cc)
        if not holds:
            raise ContractViolation("the central configuration fails the (BS) condition")
        omega = omega_from(cc.u_value, cc.alpha)
        t0 = self.t0 if self.t0 is not None else select_t0(problem.R, problem.eta, omega,
                                                           cc.alpha)
        return cc, zeta, t0

    def fit(self, problem, x0=None, epsilon=None, sigma=None):
        cc, zeta, t0 = self._setup(problem)
        if x0 is not None:
            if epsilon is not None or sigma is not None:
                raise ContractViolation("give either x0 or (epsilon, sigma), not both")
            target = params_from_initial(x0, cc, t0=t0)
            epsilon, sigma = target.epsilon, target.sigma
        epsilon = 0.0 if epsilon is None else float(epsilon)
        base = ScalingParams.from_configuration(cc, 0.0, None, t0)
        mesh = build_mesh(t0, self.T, self.gamma, self.band_step)
        ap = ActionProblem(problem.potential, problem.perturbation, base, mesh, zeta)
        sr = newton_continuation_solve(ap, epsilon, sigma, steps=self.steps, tol=self.tol,
                                       max_iter=self.max_iter,
                                       check_positivity=self.check_positivity)
        self.configuration_ = cc
        self.problem_ = ap
        self.result_ = sr
        self.orbit_ = reconstruct_orbit(sr, ap)
        return self

    def predict(self, t):
        """Physical positions ``x(t)``."""
        return self.orbit_.position(t)

    def verify(self, **kw):
        return verify_orbit(self.orbit_, **kw)
