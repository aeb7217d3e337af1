"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 contract violation (a
check failed or a precondition does not hold), 3 solver failure.
"""

import argparse
import json
import math
import os
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__
from .action_solver import ActionProblem, _Assembler, empirical_epsilon_star, write_triplets
from .applications import (PRESETS, HgonSpec, hgon_bs_threshold, hgon_configuration, preset)
from .central_config import check_bs
from .core_model import (ConeRegion, fd_derivative_check, homogeneity_identity_residuals)
from .exceptions import ConfigError, ContractViolation, DomainError, SolverError
from .orbit import ParabolicOrbitSolver, verify_orbit
from .funcspace import build_mesh
from .transform import ScalingParams, omega_from, select_t0

EXIT_OK, EXIT_CONFIG, EXIT_CONTRACT, EXIT_SOLVER = 0, 1, 2, 3

COMMANDS = ("check-identities", "find-cc", "check-bs", "solve-parabolic", "verify-orbit",
            "hgon-threshold", "epsilon-star")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["problem"],
    "properties": {
        "problem": {
            "type": "object",
            "required": ["preset"],
            "properties": {
                "preset": {"enum": list(PRESETS)},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
                "masses": {"type": "array", "items": _POS, "minItems": 1},
                "xi": _VEC,
                "seed": _VEC,
                "H": {"type": "integer", "minimum": 2},
                "m": _POS,
                "mu": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "eccentricity": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "half_distance": {"type": "number", "minimum": 0},
                "strength": _POS,
                "dim": {"type": "integer", "minimum": 2},
                "k": {"type": "integer", "minimum": 1},
                "anisotropy": {"type": "number", "exclusiveMinimum": -1},
            },
            "additionalProperties": False,
        },
        "cone": {
            "type": "object",
            "properties": {"R": _POS,
                           "eta": {"type": "number", "exclusiveMinimum": 0,
                                   "exclusiveMaximum": 1}},
            "additionalProperties": False,
        },
        "solver": {
            "type": "object",
            "properties": {
                "T": _POS,
                "gamma": {"type": "number", "exclusiveMinimum": 1, "maximum": 1.25},
                "band_step": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "steps": {"type": "integer", "minimum": 1},
                "tol": _POS,
                "max_iter": {"type": "integer", "minimum": 1},
                "t0": {"type": "number", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "target": {
            "type": "object",
            "properties": {"x0": _VEC,
                           "epsilon": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                           "sigma": _VEC},
            "additionalProperties": False,
        },
        "identities": {
            "type": "object",
            "properties": {"n_points": {"type": "integer", "minimum": 1}},
            "additionalProperties": False,
        },
        "epsilon_star": {
            "type": "object",
            "properties": {"sigma_grid": {"type": "array", "items": _VEC},
                           "eps_max": {"type": "number", "exclusiveMinimum": 0,
                                       "exclusiveMaximum": 1},
                           "n_bisect": {"type": "integer", "minimum": 1},
                           "steps": {"type": "integer", "minimum": 1}},
            "additionalProperties": False,
        },
        "verify": {
            "type": "object",
            "properties": {"rtol": _POS, "atol": _POS, "n_grid": {"type": "integer",
                                                                  "minimum": 3}},
            "additionalProperties": False,
        },
        "seed": {"type": "integer", "minimum": 0},
    },
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return None
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dump_json(obj, path=None):
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def load_config(path):
    """Parse and schema-validate a JSON config; errors carry line or field locations."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
                 for e in errors]
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines))
    return cfg


def build_problem(cfg):
    pcfg = dict(cfg["problem"])
    name = pcfg.pop("preset")
    pcfg.update(cfg.get("cone", {}))
    try:
        return preset(name, **pcfg)
    except (ContractViolation, ValueError) as exc:
        raise ConfigError(f"problem: {exc}") from exc


class Runner:
    def __init__(self, args, cfg):
        self.args = args
        self.cfg = cfg
        self.out = Path(args.out)
        self.seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        self.outputs = {}

    def log(self, msg):
        if not self.args.quiet:
            print(msg, file=sys.stderr)

    def emit(self, name, obj):
        self.outputs[name] = obj
        dump_json(obj, self.out / name)
        self.log(f"wrote {self.out / name}")

    # -- commands --------------------------------------------------------

    def check_identities(self):
        problem = build_problem(self.cfg)
        cc = problem.configuration()
        n = self.cfg.get("identities", {}).get("n_points", 100)
        cone = ConeRegion(cc.xi_plus, problem.R, problem.eta, problem.potential.metric)
        rng = np.random.default_rng(self.seed)
        pts = cone.sample(n, rng)
        euler = radial = g_err = h_err = 0.0
        wg_err = wh_err = 0.0
        pert = problem.perturbation
        for x in pts:
            e, r = homogeneity_identity_residuals(problem.potential, x)
            ge, he = fd_derivative_check(problem.potential, x)
            euler, radial = max(euler, e), max(radial, r)
            g_err, h_err = max(g_err, ge), max(h_err, he)
            if not pert.is_zero and np.all(pert.valid(0.0, x)):
                t = float(rng.uniform(0.0, 10.0))
                a, b = fd_derivative_check(pert, x, t)
                wg_err, wh_err = max(wg_err, a), max(wh_err, b)
        ok = euler <= 1e-9 and radial <= 1e-9 and max(g_err, wg_err) <= 1e-6 \
            and max(h_err, wh_err) <= 1e-5
        self.emit("identities.json", {
            "n_points": n, "euler_max": euler, "radial_hess_max": radial,
            "fd_grad_max": g_err, "fd_hess_max": h_err,
            "perturbation_fd_grad_max": wg_err, "perturbation_fd_hess_max": wh_err,
            "pass": bool(ok)})
        return EXIT_OK if ok else EXIT_CONTRACT

    def find_cc(self):
        problem = build_problem(self.cfg)
        cc = problem.configuration()
        self.emit("certificate.json", cc.to_certificate())
        return EXIT_OK

    def check_bs(self):
        problem = build_problem(self.cfg)
        cc = problem.configuration()
        cert = cc.to_certificate()
        self.emit("certificate.json", cert)
        return EXIT_OK if cert["holds"] else EXIT_CONTRACT

    def _solver(self):
        s = self.cfg.get("solver", {})
        return ParabolicOrbitSolver(T=s.get("T", 1e5), gamma=s.get("gamma", 1.05),
                                    band_step=s.get("band_step", 0.1), steps=s.get("steps", 10),
                                    tol=s.get("tol", 1e-10), max_iter=s.get("max_iter", 10),
                                    t0=s.get("t0"))

    def _solve(self):
        problem = build_problem(self.cfg)
        target = self.cfg.get("target", {"epsilon": 0.0})
        est = self._solver()
        if "x0" in target:
            est.fit(problem, x0=np.asarray(target["x0"], dtype=float))
        else:
            sigma = target.get("sigma")
            est.fit(problem, epsilon=target.get("epsilon", 0.0),
                    sigma=None if sigma is None else np.asarray(sigma, dtype=float))
        self.emit("certificate.json", est.configuration_.to_certificate())
        self.emit("solve.json", est.result_.to_dict())
        if self.args.dump_matrices:
            final = est.orbit_.problem
            asm = _Assembler(final)
            _, _, H = asm.evaluate(est.result_.phi.free)
            write_triplets(H, self.out / "hessian.txt")
            write_triplets(asm.stiff, self.out / "stiffness.txt")
        vcfg = self.cfg.get("verify", {})
        rep = verify_orbit(est.orbit_, rtol=vcfg.get("rtol", 1e-10), atol=vcfg.get("atol", 1e-12),
                           n_grid=vcfg.get("n_grid", 61))
        est.orbit_.write_csv(self.out / "orbit.csv", rep.t_grid)
        self.log(f"wrote {self.out / 'orbit.csv'}")
        self.emit("report.json", rep.to_dict())
        return est, rep

    def solve_parabolic(self):
        self._solve()
        return EXIT_OK

    def verify_orbit(self):
        est, rep = self._solve()
        s = rep.summary()
        lemma_ok = all(v["pass"] for v in rep.lemma_bounds.values())
        checks = {
            "ode_deviation": s["ode_deviation"] <= 1e-3,
            "radial_ratio": 0.95 <= s["radial_ratio_final_min"]
            and s["radial_ratio_final_max"] <= 1.05,
            "direction": s["direction_final_min"] >= 0.999,
            "speed": s["speed_final_max"] <= 1e-2 and s["speed_decreasing"],
            "lemma_bounds": lemma_ok,
        }
        self.emit("verdict.json", {"checks": checks, "pass": all(checks.values())})
        return EXIT_OK if all(checks.values()) else EXIT_CONTRACT

    def hgon_threshold(self):
        H = self.args.H
        if H is None:
            if self.cfg and "H" in self.cfg.get("problem", {}):
                H = self.cfg["problem"]["H"]
            else:
                raise ConfigError("hgon-threshold needs --H or problem.H")
        m = self.cfg.get("problem", {}).get("m", 1.0) if self.cfg else 1.0
        _, u_cf, u_dir = hgon_configuration(HgonSpec(H, m))
        out = {"H": H, "m": m, "threshold": hgon_bs_threshold(H), "u_closed_form": u_cf,
               "u_direct": u_dir, "u_gap": u_cf - u_dir}
        self.emit("hgon.json", out)
        if not self.args.quiet:
            print(dump_json(out), end="")
        return EXIT_OK

    def epsilon_star(self):
        problem = build_problem(self.cfg)
        cc = problem.configuration()
        holds, _, zeta = check_bs(cc)
        if not holds:
            raise ContractViolation("the central configuration fails the (BS) condition")
        s = self.cfg.get("solver", {})
        omega = omega_from(cc.u_value, cc.alpha)
        t0 = s.get("t0") or select_t0(problem.R, problem.eta, omega, cc.alpha)
        base = ScalingParams.from_configuration(cc, 0.0, None, t0)
        mesh = build_mesh(t0, s.get("T", 1e4), s.get("gamma", 1.05), s.get("band_step", 0.1))
        ap = ActionProblem(problem.potential, problem.perturbation, base, mesh, zeta)
        e = self.cfg.get("epsilon_star", {})
        grid = e.get("sigma_grid")
        eps = empirical_epsilon_star(ap, grid, eps_max=e.get("eps_max", 0.5),
                                     n_bisect=e.get("n_bisect", 8), steps=e.get("steps", 5),
                                     tol=s.get("tol", 1e-10), max_iter=s.get("max_iter", 10))
        self.emit("epsilon_star.json", {"epsilon_star": eps, "sigma_grid": grid or [[0.0]],
                                        "eps_max": e.get("eps_max", 0.5), "t0": t0})
        return EXIT_OK


def _manifest(args, cfg, seed, code, outputs):
    return {
        "command": args.command,
        "config_path": args.config,
        "config": cfg,
        "seed": seed,
        "threads": args.threads,
        "exit_code": code,
        "outputs": sorted(outputs),
        "versions": {"parabolic_orbits": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "host": platform.node(),
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }


def make_parser():
    p = argparse.ArgumentParser(prog="parabolic-orbits",
                                description="Parabolic orbits of perturbed homogeneous potentials")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON problem description")
    p.add_argument("--out", default="run", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (overrides config)")
    p.add_argument("--threads", type=int, default=1,
                   help="thread count recorded in the manifest; BLAS threads are set "
                        "through the usual environment variables")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--H", type=int, default=None, help="polygon size for hgon-threshold")
    p.add_argument("--dump-matrices", action="store_true",
                   help="write Hessian and stiffness matrices as sparse triplets")
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    cfg = {}
    code = EXIT_OK
    runner = None
    try:
        if args.config is not None:
            cfg = load_config(args.config)
        elif args.command != "hgon-threshold":
            raise ConfigError(f"{args.command} requires --config")
        os.makedirs(args.out, exist_ok=True)
        runner = Runner(args, cfg)
        code = getattr(runner, args.command.replace("-", "_"))()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except (ContractViolation, DomainError) as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        code = EXIT_CONTRACT
    except SolverError as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_SOLVER
    if runner is not None:
        dump_json(_manifest(args, cfg, runner.seed, code, runner.outputs),
                  Path(args.out) / "manifest.json")
    return code


if __name__ == "__main__":
    sys.exit(main())
