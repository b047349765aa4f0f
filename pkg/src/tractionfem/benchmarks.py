"""Analytic solutions, error norms and convergence studies.

Cases
-----
sphere      ball of radius R under the central body force ``f = -C (r/R) e_r``,
            whose traction-free solution is purely radial (Love)
brick       box ``[-Lx/2, Lx/2] x [-Ly/2, Ly/2] x [-Lz/2, Lz/2]`` with ``nu = 0``
            under ``f = (lam + 2 mu) sin(3 pi x / Lx) e_x``
spring      four nodes joined by three springs, end loads ``-f`` and ``f``
thermal     cube with ``theta = x + y + z``; the exact solution is stress free
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import elasticity, mesh as meshmod, quadrature, rigidbody, solvers
from .elasticity import Material

__all__ = [
    "AnalyticSolution", "SphereParams", "BrickParams", "SpringChain", "SpringChainResult",
    "sphere_exact", "love_solution", "sphere_body_force", "brick_exact", "brick_solution",
    "brick_body_force", "error_norms", "spring_chain_suite", "interpolate",
    "thermal_zero_stress_case", "convergence_study", "fit_rate", "StudyResult", "CASES",
    "SOLVER_COLUMNS", "sphere_constraints", "brick_constraints",
]


@dataclass(frozen=True)
class AnalyticSolution:
    displacement: Callable  # (P, 3) -> (P, 3)
    strain: Callable  # (P, 3) -> (P, 3, 3)
    metadata: dict = field(default_factory=dict)


# --------------------------------------------------------------------------- sphere


@dataclass(frozen=True)
class SphereParams:
    radius: float = 0.5
    C: float = 2.0
    material: Material = Material.from_young(1.0, 0.3)


def _sphere_coeffs(p: SphereParams):
    lam, mu = p.material.lam, p.material.mu
    c = -p.C * p.radius / (10 * (lam + 2 * mu))
    A = (5 * lam + 6 * mu) / (3 * lam + 2 * mu)
    return c, A


def sphere_exact(r, params: SphereParams = SphereParams()):
    """Radial displacement ``u_r`` and strains ``eps_rr``, ``eps_tt`` at radius ``r``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(r > params.radius * (1 + 1e-12)):
        raise ValueError(f"radius outside [0, {params.radius}]")
    c, A = _sphere_coeffs(params)
    s = (r / params.radius) ** 2
    u_r = c * r * (A - s)
    eps_rr = c * (A - 3 * s)
    eps_tt = c * (A - s)
    return u_r, eps_rr, eps_tt


def love_solution(params: SphereParams = SphereParams()) -> AnalyticSolution:
    """Cartesian form ``u = g(r) x`` with ``g = c (A - r^2/R^2)``."""
    c, A = _sphere_coeffs(params)
    R2 = params.radius ** 2

    def displacement(x):
        x = np.asarray(x, dtype=float)
        g = c * (A - np.einsum("pi,pi->p", x, x) / R2)
        return g[:, None] * x

    def strain(x):
        x = np.asarray(x, dtype=float)
        g = c * (A - np.einsum("pi,pi->p", x, x) / R2)
        return g[:, None, None] * np.eye(3) - (2 * c / R2) * np.einsum("pi,pj->pij", x, x)

    return AnalyticSolution(displacement, strain, {"case": "sphere", "params": params})


def sphere_body_force(params: SphereParams = SphereParams(), perturbation: float = 0.0):
    """``f = -C x / R + perturbation e_x``."""
    def f(x):
        out = -params.C / params.radius * np.asarray(x, dtype=float)
        out[:, 0] += perturbation
        return out
    return f


def sphere_constraints(m: meshmod.Mesh, radius: float):
    """Six nodal constraints: centre (x, y, z), pole ``(0, 0, R)`` (x, y), ``(0, R, 0)`` (x)."""
    c = m.find_node((0, 0, 0))
    top = m.find_node((0, 0, radius))
    side = m.find_node((0, radius, 0))
    return [(c, 0, 0.0), (c, 1, 0.0), (c, 2, 0.0), (top, 0, 0.0), (top, 1, 0.0), (side, 0, 0.0)]


# --------------------------------------------------------------------------- brick


@dataclass(frozen=True)
class BrickParams:
    lengths: tuple = (4.0, 1.0, 1.0)
    material: Material = Material(0.0, 0.5)

    @property
    def origin(self):
        return tuple(-0.5 * L for L in self.lengths)


def brick_exact(x, Lx: float = 4.0):
    """``u = Lx^2 / (9 pi^2) sin(3 pi x / Lx) e_x`` at points ``(P, 3)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if np.any(np.abs(x[:, 0]) > Lx / 2 * (1 + 1e-12)):
        raise ValueError("point outside the brick")
    u = np.zeros_like(x)
    u[:, 0] = Lx ** 2 / (9 * math.pi ** 2) * np.sin(3 * math.pi * x[:, 0] / Lx)
    return u


def brick_solution(params: BrickParams = BrickParams()) -> AnalyticSolution:
    Lx = params.lengths[0]
    k = 3 * math.pi / Lx

    def strain(x):
        x = np.asarray(x, dtype=float)
        e = np.zeros((len(x), 3, 3))
        e[:, 0, 0] = Lx ** 2 / (9 * math.pi ** 2) * k * np.cos(k * x[:, 0])
        return e

    return AnalyticSolution(lambda x: brick_exact(x, Lx), strain, {"case": "brick", "params": params})


def brick_body_force(params: BrickParams = BrickParams()):
    Lx = params.lengths[0]
    scale = params.material.lam + 2 * params.material.mu

    def f(x):
        out = np.zeros_like(np.asarray(x, dtype=float))
        out[:, 0] = scale * np.sin(3 * math.pi * x[:, 0] / Lx)
        return out
    return f


def brick_constraints(m: meshmod.Mesh, lengths):
    """Centre node (x, y, z), ``(0, 0, Lz/2)`` (x, y) and ``(0, Ly/2, 0)`` (x)."""
    c = m.find_node((0, 0, 0))
    top = m.find_node((0, 0, lengths[2] / 2))
    side = m.find_node((0, lengths[1] / 2, 0))
    return [(c, 0, 0.0), (c, 1, 0.0), (c, 2, 0.0), (top, 0, 0.0), (top, 1, 0.0), (side, 0, 0.0)]


# --------------------------------------------------------------------------- errors


def interpolate(m: meshmod.Mesh, field_fn) -> np.ndarray:
    """Nodal interpolant of a vector field."""
    return np.asarray(field_fn(m.nodes), dtype=float).ravel()


def error_norms(m: meshmod.Mesh, U, analytic: AnalyticSolution):
    """``(L2 error, H1 error)`` with the H1 seminorm measured by the symmetric gradient."""
    xq = quadrature.physical_points(m.kind, m.element_coords())
    pts, _ = quadrature.volume_rule(m.kind)
    N, _ = quadrature.shape(m.kind, pts)
    grad, _, detw = quadrature.element_geometry(m.kind, m.element_coords())
    u = np.asarray(U, dtype=float).reshape(-1, 3)[m.elements]
    uh = np.einsum("qa,eai->eqi", N, u)
    gu = np.einsum("eai,eqaj->eqij", u, grad)
    eh = 0.5 * (gu + np.swapaxes(gu, -1, -2))
    flat = xq.reshape(-1, 3)
    ue = np.asarray(analytic.displacement(flat)).reshape(uh.shape)
    ee = np.asarray(analytic.strain(flat)).reshape(eh.shape)
    l2 = float(np.einsum("eq,eqi->", detw, (uh - ue) ** 2))
    semi = float(np.einsum("eq,eqij->", detw, (eh - ee) ** 2))
    return math.sqrt(l2), math.sqrt(l2 + semi)


# --------------------------------------------------------------------------- spring chain


@dataclass(frozen=True)
class SpringChain:
    kappa: float = 1.0
    f: float = 1.0
    n: int = 4

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.n != 4:
            raise ValueError("only the four-node chain has closed forms")

    def stiffness(self) -> np.ndarray:
        k = self.kappa
        return k * np.array([[1, -1, 0, 0], [-1, 2, -1, 0], [0, -1, 2, -1], [0, 0, -1, 1]], float)

    def load(self) -> np.ndarray:
        return np.array([-self.f, 0.0, 0.0, self.f])


@dataclass(frozen=True)
class SpringChainResult:
    K: np.ndarray
    u_lambda: np.ndarray
    multiplier: float
    u_alpha: np.ndarray
    u_eta: np.ndarray
    error_norm: float


def spring_chain_suite(chain: SpringChain = SpringChain(), eta: float = 0.1,
                       alpha: float = 1e3) -> SpringChainResult:
    """Closed forms of the four-node chain.

    ``u_eta = (-a, -b, b, a)`` with ``a = f (3 k + eta) / D``, ``b = k f / D`` and
    ``D = 2 k^2 + 4 k eta + eta^2``; ``u_alpha`` solves the penalty system
    ``(K + alpha 1 1^T) u = F`` numerically.
    """
    k, f = chain.kappa, chain.f
    u_lam = np.array([-1.5, -0.5, 0.5, 1.5]) * f / k
    D = 2 * k * k + 4 * k * eta + eta * eta
    a = f * (3 * k + eta) / D
    b = k * f / D
    u_eta = np.array([-a, -b, b, a])
    err = eta * abs(f) * math.sqrt(5 * eta ** 2 + 34 * eta * k + 58 * k ** 2) / (
        k * (eta ** 2 + 4 * eta * k + 2 * k ** 2))
    K = chain.stiffness()
    u_alpha = np.linalg.solve(K + alpha * np.ones((4, 4)), chain.load())
    return SpringChainResult(K, u_lam, 0.0, u_alpha, u_eta, err)


def spring_lagrange_solve(chain: SpringChain = SpringChain()):
    """Solve the bordered system enforcing ``<u> = 0``; returns ``(u, multiplier)``."""
    A = np.zeros((5, 5))
    A[:4, :4] = chain.stiffness()
    A[:4, 4] = A[4, :4] = 0.25
    x = np.linalg.solve(A, np.append(chain.load(), 0.0))
    return x[:4], x[4]


# --------------------------------------------------------------------------- thermal


def thermal_zero_stress_case(divisions=(2, 8, 24), eta_bars=(1.0, 0.1, 0.01), side=1.0,
                             material: Material = Material.from_young(1.0, 0.3, alpha=1.0),
                             linear_solver="auto", temperature: Callable | None = None):
    """Normalized stored energy of the free thermal cube for each ``(n, eta_bar)``.

    The cube ``[-side/2, side/2]^3`` is split into ``n^3`` cells of six tets;
    ``theta = x + y + z`` unless ``temperature`` is given. Energies are
    divided by the energy of the undeformed heated body (a body that is not
    heated stores nothing and reports 0). Rows are ``(n, h, eta_bar, energy)``.
    """
    def theta(x):
        return x.sum(axis=1) if temperature is None else temperature(x)

    rows = []
    for n in divisions:
        m = meshmod.generate_box_tet((-side / 2,) * 3, (side,) * 3, (n, n, n))
        system = elasticity.assemble_system(m, material)
        F = elasticity.assemble_thermal_load(m, material, theta)
        ref = elasticity.thermal_reference_energy(m, material, theta)
        for eb in eta_bars:
            cfg = solvers.SolverConfig(eta_bar=eb, characteristic_length=side,
                                       linear_solver=linear_solver)
            rep = solvers.solve_regularized(system.K, system.M, F, cfg, mu=material.mu)
            e = elasticity.thermal_stored_energy(m, material, rep.U, theta)
            rows.append((n, m.h, eb, e / ref if ref > 0 else e))
    return rows


# --------------------------------------------------------------------------- studies

_SPHERE_METHODS = ("constrained", "regularized", "iterative", "two-step")
CASES = tuple(
    [f"sphere-{m}" for m in _SPHERE_METHODS]
    + [f"sphere-perturbed-{m}" for m in _SPHERE_METHODS if m != "iterative"]
    + ["brick-hex", "brick-tet", "brick-two-step"]
    + [f"brick-{e}-{m}" for e in ("hex", "tet") for m in ("constrained", "regularized", "two-step")]
)
_BRICK_ALIASES = {"brick-hex": ("hex", "constrained"), "brick-tet": ("tet", "constrained"),
                  "brick-two-step": ("tet", "two-step")}

SOLVER_COLUMNS = ("case", "h", "eta_bar", "dofs", "iters", "resid", "mean_u", "mom_u",
                  "energy", "h1_err", "l2_err")


@dataclass
class StudyResult:
    case: str
    rows: list
    rate: float | None
    fit_residual: float | None
    reports: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SOLVER_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in SOLVER_COLUMNS])
        if self.rate is not None:
            pad = [""] * (len(SOLVER_COLUMNS) - 3)
            w.writerow(["rate"] + pad + [_fmt(self.rate), ""])
            w.writerow(["rate_fit_residual"] + pad + [_fmt(self.fit_residual), ""])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10e}"
    return str(v)


def fit_rate(h, err, last=3):
    """Least-squares slope of ``log err`` against ``log h`` over the finest ``last`` points."""
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    if len(h) < 2:
        raise ValueError("need at least two refinements to fit a rate")
    order = np.argsort(h)[:last]
    x, y = np.log(h[order]), np.log(err[order])
    coef, res, *_ = np.polyfit(x, y, 1, full=True)
    resid = float(np.sqrt(res[0] / len(x))) if len(res) else 0.0
    return float(coef[0]), resid


def _sphere_runner(case, level, config, params):
    R = params.radius
    m = meshmod.generate_sphere_tet(R, level)
    mat = params.material
    system = elasticity.assemble_system(m, mat)
    perturbed = "perturbed" in case
    pert = m.h / R if perturbed else 0.0
    F = elasticity.assemble_body_load(m, sphere_body_force(params, pert))
    basis = rigidbody.build_rigid_basis(m, system.M)
    exact = love_solution(params)
    h = m.h
    if case.endswith("constrained"):
        rep = solvers.solve_constrained(system.K, F, sphere_constraints(m, R), system.M, basis)
        U_err = rigidbody.center_field(rep.U, system.M, basis)
        eta_bar = 0.0
    else:
        kw = dict(h=h, mu=mat.mu, basis=basis)
        if case.endswith("iterative"):
            rep = solvers.solve_iterative(system.K, system.M, F, config, **kw)
        elif case.endswith("two-step"):
            rep = solvers.solve_predictor_corrector(system.K, system.M, F, config, **kw)
        else:
            rep = solvers.solve_regularized(system.K, system.M, F, config, **kw)
        U_err = rep.U
        eta_bar = config.effective_eta_bar(h)
    l2, h1 = error_norms(m, U_err, exact)
    return m, rep, eta_bar, l2, h1


def _brick_runner(case, level, config, params):
    element, method = _BRICK_ALIASES.get(case) or tuple(case.split("-", 2)[1:])
    div = (8 * 2 ** level, 2 * 2 ** level, 2 * 2 ** level)
    gen = meshmod.generate_box_hex if element == "hex" else meshmod.generate_box_tet
    m = gen(params.origin, params.lengths, div)
    mat = params.material
    system = elasticity.assemble_system(m, mat)
    F = elasticity.assemble_body_load(m, brick_body_force(params))
    basis = rigidbody.build_rigid_basis(m, system.M)
    h = m.h
    if method != "constrained":
        solve = (solvers.solve_predictor_corrector if method == "two-step"
                 else solvers.solve_regularized)
        rep = solve(system.K, system.M, F, config, h=h, mu=mat.mu, basis=basis)
        eta_bar = config.effective_eta_bar(h)
    else:
        rep = solvers.solve_constrained(system.K, F, brick_constraints(m, params.lengths),
                                        system.M, basis)
        eta_bar = 0.0
    l2, h1 = error_norms(m, rep.U, brick_solution(params))
    return m, rep, eta_bar, l2, h1


def convergence_study(case: str, levels=(0, 1, 2), config: solvers.SolverConfig | None = None,
                      sphere: SphereParams = SphereParams(),
                      brick: BrickParams = BrickParams(), fit: bool = True) -> StudyResult:
    """Run ``case`` over refinement ``levels`` and fit the H1 rate.

    Sphere levels are Bey refinements (``96 * 8**j`` tets); brick levels
    double the ``(8, 2, 2)`` grid. With ``fit=False`` a single level is
    allowed and no rate is reported.
    """
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}; choose from {CASES}")
    if fit and len(levels) < 2:
        raise ValueError("need at least two refinements to fit a rate")
    if config is None:
        config = solvers.SolverConfig(eta_bar=1.0, eta_schedule="power", eta_exponent=1.2,
                                      characteristic_length=sphere.radius)
    rows, reports = [], []
    for level in levels:
        if case.startswith("sphere"):
            m, rep, eta_bar, l2, h1 = _sphere_runner(case, level, config, sphere)
        else:
            m, rep, eta_bar, l2, h1 = _brick_runner(case, level, config, brick)
        rows.append({
            "case": case, "h": m.h, "eta_bar": eta_bar, "dofs": m.n_dofs,
            "iters": rep.iterations, "resid": rep.residual, "mean_u": rep.mean_u,
            "mom_u": rep.mom_u, "energy": rep.energies.stored, "h1_err": h1, "l2_err": l2,
        })
        rep.extra["mesh"] = m
        reports.append(rep)
    rows.sort(key=lambda r: -r["h"])
    rate = resid = None
    if fit:
        rate, resid = fit_rate([r["h"] for r in rows], [r["h1_err"] for r in rows])
    return StudyResult(case, rows, rate, resid, reports)
