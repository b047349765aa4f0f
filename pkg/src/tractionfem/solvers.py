"""Linear solvers and solution strategies for traction problems.

Strategies
----------
``solve_regularized``         (K + eta M) U = F
``solve_iterative``           (K + eta M) U^{k+1} = F + eta M U^k
``solve_predictor_corrector`` (K + eta M) U_p = F, then (K + eta M) U = F - eta M U_p
``solve_constrained``         nodal constraints by row/column elimination
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import rigidbody
from .elasticity import Energies, energies

log = logging.getLogger(__name__)

DENSE_LIMIT = 3000
LINEAR_SOLVERS = ("auto", "cg", "direct", "dense")
SCHEDULES = ("fixed", "power")


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    """Iteration budget exhausted; carries the residual history."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


class DivergenceError(SolverError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


class SingularSystemError(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Regularization and stopping parameters.

    The physical parameter is ``eta = eta_bar * h**p * mu / L**2`` where the
    factor ``h**p`` is present only for ``eta_schedule = "power"``.
    """

    eta_bar: float = 1.0
    eta_schedule: str = "fixed"
    eta_exponent: float = 0.0
    characteristic_length: float = 1.0
    tolerance: float = 1e-10
    max_iterations: int = 1000
    linear_solver: str = "auto"
    linear_tolerance: float = 1e-13

    def __post_init__(self):
        if not self.eta_bar > 0:
            raise ValueError(f"eta_bar must be positive, got {self.eta_bar}")
        if self.eta_schedule not in SCHEDULES:
            raise ValueError(f"eta_schedule must be one of {SCHEDULES}, got {self.eta_schedule!r}")
        if not 0 < self.tolerance < 1:
            raise ValueError(f"tolerance must lie in (0, 1), got {self.tolerance}")
        if not self.characteristic_length > 0:
            raise ValueError("characteristic_length must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.linear_solver not in LINEAR_SOLVERS:
            raise ValueError(f"linear_solver must be one of {LINEAR_SOLVERS}")

    def effective_eta_bar(self, h: float | None = None) -> float:
        if self.eta_schedule == "fixed":
            return self.eta_bar
        if h is None:
            raise ValueError("mesh size h required for a power schedule")
        return self.eta_bar * h ** self.eta_exponent

    def eta(self, mu: float, h: float | None = None) -> float:
        return self.effective_eta_bar(h) * mu / self.characteristic_length ** 2

    def with_(self, **kw) -> "SolverConfig":
        return replace(self, **kw)


@dataclass
class SolveReport:
    U: np.ndarray
    iterations: int
    residual_history: list
    eta: float = 0.0
    mean_u: float = float("nan")
    mom_u: float = float("nan")
    mode_defect: float = float("nan")
    energies: Energies | None = None
    reactions: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def residual(self) -> float:
        return self.residual_history[-1]


# --------------------------------------------------------------------------- linear algebra


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    history: list


def cg_solve(A, b, tolerance=1e-10, max_iterations=None, x0=None, preconditioner="jacobi"):
    """Preconditioned conjugate gradients; stops at ``||b - A x|| <= tol ||b||``.

    Raises :class:`ConvergenceError` with the relative residual history when
    the budget is exhausted.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    if max_iterations is None:
        max_iterations = 10 * n
    matvec = A.matvec if isinstance(A, spla.LinearOperator) else (lambda v: A @ v)
    if preconditioner == "jacobi" and not isinstance(A, spla.LinearOperator):
        d = np.asarray(A.diagonal(), dtype=float)
        if np.any(d <= 0):
            raise SolverError("matrix has non-positive diagonal; not SPD")
        dinv = 1.0 / d
    else:
        dinv = np.ones(n)
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0:
        return CGResult(np.zeros(n), 0, [0.0])
    r = b - matvec(x)
    history = [np.linalg.norm(r) / bnorm]
    if history[-1] <= tolerance:
        return CGResult(x, 0, history)
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iterations + 1):
        Ap = matvec(p)
        pAp = p @ Ap
        if pAp <= 0:
            raise SolverError("operator is not positive definite (p^T A p <= 0)")
        a = rz / pAp
        x += a * p
        r -= a * Ap
        history.append(np.linalg.norm(r) / bnorm)
        if history[-1] <= tolerance:
            return CGResult(x, it, history)
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"CG did not reach {tolerance:.1e} in {max_iterations} iterations "
        f"(residual {history[-1]:.3e})", history)


class LinearSolver:
    """Reusable solver for one SPD matrix.

    ``method``: ``dense`` (Cholesky), ``direct`` (sparse LU), ``cg`` (Jacobi
    PCG) or ``auto`` (dense below ``DENSE_LIMIT`` unknowns, else PCG).
    """

    def __init__(self, A, method="auto", tolerance=1e-13, max_iterations=None):
        if method not in LINEAR_SOLVERS:
            raise ValueError(f"unknown linear solver {method!r}")
        n = A.shape[0]
        if method == "auto":
            method = "dense" if n < DENSE_LIMIT else "cg"
        self.A = A
        self.method = method
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.iterations = 0
        if method == "dense":
            dense = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
            try:
                self._factor = sla.cho_factor(dense)
            except np.linalg.LinAlgError:
                raise SolverError("matrix is not positive definite") from None
        elif method == "direct":
            self._factor = spla.splu(sp.csc_matrix(A))

    def solve(self, b):
        if self.method == "dense":
            x = sla.cho_solve(self._factor, b)
            self.iterations = 1
        elif self.method == "direct":
            x = self._factor.solve(np.asarray(b, dtype=float))
            self.iterations = 1
        else:
            res = cg_solve(self.A, b, self.tolerance, self.max_iterations)
            x = res.x
            self.iterations = res.iterations
        return x


def regularized_matrix(K, M, eta):
    """``K + eta M`` with the sparsity pattern of ``K`` union ``M``."""
    return (K + eta * M).tocsr()


def _diagnostics(report, K, M, F, basis, eta):
    U = report.U
    if basis is not None:
        report.mean_u = float(np.linalg.norm(rigidbody.mean_translation(U, M, basis)))
        report.mom_u = float(np.linalg.norm(rigidbody.mean_moment(U, M, basis)))
        report.mode_defect = float(rigidbody.mode_residuals(U, M, basis).max())
    report.energies = energies(K, M, F, U, eta)
    report.eta = eta
    return report


def _relres(K, U, F):
    fn = np.linalg.norm(F)
    r = np.linalg.norm(K @ U - F)
    return r / fn if fn > 0 else r


def _mu_of(mu):
    if mu is None:
        return 1.0
    return float(mu)


def solve_regularized(K, M, F, config: SolverConfig, h=None, mu=None, basis=None,
                      eta=None) -> SolveReport:
    """Solve ``(K + eta M) U = F``.

    ``eta`` overrides the value derived from ``config``, ``mu`` and ``h``.
    """
    eta = config.eta(_mu_of(mu), h) if eta is None else eta
    A = regularized_matrix(K, M, eta)
    solver = LinearSolver(A, config.linear_solver, config.linear_tolerance, config.max_iterations * 100)
    U = solver.solve(F)
    fn = np.linalg.norm(F)
    res = np.linalg.norm(A @ U - F) / fn if fn > 0 else 0.0
    report = SolveReport(U, solver.iterations, [res])
    return _diagnostics(report, K, M, F, basis, eta)


def solve_iterative(K, M, F, config: SolverConfig, h=None, mu=None, basis=None,
                    eta=None) -> SolveReport:
    """Fixed-point iteration ``(K + eta M) U^{k+1} = F + eta M U^k``, ``U^{-1} = 0``.

    One step is a backward Euler step of ``M dU/dt + K U = F`` with time step
    ``1/eta``. The history holds ``||K U^k - F|| / ||F||``; iteration stops
    once it drops below ``config.tolerance``.
    """
    eta = config.eta(_mu_of(mu), h) if eta is None else eta
    A = regularized_matrix(K, M, eta)
    solver = LinearSolver(A, config.linear_solver, config.linear_tolerance, config.max_iterations * 100)
    U = solver.solve(F)
    history = [_relres(K, U, F)]
    rising = 0
    k = 0
    while history[-1] > config.tolerance:
        if k >= config.max_iterations:
            raise ConvergenceError(
                f"iterative scheme did not reach {config.tolerance:.1e} "
                f"in {config.max_iterations} iterations", history)
        U = solver.solve(F + eta * (M @ U))
        history.append(_relres(K, U, F))
        k += 1
        rising = rising + 1 if history[-1] >= history[-2] else 0
        if rising >= 3:
            raise DivergenceError("residual failed to contract for 3 consecutive iterations",
                                  history)
    report = SolveReport(U, k, history)
    return _diagnostics(report, K, M, F, basis, eta)


def solve_predictor_corrector(K, M, F, config: SolverConfig, h=None, mu=None, basis=None,
                              eta=None) -> SolveReport:
    """Two regularized solves returning a centred solution for any load."""
    eta = config.eta(_mu_of(mu), h) if eta is None else eta
    A = regularized_matrix(K, M, eta)
    solver = LinearSolver(A, config.linear_solver, config.linear_tolerance, config.max_iterations * 100)
    Up = solver.solve(F)
    it = solver.iterations
    rhs = F - eta * (M @ Up)
    U = solver.solve(rhs)
    it += solver.iterations
    rn = np.linalg.norm(rhs)
    res = np.linalg.norm(A @ U - rhs) / rn if rn > 0 else 0.0
    report = SolveReport(U, it, [res], extra={"predictor": Up})
    return _diagnostics(report, K, M, F, basis, eta)


def solve_constrained(K, F, constraints, M=None, basis=None, pivot_tolerance=1e-12) -> SolveReport:
    """Prescribe ``U[3*node + direction] = value`` and eliminate those DOFs.

    Reactions ``K U - F`` at the constrained DOFs are returned in
    ``report.reactions`` keyed by ``(node, direction)``.
    """
    n = K.shape[0]
    fixed = np.array([3 * int(nd) + int(d) for nd, d, _ in constraints], dtype=np.int64)
    values = np.array([float(v) for _, _, v in constraints])
    if len(np.unique(fixed)) != len(fixed):
        raise ValueError("duplicate constraint")
    free = np.setdiff1d(np.arange(n), fixed)
    K = sp.csr_matrix(K)
    U = np.zeros(n)
    U[fixed] = values
    Kff = K[free][:, free].tocsc()
    rhs = F[free] - K[free][:, fixed] @ values
    try:
        lu = spla.splu(Kff)
    except RuntimeError as exc:
        raise SingularSystemError(f"constrained system is singular: {exc}") from None
    piv = np.abs(lu.U.diagonal())
    if piv.min() <= pivot_tolerance * piv.max():
        raise SingularSystemError(
            "constraints do not remove all rigid body motions "
            f"(pivot ratio {piv.min() / piv.max():.1e})")
    U[free] = lu.solve(rhs)
    full = K @ U - F
    rn = np.linalg.norm(rhs)
    res = np.linalg.norm(Kff @ U[free] - rhs) / rn if rn > 0 else 0.0
    reactions = {(int(nd), int(d)): float(full[3 * int(nd) + int(d)]) for nd, d, _ in constraints}
    report = SolveReport(U, 1, [res], reactions=reactions)
    if M is not None:
        _diagnostics(report, K, M, F, basis, 0.0)
    else:
        report.energies = Energies(0.5 * float(U @ (K @ U)), 0.5 * float(U @ (K @ U)) - float(F @ U),
                                   0.5 * float(U @ (K @ U)) - float(F @ U))
    return report


def reaction_resultant(report: SolveReport) -> np.ndarray:
    """Sum of reactions per direction."""
    out = np.zeros(3)
    for (_, d), r in report.reactions.items():
        out[d] += r
    return out


# --------------------------------------------------------------------------- conditioning


@dataclass(frozen=True)
class ConditionEstimate:
    value: float
    lambda_max: float
    lambda_min: float
    iterations: int
    approximate: bool


def estimate_condition_number(A, max_iterations=500, tolerance=1e-6, seed=0,
                              inner="auto") -> ConditionEstimate:
    """``lambda_max / lambda_min`` of an SPD matrix.

    ``lambda_max`` from power iteration, ``lambda_min`` from inverse
    iteration with linear solves by ``inner`` (see :class:`LinearSolver`).
    The estimate is flagged approximate when either iteration stops on the
    budget rather than the relative change ``tolerance``.
    """
    n = A.shape[0]
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n)

    def iterate(step):
        v = v0 / np.linalg.norm(v0)
        lam_old = None
        for it in range(1, max_iterations + 1):
            w = step(v)
            lam = float(v @ w)
            v = w / np.linalg.norm(w)
            if lam_old is not None and abs(lam - lam_old) <= tolerance * abs(lam):
                return lam, it, False
            lam_old = lam
        return lam, max_iterations, True

    lam_max, it1, approx1 = iterate(lambda v: A @ v)
    solver = LinearSolver(A, inner, 1e-12)
    inv, it2, approx2 = iterate(solver.solve)
    if inv <= 0:
        raise SolverError("matrix is not positive definite")
    lam_min = 1.0 / inv
    if approx1 or approx2:
        log.warning("condition estimate hit the iteration budget; value is approximate")
    return ConditionEstimate(lam_max / lam_min, lam_max, lam_min, it1 + it2, approx1 or approx2)
