"""Periodic RVEs: master-slave elimination, regularized solve, shear modulus extraction."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import elasticity, quadrature, solvers
from .elasticity import Material
from .mesh import INCLUSION_TAG, MATRIX_TAG, Mesh, generate_voxel_rve

__all__ = ["PeriodicMap", "PeriodicMapError", "RVEResult", "build_periodic_map", "solve_rve",
           "mackenzie_estimate", "rve_table", "RVE_COLUMNS"]

RVE_COLUMNS = ("k", "dofs_reduced", "C_h_reaction", "C_h_volavg", "C_mackenzie", "err_pct")


class PeriodicMapError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PeriodicMap:
    """Slave nodes on the faces ``x_i = a`` tied to masters on ``x_i = 0``.

    ``u[slave] = u[master] + strain @ offset`` for each pair.
    """

    slaves: np.ndarray
    masters: np.ndarray
    offsets: np.ndarray  # (S, 3), x_slave - x_master
    strain: np.ndarray  # (3, 3)
    nodes: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def pairs(self):
        return list(zip(self.slaves.tolist(), self.masters.tolist(), map(tuple, self.offsets)))

    @property
    def free_nodes(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_nodes), self.slaves)

    def transformation(self):
        """``u = T w + g`` with ``g = strain @ x`` and ``w`` periodic.

        ``w`` holds one DOF triple per free node; slaves copy their master.
        """
        free = self.free_nodes
        col_of = -np.ones(self.n_nodes, dtype=np.int64)
        col_of[free] = np.arange(len(free))
        owner = np.arange(self.n_nodes)
        owner[self.slaves] = self.masters
        cols_node = col_of[owner]
        rows = (3 * np.arange(self.n_nodes)[:, None] + np.arange(3)).ravel()
        cols = (3 * cols_node[:, None] + np.arange(3)).ravel()
        T = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(3 * self.n_nodes, 3 * len(free)))
        g = self.nodes @ self.strain.T
        return T, g.ravel()

    def expand(self, u_reduced) -> np.ndarray:
        T, g = self.transformation()
        return T @ u_reduced + g


def build_periodic_map(mesh: Mesh, side: float, strain=None, tol: float = 1e-9) -> PeriodicMap:
    """Pair every node on a face ``x_i = side`` with its image on ``x_i = 0``.

    Nodes on several ``+`` faces (edges, corners) map straight to the node
    obtained by moving all their ``+`` coordinates to zero, so chains end on
    a single master.
    """
    strain = np.zeros((3, 3)) if strain is None else np.asarray(strain, dtype=float)
    x = mesh.nodes
    scale = tol * side
    hi = np.abs(x - side) <= scale
    if np.any((x < -scale) | (x > side + scale)):
        raise PeriodicMapError("mesh extends outside the cube [0, side]^3")
    key = np.round(x / scale).astype(np.int64)
    lookup = {tuple(k): i for i, k in enumerate(key)}
    slaves, masters, offsets = [], [], []
    for i in np.nonzero(hi.any(axis=1))[0]:
        target = x[i].copy()
        target[hi[i]] = 0.0
        j = lookup.get(tuple(np.round(target / scale).astype(np.int64)))
        if j is None:
            raise PeriodicMapError(f"boundary node {int(i)} at {tuple(x[i])} has no periodic image")
        if hi[j].any():
            raise PeriodicMapError(f"periodic image of node {int(i)} lies on a + face")
        slaves.append(int(i))
        masters.append(int(j))
        offsets.append(x[i] - x[j])
    return PeriodicMap(np.array(slaves, dtype=np.int64), np.array(masters, dtype=np.int64),
                       np.array(offsets).reshape(-1, 3), strain, mesh.nodes)


@dataclass
class RVEResult:
    C_reaction: float
    C_volavg: float
    report: solvers.SolveReport
    dofs_reduced: int
    U: np.ndarray


def solve_rve(mesh: Mesh, materials, pmap: PeriodicMap, config: solvers.SolverConfig,
              side: float = 1.0, mu_ref: float | None = None) -> RVEResult:
    """Periodic regularized solve under ``pmap.strain`` and shear modulus extraction.

    With ``u = T w + strain @ x`` the periodic fluctuation solves
    ``T^T (K + eta M) T w = -T^T K g``; only ``w`` is regularized.
    ``C_reaction`` sums the y-reactions ``(K U)_y`` of the nodes on ``x = side``
    and divides by ``2 eps_xy side^2``; ``C_volavg`` is the volume average of
    ``sigma_xy / (2 eps_xy)``.
    """
    system = elasticity.assemble_system(mesh, materials)
    if mu_ref is None:
        _, mu, _ = elasticity._material_arrays(mesh, materials)
        mu_ref = float(mu.max())
    eta = config.eta(mu_ref, mesh.h)
    T, g = pmap.transformation()
    K, M = system.K, system.M
    Kr = (T.T @ K @ T).tocsr()
    Mr = (T.T @ M @ T).tocsr()
    rhs = -(T.T @ (K @ g))
    rep = solvers.solve_regularized(Kr, Mr, rhs, config, eta=eta)
    U = T @ rep.U + g
    exy = pmap.strain[0, 1]
    if exy == 0:
        raise ValueError("macro strain needs a nonzero xy component for shear extraction")
    r = (K @ U).reshape(-1, 3)
    face = np.abs(mesh.nodes[:, 0] - side) <= 1e-9 * side
    C_reaction = float(r[face, 1].sum()) / (2 * exy * side ** 2)
    _, sig = elasticity.strain_stress(mesh, materials, U)
    _, _, detw = quadrature.element_geometry(mesh.kind, mesh.element_coords())
    C_volavg = float(np.einsum("eq,eq->", detw, sig[..., 0, 1]) / detw.sum() / (2 * exy))
    rep.extra["reduced_dofs"] = Kr.shape[0]
    return RVEResult(C_reaction, C_volavg, rep, Kr.shape[0], U)


def mackenzie_estimate(mu: float, nu: float, porosity: float) -> float:
    """``mu (1 - 15 (1 - nu) p / (7 - 5 nu))``."""
    if not 0 <= porosity < 1:
        raise ValueError(f"porosity must lie in [0, 1), got {porosity}")
    return mu * (1 - 15 * (1 - nu) * porosity / (7 - 5 * nu))


def rve_table(ks=(1, 2, 3, 4), side=1.0, radius=0.2, matrix=Material(1.0, 1.0),
              inclusion=Material(1e-4, 1e-4), config: solvers.SolverConfig | None = None):
    """Rows ``(k, dofs_reduced, C_reaction, C_volavg, C_mackenzie, err_pct)``."""
    if config is None:
        config = solvers.SolverConfig(eta_bar=1e-2, eta_schedule="power", eta_exponent=1.5,
                                      characteristic_length=side)
    strain = np.zeros((3, 3))
    strain[0, 1] = strain[1, 0] = 1.0
    porosity = 4 / 3 * np.pi * radius ** 3 / side ** 3
    C_m = mackenzie_estimate(matrix.mu, matrix.poisson, porosity)
    rows = []
    for k in ks:
        m = generate_voxel_rve(side, k, radius)
        pmap = build_periodic_map(m, side, strain)
        res = solve_rve(m, {MATRIX_TAG: matrix, INCLUSION_TAG: inclusion}, pmap, config, side,
                        mu_ref=matrix.mu)
        rows.append((k, res.dofs_reduced, res.C_reaction, res.C_volavg, C_m,
                     100 * abs(res.C_reaction - C_m) / C_m))
    return rows


def rve_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RVE_COLUMNS)
    for k, n, cr, cv, cm, e in rows:
        w.writerow([k, n, f"{cr:.10e}", f"{cv:.10e}", f"{cm:.10e}", f"{e:.6f}"])
    return buf.getvalue()
