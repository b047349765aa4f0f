"""Discrete rigid body modes, centering and load splitting.

Modes are ``e_k`` (translations) and ``e_k x (x - x_c)`` (rotations) sampled
at the nodes. All projections are M-orthogonal and go through the 6x6 Gram
matrix ``G = R^T M R``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .mesh import GeometryMoments, Mesh, compute_geometry_moments

__all__ = ["RigidBodyBasis", "LoadSplit", "SingularGramError", "rigid_modes", "build_rigid_basis",
           "mean_translation", "mean_moment", "center_field", "split_load", "mode_residuals"]


class SingularGramError(np.linalg.LinAlgError):
    pass


def rigid_modes(nodes, center) -> np.ndarray:
    """``(3N, 6)`` array: three translations then rotations about ``center``."""
    r = np.asarray(nodes, dtype=float) - np.asarray(center, dtype=float)
    n = len(r)
    R = np.zeros((n, 3, 6))
    for k in range(3):
        R[:, k, k] = 1.0
        R[:, :, 3 + k] = np.cross(np.eye(3)[k], r)
    return R.reshape(3 * n, 6)


@dataclass(frozen=True, eq=False)
class RigidBodyBasis:
    modes: np.ndarray  # (3N, 6)
    gram: np.ndarray  # (6, 6)
    M: object
    moments: GeometryMoments
    _chol: tuple = None

    def solve_gram(self, b):
        return sla.cho_solve(self._chol, b)

    def coefficients(self, U) -> np.ndarray:
        """Rigid motion coefficients ``G^{-1} R^T M U`` of the M-projection of ``U``."""
        return self.solve_gram(self.modes.T @ (self.M @ U))

    @cached_property
    def orthonormal(self) -> np.ndarray:
        """An M-orthonormal basis of the same span."""
        L = np.linalg.cholesky(self.gram)
        return np.linalg.solve(L, self.modes.T).T


@dataclass(frozen=True)
class LoadSplit:
    equilibrated: np.ndarray
    non_equilibrated: np.ndarray


def build_rigid_basis(mesh: Mesh, M, moments: GeometryMoments | None = None) -> RigidBodyBasis:
    if moments is None:
        moments = compute_geometry_moments(mesh)
    modes = rigid_modes(mesh.nodes, moments.centroid)
    gram = modes.T @ (M @ modes)
    gram = 0.5 * (gram + gram.T)
    try:
        chol = sla.cho_factor(gram)
    except np.linalg.LinAlgError:
        raise SingularGramError("rigid mode Gram matrix is singular") from None
    if np.linalg.cond(gram) > 1e14:
        raise SingularGramError("rigid mode Gram matrix is numerically singular")
    return RigidBodyBasis(modes, gram, M, moments, chol)


def mean_translation(U, M, basis: RigidBodyBasis, moments: GeometryMoments | None = None):
    """Volume average ``<u>``."""
    moments = basis.moments if moments is None else moments
    return basis.modes[:, :3].T @ (M @ U) / moments.volume


def mean_moment(U, M, basis: RigidBodyBasis, moments: GeometryMoments | None = None):
    """``{u} = I_c^{-1} int (x - x_c) x u dV`` with ``I_c = tr(J) I - J``.

    For ``u = w x (x - x_c)`` this returns ``w``.
    """
    moments = basis.moments if moments is None else moments
    first = basis.modes[:, 3:].T @ (M @ U)
    return np.linalg.solve(moments.inertia, first)


def center_field(U, M, basis: RigidBodyBasis):
    """M-orthogonal projection of ``U`` onto the complement of the rigid modes."""
    U = np.asarray(U, dtype=float)
    return U - basis.modes @ basis.coefficients(U)


def split_load(F, M, basis: RigidBodyBasis) -> LoadSplit:
    """``F_perp = M R G^{-1} R^T F`` and ``F_0 = F - F_perp``."""
    F = np.asarray(F, dtype=float)
    perp = M @ (basis.modes @ basis.solve_gram(basis.modes.T @ F))
    return LoadSplit(F - perp, perp)


def mode_residuals(U, M, basis: RigidBodyBasis) -> np.ndarray:
    """``|q_i^T M U| / ||U||_M`` for an M-orthonormal rigid basis ``q``.

    Zero for a centred field; the maximum is the centering defect.
    """
    U = np.asarray(U, dtype=float)
    MU = M @ U
    norm = np.sqrt(max(float(U @ MU), 0.0))
    if norm == 0:
        return np.zeros(6)
    return np.abs(basis.orthonormal.T @ MU) / norm
