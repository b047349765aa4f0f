"""Assembly of stiffness, mass and load vectors for isotropic linear elasticity.

The bilinear form is ``a(u, v) = int 2 mu eps(u):eps(v) + lam div(u) div(v)``
with ``sigma = lam tr(eps) I + 2 mu eps``. DOFs are node-major:
node ``a`` owns ``3a, 3a+1, 3a+2``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp

from . import quadrature
from .mesh import Mesh

__all__ = [
    "Material", "AssembledSystem", "Energies", "MissingMaterialError", "EmptyTractionWarning",
    "element_stiffness", "element_mass", "assemble_system", "assemble_body_load",
    "assemble_traction_load", "assemble_thermal_load", "strain_stress", "energies",
    "thermal_stored_energy", "thermal_reference_energy", "write_triplets",
]


class MissingMaterialError(KeyError):
    pass


class EmptyTractionWarning(UserWarning):
    """A traction selector matched no boundary face."""


@dataclass(frozen=True)
class Material:
    """Isotropic material with Lame parameters and thermal expansion."""

    lam: float
    mu: float
    alpha: float = 0.0

    def __post_init__(self):
        # lam = 0 (nu = 0) keeps the energy coercive and is allowed
        if not (self.lam >= 0 and self.mu > 0):
            raise ValueError(f"need lam >= 0 and mu > 0, got lam={self.lam}, mu={self.mu}")

    @classmethod
    def from_young(cls, E: float, nu: float, alpha: float = 0.0) -> "Material":
        if not (E > 0 and -1 < nu < 0.5):
            raise ValueError(f"invalid Young modulus / Poisson ratio ({E}, {nu})")
        lam = E * nu / ((1 + nu) * (1 - 2 * nu))
        mu = E / (2 * (1 + nu))
        return cls(lam, mu, alpha)

    @property
    def bulk_thermal(self) -> float:
        return 3 * self.lam + 2 * self.mu

    @property
    def young(self) -> float:
        return self.mu * (3 * self.lam + 2 * self.mu) / (self.lam + self.mu)

    @property
    def poisson(self) -> float:
        return self.lam / (2 * (self.lam + self.mu))


class Energies(NamedTuple):
    stored: float
    potential: float
    regularized: float


@dataclass(frozen=True, eq=False)
class AssembledSystem:
    K: sp.csr_matrix
    M: sp.csr_matrix
    F: np.ndarray | None = None

    @property
    def n_dofs(self) -> int:
        return self.K.shape[0]

    def dof_map(self, node) -> np.ndarray:
        return 3 * np.asarray(node)[..., None] + np.arange(3)

    def with_load(self, F) -> "AssembledSystem":
        return AssembledSystem(self.K, self.M, np.asarray(F, dtype=float))


def _material_arrays(mesh: Mesh, materials):
    if isinstance(materials, Material):
        mats = {int(t): materials for t in np.unique(mesh.tags)}
    else:
        mats = dict(materials)
    lam = np.empty(mesh.n_elements)
    mu = np.empty(mesh.n_elements)
    alpha = np.empty(mesh.n_elements)
    for tag in np.unique(mesh.tags):
        if int(tag) not in mats:
            raise MissingMaterialError(f"no material given for tag {int(tag)}")
        sel = mesh.tags == tag
        m = mats[int(tag)]
        lam[sel], mu[sel], alpha[sel] = m.lam, m.mu, m.alpha
    return lam, mu, alpha


def _stiffness_batch(grad, detw, lam, mu):
    """Element stiffness blocks ``(E, 3nen, 3nen)``.

    ``k^{ab}_ij = lam g^a_i g^b_j + mu (g^a_j g^b_i + delta_ij g^a . g^b)``
    """
    E, _, nen, _ = grad.shape
    wl = detw * lam[:, None]
    wm = detw * mu[:, None]
    k = np.einsum("eq,eqai,eqbj->eaibj", wl, grad, grad)
    k += np.einsum("eq,eqaj,eqbi->eaibj", wm, grad, grad)
    dot = np.einsum("eq,eqak,eqbk->eab", wm, grad, grad)
    k += dot[:, :, None, :, None] * np.eye(3)[None, None, :, None, :]
    return k.reshape(E, 3 * nen, 3 * nen)


def _mass_batch(kind, detw):
    pts, _ = quadrature.volume_rule(kind)
    N, _ = quadrature.shape(kind, pts)
    m = np.einsum("eq,qa,qb->eab", detw, N, N)
    E, nen, _ = m.shape
    full = m[:, :, None, :, None] * np.eye(3)[None, None, :, None, :]
    return full.reshape(E, 3 * nen, 3 * nen)


def element_stiffness(kind: str, coords, material: Material) -> np.ndarray:
    """Dense element stiffness (12x12 for tet4, 24x24 for hex8)."""
    x = np.asarray(coords, dtype=float)[None]
    grad, _, detw = quadrature.element_geometry(kind, x)
    return _stiffness_batch(grad, detw, np.array([material.lam]), np.array([material.mu]))[0]


def element_mass(kind: str, coords) -> np.ndarray:
    """Dense consistent mass (unit density) for one element."""
    x = np.asarray(coords, dtype=float)[None]
    _, _, detw = quadrature.element_geometry(kind, x)
    return _mass_batch(kind, detw)[0]


def _scatter(mesh: Mesh, blocks) -> sp.csr_matrix:
    dofs = (3 * mesh.elements[:, :, None] + np.arange(3)).reshape(mesh.n_elements, -1)
    n = dofs.shape[1]
    rows = np.repeat(dofs, n, axis=1).ravel()
    cols = np.tile(dofs, (1, n)).ravel()
    A = sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(mesh.n_dofs, mesh.n_dofs)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def assemble_system(mesh: Mesh, materials) -> AssembledSystem:
    """Global stiffness ``K`` and unit-density mass ``M``.

    ``materials`` is a :class:`Material` or a mapping tag -> Material.
    """
    lam, mu, _ = _material_arrays(mesh, materials)
    grad, _, detw = quadrature.element_geometry(mesh.kind, mesh.element_coords())
    K = _scatter(mesh, _stiffness_batch(grad, detw, lam, mu))
    M = _scatter(mesh, _mass_batch(mesh.kind, detw))
    K = (K + K.T) * 0.5
    M = (M + M.T) * 0.5
    return AssembledSystem(K.tocsr(), M.tocsr())


def _nodal_sum(mesh_nodes_count, conn, values):
    out = np.zeros((mesh_nodes_count, 3))
    np.add.at(out, conn.ravel(), values.reshape(-1, 3))
    return out.ravel()


def assemble_body_load(mesh: Mesh, body_force: Callable) -> np.ndarray:
    """``F[a] = int f . N^a dV``; ``body_force`` maps ``(P, 3)`` points to ``(P, 3)``."""
    pts, _ = quadrature.volume_rule(mesh.kind)
    N, _ = quadrature.shape(mesh.kind, pts)
    _, _, detw = quadrature.element_geometry(mesh.kind, mesh.element_coords())
    xq = quadrature.physical_points(mesh.kind, mesh.element_coords())
    f = np.asarray(body_force(xq.reshape(-1, 3)), dtype=float).reshape(xq.shape)
    fe = np.einsum("eq,qa,eqi->eai", detw, N, f)
    return _nodal_sum(mesh.n_nodes, mesh.elements, fe)


def face_quadrature(mesh: Mesh, face_nodes):
    """Points ``(F, Q, 3)``, area weights ``(F, Q)`` and shapes ``(Q, k)`` on faces."""
    k = face_nodes.shape[1]
    pts, w = quadrature.face_rule(k)
    N, dN = quadrature.shape("tri3" if k == 3 else "quad4", pts)
    x = mesh.nodes[face_nodes]
    xq = np.einsum("qa,fan->fqn", N, x)
    t = np.einsum("qai,fan->fqin", dN, x)
    normal = np.cross(t[:, :, 0], t[:, :, 1])
    da = np.linalg.norm(normal, axis=-1) * w
    return xq, da, N, normal / np.linalg.norm(normal, axis=-1, keepdims=True)


def _select_faces(mesh: Mesh, selector):
    faces = mesh.boundary.nodes
    if selector is None:
        return faces
    centroid = mesh.nodes[faces].mean(axis=1)
    mask = np.asarray(selector(centroid), dtype=bool)
    return faces[mask]


def assemble_traction_load(mesh: Mesh, tractions) -> np.ndarray:
    """Surface load ``int t . N^a dA`` over selected boundary faces.

    ``tractions`` is a sequence of ``(selector, t)``. ``selector`` maps face
    centroids ``(F, 3)`` to a boolean mask (``None`` selects all faces);
    ``t`` maps points ``(P, 3)`` and outward unit normals ``(P, 3)`` to
    tractions ``(P, 3)``. A selector matching nothing contributes zero and
    emits :class:`EmptyTractionWarning`.
    """
    F = np.zeros(mesh.n_dofs)
    for i, (selector, t) in enumerate(tractions):
        faces = _select_faces(mesh, selector)
        if len(faces) == 0:
            warnings.warn(f"traction {i} selects no boundary face", EmptyTractionWarning,
                          stacklevel=2)
            continue
        xq, da, N, normal = face_quadrature(mesh, faces)
        tv = np.asarray(t(xq.reshape(-1, 3), normal.reshape(-1, 3)), dtype=float).reshape(xq.shape)
        fe = np.einsum("fq,qa,fqi->fai", da, N, tv)
        F += _nodal_sum(mesh.n_nodes, faces, fe)
    return F


def _temperature_at(mesh, temperature):
    xq = quadrature.physical_points(mesh.kind, mesh.element_coords())
    if temperature is None:
        return np.zeros(xq.shape[:2])
    return np.asarray(temperature(xq.reshape(-1, 3)), dtype=float).reshape(xq.shape[:2])


def assemble_thermal_load(mesh: Mesh, materials, temperature: Callable) -> np.ndarray:
    """``F[a] = int (3 lam + 2 mu) alpha theta grad N^a dV``."""
    lam, mu, alpha = _material_arrays(mesh, materials)
    grad, _, detw = quadrature.element_geometry(mesh.kind, mesh.element_coords())
    theta = _temperature_at(mesh, temperature)
    s = (3 * lam + 2 * mu)[:, None] * alpha[:, None] * theta * detw
    fe = np.einsum("eq,eqai->eai", s, grad)
    return _nodal_sum(mesh.n_nodes, mesh.elements, fe)


def strain_stress(mesh: Mesh, materials, U, temperature: Callable | None = None):
    """Strain and stress at quadrature points, each ``(E, Q, 3, 3)``."""
    lam, mu, alpha = _material_arrays(mesh, materials)
    grad, _, _ = quadrature.element_geometry(mesh.kind, mesh.element_coords())
    u = np.asarray(U, dtype=float).reshape(-1, 3)[mesh.elements]  # (E, nen, 3)
    gu = np.einsum("eai,eqaj->eqij", u, grad)
    eps = 0.5 * (gu + np.swapaxes(gu, -1, -2))
    theta = _temperature_at(mesh, temperature)
    eye = np.eye(3)
    el = eps - (alpha[:, None] * theta)[..., None, None] * eye
    tr = np.trace(el, axis1=-2, axis2=-1)
    sig = lam[:, None, None, None] * tr[..., None, None] * eye + 2 * mu[:, None, None, None] * el
    return eps, sig


def thermal_stored_energy(mesh: Mesh, materials, U, temperature) -> float:
    """``1/2 int sigma : (eps - alpha theta I) dV``."""
    _, _, alpha = _material_arrays(mesh, materials)
    _, _, detw = quadrature.element_geometry(mesh.kind, mesh.element_coords())
    eps, sig = strain_stress(mesh, materials, U, temperature)
    theta = _temperature_at(mesh, temperature)
    el = eps - (alpha[:, None] * theta)[..., None, None] * np.eye(3)
    return float(0.5 * np.einsum("eq,eqij,eqij->", detw, sig, el))


def thermal_reference_energy(mesh: Mesh, materials, temperature) -> float:
    """Stored energy of the undeformed body under ``theta``: ``1/2 int 3 (3 lam + 2 mu) (alpha theta)^2``."""
    return thermal_stored_energy(mesh, materials, np.zeros(mesh.n_dofs), temperature)


def energies(K, M, F, U, eta: float) -> Energies:
    """Stored energy, potential and regularized potential."""
    U = np.asarray(U, dtype=float)
    F = np.asarray(F, dtype=float)
    if U.shape != F.shape or K.shape[0] != U.size or M.shape[0] != U.size:
        raise ValueError("dimension mismatch between K, M, F and U")
    stored = 0.5 * float(U @ (K @ U))
    potential = stored - float(F @ U)
    regularized = potential + 0.5 * eta * float(U @ (M @ U))
    return Energies(stored, potential, regularized)


def write_triplets(A, path) -> None:
    """Write ``row col value`` lines sorted by (row, col)."""
    A = sp.csr_matrix(A)
    A.sort_indices()
    coo = A.tocoo()
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")
