"""Reference elements, shape functions and quadrature rules."""

from __future__ import annotations

import numpy as np

__all__ = ["volume_rule", "face_rule", "shape", "element_geometry", "physical_points",
           "DegenerateElementError"]


class DegenerateElementError(ValueError):
    """Element with a non-positive Jacobian determinant."""

    def __init__(self, element, det):
        self.element = int(element)
        super().__init__(f"element {self.element} is degenerate (Jacobian determinant {det:.3e})")


_G = 1.0 / np.sqrt(3.0)
_A = (5.0 + 3.0 * np.sqrt(5.0)) / 20.0
_B = (5.0 - np.sqrt(5.0)) / 20.0

# 4-point degree-2 rule on the unit tetrahedron (weights sum to 1/6)
_TET_PTS = np.array([[_B, _B, _B], [_A, _B, _B], [_B, _A, _B], [_B, _B, _A]])
_TET_W = np.full(4, 1.0 / 24.0)

_HEX_PTS = np.array([[i, j, k] for k in (-_G, _G) for j in (-_G, _G) for i in (-_G, _G)])
_HEX_W = np.ones(8)

# 3-point degree-2 rule on the unit triangle (weights sum to 1/2)
_TRI_PTS = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
_TRI_W = np.full(3, 1.0 / 6.0)

_QUAD_PTS = np.array([[i, j] for j in (-_G, _G) for i in (-_G, _G)])
_QUAD_W = np.ones(4)

_HEX_SIGNS = np.array(
    [[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
     [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]], dtype=float)
_QUAD_SIGNS = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)


def volume_rule(kind):
    """Reference points and weights for ``kind`` (``tet4`` or ``hex8``)."""
    if kind == "tet4":
        return _TET_PTS, _TET_W
    if kind == "hex8":
        return _HEX_PTS, _HEX_W
    raise ValueError(f"unknown element kind {kind!r}")


def face_rule(n_face_nodes):
    if n_face_nodes == 3:
        return _TRI_PTS, _TRI_W
    if n_face_nodes == 4:
        return _QUAD_PTS, _QUAD_W
    raise ValueError("faces have 3 or 4 nodes")


def shape(kind, xi):
    """Shape values ``(Q, nen)`` and reference gradients ``(Q, nen, dim)``."""
    xi = np.atleast_2d(xi)
    q = len(xi)
    if kind == "tet4":
        N = np.column_stack([1 - xi.sum(axis=1), xi])
        dN = np.broadcast_to(np.vstack([-np.ones(3), np.eye(3)]), (q, 4, 3)).copy()
    elif kind == "hex8":
        terms = 1 + xi[:, None, :] * _HEX_SIGNS[None]  # (Q, 8, 3)
        N = terms.prod(axis=2) / 8
        dN = np.empty((q, 8, 3))
        for d in range(3):
            others = [e for e in range(3) if e != d]
            dN[:, :, d] = _HEX_SIGNS[None, :, d] * terms[:, :, others].prod(axis=2) / 8
    elif kind == "tri3":
        N = np.column_stack([1 - xi.sum(axis=1), xi])
        dN = np.broadcast_to(np.vstack([-np.ones(2), np.eye(2)]), (q, 3, 2)).copy()
    elif kind == "quad4":
        terms = 1 + xi[:, None, :] * _QUAD_SIGNS[None]
        N = terms.prod(axis=2) / 4
        dN = np.empty((q, 4, 2))
        dN[:, :, 0] = _QUAD_SIGNS[None, :, 0] * terms[:, :, 1] / 4
        dN[:, :, 1] = _QUAD_SIGNS[None, :, 1] * terms[:, :, 0] / 4
    else:
        raise ValueError(f"unknown element kind {kind!r}")
    return N, dN


def element_geometry(kind, x, check=True):
    """Physical gradients, Jacobian determinants and weighted determinants.

    Parameters
    ----------
    kind : str
    x : (E, nen, 3) element node coordinates
    check : raise :class:`DegenerateElementError` on ``det <= 0``

    Returns
    -------
    grad : (E, Q, nen, 3)
    det : (E, Q)
    detw : (E, Q) determinant times quadrature weight
    """
    pts, w = volume_rule(kind)
    _, dN = shape(kind, pts)
    jac = np.einsum("ean,qai->eqni", x, dN)  # d x_n / d xi_i
    det = np.linalg.det(jac)
    if check:
        bad = np.nonzero((det <= 0).any(axis=1))[0]
        if len(bad):
            raise DegenerateElementError(bad[0], det[bad[0]].min())
        inv = np.linalg.inv(jac)
        grad = np.einsum("qai,eqin->eqan", dN, inv)
    else:
        grad = None
    return grad, det, det * w


def physical_points(kind, x):
    """Quadrature points in physical space, ``(E, Q, 3)``."""
    pts, _ = volume_rule(kind)
    N, _ = shape(kind, pts)
    return np.einsum("qa,ean->eqn", N, x)
