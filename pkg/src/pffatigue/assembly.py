"""Residuals and tangents of the displacement and phase-field subproblems.

Bilinear quadrilaterals with 2x2 Gauss quadrature.  Element arrays are
built for all elements at once and scattered into a CSR skeleton that is
fixed for the whole analysis, so factorization orderings can be reused.

Residual conventions (plane strain, unit thickness, N and mm):

* displacement: ``r_u = int (1 - phi)^2 sigma_0 : grad_s(du) - b . du``
* phase field: ``r_phi = int -2 (1 - phi) H dphi + f Gc (phi dphi / ell + ell grad phi . grad dphi)``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .constitutive import MaterialParams, SplitKind, active_energy_plane
from .mesh import Mesh

_G = 1.0 / np.sqrt(3.0)
GAUSS_POINTS = np.array([[-_G, -_G], [_G, -_G], [_G, _G], [-_G, _G]])
GAUSS_WEIGHTS = np.ones(4)

_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])


class AssemblyError(RuntimeError):
    """Raised for degenerate element geometry."""


def shape_functions(xi, eta):
    """Bilinear shape functions and their parent-coordinate gradients.

    Returns ``N`` with shape ``(..., 4)`` and ``dN`` with shape ``(..., 4, 2)``.
    """
    xi = np.asarray(xi, dtype=float)[..., None]
    eta = np.asarray(eta, dtype=float)[..., None]
    N = 0.25 * (1 + _XI * xi) * (1 + _ETA * eta)
    dxi = 0.25 * _XI * (1 + _ETA * eta)
    deta = 0.25 * _ETA * (1 + _XI * xi)
    return N, np.stack([dxi, deta], axis=-1)


@dataclass(frozen=True)
class QuadGeometry:
    """Mapped quadrature data for every element.

    ``N``: (Q, 4); ``dNdx``: (E, Q, 4, 2); ``wdet``: (E, Q) weight times Jacobian.
    """

    N: np.ndarray
    dNdx: np.ndarray
    wdet: np.ndarray
    qp_coords: np.ndarray

    @classmethod
    def build(cls, mesh: Mesh) -> "QuadGeometry":
        N, dN = shape_functions(GAUSS_POINTS[:, 0], GAUSS_POINTS[:, 1])
        xy = mesh.nodes[mesh.elements]  # (E, 4, 2)
        J = np.einsum("qai,eaj->eqij", dN, xy)  # dX_j / dxi_i
        det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        if np.any(det <= 0.0):
            bad = np.unique(np.nonzero(det <= 0.0)[0])
            raise AssemblyError(f"non-positive Jacobian in elements {bad[:10].tolist()}")
        Jinv = np.empty_like(J)
        Jinv[..., 0, 0] = J[..., 1, 1] / det
        Jinv[..., 1, 1] = J[..., 0, 0] / det
        Jinv[..., 0, 1] = -J[..., 0, 1] / det
        Jinv[..., 1, 0] = -J[..., 1, 0] / det
        dNdx = np.einsum("eqij,qaj->eqai", Jinv, dN)
        qp = np.einsum("qa,eai->eqi", N, xy)
        return cls(N, dNdx, det * GAUSS_WEIGHTS, qp)


class SparsePattern:
    """CSR skeleton for element connectivity ``(E, n_e)`` with a scatter map."""

    def __init__(self, element_dofs: np.ndarray, n_dofs: int):
        element_dofs = np.asarray(element_dofs, dtype=np.int64)
        ne = element_dofs.shape[1]
        rows = np.repeat(element_dofs, ne, axis=1).ravel()
        cols = np.tile(element_dofs, (1, ne)).ravel()
        keys = rows * n_dofs + cols
        unique, self.scatter = np.unique(keys, return_inverse=True)
        self.rows = unique // n_dofs
        self.indices = (unique % n_dofs).astype(np.int32)
        self.indptr = np.zeros(n_dofs + 1, dtype=np.int32)
        np.cumsum(np.bincount(self.rows, minlength=n_dofs), out=self.indptr[1:])
        self.n = n_dofs
        self.nnz = len(unique)
        self.element_dofs = element_dofs
        self.diag = np.flatnonzero(self.rows == self.indices)

    def matrix(self, element_matrices: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self.scatter, weights=element_matrices.ravel(), minlength=self.nnz)
        return self.from_data(data)

    def from_data(self, data: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def vector(self, element_vectors: np.ndarray) -> np.ndarray:
        return np.bincount(self.element_dofs.ravel(), weights=element_vectors.ravel(), minlength=self.n)

    def dirichlet_masks(self, constrained: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(entries to zero, diagonal entries of constrained rows)."""
        touched = constrained[self.rows] | constrained[self.indices]
        return touched, self.diag[constrained[self.rows[self.diag]]]


class DofMap:
    """Equation numbering and Dirichlet data for ``u`` (2 dofs/node) and ``phi``.

    Displacement dof of node ``a``, component ``i`` is ``2 a + i``; the
    phase-field dof of node ``a`` is ``a``.  Constrained equations keep their
    number and become identity rows.
    """

    def __init__(self, n_nodes: int):
        self.n_nodes = n_nodes
        self.u_fixed = np.zeros(2 * n_nodes, dtype=bool)
        self.u_values = np.zeros(2 * n_nodes)
        self.phi_fixed = np.zeros(n_nodes, dtype=bool)
        self.phi_values = np.zeros(n_nodes)

    @property
    def n_u(self) -> int:
        return 2 * self.n_nodes

    @property
    def n_phi(self) -> int:
        return self.n_nodes

    @staticmethod
    def u_dof(nodes, component: int) -> np.ndarray:
        return 2 * np.asarray(nodes, dtype=np.int64) + component

    def fix_u(self, nodes, component: int, value: float = 0.0) -> None:
        dofs = self.u_dof(nodes, component)
        if not np.isfinite(value):
            raise ValueError("prescribed displacement must be finite")
        self.u_fixed[dofs] = True
        self.u_values[dofs] = value

    def fix_phi(self, nodes, value: float = 1.0) -> None:
        nodes = np.asarray(nodes, dtype=np.int64)
        self.phi_fixed[nodes] = True
        self.phi_values[nodes] = value


def apply_dirichlet(matrix, residual, constrained):
    """Identity rows/columns on constrained equations and zero residual there.

    Column elimination is exact because constrained increments are zero
    within an increment.  Returns new objects; inputs are not modified.
    """
    constrained = np.asarray(constrained, dtype=bool)
    free = sp.diags((~constrained).astype(float))
    fixed = sp.diags(constrained.astype(float))
    out = (free @ sp.csr_matrix(matrix) @ free + fixed).tocsr()
    r = np.array(residual, dtype=float)
    r[constrained] = 0.0
    return out, r


class Assembler:
    """Vectorized element loops for one mesh and material.

    Geometry-only products (``B^T D B``, mass and Laplacian kernels) are
    computed once per quadrature point and contracted with the
    state-dependent coefficients at every assembly.
    """

    def __init__(self, mesh: Mesh, material: MaterialParams, split: SplitKind | str = SplitKind.NOTENSION):
        self.mesh = mesh
        self.material = material
        self.split = SplitKind.parse(split)
        self.geom = QuadGeometry.build(mesh)
        self.n_qp = self.geom.wdet.shape[1]
        conn = mesh.elements
        self.u_edofs = np.stack([2 * conn, 2 * conn + 1], axis=-1).reshape(len(conn), 8)
        self.u_pattern = SparsePattern(self.u_edofs, 2 * mesh.n_nodes)
        self.phi_pattern = SparsePattern(conn, mesh.n_nodes)
        self.D = material.plane_strain_matrix()

        dNdx = self.geom.dNdx
        E, Q = dNdx.shape[:2]
        B = np.zeros((E, Q, 3, 8))
        B[:, :, 0, 0::2] = dNdx[..., 0]
        B[:, :, 1, 1::2] = dNdx[..., 1]
        B[:, :, 2, 0::2] = dNdx[..., 1]
        B[:, :, 2, 1::2] = dNdx[..., 0]
        self.B = B
        self._BDB = np.einsum("eqsa,st,eqtb->eqab", B, self.D, B, optimize=True) * self.geom.wdet[..., None, None]
        # row-sum lumped reaction kernel: keeps 0 <= phi <= 1 at the discrete level
        self._lumped = self.geom.N[None] * self.geom.wdet[..., None]  # (E, Q, 4)
        self._lap = np.einsum("eqai,eqbi->eqab", dNdx, dNdx) * self.geom.wdet[..., None, None]
        # flattened copies for batched matmul contractions in the hot paths
        self._Bflat = np.ascontiguousarray(B.reshape(E, Q * 3, 8))
        self._BDBflat = np.ascontiguousarray(self._BDB.reshape(E, Q, 64))
        self._lapflat = np.ascontiguousarray(self._lap.reshape(E, Q, 16))
        self._Gflat = np.ascontiguousarray(dNdx.transpose(0, 1, 3, 2).reshape(E, Q * 2, 4))

    # -- kinematics --------------------------------------------------------

    def strains(self, u: np.ndarray) -> np.ndarray:
        """Voigt strains ``[exx, eyy, gxy]`` at quadrature points, shape (E, Q, 3)."""
        E = len(self.u_edofs)
        return (self._Bflat @ u[self.u_edofs][..., None]).reshape(E, self.n_qp, 3)

    def active_energy(self, u: np.ndarray) -> np.ndarray:
        return active_energy_plane(self.strains(u), self.material, self.split)

    def phi_at_qp(self, phi: np.ndarray) -> np.ndarray:
        return phi[self.mesh.elements] @ self.geom.N.T

    # -- displacement subproblem ------------------------------------------

    def displacement(self, u, phi, dofmap: DofMap | None = None, matrix: bool = True,
                     residual_stiffness: float = 0.0, body_force=(0.0, 0.0)):
        """Residual (and tangent) of the displacement subproblem at fixed ``phi``.

        Returns ``(K, r)``; ``K`` is ``None`` when ``matrix`` is false.  With a
        ``dofmap`` the constrained equations are replaced by identity rows.
        """
        g = (1.0 - self.phi_at_qp(phi)) ** 2 + residual_stiffness
        strain = self.strains(u)
        stress = strain @ self.D  # D symmetric
        wg = g * self.geom.wdet
        E = len(wg)
        fe = ((stress * wg[..., None]).reshape(E, 1, -1) @ self._Bflat)[:, 0]
        if np.any(body_force):
            b = np.asarray(body_force, dtype=float)
            Nw = self.geom.N[None] * self.geom.wdet[..., None]  # (E, Q, 4)
            ext = np.einsum("eqa,i->eai", Nw, b).reshape(len(fe), 8)
            fe = fe - ext
        r = self.u_pattern.vector(fe)
        K = None
        if matrix:
            ke = (g[:, None, :] @ self._BDBflat).reshape(-1, 8, 8)
            K = self.u_pattern.matrix(ke)
        if dofmap is not None:
            K, r = self._constrain(self.u_pattern, K, r, dofmap.u_fixed)
        return K, r

    # -- phase-field subproblem -------------------------------------------

    def phasefield(self, phi, history, degradation, dofmap: DofMap | None = None, matrix: bool = True):
        """Residual (and tangent) of the phase-field subproblem.

        The reaction terms use nodal (row-sum lumped) quadrature, the
        gradient term full Gauss quadrature.  ``history`` and ``degradation``
        are quadrature-point arrays (E, Q) holding the crack driving force
        and ``f(alpha)``.
        """
        mat = self.material
        phe = phi[self.mesh.elements]
        E, Q = history.shape
        grad = (self._Gflat @ phe[..., None]).reshape(E, Q, 2)
        fg = degradation * mat.Gc
        react = 2.0 * history + fg / mat.ell
        flux = (fg * mat.ell * self.geom.wdet)[..., None] * grad
        re = (
            (react[:, None, :] @ self._lumped)[:, 0] * phe
            - (2.0 * history[:, None, :] @ self._lumped)[:, 0]
            + (flux.reshape(E, 1, 2 * Q) @ self._Gflat)[:, 0]
        )
        r = self.phi_pattern.vector(re)
        K = None
        if matrix:
            ke = ((fg * mat.ell)[:, None, :] @ self._lapflat).reshape(E, 4, 4)
            idx = np.arange(4)
            ke[:, idx, idx] += (react[:, None, :] @ self._lumped)[:, 0]
            K = self.phi_pattern.matrix(ke)
        if dofmap is not None:
            K, r = self._constrain(self.phi_pattern, K, r, dofmap.phi_fixed)
        return K, r

    @staticmethod
    def _constrain(pattern: SparsePattern, K, r, fixed):
        r[fixed] = 0.0
        if K is not None and fixed.any():
            zero, diag = pattern.dirichlet_masks(fixed)
            K.data[zero] = 0.0
            K.data[diag] = 1.0
        return K, r


def assemble_displacement(mesh: Mesh, dofmap: DofMap, u, phi, material: MaterialParams, **kwargs):
    """One-shot ``(K_uu, r_u)``; prefer :class:`Assembler` inside loops."""
    return Assembler(mesh, material).displacement(u, phi, dofmap, **kwargs)


def assemble_phasefield(mesh: Mesh, dofmap: DofMap, phi, history, degradation, material: MaterialParams, **kwargs):
    """One-shot ``(K_phiphi, r_phi)``; prefer :class:`Assembler` inside loops."""
    return Assembler(mesh, material).phasefield(phi, history, degradation, dofmap, **kwargs)
