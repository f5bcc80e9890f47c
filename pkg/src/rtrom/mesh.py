"""Cartesian quadrilateral mesh, tensor-product FE spaces and mass matrices.

The initial domain is the rectangle [0, 1/2] x [-1, 1], meshed by a base grid
of 1 x 4 unit-aspect squares that is uniformly refined ``refinement_level``
times.  The kinematic space is a continuous vector-valued Q_k space and the
thermodynamic space an element-discontinuous Q_m space.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

X_EXTENT = (0.0, 0.5)
Y_EXTENT = (-1.0, 1.0)
MAX_REFINEMENT = 6


class ConfigurationError(ValueError):
    """Invalid discretization or solver configuration."""


def gll_nodes(degree):
    """Gauss-Lobatto-Legendre nodes on [0, 1]; the midpoint for degree 0."""
    if degree == 0:
        return np.array([0.5])
    if degree == 1:
        return np.array([0.0, 1.0])
    interior = np.polynomial.legendre.Legendre.basis(degree).deriv().roots()
    nodes = np.concatenate(([-1.0], np.sort(interior.real), [1.0]))
    nodes = 0.5 * (nodes + 1.0)
    # snap to exact binary values where possible (e.g. 0.5 for degree 2)
    nodes[np.abs(nodes - 0.5) < 1e-14] = 0.5
    return nodes


def gauss_legendre(n_points):
    """Gauss-Legendre points and weights mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n_points)
    return 0.5 * (x + 1.0), 0.5 * w


def lagrange_1d(nodes, x):
    """Values and derivatives of the 1D Lagrange basis on ``nodes`` at ``x``.

    Returns two arrays of shape (len(x), len(nodes)).
    """
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = len(nodes)
    val = np.ones((len(x), n))
    der = np.zeros((len(x), n))
    for i in range(n):
        others = [j for j in range(n) if j != i]
        denom = np.prod([nodes[i] - nodes[j] for j in others]) if others else 1.0
        for j in others:
            val[:, i] *= x - nodes[j]
        for m in others:
            term = np.ones(len(x))
            for j in others:
                if j != m:
                    term *= x - nodes[j]
            der[:, i] += term
        val[:, i] /= denom
        der[:, i] /= denom
    return val, der


def tensor_basis(nodes, qx):
    """Tensor-product basis on [0,1]^2 evaluated at the tensor grid ``qx`` x ``qx``.

    Local node ``a = b * (p + 1) + c`` sits at (nodes[c], nodes[b]); quadrature
    point ``q = s * nq + r`` sits at (qx[r], qx[s]).  Returns values (nq^2, nloc)
    and reference gradients (nq^2, nloc, 2).
    """
    v, d = lagrange_1d(nodes, qx)
    nq, nn = v.shape
    val = np.einsum("sb,rc->srbc", v, v).reshape(nq * nq, nn * nn)
    gx = np.einsum("sb,rc->srbc", v, d).reshape(nq * nq, nn * nn)
    gy = np.einsum("sb,rc->srbc", d, v).reshape(nq * nq, nn * nn)
    return val, np.stack([gx, gy], axis=-1)


@dataclass(frozen=True)
class Mesh:
    """Uniform quadrilateral mesh of the initial domain.

    Elements are numbered row by row, x fastest.  ``corners`` has shape
    (element_count, 4, 2) in counter-clockwise order starting at the lower
    left corner.
    """

    refinement_level: int
    nx: int
    ny: int
    h: float
    corners: np.ndarray = field(repr=False)

    @property
    def element_count(self):
        return self.nx * self.ny

    @property
    def initial_domain(self):
        return (X_EXTENT, Y_EXTENT)

    @property
    def elements(self):
        return self.corners

    def element_origin(self):
        return self.corners[:, 0, :]

    def element_areas(self):
        c = self.corners
        x, y = c[..., 0], c[..., 1]
        return 0.5 * np.abs(
            np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)
        )


def build_mesh(refinement_level):
    """Build the refined 1 x 4 base mesh of [0, 1/2] x [-1, 1]."""
    if not isinstance(refinement_level, (int, np.integer)) or not (
        0 <= refinement_level <= MAX_REFINEMENT
    ):
        raise ConfigurationError(
            f"refinement level must be an integer in [0, {MAX_REFINEMENT}], "
            f"got {refinement_level!r}"
        )
    r = int(refinement_level)
    nx, ny = 2**r, 4 * 2**r
    h = 0.5 / nx
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny))
    ix, iy = ix.ravel(), iy.ravel()
    x0 = X_EXTENT[0] + ix * h
    y0 = Y_EXTENT[0] + iy * h
    corners = np.stack(
        [
            np.stack([x0, y0], -1),
            np.stack([x0 + h, y0], -1),
            np.stack([x0 + h, y0 + h], -1),
            np.stack([x0, y0 + h], -1),
        ],
        axis=1,
    )
    return Mesh(r, nx, ny, h, corners)


@dataclass(frozen=True, eq=False)
class FeSpaces:
    """Kinematic (continuous Q_k, 2 components) and thermodynamic (L2 Q_m) spaces.

    Vector dofs are ordered with all x-components before all y-components;
    scalar kinematic nodes are numbered lexicographically, x fastest.
    """

    mesh: Mesh
    kinematic_degree: int = 2
    thermodynamic_degree: int = 1

    @property
    def quadrature_order(self):
        return 2 * self.kinematic_degree + 2

    @property
    def n_quad_1d(self):
        # Gauss-Legendre with n points integrates degree 2n - 1 exactly
        return (self.quadrature_order + 2) // 2

    @property
    def nodes_x(self):
        return self.kinematic_degree * self.mesh.nx + 1

    @property
    def nodes_y(self):
        return self.kinematic_degree * self.mesh.ny + 1

    @property
    def n_nodes(self):
        return self.nodes_x * self.nodes_y

    @property
    def n_kin(self):
        return 2 * self.n_nodes

    @property
    def n_thermo_local(self):
        return (self.thermodynamic_degree + 1) ** 2

    @property
    def n_kin_local(self):
        return (self.kinematic_degree + 1) ** 2

    @property
    def n_thermo(self):
        return self.mesh.element_count * self.n_thermo_local

    @cached_property
    def kin_nodes_1d(self):
        return gll_nodes(self.kinematic_degree)

    @cached_property
    def thermo_nodes_1d(self):
        return gll_nodes(self.thermodynamic_degree)

    @cached_property
    def node_coordinates(self):
        """Initial coordinates of the scalar kinematic nodes, shape (n_nodes, 2)."""
        k, m = self.kinematic_degree, self.mesh
        pos = np.concatenate(
            [i + self.kin_nodes_1d[:-1] for i in range(m.nx)] + [[m.nx]]
        )
        xs = X_EXTENT[0] + pos * m.h
        pos = np.concatenate(
            [i + self.kin_nodes_1d[:-1] for i in range(m.ny)] + [[m.ny]]
        )
        ys = Y_EXTENT[0] + pos * m.h
        assert len(xs) == k * m.nx + 1 and len(ys) == k * m.ny + 1
        X, Y = np.meshgrid(xs, ys)
        return np.stack([X.ravel(), Y.ravel()], axis=-1)

    @cached_property
    def kin_connectivity(self):
        """Scalar node ids of every element, shape (element_count, (k+1)^2)."""
        k, m = self.kinematic_degree, self.mesh
        ix = np.arange(m.element_count) % m.nx
        iy = np.arange(m.element_count) // m.nx
        b, c = np.divmod(np.arange(self.n_kin_local), k + 1)
        rows = iy[:, None] * k + b[None, :]
        cols = ix[:, None] * k + c[None, :]
        return rows * self.nodes_x + cols

    @cached_property
    def thermo_dofs(self):
        """Thermodynamic dof ids of every element, shape (element_count, (m+1)^2)."""
        nl = self.n_thermo_local
        return np.arange(self.mesh.element_count * nl).reshape(-1, nl)

    @cached_property
    def thermo_node_coordinates(self):
        """Physical location of each thermodynamic dof node, shape (n_thermo, 2)."""
        t = self.thermo_nodes_1d
        b, c = np.divmod(np.arange(self.n_thermo_local), len(t))
        origin = self.mesh.element_origin()
        xy = origin[:, None, :] + self.mesh.h * np.stack([t[c], t[b]], -1)[None]
        return xy.reshape(-1, 2)

    @cached_property
    def quadrature(self):
        """Reference quadrature: points (nq, 2) and weights (nq,) on [0,1]^2."""
        qx, qw = gauss_legendre(self.n_quad_1d)
        X, Y = np.meshgrid(qx, qx)
        W = np.outer(qw, qw)
        return np.stack([X.ravel(), Y.ravel()], -1), W.ravel()

    @cached_property
    def kin_basis(self):
        qx, _ = gauss_legendre(self.n_quad_1d)
        return tensor_basis(self.kin_nodes_1d, qx)

    @cached_property
    def thermo_basis(self):
        qx, _ = gauss_legendre(self.n_quad_1d)
        return tensor_basis(self.thermo_nodes_1d, qx)[0]

    def boundary_constrained_dofs(self):
        """Vector dof ids whose normal velocity is constrained to zero."""
        xy = self.node_coordinates
        n = self.n_nodes
        on_side = np.isclose(xy[:, 0], X_EXTENT[0]) | np.isclose(xy[:, 0], X_EXTENT[1])
        on_cap = np.isclose(xy[:, 1], Y_EXTENT[0]) | np.isclose(xy[:, 1], Y_EXTENT[1])
        return np.concatenate([np.flatnonzero(on_side), n + np.flatnonzero(on_cap)])

    def free_dofs(self):
        mask = np.ones(self.n_kin, dtype=bool)
        mask[self.boundary_constrained_dofs()] = False
        return np.flatnonzero(mask)

    def interface_dofs(self):
        """Vector dof ids of the y-component of nodes initially on y = 0."""
        xy = self.node_coordinates
        return self.n_nodes + np.flatnonzero(xy[:, 1] == 0.0)

    def metadata(self):
        return {
            "refinement_level": self.mesh.refinement_level,
            "element_count": self.mesh.element_count,
            "kinematic_degree": self.kinematic_degree,
            "thermodynamic_degree": self.thermodynamic_degree,
            "n_kin": self.n_kin,
            "n_thermo": self.n_thermo,
        }


def build_spaces(mesh, kin_degree=2, thermo_degree=1):
    """Build the kinematic/thermodynamic FE spaces on ``mesh``."""
    if int(kin_degree) < 1 or int(thermo_degree) < 0:
        raise ConfigurationError(
            f"need kin_degree >= 1 and thermo_degree >= 0, got {kin_degree}, {thermo_degree}"
        )
    return FeSpaces(mesh, int(kin_degree), int(thermo_degree))


@dataclass(frozen=True, eq=False)
class MassMatrices:
    """Kinematic and thermodynamic mass matrices on the initial configuration.

    ``M_scalar`` is the scalar kinematic mass matrix; the vector matrix ``M_v``
    is block diagonal with two copies of it.  ``M_e_blocks`` holds the dense
    element blocks of the block-diagonal ``M_e``.
    """

    M_scalar: sp.csr_matrix
    M_e_blocks: np.ndarray

    @property
    def M_v(self):
        return sp.block_diag([self.M_scalar, self.M_scalar], format="csr")

    @property
    def M_e(self):
        return sp.block_diag(list(self.M_e_blocks), format="csr")

    @cached_property
    def M_e_inv_blocks(self):
        return np.linalg.inv(self.M_e_blocks)

    def apply_M_v(self, v):
        n = self.M_scalar.shape[0]
        return np.concatenate([self.M_scalar @ v[:n], self.M_scalar @ v[n:]])

    def apply_M_e(self, e):
        nb, nl, _ = self.M_e_blocks.shape
        return np.einsum("eij,ej->ei", self.M_e_blocks, e.reshape(nb, nl)).ravel()

    def solve_M_e(self, rhs):
        nb, nl, _ = self.M_e_blocks.shape
        return np.einsum("eij,ej->ei", self.M_e_inv_blocks, rhs.reshape(nb, nl)).ravel()

    def checksum(self):
        return float(np.sum(self.M_scalar.data * np.arange(1, self.M_scalar.nnz + 1))
                     + np.sum(self.M_e_blocks.ravel() * np.arange(1, self.M_e_blocks.size + 1)))


def element_density(spaces, rho0):
    """Evaluate ``rho0`` at element centroids (densities are piecewise constant)."""
    centroid = spaces.mesh.element_origin() + 0.5 * spaces.mesh.h
    if callable(rho0):
        rho = np.asarray(rho0(centroid), dtype=float)
    else:
        rho = np.broadcast_to(np.asarray(rho0, dtype=float), (spaces.mesh.element_count,))
    rho = np.array(rho, dtype=float).reshape(spaces.mesh.element_count)
    if np.any(~np.isfinite(rho)) or np.any(rho <= 0):
        raise ValueError("initial density must be finite and strictly positive")
    return rho


def assemble_mass(mesh, spaces, rho0):
    """Assemble the mass matrices for initial density ``rho0``.

    ``rho0`` is a scalar, an array of per-element densities, or a callable of
    points (n, 2) returning densities; it is sampled at element centroids.
    """
    rho = element_density(spaces, rho0)
    _, qw = spaces.quadrature
    N, _ = spaces.kin_basis
    phi = spaces.thermo_basis
    area = mesh.h**2
    # uniform square elements: the reference element matrices only need scaling
    ref_kin = np.einsum("q,qa,qb->ab", qw, N, N) * area
    ref_thermo = np.einsum("q,qa,qb->ab", qw, phi, phi) * area
    conn = spaces.kin_connectivity
    nl = conn.shape[1]
    rows = np.repeat(conn, nl, axis=1).ravel()
    cols = np.tile(conn, (1, nl)).ravel()
    vals = (rho[:, None, None] * ref_kin[None]).ravel()
    M = sp.coo_matrix((vals, (rows, cols)), shape=(spaces.n_nodes,) * 2).tocsr()
    M.sum_duplicates()
    blocks = rho[:, None, None] * ref_thermo[None]
    return MassMatrices(M, blocks)
