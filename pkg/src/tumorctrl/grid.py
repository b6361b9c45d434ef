"""Structured rectangle grid with the discrete operators used by all solvers.

The domain [0, Lx] x [0, Ly] is covered by nx x ny cells whose nodes carry
every field, scalar displacement component and strain component alike.
Arrays are indexed [j, i] with x varying along the last axis.

Design notes that the rest of the package relies on:

* The grid inner product is trapezoidal quadrature.  With the half weights
  on boundary nodes, the ghost-reflected Neumann Laplacian and the Robin
  Laplacian are exactly self-adjoint, and the strain/divergence pair below
  is an exact transpose pair, which keeps every implicit operator
  symmetric positive (semi)definite.
* ``sym_grad`` uses centered differences inside and one-sided first order
  rows on the boundary.  The low-order closure row is deliberate: together
  with the trapezoid weights it forms a summation-by-parts pair, and the
  assembled elasticity operator then converges at second order, which a
  higher-order closure row destroys.  The interior stencil is second order
  and that is what the refinement tests measure.
* ``div_stress`` is defined as the negative weighted transpose of
  ``sym_grad`` restricted to fields that vanish on the boundary, never as
  an independent stencil.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sps


def trapezoid_weights(n):
    """Composite trapezoid weights for n+1 equispaced nodes (unit spacing)."""
    w = np.ones(n + 1)
    w[0] = w[-1] = 0.5
    return w


def tensor_dot(a, b):
    """Frobenius product of symmetric tensors stored as (e11, e22, e12)."""
    return a[0] * b[0] + a[1] * b[1] + 2.0 * a[2] * b[2]


def _d1_matrix(n, h):
    # centered rows inside, first-order closure rows at the ends
    rows = [0, 0]
    cols = [0, 1]
    vals = [-1.0 / h, 1.0 / h]
    for i in range(1, n):
        rows += [i, i]
        cols += [i - 1, i + 1]
        vals += [-0.5 / h, 0.5 / h]
    rows += [n, n]
    cols += [n - 1, n]
    vals += [-1.0 / h, 1.0 / h]
    return sps.csr_matrix((vals, (rows, cols)), shape=(n + 1, n + 1))


def _lap1_neumann(n, h):
    # ghost reflection doubles the inward off-diagonal on boundary rows
    rows = [0, 0]
    cols = [0, 1]
    vals = [-2.0 / h**2, 2.0 / h**2]
    for i in range(1, n):
        rows += [i, i, i]
        cols += [i - 1, i, i + 1]
        vals += [1.0 / h**2, -2.0 / h**2, 1.0 / h**2]
    rows += [n, n]
    cols += [n - 1, n]
    vals += [2.0 / h**2, -2.0 / h**2]
    return sps.csr_matrix((vals, (rows, cols)), shape=(n + 1, n + 1))


@dataclass(frozen=True)
class Grid:
    """Node-centered rectangle grid.

    Parameters
    ----------
    nx, ny : cell counts per direction (nodes are nx+1 by ny+1)
    hx, hy : cell sizes
    """

    nx: int
    ny: int
    hx: float
    hy: float

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs at least 2 cells per direction")
        if self.hx <= 0 or self.hy <= 0:
            raise ValueError("cell sizes must be positive")

    @classmethod
    def unit(cls, nx, ny, lx=1.0, ly=1.0):
        return cls(nx, ny, lx / nx, ly / ny)

    @property
    def lx(self):
        return self.nx * self.hx

    @property
    def ly(self):
        return self.ny * self.hy

    @property
    def shape(self):
        return (self.ny + 1, self.nx + 1)

    @property
    def n_nodes(self):
        return (self.nx + 1) * (self.ny + 1)

    @cached_property
    def xs(self):
        return np.linspace(0.0, self.lx, self.nx + 1)

    @cached_property
    def ys(self):
        return np.linspace(0.0, self.ly, self.ny + 1)

    @cached_property
    def meshes(self):
        """(X, Y) coordinate arrays of shape (ny+1, nx+1)."""
        return np.meshgrid(self.xs, self.ys)

    @cached_property
    def quad_weights(self):
        """Flattened trapezoid quadrature weights, including hx*hy."""
        w = np.outer(trapezoid_weights(self.ny), trapezoid_weights(self.nx))
        return (self.hx * self.hy) * w.ravel()

    @cached_property
    def boundary_mask(self):
        m = np.zeros(self.shape, dtype=bool)
        m[0, :] = m[-1, :] = True
        m[:, 0] = m[:, -1] = True
        return m

    @cached_property
    def interior_vector_indices(self):
        """Indices of interior degrees of freedom in a stacked (2N,) vector."""
        interior = (~self.boundary_mask).ravel().nonzero()[0]
        return np.concatenate([interior, self.n_nodes + interior])

    # -- difference operators ------------------------------------------------

    @cached_property
    def _dx(self):
        return sps.kron(sps.eye(self.ny + 1), _d1_matrix(self.nx, self.hx)).tocsr()

    @cached_property
    def _dy(self):
        return sps.kron(_d1_matrix(self.ny, self.hy), sps.eye(self.nx + 1)).tocsr()

    @cached_property
    def lap_neumann_matrix(self):
        lx = sps.kron(sps.eye(self.ny + 1), _lap1_neumann(self.nx, self.hx))
        ly = sps.kron(_lap1_neumann(self.ny, self.hy), sps.eye(self.nx + 1))
        return (lx + ly).tocsr()

    @cached_property
    def robin_coeff(self):
        """Diagonal boundary coefficient of the Robin ghost elimination.

        Flattened array equal to 2/hx on x-boundary nodes plus 2/hy on
        y-boundary nodes (corners pick up both contributions).
        """
        c = np.zeros(self.shape)
        c[:, 0] += 2.0 / self.hx
        c[:, -1] += 2.0 / self.hx
        c[0, :] += 2.0 / self.hy
        c[-1, :] += 2.0 / self.hy
        return c.ravel()

    @cached_property
    def robin_linear_matrix(self):
        return (self.lap_neumann_matrix - sps.diags(self.robin_coeff)).tocsr()

    @cached_property
    def wl_neumann(self):
        """Quadrature-weighted Neumann Laplacian; symmetric by construction."""
        return (sps.diags(self.quad_weights) @ self.lap_neumann_matrix).tocsr()

    @cached_property
    def wl_robin(self):
        return (sps.diags(self.quad_weights) @ self.robin_linear_matrix).tocsr()

    @cached_property
    def sym_grad_matrix(self):
        """(3N, 2N) map from stacked displacements to (e11, e22, e12)."""
        n = self.n_nodes
        z = sps.csr_matrix((n, n))
        return sps.bmat(
            [[self._dx, z], [z, self._dy], [0.5 * self._dy, 0.5 * self._dx]]
        ).tocsr()

    @cached_property
    def tensor_weights(self):
        """Quadrature weights of the stacked tensor layout; e12 counts twice."""
        w = self.quad_weights
        return np.concatenate([w, w, 2.0 * w])

    @cached_property
    def vector_weights(self):
        w = self.quad_weights
        return np.concatenate([w, w])

    @cached_property
    def sym_grad_weighted_transpose(self):
        """(2N, 3N) matrix G^T W_t, cached for right-hand-side assembly."""
        return (self.sym_grad_matrix.T @ sps.diags(self.tensor_weights)).tocsr()

    # -- operator application ------------------------------------------------

    def _check(self, f, comps=1):
        f = np.asarray(f, dtype=float)
        want = self.shape if comps == 1 else (comps,) + self.shape
        if f.shape != want:
            raise ValueError(f"field shape {f.shape} does not match grid {want}")
        return f

    def laplacian_neumann(self, f):
        f = self._check(f)
        return (self.lap_neumann_matrix @ f.ravel()).reshape(self.shape)

    def robin_linear(self, f):
        """Linear part of the Robin Laplacian (datum-independent)."""
        f = self._check(f)
        return (self.robin_linear_matrix @ f.ravel()).reshape(self.shape)

    def robin_source(self, datum):
        """Affine contribution of the boundary datum to the Robin Laplacian."""
        datum = np.broadcast_to(np.asarray(datum, dtype=float), self.shape)
        return (self.robin_coeff * datum.ravel()).reshape(self.shape)

    def laplacian_robin(self, f, datum):
        return self.robin_linear(f) + self.robin_source(datum)

    def grad(self, f):
        f = self._check(f)
        gx = (self._dx @ f.ravel()).reshape(self.shape)
        gy = (self._dy @ f.ravel()).reshape(self.shape)
        return np.stack([gx, gy])

    def sym_grad(self, u):
        u = self._check(u, comps=2)
        e = self.sym_grad_matrix @ u.reshape(2, -1).ravel()
        return e.reshape((3,) + self.shape)

    def div_stress(self, s):
        """Adjoint divergence of a symmetric tensor field.

        Satisfies <div_stress(s), w> = -<s, sym_grad(w)> exactly for every
        displacement w vanishing on the boundary; boundary rows of the
        output are set to zero because the pairing never sees them.
        """
        s = self._check(s, comps=3)
        v = -(self.sym_grad_weighted_transpose @ s.ravel()) / self.vector_weights
        v = v.reshape((2,) + self.shape)
        v[:, self.boundary_mask] = 0.0
        return v

    def elastic_matrix(self, mu, lam):
        """Assembled operator for u -> -div(2 mu eps(u) + lam tr(eps(u)) I).

        Returns the quadrature-weighted form G^T W_t C G over all nodes;
        callers restrict rows and columns to interior dofs before solving.
        """
        mu = np.broadcast_to(np.asarray(mu, dtype=float), self.shape).ravel()
        lam = np.broadcast_to(np.asarray(lam, dtype=float), self.shape).ravel()
        d0 = sps.diags(2.0 * mu + lam)
        d1 = sps.diags(lam)
        d2 = sps.diags(2.0 * mu)
        c = sps.bmat([[d0, d1, None], [d1, d0, None], [None, None, d2]])
        return (self.sym_grad_weighted_transpose @ (c @ self.sym_grad_matrix)).tocsr()

    # -- quadrature and norms ------------------------------------------------

    def integrate(self, f):
        f = self._check(f)
        return float(self.quad_weights @ f.ravel())

    def inner(self, a, b):
        a = self._check(a)
        b = self._check(b)
        return float(self.quad_weights @ (a.ravel() * b.ravel()))

    def norm_l2(self, f):
        return float(np.sqrt(max(self.inner(f, f), 0.0)))

    def norm_h1(self, f):
        g = self.grad(f)
        return float(np.sqrt(self.inner(f, f) + self.inner_vec(g, g)))

    def inner_vec(self, a, b):
        a = self._check(a, comps=2)
        b = self._check(b, comps=2)
        return float(self.vector_weights @ (a.ravel() * b.ravel()))

    def norm_l2_vec(self, u):
        return float(np.sqrt(max(self.inner_vec(u, u), 0.0)))

    def norm_h1_vec(self, u):
        u = self._check(u, comps=2)
        val = self.inner_vec(u, u)
        for c in range(2):
            g = self.grad(u[c])
            val += self.inner_vec(g, g)
        return float(np.sqrt(max(val, 0.0)))

    def inner_tensor(self, a, b):
        a = self._check(a, comps=3)
        b = self._check(b, comps=3)
        return float(self.quad_weights @ tensor_dot(a, b).ravel())

    def norm_l2_tensor(self, s):
        return float(np.sqrt(max(self.inner_tensor(s, s), 0.0)))


def stress_from_strain(mu, lam, eps):
    """Isotropic stress 2 mu eps + lam tr(eps) I in (e11, e22, e12) storage."""
    tr = eps[0] + eps[1]
    return np.stack(
        [
            2.0 * mu * eps[0] + lam * tr,
            2.0 * mu * eps[1] + lam * tr,
            2.0 * mu * eps[2],
        ]
    )


# -- field carriers ----------------------------------------------------------


@dataclass
class ScalarField:
    """One real value per grid node, a single time level of phi, sigma or z."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = self.grid._check(self.values)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def full(cls, grid, value):
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid, fn):
        x, y = grid.meshes
        return cls(grid, np.asarray(fn(x, y), dtype=float) + np.zeros(grid.shape))

    def validate(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("scalar field contains non-finite entries")
        return self


@dataclass
class VectorField:
    """Two displacement components per node.

    With ``dirichlet`` set, validation additionally requires exact zeros on
    the boundary ring.
    """

    grid: Grid
    values: np.ndarray
    dirichlet: bool = False

    def __post_init__(self):
        self.values = self.grid._check(self.values, comps=2)

    @classmethod
    def zeros(cls, grid, dirichlet=False):
        return cls(grid, np.zeros((2,) + grid.shape), dirichlet)

    def validate(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("vector field contains non-finite entries")
        if self.dirichlet:
            b = self.values[:, self.grid.boundary_mask]
            if np.any(b != 0.0):
                raise ValueError("dirichlet vector field is nonzero on the boundary")
        return self


@dataclass
class SymTensorField:
    """Symmetric 2x2 tensor per node, stored as (e11, e22, e12)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = self.grid._check(self.values, comps=3)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((3,) + grid.shape))

    def validate(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("tensor field contains non-finite entries")
        return self
