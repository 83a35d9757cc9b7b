"""P1 finite elements for scalar mixed Dirichlet-Neumann problems.

Each frozen-coefficient equation of the coupled system reduces to
    -div(a(x) grad v + b(x)) + B(x) = f(x)
with a, b, B, f constant per element, Dirichlet values on the tagged
boundary part, and the homogeneous conormal condition elsewhere (which
contributes nothing to the weak form).  Assembly uses exact P1 gradients
and one-point centroid quadrature for the data terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import DIRICHLET, Mesh


class CoefficientError(ValueError):
    """Non-positive diffusivity or inadmissible coefficient data."""


class SolverError(RuntimeError):
    """Iterative linear solve failed to reach the requested residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class ContractError(ValueError):
    """A caller violated an interface precondition."""


@dataclass
class Field:
    """Nodal scalar function on a mesh (P1, one value per node)."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise ContractError(
                f"field has {self.values.shape} values for {self.mesh.n_nodes} nodes")
        if not np.all(np.isfinite(self.values)):
            raise ContractError("field contains non-finite values")

    def element_means(self) -> np.ndarray:
        return self.values[self.mesh.triangles].mean(axis=1)

    def element_gradients(self) -> np.ndarray:
        """(m, 2) constant gradient per element; exact for P1."""
        g = self.mesh.gradients()
        v = self.values[self.mesh.triangles]
        return np.einsum("mk,mkd->md", v, g)


def interpolate(mesh: Mesh, fn) -> Field:
    """Nodal interpolant of a function fn(x, y)."""
    vals = np.array([fn(float(x), float(y)) for x, y in mesh.nodes])
    return Field(mesh, vals)


@dataclass
class ScalarProblem:
    """Frozen-coefficient scalar equation on a tagged mesh.

    diffusivity : (m,) positive element values of the leading coefficient
    drift       : (m, 2) lower-order flux data entering as  + int b . grad(test)
    reaction    : (m,) zero-order data entering as  + int B * test
    source      : (m,) right-hand side density entering as  int f * test
    dirichlet   : callable (x, y) -> value on Dirichlet nodes
    """

    diffusivity: np.ndarray
    drift: np.ndarray | None = None
    reaction: np.ndarray | None = None
    source: np.ndarray | None = None
    dirichlet: object = None


@dataclass
class SparseSystem:
    """Assembled, Dirichlet-eliminated system on the free nodes."""

    matrix: sp.csr_matrix            # full stiffness before elimination
    rhs: np.ndarray                  # full load before elimination
    free: np.ndarray                 # free-node indices
    constrained: np.ndarray          # Dirichlet node indices
    boundary_values: np.ndarray      # values on constrained nodes
    mesh: Mesh
    reduced: sp.csr_matrix = field(init=False)
    reduced_rhs: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        A = self.matrix.tocsc()
        self.reduced = A[self.free][:, self.free].tocsr()
        lift = A[self.free][:, self.constrained] @ self.boundary_values
        self.reduced_rhs = self.rhs[self.free] - lift


def assemble(problem: ScalarProblem, mesh: Mesh) -> SparseSystem:
    """Galerkin assembly of the weak form with symmetric elimination."""
    m = mesh.n_triangles
    a = np.asarray(problem.diffusivity, dtype=float)
    if a.shape != (m,):
        raise CoefficientError(f"diffusivity must have one value per element ({m})")
    if np.any(a <= 0.0) or not np.all(np.isfinite(a)):
        bad = int(np.argmin(a))
        raise CoefficientError(
            f"non-positive diffusivity {a[bad]:g} on element {bad}")

    areas = np.abs(mesh.areas())
    grads = mesh.gradients()        # (m, 3, 2)
    tris = mesh.triangles

    # stiffness: a * |T| * grad(phi_i) . grad(phi_j)
    local = np.einsum("m,m,mid,mjd->mij", a, areas, grads, grads)
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    K = sp.coo_matrix((local.ravel(), (rows, cols)),
                      shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()

    # load: centroid quadrature of (source - reaction), minus drift flux
    rhs = np.zeros(mesh.n_nodes)
    dens = np.zeros(m)
    if problem.source is not None:
        dens += np.asarray(problem.source, dtype=float)
    if problem.reaction is not None:
        dens -= np.asarray(problem.reaction, dtype=float)
    if np.any(dens != 0.0):
        contrib = (areas * dens)[:, None] / 3.0
        np.add.at(rhs, tris.ravel(), np.repeat(contrib, 3, axis=1).ravel())
    if problem.drift is not None:
        b = np.asarray(problem.drift, dtype=float)
        flux = -np.einsum("m,mkd,md->mk", areas, grads, b)
        np.add.at(rhs, tris.ravel(), flux.ravel())

    dnodes = mesh.dirichlet_nodes()
    mask = np.zeros(mesh.n_nodes, dtype=bool)
    mask[dnodes] = True
    free = np.nonzero(~mask)[0]
    if problem.dirichlet is None:
        bvals = np.zeros(dnodes.size)
    else:
        bvals = np.array([problem.dirichlet(float(x), float(y))
                          for x, y in mesh.nodes[dnodes]])
    return SparseSystem(K, rhs, free, dnodes, bvals, mesh)


def solve_linear(system: SparseSystem, tol: float = 1e-12) -> tuple[Field, int]:
    """Solve the eliminated system by Jacobi-preconditioned CG (or
    BiCGStab if the reduced matrix is not numerically symmetric).

    Returns the full nodal field including boundary values and the
    Krylov iteration count.  Raises SolverError past 10 * n_free steps.
    """
    values = np.zeros(system.mesh.n_nodes)
    values[system.constrained] = system.boundary_values
    nfree = system.free.size
    if nfree == 0:
        return Field(system.mesh, values), 0

    A = system.reduced
    b = system.reduced_rhs
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        values[system.free] = 0.0
        return Field(system.mesh, values), 0

    diag = A.diagonal()
    if np.any(diag <= 0.0):
        raise CoefficientError("reduced matrix has non-positive diagonal")
    M = sp.diags(1.0 / diag)
    maxiter = max(10 * nfree, 50)
    count = [0]

    def cb(_):
        count[0] += 1

    skew = abs(A - A.T)
    symmetric = skew.max() <= 1e-13 * abs(A).max() if skew.nnz else True
    krylov = spla.cg if symmetric else spla.bicgstab
    x, info = krylov(A, b, rtol=tol, atol=0.0, maxiter=maxiter, M=M, callback=cb)
    residual = np.linalg.norm(b - A @ x) / bnorm
    if info != 0 or residual > 10.0 * tol:
        raise SolverError(
            f"linear solve stalled after {count[0]} iterations "
            f"(relative residual {residual:.3e}, target {tol:.1e})", residual)
    values[system.free] = x
    return Field(system.mesh, values), count[0]


# ---------------------------------------------------------------------------
# Norms and test-function machinery


def l2_norm(f: Field, p: float = 2.0) -> float:
    """Element-midpoint quadrature of |f|^p, then the p-th root."""
    if p < 1.0:
        raise ContractError("p must be >= 1")
    areas = np.abs(f.mesh.areas())
    vals = np.abs(f.element_means()) ** p
    return float((areas * vals).sum() ** (1.0 / p))


def h1_seminorm(f: Field) -> float:
    """sqrt of the Dirichlet energy; exact for P1 gradients."""
    areas = np.abs(f.mesh.areas())
    g = f.element_gradients()
    return float(np.sqrt((areas * np.einsum("md,md->m", g, g)).sum()))


def lp_gradient_norm(f: Field, t: float) -> float:
    """||grad f||_{L^t} from the exact element-constant gradients."""
    if t < 1.0:
        raise ContractError("t must be >= 1")
    areas = np.abs(f.mesh.areas())
    g = np.hypot(*f.element_gradients().T)
    return float((areas * g ** t).sum() ** (1.0 / t))


def truncation_test(u: Field, uS: Field, level: float) -> Field:
    """Nodal truncation sign(d) * min(|d|, level) of d = u - uS."""
    if level <= 0.0:
        raise ContractError("truncation level must be positive")
    d = u.values - uS.values
    return Field(u.mesh, np.sign(d) * np.minimum(np.abs(d), level))


def weak_residual(fields: list[Field], coeffs, equation: int,
                  testfield: Field) -> float:
    """Discrete weak-form residual of one equation against a test field.

    Evaluates  int A_i . grad(test) + B_i * test - [energy] Pi * test
    with coefficients frozen at the supplied fields (centroid states,
    element-constant gradients).  The test field must vanish on the
    Dirichlet part.
    """
    mesh = testfield.mesh
    dnodes = mesh.dirichlet_nodes()
    if dnodes.size and np.max(np.abs(testfield.values[dnodes])) > 1e-14 * (
            1.0 + np.max(np.abs(testfield.values))):
        raise ContractError("test field must vanish on Dirichlet nodes")

    areas = np.abs(mesh.areas())
    xc = mesh.centroids()
    W = np.column_stack([f.element_means() for f in fields])
    G = np.stack([f.element_gradients() for f in fields], axis=1)  # (m, ncomp, 2)

    a = coeffs.diffusivity(equation, xc, W)
    n_t = coeffs.n_transport
    grad_pot = G[:, n_t - 1, :]
    b = coeffs.drift(equation, xc, W, grad_pot)
    B = coeffs.zero_order(equation, xc, W)
    flux = a[:, None] * G[:, equation, :] + b

    gt = testfield.element_gradients()
    tc = testfield.element_means()
    res = np.einsum("m,md,md->", areas, flux, gt) + float((areas * B * tc).sum())
    if equation == n_t:
        dissip = coeffs.dissipation(xc, W, G)
        res -= float((areas * dissip * tc).sum())
    return float(res)


# ---------------------------------------------------------------------------
# Field CSV: header node_id,x,y,value; values in %.17g


def write_field_csv(f: Field, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("node_id,x,y,value\n")
        for i, ((x, y), v) in enumerate(zip(f.mesh.nodes, f.values)):
            fh.write(f"{i},{x:.17g},{y:.17g},{v:.17g}\n")


def read_field_csv(mesh: Mesh, path: str) -> Field:
    vals = np.zeros(mesh.n_nodes)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "node_id,x,y,value":
            raise ContractError(f"unexpected field CSV header {header!r}")
        for line in fh:
            parts = line.split(",")
            vals[int(parts[0])] = float(parts[3])
    return Field(mesh, vals)
