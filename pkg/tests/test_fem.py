import numpy as np
import pytest
import scipy.sparse as sp

from elliptic_energy.fem import (
    CoefficientError,
    ContractError,
    Field,
    ScalarProblem,
    SparseSystem,
    assemble,
    h1_seminorm,
    interpolate,
    l2_norm,
    lp_gradient_norm,
    read_field_csv,
    solve_linear,
    truncation_test,
    weak_residual,
    write_field_csv,
)
from elliptic_energy.mesh import (
    DIRICHLET,
    NEUMANN,
    Mesh,
    build_rectangle,
    tag_boundary,
)


def unit_square(n, tag=lambda x, y: DIRICHLET):
    return tag_boundary(build_rectangle(n, n, (1.0, 1.0)), tag)


def reference_triangle():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2]])
    bedges = np.array([[0, 1], [1, 2], [2, 0]])
    tags = np.array([NEUMANN] * 3, dtype=object)
    return Mesh(nodes, tris, bedges, tags, np.array([], dtype=np.int64))


def poisson_solve(mesh, source_fn, bc=lambda x, y: 0.0, a_value=1.0):
    xc = mesh.centroids()
    prob = ScalarProblem(
        diffusivity=np.full(mesh.n_triangles, a_value),
        source=np.array([source_fn(x, y) for x, y in xc]),
        dirichlet=bc,
    )
    return solve_linear(assemble(prob, mesh))


class TestAssembly:
    def test_reference_local_stiffness(self):
        mesh = reference_triangle()
        sys = assemble(ScalarProblem(diffusivity=np.array([1.0])), mesh)
        expected = np.array([[1.0, -0.5, -0.5],
                             [-0.5, 0.5, 0.0],
                             [-0.5, 0.0, 0.5]])
        assert np.allclose(sys.matrix.toarray(), expected, atol=1e-15)

    def test_stiffness_linear_in_coefficient(self):
        mesh = unit_square(3)
        one = assemble(ScalarProblem(diffusivity=np.ones(mesh.n_triangles)), mesh)
        two = assemble(ScalarProblem(diffusivity=np.full(mesh.n_triangles, 2.0)), mesh)
        assert np.allclose(two.matrix.toarray(), 2.0 * one.matrix.toarray())

    def test_nonpositive_diffusivity_rejected(self):
        mesh = unit_square(2)
        a = np.ones(mesh.n_triangles)
        a[3] = 0.0
        with pytest.raises(CoefficientError):
            assemble(ScalarProblem(diffusivity=a), mesh)

    def test_symmetry_and_zero_row_sums(self):
        mesh = unit_square(5)
        rng = np.random.default_rng(7)
        a = 0.5 + rng.random(mesh.n_triangles)
        K = assemble(ScalarProblem(diffusivity=a), mesh).matrix
        dense = K.toarray()
        assert np.max(np.abs(dense - dense.T)) <= 1e-14 * np.max(np.abs(dense))
        assert np.max(np.abs(dense.sum(axis=1))) <= 1e-13 * np.max(np.abs(dense))

    def test_all_dirichlet_returns_boundary_interpolant(self):
        mesh = unit_square(1)  # 4 nodes, all on the boundary
        prob = ScalarProblem(diffusivity=np.ones(mesh.n_triangles),
                             dirichlet=lambda x, y: x + 2.0 * y)
        sys = assemble(prob, mesh)
        assert sys.free.size == 0
        f, its = solve_linear(sys)
        assert its == 0
        assert np.allclose(f.values, mesh.nodes[:, 0] + 2.0 * mesh.nodes[:, 1])


class TestSolveLinear:
    def test_identity_system(self):
        rng = np.random.default_rng(0)
        mesh = unit_square(2, tag=lambda x, y: NEUMANN)
        n = mesh.n_nodes
        r = rng.standard_normal(n)
        sys = SparseSystem(sp.identity(n, format="csr"), r,
                           np.arange(n), np.array([], dtype=np.int64),
                           np.array([]), mesh)
        f, _ = solve_linear(sys)
        assert np.allclose(f.values, r, atol=1e-12)

    def test_zero_data_zero_field(self):
        mesh = unit_square(4)
        f, _ = poisson_solve(mesh, lambda x, y: 0.0)
        assert np.max(np.abs(f.values)) == 0.0

    def test_manufactured_sine_convergence(self):
        # oracle: u = sin(pi x) sin(pi y), f = 2 pi^2 u
        exact = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
        f_rhs = lambda x, y: 2.0 * np.pi ** 2 * exact(x, y)
        errs = []
        for n in (16, 32):
            mesh = unit_square(n)
            fh, _ = poisson_solve(mesh, f_rhs)
            diff = Field(mesh, fh.values - np.array(
                [exact(x, y) for x, y in mesh.nodes]))
            errs.append(l2_norm(diff, 2))
            assert np.max(np.abs(diff.values)) <= 2.0 * (1.0 / n) ** 2
        ratio = errs[0] / errs[1]
        assert 3.6 <= ratio <= 4.4

    def test_discrete_maximum_principle(self):
        rng = np.random.default_rng(3)
        mesh = unit_square(8)
        bc_vals = {}

        def bc(x, y):
            key = (round(x, 12), round(y, 12))
            if key not in bc_vals:
                bc_vals[key] = rng.uniform(-1.0, 2.0)
            return bc_vals[key]

        a = 0.1 + rng.random(mesh.n_triangles)
        sys = assemble(ScalarProblem(diffusivity=a, dirichlet=bc), mesh)
        f, _ = solve_linear(sys)
        lo, hi = sys.boundary_values.min(), sys.boundary_values.max()
        assert f.values.min() >= lo - 1e-11
        assert f.values.max() <= hi + 1e-11

    def test_flux_balance_zero_source(self):
        mesh = unit_square(6, tag=lambda x, y: DIRICHLET
                           if x < 1e-12 or x > 1 - 1e-12 else NEUMANN)
        prob = ScalarProblem(diffusivity=np.ones(mesh.n_triangles),
                             dirichlet=lambda x, y: x)
        sys = assemble(prob, mesh)
        f, _ = solve_linear(sys)
        residual = sys.matrix @ f.values - sys.rhs
        scale = np.abs(sys.matrix @ f.values).sum()
        assert abs(residual.sum()) <= 1e-12 * max(scale, 1.0)


class TestNorms:
    def test_constant_field(self):
        mesh = unit_square(4)
        f = Field(mesh, np.full(mesh.n_nodes, -3.0))
        assert abs(l2_norm(f, 2) - 3.0) < 1e-13

    def test_linear_field_h1(self):
        mesh = unit_square(4)
        f = interpolate(mesh, lambda x, y: x)
        assert abs(h1_seminorm(f) - 1.0) < 1e-13

    def test_xy_l2(self):
        # int (xy)^2 over the unit square = 1/9, so the norm is 1/3
        mesh = unit_square(64)
        f = interpolate(mesh, lambda x, y: x * y)
        assert abs(l2_norm(f, 2) - 1.0 / 3.0) < 1e-3 / 3.0

    def test_lp_gradient_matches_h1(self):
        mesh = unit_square(8)
        f = interpolate(mesh, lambda x, y: np.sin(x) * y + x * x)
        assert abs(lp_gradient_norm(f, 2.0) - h1_seminorm(f)) <= 1e-13

    def test_lp_gradient_of_linear(self):
        mesh = unit_square(5)
        f = interpolate(mesh, lambda x, y: x)
        for t in (1.0, 2.0, 3.5, 6.0):
            assert abs(lp_gradient_norm(f, t) - 1.0) < 1e-12


class TestTruncation:
    def test_below_level_identity(self):
        mesh = unit_square(3)
        u = interpolate(mesh, lambda x, y: 0.3 * x)
        uS = interpolate(mesh, lambda x, y: 0.1)
        g = truncation_test(u, uS, 5.0)
        assert np.allclose(g.values, u.values - uS.values)

    def test_saturation(self):
        mesh = unit_square(3)
        u = Field(mesh, np.full(mesh.n_nodes, 2.0))
        uS = Field(mesh, np.zeros(mesh.n_nodes))
        g = truncation_test(u, uS, 1.0)
        assert np.allclose(g.values, 1.0)

    def test_level_to_zero(self):
        mesh = unit_square(3)
        u = interpolate(mesh, lambda x, y: x - y)
        uS = Field(mesh, np.zeros(mesh.n_nodes))
        g = truncation_test(u, uS, 1e-12)
        assert np.max(np.abs(g.values)) <= 1e-12

    def test_invalid_level(self):
        mesh = unit_square(2)
        z = Field(mesh, np.zeros(mesh.n_nodes))
        with pytest.raises(ContractError):
            truncation_test(z, z, 0.0)


class _LaplaceCoeffs:
    """Minimal stand-in coefficient set: -div(grad v) = 0 per equation."""

    n_transport = 1

    def diffusivity(self, i, xc, W):
        return np.ones(len(xc))

    def drift(self, i, xc, W, grad_pot):
        return np.zeros((len(xc), 2))

    def zero_order(self, i, xc, W):
        return np.zeros(len(xc))

    def dissipation(self, xc, W, G):
        return np.zeros(len(xc))


class TestWeakResidual:
    def test_zero_fields_zero_data(self):
        mesh = unit_square(4)
        z = Field(mesh, np.zeros(mesh.n_nodes))
        r = weak_residual([z, z], _LaplaceCoeffs(), 0, z)
        assert r == 0.0

    def test_galerkin_orthogonality(self):
        mesh = unit_square(8)
        f, _ = poisson_solve(mesh, lambda x, y: 1.0, bc=lambda x, y: x)
        zero = Field(mesh, np.zeros(mesh.n_nodes))
        rng = np.random.default_rng(11)
        test = Field(mesh, rng.standard_normal(mesh.n_nodes))
        test.values[mesh.dirichlet_nodes()] = 0.0
        coeffs = _LaplaceCoeffs()
        # equation 1 (energy slot) carries the unit source as dissipation
        coeffs.dissipation = lambda xc, W, G: np.ones(len(xc))
        r = weak_residual([zero, f], coeffs, 1, test)
        assert abs(r) <= 1e-10 * max(1.0, np.abs(f.values).max())

    def test_dirichlet_test_function_rejected(self):
        mesh = unit_square(4)
        bad = interpolate(mesh, lambda x, y: 1.0)
        z = Field(mesh, np.zeros(mesh.n_nodes))
        with pytest.raises(ContractError):
            weak_residual([z, z], _LaplaceCoeffs(), 0, bad)


class TestFieldCSV:
    def test_roundtrip(self, tmp_path):
        mesh = unit_square(3)
        f = interpolate(mesh, lambda x, y: np.cos(x) + y ** 3)
        path = tmp_path / "field.csv"
        write_field_csv(f, str(path))
        back = read_field_csv(mesh, str(path))
        assert np.array_equal(back.values, f.values)
        header = path.read_text().splitlines()[0]
        assert header == "node_id,x,y,value"
