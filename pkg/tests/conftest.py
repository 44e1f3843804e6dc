import numpy as np
import pytest

from ddfem.fem import BoundaryConditions, line_mesh, rect_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def rod_mesh():
    """100 mm bar, 10 linear elements, 1 cm^2 cross-section."""
    mesh = line_mesh(0.1, 10, area=1.0e-4)
    mesh.nodesets["left"] = np.array([0])
    mesh.nodesets["right"] = np.array([mesh.n_nodes - 1])
    mesh.facesets["right"] = [(mesh.n_nodes - 1,)]
    return mesh


@pytest.fixture
def unit_square():
    """4x4 quad patch on the unit square, unit thickness."""
    mesh = rect_mesh(1.0, 1.0, 4, 4)
    nodes = mesh.nodes
    mesh.nodesets["left"] = np.flatnonzero(np.isclose(nodes[:, 0], 0.0))
    mesh.nodesets["bottom"] = np.flatnonzero(np.isclose(nodes[:, 1], 0.0))
    right = np.flatnonzero(np.isclose(nodes[:, 0], 1.0))
    right = right[np.argsort(nodes[right, 1])]
    mesh.nodesets["right"] = right
    mesh.facesets["right"] = [(int(a), int(b)) for a, b in zip(right[:-1], right[1:])]
    return mesh


def end_load_bcs(mesh, force):
    """Fix the left end of a rod, pull the last node with `force` [N]."""
    return BoundaryConditions(
        dirichlet=[(0, 0, 0.0)],
        point_loads=[(mesh.n_nodes - 1, np.array([force]))])


def random_admissible_state(mesh, rng, mu0, u_scale=0.05, lam_scale=0.04):
    """Random nodal fields plus compatible-ish symmetric data states.

    The assigned strains sit near the actual C(u) so the state is the kind
    the solver visits; stresses are arbitrary symmetric tensors.
    """
    from ddfem.fem import gradient_field

    d = mesh.dim
    quad = mesh.quadrature()
    u = u_scale * rng.normal(size=mesh.n_dofs)
    lam = lam_scale * rng.normal(size=mesh.n_dofs)
    f = gradient_field(mesh, u) + np.eye(d)
    c = np.einsum("eqki,eqkj->eqij", f, f)
    noise = rng.normal(scale=0.03, size=c.shape)
    c_star = c + 0.5 * (noise + np.swapaxes(noise, -1, -2))
    noise = rng.normal(scale=0.2 * mu0, size=c.shape)
    s_star = 0.5 * (noise + np.swapaxes(noise, -1, -2))
    return u, lam, c_star, s_star


def fd_tangent_blocks(mesh, u, lam, c_star, s_star, mu0, h=1e-6):
    """Central-difference Jacobian blocks of the two coupled residuals."""
    from ddfem.solver_cs import residual_lambda, residual_u

    n = mesh.n_dofs
    f_ext = np.zeros(n)

    def ru(uu, ll):
        return residual_u(mesh, uu, ll, c_star, s_star, mu0)

    def rl(uu, ll):
        return residual_lambda(mesh, uu, ll, s_star, mu0, f_ext)

    k_uu = np.empty((n, n))
    k_ul = np.empty((n, n))
    k_lu = np.empty((n, n))
    k_ll = np.empty((n, n))
    for j in range(n):
        dx = np.zeros(n)
        dx[j] = h
        k_uu[:, j] = (ru(u + dx, lam) - ru(u - dx, lam)) / (2.0 * h)
        k_ul[:, j] = (ru(u, lam + dx) - ru(u, lam - dx)) / (2.0 * h)
        k_lu[:, j] = (rl(u + dx, lam) - rl(u - dx, lam)) / (2.0 * h)
        k_ll[:, j] = (rl(u, lam + dx) - rl(u, lam - dx)) / (2.0 * h)
    return k_uu, k_ul, k_lu, k_ll


def relative_frobenius(actual, desired):
    denom = max(np.linalg.norm(desired), 1e-300)
    return np.linalg.norm(actual - desired) / denom


def fp_equilibrium_residual(mesh, bcs, report):
    """Independent check of the weak balance of the recovered stresses."""
    from ddfem.fem import divergence_rhs, free_dofs

    eq = divergence_rhs(mesh, report.stresses) - bcs.external_force(mesh)
    fixed, _ = bcs.lambda_fixed_dofs(mesh)
    return np.linalg.norm(eq[free_dofs(mesh.n_dofs, fixed)])
