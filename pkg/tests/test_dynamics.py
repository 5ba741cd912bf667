import numpy as np
import pytest

from cotflow.dynamics import (
    CompiledConstraints,
    ConstraintSpec,
    SystemModel,
    assemble_P,
    assemble_Ptilde,
    compile_constraints,
    complete_basis,
    double_integrator_model,
    kf_params,
    linear_model,
    pseudo_inverse,
    single_integrator_model,
)
from cotflow.errors import EmptyFeasibleSet, RankDeficient, UnsupportedForDR
from cotflow.grid import GridSpec


def test_pseudo_inverse_unit_column():
    assert np.allclose(pseudo_inverse(np.array([[0.0], [1.0]])), [[0.0, 1.0]])


def test_pseudo_inverse_ones_column():
    assert np.allclose(pseudo_inverse(np.array([[1.0], [1.0]])), [[0.5, 0.5]])


def test_pseudo_inverse_random_identities():
    rng = np.random.default_rng(11)
    for _ in range(30):
        n = int(rng.integers(1, 5))
        r = int(rng.integers(1, n + 1))
        B = rng.standard_normal((n, r))
        Bd = pseudo_inverse(B)
        assert np.linalg.norm(Bd @ B - np.eye(r)) <= 1e-12 * max(1, np.linalg.norm(B))
        BBd = B @ Bd
        assert np.linalg.norm(BBd - BBd.T) <= 1e-10


def test_pseudo_inverse_rank_deficient():
    with pytest.raises(RankDeficient):
        pseudo_inverse(np.array([[1.0, 1.0], [1.0, 1.0]]))


def test_complete_basis_simple():
    B2 = complete_basis(np.array([[0.0], [1.0]]))
    assert B2.shape == (2, 1)
    assert np.allclose(np.abs(B2[:, 0]), [1.0, 0.0])


def test_complete_basis_square_is_empty():
    assert complete_basis(np.eye(3)).shape == (3, 0)


def test_complete_basis_random_orthogonality():
    rng = np.random.default_rng(2)
    for _ in range(25):
        n = int(rng.integers(2, 6))
        r = int(rng.integers(1, n))
        B = rng.standard_normal((n, r))
        B2 = complete_basis(B)
        assert B2.shape == (n, n - r)
        assert np.linalg.norm(B2.T @ B) <= 1e-12 * np.linalg.norm(B)
        assert np.allclose(B2.T @ B2, np.eye(n - r), atol=1e-12)
        full = np.concatenate([B, B2], axis=1)
        assert np.linalg.cond(full) <= 1e6


def test_assemble_P_double_integrator():
    m = double_integrator_model()
    P = assemble_P(m, 0.0, (np.array(0.1), np.array(0.5)))
    assert np.allclose(np.squeeze(P), [[1.0, 0.5, 0.0], [0.0, 0.0, 1.0]])


def test_assemble_Ptilde_double_integrator():
    m = double_integrator_model()
    Pt = assemble_Ptilde(m, 0.0, (np.array(0.1), np.array(0.5)))
    assert np.allclose(np.squeeze(Pt), [[1.0, 0.5, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
    # coefficient block for the elliptic step at this cell
    C = np.squeeze(Pt).T @ np.squeeze(Pt)
    assert np.allclose(C, [[1.0, 0.5, 0.0], [0.5, 1.25, 0.0], [0.0, 0.0, 1.0]])


def test_assemble_P_block_identity():
    m = single_integrator_model(2)
    P = assemble_P(m, 0.0, (np.array(0.3), np.array(0.4)))
    expect = np.zeros((3, 3))
    expect[0, 0] = 1.0
    expect[1:, 1:] = np.eye(2)
    assert np.allclose(np.squeeze(P), expect)


def test_ptilde_spd_everywhere():
    m = double_integrator_model()
    grid = GridSpec(T=1.0, nt=4, nx=(5, 5))
    t, *xs = grid.meshes()
    Pt = assemble_Ptilde(m, t, tuple(xs))
    C = np.einsum("ji...,jk...->ik...", Pt, Pt)
    flat = np.moveaxis(C.reshape(3, 3, -1), -1, 0)
    eig = np.linalg.eigvalsh(flat)
    assert eig.min() > 1e-8


def test_kf_params_double_integrator():
    m = double_integrator_model()
    c, gram = kf_params(m, 0.0, (np.array(0.2), np.array(0.9)))
    assert np.allclose(np.squeeze(c), [0.0, 0.0])
    assert np.allclose(gram, [[0.0, 0.0], [0.0, 1.0]])


def test_kf_params_zero_drift():
    rng = np.random.default_rng(4)
    B = rng.standard_normal((3, 2))
    m = linear_model(np.zeros((3, 3)), B)
    c, gram = kf_params(m, 0.0, tuple(np.array(v) for v in (0.1, 0.2, 0.3)))
    assert np.allclose(np.squeeze(c), 0.0)
    assert np.allclose(gram, B @ B.T)


def test_kf_identity_B():
    # B = I: Gram = I and c = f, the drift-shifted paraboloid
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    m = linear_model(A, np.eye(2))
    x = (np.array(0.3), np.array(0.8))
    c, gram = kf_params(m, 0.0, x)
    assert np.allclose(gram, np.eye(2))
    assert np.allclose(np.squeeze(c), [0.8, 0.0])


def test_kf_cross_term_symmetry():
    # beta^T B B^+ f equals (B^T beta) . (B^+ f) for random data
    rng = np.random.default_rng(9)
    for _ in range(40):
        n, r = 4, 2
        B = rng.standard_normal((n, r))
        f = rng.standard_normal(n)
        beta = rng.standard_normal(n)
        Bd = pseudo_inverse(B)
        lhs = (Bd @ beta) @ (B.T @ f)
        rhs = (B.T @ beta) @ (Bd @ f)
        assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))


def test_compile_double_integrator_indirect_rows():
    m = double_integrator_model()
    grid = GridSpec(T=1.0, nt=3, nx=(4, 4))
    spec = ConstraintSpec(box_bounds=np.array([1.0]), g=0.0, h=10.0)
    cc = compile_constraints(m, spec, grid, "indirect")
    assert cc.k == 4
    # unnormalized rows: [1,0,0] <= 10; [-1,0,0] <= 0; [-1,0,1] <= 0; [-1,0,-1] <= 0
    s2 = np.sqrt(2.0)
    assert np.allclose(cc.normals[0], [1.0, 0.0, 0.0])
    assert np.allclose(cc.normals[1], [-1.0, 0.0, 0.0])
    assert np.allclose(cc.normals[2], [-1.0 / s2, 0.0, 1.0 / s2])
    assert np.allclose(cc.normals[3], [-1.0 / s2, 0.0, -1.0 / s2])
    assert np.allclose(cc.offsets, [10.0, 0.0, 0.0, 0.0])


def test_compile_unbounded_input_density_rows_only():
    m = single_integrator_model(1)
    grid = GridSpec(T=1.0, nt=3, nx=(4,))
    cc = compile_constraints(m, ConstraintSpec(), grid, "indirect")
    assert cc.k == 1
    assert np.allclose(cc.normals, [[-1.0, 0.0]])


def test_compile_direct_pins_auxiliary_momentum():
    m = double_integrator_model()
    grid = GridSpec(T=1.0, nt=3, nx=(4, 4))
    spec = ConstraintSpec(box_bounds=np.array([1.0]))
    cc = compile_constraints(m, spec, grid, "direct")
    # rho row + 2 input rows + the +/- pair pinning m_v
    assert cc.k == 5
    assert np.allclose(cc.normals[-2], [0.0, 0.0, 1.0])
    assert np.allclose(cc.normals[-1], [0.0, 0.0, -1.0])


def test_compile_direct_halfspaces_hold_iff_u_feasible():
    rng = np.random.default_rng(6)
    m = double_integrator_model()
    grid = GridSpec(T=1.0, nt=2, nx=(2, 2))
    spec = ConstraintSpec(box_bounds=np.array([0.7]))
    cc = compile_constraints(m, spec, grid, "direct")
    for _ in range(200):
        rho = rng.uniform(0.01, 5.0)
        u = rng.uniform(-1.5, 1.5, size=1)
        v = np.zeros(1)
        mu = np.concatenate([[rho], rho * u, rho * v])
        vals = cc.normals @ mu
        ok = np.all(vals <= np.asarray(cc.offsets) + 1e-12)
        assert ok == (abs(u[0]) <= 0.7)


def test_compile_zero_mu_feasible_iff_g_zero():
    m = double_integrator_model()
    grid = GridSpec(T=1.0, nt=2, nx=(2, 2))
    cc = compile_constraints(m, ConstraintSpec(box_bounds=np.array([1.0]), g=0.0), grid, "indirect")
    mu0 = np.zeros(3)
    assert np.all(cc.normals @ mu0 <= np.asarray(cc.offsets) + 1e-15)
    cc2 = compile_constraints(
        m, ConstraintSpec(box_bounds=np.array([1.0]), g=0.5, h=2.0), grid, "indirect"
    )
    off2 = cc2.offsets if cc2.offsets.ndim == 1 else cc2.offsets.reshape(cc2.k, -1)[:, 0]
    assert not np.all(cc2.normals @ mu0 <= off2 + 1e-15)


def test_compile_dr_requires_constant_data():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    m = linear_model(A, np.array([[1.0], [0.0]]))  # B^+ f = x2 varies
    grid = GridSpec(T=1.0, nt=2, nx=(3, 3))
    spec = ConstraintSpec(box_bounds=np.array([1.0]))
    with pytest.raises(UnsupportedForDR):
        compile_constraints(m, spec, grid, "dr")


def test_compile_dr_gamma_stacking():
    m = double_integrator_model()
    grid = GridSpec(T=1.0, nt=2, nx=(3, 3))
    h = np.full(grid.nx, 7.0)
    h[1, 1] = 0.0
    spec = ConstraintSpec(box_bounds=np.array([2.0]), g=0.0, h=h)
    cc = compile_constraints(m, spec, grid, "dr")
    assert cc.R is not None and cc.R.shape == (4, 3)
    assert cc.gamma.shape == (4,) + grid.shape
    assert np.allclose(cc.gamma[0, :, 1, 1], 0.0)
    assert np.allclose(cc.gamma[0, :, 0, 0], 7.0)
    assert np.allclose(cc.gamma[1:], 0.0)


def test_compile_empty_feasible_set():
    m = double_integrator_model()
    grid = GridSpec(T=1.0, nt=2, nx=(3, 3))
    with pytest.raises(EmptyFeasibleSet):
        compile_constraints(m, ConstraintSpec(g=1.0, h=0.5), grid, "indirect")


def test_varying_B_indirect_rows_match_pointwise():
    # B depends on x: compiled coefficients must equal the per-cell formula
    def f(t, xs):
        shp = np.broadcast_shapes(np.shape(t), *(np.shape(x) for x in xs))
        return np.zeros((1,) + shp)

    def B(t, xs):
        (x1,) = xs
        shp = np.broadcast_shapes(np.shape(t), np.shape(x1))
        return (1.0 + np.broadcast_to(x1, shp))[None, None]

    m = SystemModel(n=1, r=1, f=f, B=B, B_constant=False, Bdagf_constant=False)
    grid = GridSpec(T=1.0, nt=2, nx=(4,))
    spec = ConstraintSpec(box_bounds=np.array([2.0]))
    cc = compile_constraints(m, spec, grid, "indirect")
    assert cc.normals.shape == (3, 2) + grid.shape
    x1 = grid.x_centers(0)
    binv = 1.0 / (1.0 + x1)
    raw = np.stack([-2.0 * np.ones(4), binv])  # k=2, a=+1 row before normalization
    raw /= np.linalg.norm(raw, axis=0)
    assert np.allclose(cc.normals[1, :, 0, :], raw)
