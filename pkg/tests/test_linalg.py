import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from alns.linalg import (ConvergenceError, DenseFactor, KrylovConfig, SingularMatrixError,
                         as_csr, export_matrix_market, fgmres, gmres, maybe_export, sparse_lu)


def laplacian_2d(n):
    T = sp.diags([-1, 2, -1], [-1, 0, 1], shape=(n, n))
    return (sp.kron(T, sp.eye(n)) + sp.kron(sp.eye(n), T)).tocsr()


# ---------------------------------------------------------------- sparse storage
@given(st.integers(1, 50), st.integers(1, 50), st.integers(0, 200), st.integers(0, 2 ** 31 - 1))
@settings(max_examples=30, deadline=None)
def test_csr_canonical_and_matvec(m, n, nnz, seed):
    rng = np.random.default_rng(seed)
    r, c = rng.integers(0, m, nnz), rng.integers(0, n, nnz)
    v = rng.standard_normal(nnz)
    A = as_csr(sp.coo_matrix((v, (r, c)), shape=(m, n)))
    dense = np.zeros((m, n))
    np.add.at(dense, (r, c), v)
    for i in range(m):
        cols = A.indices[A.indptr[i]:A.indptr[i + 1]]
        assert np.all(np.diff(cols) > 0)
    x = rng.standard_normal(n)
    assert np.allclose(A @ x, dense @ x, atol=1e-12)


def test_matrix_market_export(tmp_path, monkeypatch):
    A = laplacian_2d(3)
    export_matrix_market(tmp_path / "a.mtx", A)
    import scipy.io
    assert abs(scipy.io.mmread(str(tmp_path / "a.mtx")) - A).max() == 0
    monkeypatch.setenv("ALNS_DUMP_DIR", str(tmp_path / "dump"))
    maybe_export("lap", A)
    assert (tmp_path / "dump" / "lap.mtx").exists()


# ---------------------------------------------------------------- dense LU
@given(arrays(np.float64, (6, 6), elements=st.floats(-1, 1)))
@settings(max_examples=40, deadline=None)
def test_dense_factor_reconstruction(M):
    A = M + 8 * np.eye(6)                          # diagonally dominant: well conditioned
    F = DenseFactor(A)
    P, L, U = F.factors()
    assert np.allclose(P @ A, L @ U, rtol=1e-10, atol=1e-10 * np.abs(A).max())
    b = np.arange(6.0)
    assert np.allclose(A @ F.solve(b), b, atol=1e-10)


def test_dense_factor_singular():
    with pytest.raises(SingularMatrixError):
        DenseFactor(np.array([[1.0, 2.0], [2.0, 4.0]]))


# ---------------------------------------------------------------- sparse LU
def test_sparse_lu_diagonal():
    d = np.array([2.0, -3.0, 0.5])
    b = np.array([1.0, 2.0, 3.0])
    assert np.allclose(sparse_lu(sp.diags(d)).solve(b), b / d, rtol=1e-15)


def test_sparse_lu_laplacian_vs_dense(rng):
    A = laplacian_2d(5)
    b = rng.standard_normal(25)
    x = sparse_lu(A).solve(b)
    xd = np.linalg.solve(A.toarray(), b)
    assert np.linalg.norm(x - xd) / np.linalg.norm(xd) < 1e-12
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_sparse_lu_singular():
    A = sp.csr_matrix(np.array([[1.0, 2.0, 0], [1.0, 2.0, 0], [0, 0, 1.0]]))
    with pytest.raises(SingularMatrixError):
        sparse_lu(A)


def test_sparse_lu_deterministic(rng):
    A = laplacian_2d(6) + sp.random(36, 36, 0.05, random_state=1)
    b = rng.standard_normal(36)
    assert np.array_equal(sparse_lu(A).solve(b), sparse_lu(A).solve(b))


# ---------------------------------------------------------------- GMRES
def test_gmres_identity(rng):
    b = rng.standard_normal(7)
    res = gmres(lambda v: v, None, b, config=KrylovConfig(rtol=1e-12, atol=0))
    assert res.iterations == 1 and res.converged
    assert np.allclose(res.x, b, atol=1e-14)


def test_gmres_tridiagonal_vs_dense(rng):
    A = sp.diags([-1, 2.5, -1], [-1, 0, 1], shape=(10, 10)).tocsr()
    b = rng.standard_normal(10)
    res = gmres(A, None, b, config=KrylovConfig(rtol=1e-12, atol=0, max_iterations=10))
    xd = np.linalg.solve(A.toarray(), b)
    assert res.iterations <= 10 and res.converged
    assert np.linalg.norm(res.x - xd) <= 1e-10 * np.linalg.norm(xd)


def test_gmres_exact_preconditioner_one_iteration(rng):
    A = laplacian_2d(4) + 0.3 * sp.random(16, 16, 0.2, random_state=3)
    lu = sparse_lu(A)
    res = gmres(A, lu.solve, rng.standard_normal(16), config=KrylovConfig(rtol=1e-10, atol=0))
    assert res.iterations == 1


@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 8))
@settings(max_examples=20, deadline=None)
def test_gmres_history_monotone_within_restart(seed, restart):
    rng = np.random.default_rng(seed)
    A = np.eye(20) * 3 + rng.standard_normal((20, 20))
    cfg = KrylovConfig(restart=restart, max_iterations=40, rtol=1e-8, atol=0)
    res = gmres(A, None, rng.standard_normal(20), config=cfg)
    h = np.array(res.history)
    assert np.all(np.diff(h) <= 1e-12 * h[0])


def test_fgmres_varying_preconditioner(rng):
    A = laplacian_2d(6)
    D = A.diagonal()
    calls = []

    def prec(v):
        calls.append(1)
        return v / D * (1 + 0.3 * np.sin(len(calls)))   # changes every call
    cfg = KrylovConfig(rtol=1e-10, atol=0, max_iterations=100)
    b = rng.standard_normal(36)
    res = fgmres(A, prec, b, config=cfg)
    assert res.converged
    assert np.all(np.diff(res.history) <= 1e-12 * res.history[0])
    assert np.linalg.norm(A @ res.x - b) <= 1e-9 * np.linalg.norm(b)


def test_gmres_nullspace_projection():
    # singular Neumann-type operator: 1 is in its kernel
    n = 12
    A = sp.diags([-1, 2, -1], [-1, 0, 1], shape=(n, n)).tolil()
    A[0, 0] = A[n - 1, n - 1] = 1
    A = A.tocsr()
    b = np.sin(np.arange(n))
    b -= b.mean()

    def proj(z):
        return z - z.mean()
    res = gmres(A, None, b, config=KrylovConfig(rtol=1e-10, atol=0, nullspace=proj,
                                                max_iterations=50))
    assert res.converged and abs(res.x.mean()) < 1e-12
    assert np.linalg.norm(A @ res.x - b) <= 1e-9 * np.linalg.norm(b)


def test_gmres_nonconvergence_reports_history():
    A = sp.diags(np.linspace(1, 1e6, 200))
    cfg = KrylovConfig(max_iterations=3, rtol=1e-12, atol=0, raise_on_fail=True)
    with pytest.raises(ConvergenceError) as exc:
        gmres(A, None, np.ones(200), config=cfg)
    assert len(exc.value.history) == 4


def test_gmres_zero_rhs():
    res = gmres(np.eye(3), None, np.zeros(3))
    assert res.converged and res.iterations == 0 and np.all(res.x == 0)


def test_krylov_config_validation():
    with pytest.raises(ValueError):
        KrylovConfig(atol=-1)
    with pytest.raises(ValueError):
        KrylovConfig(restart=0)


def test_gmres_bit_identical(rng):
    A = laplacian_2d(5)
    b = rng.standard_normal(25)
    r1 = gmres(A, None, b, config=KrylovConfig(rtol=1e-9, atol=0))
    r2 = gmres(A, None, b, config=KrylovConfig(rtol=1e-9, atol=0))
    assert np.array_equal(r1.x, r2.x) and r1.history == r2.history
