import numpy as np
import pytest

from airgraph.hierarchy import SetupConfig, setup
from airgraph.solve import (
    FlopCounter,
    SolveConfig,
    coarse_solve,
    f_smooth,
    predicted_flops,
    richardson_solve,
    vcycle,
)
from airgraph.sparse import SparseMatrix, spmv

from conftest import upwind_matrix


def two_level(D, lab, **kw):
    A = SparseMatrix.from_dense(D)
    lab = np.asarray(lab, dtype=np.int8)
    base = dict(coarse_size_target=0, max_levels=2, poly_order=1,
                drop_coarse=0.0, drop_restrict=0.0)
    base.update(kw)
    cfg = SetupConfig(**base)
    return setup(A, cfg, splitter=lambda M, level: lab)


def test_f_smooth_hand_computed():
    D = np.array([
        [4.0, 1.0, 0.0, 2.0],
        [0.0, 2.0, 1.0, 0.0],
        [1.0, 0.0, 5.0, 1.0],
        [0.0, 1.0, 0.0, 3.0],
    ])
    h = two_level(D, [0, 1, 0, 1], exact_ff_inverse=True, exact_coarse_solve=True)
    lv = h.levels[0]
    b = np.array([1.0, 2.0, 3.0, 4.0])
    x = np.array([0.5, -1.0, 0.25, 2.0])
    f = [0, 2]
    r_f = (b - D @ x)[f]
    expected = x.copy()
    expected[f] += np.linalg.solve(D[np.ix_(f, f)], r_f)
    out = f_smooth(lv, b, x)
    assert np.allclose(out, expected, atol=1e-14)
    assert np.array_equal(out[[1, 3]], x[[1, 3]])
    # exact F solve: F residual vanishes after one smooth
    assert np.abs((b - D @ out)[f]).max() < 1e-13
    # already exact: unchanged
    xs = np.linalg.solve(D, b)
    assert np.allclose(f_smooth(lv, b, xs), xs, atol=1e-14)


def test_exact_two_level_cycle():
    rng = np.random.default_rng(3)
    D = rng.standard_normal((30, 30)) + 8 * np.eye(30)
    lab = (rng.random(30) < 0.5).astype(np.int8)
    h = two_level(D, lab, exact_ff_inverse=True, ideal_prolongation=True,
                  exact_coarse_solve=True)
    b = rng.standard_normal(30)
    x = vcycle(h, b, cfg=SolveConfig(up_f_smooths=1))
    assert np.linalg.norm(b - D @ x) / np.linalg.norm(b) < 1e-10


def test_single_level_is_coarse_solve():
    D, A = upwind_matrix(5)
    h = setup(A, SetupConfig(poly_order=6, coarse_poly_order=6, coarse_size_target=0))
    assert h.n_levels == 1
    r = np.arange(1.0, 6.0)
    assert np.array_equal(vcycle(h, r), coarse_solve(h, r))


def test_zero_rhs():
    _, A = upwind_matrix(20)
    h = setup(A, SetupConfig.serial())
    x, stats = richardson_solve(h, np.zeros(20))
    assert stats.iterations == 0 and stats.converged and not np.any(x)


def test_nonconvergence_flagged(small_problem):
    h = setup(small_problem.A, SetupConfig.serial())
    _, stats = richardson_solve(h, small_problem.b, SolveConfig(max_iterations=2))
    assert not stats.converged and stats.iterations == 2


def test_flop_shadow_agrees(small_problem):
    for cfg in (SetupConfig.serial(), SetupConfig(coarse_size_target=100)):
        h = setup(small_problem.A, cfg)
        _, stats = richardson_solve(h, small_problem.b)
        assert stats.converged
        assert abs(stats.flops - stats.shadow_flops) <= 0.01 * stats.flops
        assert stats.work_units == stats.flops / (2 * small_problem.A.nnz)


def test_vcycle_counter_matches_prediction(small_problem):
    h = setup(small_problem.A, SetupConfig.serial())
    c = FlopCounter()
    cfg = SolveConfig()
    vcycle(h, small_problem.b, np.zeros(len(small_problem.b)), cfg, c)
    n = h.top.nrows
    # one iteration of the driver minus its norm work equals one explicit cycle
    assert c.total == predicted_flops(h, cfg, 1) - 2 * n - 2 * n


def test_fresh_residual_and_monotone(desk_problem):
    h = setup(desk_problem.A, SetupConfig.serial())
    x, stats = richardson_solve(h, desk_problem.b)
    b = desk_problem.b
    assert stats.converged
    fresh = np.linalg.norm(b - spmv(desk_problem.A, x)) / np.linalg.norm(b)
    assert fresh <= 1e-10 and fresh == pytest.approx(stats.final_relative_residual)
    hist = np.asarray(stats.residual_history)
    assert np.count_nonzero(np.diff(hist) >= 0) <= 2


def test_order_of_magnitude_per_cycle(desk_problem):
    h = setup(desk_problem.A, SetupConfig())
    _, stats = richardson_solve(h, desk_problem.b)
    hist = np.asarray(stats.residual_history)
    factor = (hist[-1] / hist[0]) ** (1.0 / stats.iterations)
    assert factor < 0.1


def test_solve_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(rtol=0)
    with pytest.raises(ValueError):
        SolveConfig(down_smooths=1)
