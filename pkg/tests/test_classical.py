import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from convframelet import classical
from convframelet.errors import InvalidArgumentError
from convframelet.framelets import MatrixFrame

finite = st.floats(-1e3, 1e3, allow_nan=False)


def soft_threshold_oracle(x, lam):
    return np.array([v - lam if v > lam else v + lam if v < -lam else 0.0 for v in x])


@given(x=hnp.arrays(np.float64, 20, elements=finite), lam=st.floats(0, 10))
def test_soft_threshold_matches_case_formula(x, lam):
    np.testing.assert_allclose(classical.soft_threshold(x, lam), soft_threshold_oracle(x, lam), atol=1e-12)


@given(x=hnp.arrays(np.float64, 20, elements=finite), y=hnp.arrays(np.float64, 20, elements=finite),
       lam=st.floats(0, 10))
def test_soft_threshold_is_nonexpansive(x, y, lam):
    tx, ty = classical.soft_threshold(x, lam), classical.soft_threshold(y, lam)
    assert np.linalg.norm(tx - ty) <= np.linalg.norm(x - y) + 1e-9
    assert np.all(np.abs(tx) <= np.abs(x))


def test_soft_threshold_rejects_negative():
    with pytest.raises(InvalidArgumentError):
        classical.soft_threshold(np.ones(3), -0.1)


@pytest.mark.parametrize("n,levels", [(8, 1), (64, 3), (256, 3), (40, 5)])
def test_haar_is_tight(n, levels):
    op = classical.UndecimatedHaar(n, levels)
    assert classical.tightness_residual(op) <= 1e-12


def test_haar_adjoint_matches_dense_transpose(rng):
    op = classical.UndecimatedHaar(16, 3)
    W = np.stack([op.analyze(e).ravel() for e in np.eye(16)], axis=1)
    c = rng.standard_normal((4, 16))
    np.testing.assert_allclose(op.adjoint(c), W.T @ c.ravel(), atol=1e-13)
    np.testing.assert_allclose(W.T @ W, np.eye(16), atol=1e-13)


def test_haar_first_detail_is_half_difference():
    f = np.arange(8.0) ** 2
    d1 = classical.UndecimatedHaar(8, 1).analyze(f)[0]
    np.testing.assert_allclose(d1, 0.5 * (f - np.roll(f, 1)))


def test_haar_argument_checks():
    with pytest.raises(InvalidArgumentError):
        classical.UndecimatedHaar(4, 3)
    with pytest.raises(InvalidArgumentError):
        classical.UndecimatedHaar(8, 1).analyze(np.zeros(7))


def test_non_tight_operator_refused(rng):
    op = MatrixFrame(rng.standard_normal((12, 6)))
    with pytest.raises(InvalidArgumentError):
        classical.frame_denoise(np.zeros(6), op, classical.DenoiseConfig())


@pytest.mark.parametrize("kwargs", [dict(mu=-0.1), dict(mu=1.5), dict(lam=0.0), dict(max_iters=0)])
def test_config_validation(kwargs):
    with pytest.raises(InvalidArgumentError):
        classical.DenoiseConfig(**kwargs)


def test_mu_one_returns_input():
    _, g = classical.piecewise_constant_signal()
    out, trace = classical.frame_denoise(g, classical.UndecimatedHaar(256), classical.DenoiseConfig(mu=1.0))
    np.testing.assert_array_equal(out, g)
    assert trace.iterations == 1


def test_threshold_free_limit_is_identity():
    _, g = classical.piecewise_constant_signal()
    out, trace = classical.frame_denoise(g, classical.UndecimatedHaar(256), classical.DenoiseConfig(mu=0.3),
                                         lam_zero=True)
    np.testing.assert_allclose(out, g, atol=1e-12)
    assert trace.residual[0] < 1e-12


def test_output_is_fixed_point_of_update():
    _, g = classical.piecewise_constant_signal()
    op = classical.UndecimatedHaar(256)
    cfg = classical.DenoiseConfig(mu=0.3, lam=0.02, max_iters=2000, stop_tol=1e-12)
    f, _ = classical.frame_denoise(g, op, cfg)
    update = cfg.mu * g + (1 - cfg.mu) * op.adjoint(classical.soft_threshold(op.analyze(f), cfg.lam))
    assert np.linalg.norm(update - f) <= 1e-10 * np.linalg.norm(f)


def test_regression_signal_frozen():
    clean, g = classical.piecewise_constant_signal(256, 0.1, 0)
    assert clean.shape == (256,)
    assert np.mean((g - clean) ** 2) == pytest.approx(0.01023796575210888, rel=1e-12)


def test_grid_search_frozen_values():
    clean, g = classical.piecewise_constant_signal()
    op = classical.UndecimatedHaar(256, 3)
    lam, mse, table = classical.grid_search(g, clean, op, np.linspace(0.005, 0.1, 20), mu=0.3)
    assert len(table) == 20
    assert lam == pytest.approx(0.02)
    assert mse == pytest.approx(0.004346253082231822, rel=1e-9)
    out, trace = classical.frame_denoise(g, op, classical.DenoiseConfig(0.3, lam))
    assert trace.iterations == 23
    assert float(np.sum(out)) == pytest.approx(60.38555107037206, rel=1e-9)
    assert trace.residual[-1] < 1e-5
