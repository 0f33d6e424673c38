import mpmath as mp
import numpy as np
import pytest
from conftest import random_epoch, random_state

from fegut import _kernels
from fegut.errors import SingularGeometryError
from fegut.models import (
    ACC,
    CLOCK_BIAS,
    CLOCK_DRIFT,
    N_DYN,
    N_STATE,
    POS,
    TD,
    VEL,
    TransitionModel,
    assemble_H,
    doppler_model,
    make_state,
    measurement_blocks,
    measurement_variances,
    predict_state,
    process_noise_cov,
    pseudorange_model,
    transition_matrix,
    uwb_model,
    uwb_position,
    with_td,
)
from fegut.scene import EpochKind, NoiseSpec

# -- high-precision oracles -------------------------------------------------
DPS = 40


def _mp_norm(d):
    return mp.sqrt(sum(c * c for c in d))


def mp_pseudorange(x, sat):
    return _mp_norm([sat[i] - x[i] for i in range(3)]) + x[9]


def mp_doppler_frozen_los(x, sat, los_state):
    # line of sight evaluated at a fixed state: the model's gradient convention
    d = [mp.mpf(sat[i]) - mp.mpf(los_state[i]) for i in range(3)]
    rho = _mp_norm(d)
    return -sum(d[i] / rho * x[3 + i] for i in range(3)) + x[10]


def mp_doppler(x, sat):
    d = [sat[i] - x[i] for i in range(3)]
    rho = _mp_norm(d)
    return -sum(d[i] / rho * x[3 + i] for i in range(3)) + x[10]


def mp_uwb(x, anchor):
    td = x[11]
    back = [x[i] - x[3 + i] * td - x[6 + i] * td * td / 2 for i in range(3)]
    return _mp_norm([anchor[i] - back[i] for i in range(3)])


def mp_gradient(fun, x, h=mp.mpf("1e-15")):
    with mp.workdps(DPS):
        xm = [mp.mpf(float(v)) for v in x]
        grad = np.zeros(len(x))
        for i in range(len(x)):
            xp = list(xm)
            xn = list(xm)
            xp[i] += h
            xn[i] -= h
            grad[i] = float((fun(xp) - fun(xn)) / (2 * h))
        return grad


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1.0)


# -- state helpers ----------------------------------------------------------
def test_state_layout():
    x = make_state(r=[1, 2, 3], v=[4, 5, 6], a=[7, 8, 9], clock_bias=10, clock_drift=11, td=12)
    np.testing.assert_array_equal(x, np.arange(1, 13))
    assert N_STATE == 12 and N_DYN == 11 and TD == 11
    np.testing.assert_array_equal(with_td(x[:N_DYN], 0.5)[TD], 0.5)


# -- transition -------------------------------------------------------------
def test_transition_matches_mean_propagation():
    rng = np.random.default_rng(1)
    x = rng.normal(size=12)
    model = TransitionModel(0.37)
    np.testing.assert_allclose(transition_matrix(0.37) @ x, predict_state(x, model), atol=1e-15)
    np.testing.assert_allclose(transition_matrix(0.37, N_DYN) @ x[:N_DYN], predict_state(x, model)[:N_DYN])


def test_transition_composes():
    F = transition_matrix
    np.testing.assert_allclose(F(0.3) @ F(0.7), F(1.0), atol=1e-14)


def test_process_noise_is_integral_of_white_jerk():
    # Q = int_0^dt Phi(s) G q G^T Phi(s)^T ds evaluated numerically
    dt, q = 0.8, 0.3
    from scipy.integrate import quad_vec

    def integrand(s):
        phi = np.array([[1, s, s * s / 2], [0, 1, s], [0, 0, 1]])
        g = phi[:, 2:3]
        return q * (g @ g.T)

    Q_num, _ = quad_vec(integrand, 0.0, dt)
    Q = process_noise_cov(TransitionModel(dt, jerk_psd=q, clock_bias_psd=0, clock_drift_psd=0))
    np.testing.assert_allclose(Q[np.ix_([0, 3, 6], [0, 3, 6])], Q_num, rtol=1e-10)
    assert Q[0, 1] == 0.0  # axes are independent


def test_clock_noise_and_td_noise():
    m = TransitionModel(2.0, jerk_psd=0.0, clock_bias_psd=0.5, clock_drift_psd=0.1, td_psd=1e-6)
    Q = process_noise_cov(m)
    assert Q[CLOCK_BIAS, CLOCK_BIAS] == pytest.approx(0.5 * 2 + 0.1 * 8 / 3)
    assert Q[CLOCK_BIAS, CLOCK_DRIFT] == pytest.approx(0.1 * 2)
    assert Q[CLOCK_DRIFT, CLOCK_DRIFT] == pytest.approx(0.2)
    assert Q[TD, TD] == pytest.approx(2e-6)
    assert process_noise_cov(m, N_DYN).shape == (11, 11)
    assert np.all(np.linalg.eigvalsh(process_noise_cov(TransitionModel(0.1))) >= 0)


def test_transition_dim_checked():
    with pytest.raises(ValueError):
        transition_matrix(1.0, 9)


# -- measurement models -----------------------------------------------------
def test_pseudorange_gradient_against_high_precision_differences():
    rng = np.random.default_rng(2)
    for _ in range(10):
        x = random_state(rng)
        sat = x[POS] + rng.normal(size=3) * 1.5e7
        _, g = pseudorange_model(x, sat)
        fd = mp_gradient(lambda xm: mp_pseudorange(xm, sat), x)
        assert rel_err(g, fd) < 1e-6


def test_doppler_gradient_velocity_and_drift_blocks():
    rng = np.random.default_rng(3)
    for _ in range(10):
        x = random_state(rng)
        sat = x[POS] + rng.normal(size=3) * 1.5e7
        _, g = doppler_model(x, sat)
        fd = mp_gradient(lambda xm: mp_doppler_frozen_los(xm, sat, x), x)
        assert rel_err(g, fd) < 1e-6
        # the neglected position dependence is of order |v| / range
        full = mp_gradient(lambda xm: mp_doppler(xm, sat), x)
        assert np.max(np.abs(full[POS])) < 10 * np.linalg.norm(x[VEL]) / np.linalg.norm(sat - x[POS])


def test_uwb_gradient_against_high_precision_differences():
    rng = np.random.default_rng(4)
    for _ in range(10):
        x = random_state(rng)
        anchor = x[POS] + rng.normal(0, 40, 3)
        _, g = uwb_model(x, anchor)
        fd = mp_gradient(lambda xm: mp_uwb(xm, anchor), x)
        assert rel_err(g, fd) < 1e-6


def test_uwb_position_shift():
    x = make_state(r=[10, 0, 0], v=[5, 0, 0], a=[0, 2, 0], td=0.1)
    np.testing.assert_allclose(uwb_position(x), [10 - 0.5, -0.01, 0])


def test_uwb_jacobian_block_identities_exact():
    rng = np.random.default_rng(5)
    x = random_state(rng)
    ep = random_epoch(rng, x)
    _, H = assemble_H(x, ep)
    b = measurement_blocks(H, ep.n_sats)
    td = x[TD]
    assert np.array_equal(b["HUV"], -td * b["HUP"])
    assert np.array_equal(b["HUA"], (-0.5 * td * td) * b["HUP"])
    w = x[VEL] + x[ACC] * td
    np.testing.assert_allclose(b["HUT"], -(b["HUP"] @ w), rtol=1e-15)
    assert np.array_equal(b["HG"], b["HG_vel"])


def test_zero_motion_gives_zero_td_column():
    rng = np.random.default_rng(6)
    x = random_state(rng)
    x[VEL] = 0.0
    x[ACC] = 0.0
    _, H = assemble_H(x, random_epoch(rng, x))
    assert np.all(H[:, TD] == 0.0)


def test_assemble_matches_per_row_models():
    rng = np.random.default_rng(7)
    x = random_state(rng)
    ep = random_epoch(rng, x, n_sats=6, n_anchors=3)
    pred, H = assemble_H(x, ep)
    n = ep.n_sats
    for i in range(n):
        p, g = pseudorange_model(x, ep.sat_pos[i])
        assert pred[i] == pytest.approx(p, rel=1e-15)
        np.testing.assert_allclose(H[i], g, atol=1e-15)
        p, g = doppler_model(x, ep.sat_pos[i])
        assert pred[n + i] == pytest.approx(p, abs=1e-12)
        np.testing.assert_allclose(H[n + i], g, atol=1e-15)
    for j in range(3):
        p, g = uwb_model(x, ep.anchor_pos[j])
        assert pred[2 * n + j] == pytest.approx(p, rel=1e-14)
        np.testing.assert_allclose(H[2 * n + j], g, atol=1e-14)


def test_uwb_only_epoch_rows():
    rng = np.random.default_rng(8)
    x = random_state(rng)
    ep = random_epoch(rng, x, kind=EpochKind.UWB_ONLY)
    pred, H = assemble_H(x, ep)
    assert pred.shape == (4,) and H.shape == (4, 12)


def test_singular_range_detected():
    rng = np.random.default_rng(9)
    x = random_state(rng, td=0.0)
    ep = random_epoch(rng, x)
    ep.anchor_pos[0] = x[POS]
    with pytest.raises(SingularGeometryError):
        assemble_H(x, ep)
    with pytest.raises(SingularGeometryError):
        uwb_model(x, x[POS])


def test_measurement_variances_order():
    rng = np.random.default_rng(10)
    x = random_state(rng)
    ep = random_epoch(rng, x, n_sats=5, n_anchors=4)
    var = measurement_variances(ep, NoiseSpec(2.0, 0.1, 0.05))
    np.testing.assert_allclose(var, [4.0] * 5 + [0.01] * 5 + [0.0025] * 4)


# -- compiled and numpy kernels --------------------------------------------
@pytest.mark.skipif("cython" not in _kernels.BACKENDS, reason="compiled kernel not built")
def test_backends_agree_bitwise():
    rng = np.random.default_rng(12)
    for _ in range(50):
        x = random_state(rng)
        ep = random_epoch(rng, x, n_sats=int(rng.integers(0, 10)), n_anchors=int(rng.integers(0, 6)))
        a = _kernels.BACKENDS["python"].measurement_jacobian(x, ep.sat_pos, ep.anchor_pos)
        b = _kernels.BACKENDS["cython"].measurement_jacobian(x, ep.sat_pos, ep.anchor_pos)
        for u, v in zip(a, b):
            assert np.array_equal(u, v)


def test_backend_switching():
    prev = _kernels.use_backend("python")
    try:
        assert _kernels.backend_name() == "python"
        with pytest.raises(ValueError):
            _kernels.use_backend("fortran")
    finally:
        _kernels.use_backend(prev)
    assert _kernels.backend_name() == prev


def test_pure_python_selected_by_environment():
    import subprocess
    import sys

    out = subprocess.run(
        [sys.executable, "-c", "from fegut import _kernels; print(_kernels.backend_name())"],
        env={"FEGUT_PURE_PYTHON": "1", "PATH": ""}, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"
