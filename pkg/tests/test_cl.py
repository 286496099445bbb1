import numpy as np
import pytest

from tekf.apps import cl
from tekf.core import ContractViolation
from tekf.observability import build_observability_matrix


def test_relative_position_examples():
    model = cl.cl_model(2, cl.ClNoiseConfig())
    x = np.array([0.0, 0.0, 0.0, 1.0, 2.0, 0.3])
    assert np.allclose(model.h(x, ((0, 1),)), [1.0, 2.0])
    x[2] = np.pi / 2
    assert np.allclose(model.h(x, ((0, 1),)), [2.0, -1.0])
    assert np.allclose(model.h(x, ((1, 0),)), cl.rot(0.3).T @ [-1.0, -2.0])


def test_anchor_target_uses_known_position():
    model = cl.cl_model(2, cl.ClNoiseConfig())
    x = np.array([1.0, 1.0, 0.0, 5.0, 5.0, 0.0])
    assert np.allclose(model.h(x, ((0, np.array([4.0, 1.0])),)), [3.0, 0.0])
    H = model.H(x, ((0, np.array([4.0, 1.0])),))
    assert np.all(H[:, 3:] == 0.0)


def test_config_validation():
    with pytest.raises(ContractViolation):
        cl.ClNoiseConfig(detection_prob=1.5)
    with pytest.raises(ContractViolation):
        cl.ClNoiseConfig(dt=0.0)
    with pytest.raises(ContractViolation):
        cl.ClNoiseConfig(sigma_v=-1.0)
    with pytest.raises(ContractViolation):
        cl.cl_model(1, cl.ClNoiseConfig())


def test_fleet_state_roundtrip_wraps_heading():
    fs = cl.FleetState.from_vector([1.0, 2.0, 4 * np.pi + 0.1, 0.0, 0.0, -0.2])
    assert fs.m == 2
    assert np.allclose(fs.to_vector(), [1.0, 2.0, 0.1, 0.0, 0.0, -0.2])


def test_unobservable_basis_annihilated_by_measurements_and_propagates():
    rng = np.random.default_rng(0)
    cfg = cl.ClNoiseConfig(detection_prob=1.0)
    model = cl.cl_model(3, cfg)
    data = cl.simulate_cl(3, 15, cfg, rng)
    Fs = [model.F(data.truth[k], data.true_inputs[k]) for k in range(15)]
    Hs = [np.zeros((0, 9))] + [model.H(data.truth[k + 1], cl.cl_measurement(data.measurements[k]).ctx)
                               for k in range(15)]
    O = build_observability_matrix(Fs, Hs)
    assert np.linalg.norm(O.rows @ cl.cl_unobservable_basis(data.truth[0])) < 1e-9


@pytest.mark.parametrize("which", ["t1", "t2"])
def test_closed_form_special_cases(which):
    x = np.array([1.0, 0.0, 0.2, -2.0, 3.0, 1.0])
    # translation-only correction moves every position by the same amount
    e = np.zeros(6)
    e[:2] = [0.5, -0.25]
    if which == "t2":
        e[3:5] = [0.5, -0.25]
    out = cl.cl_exact_update_closed_form(x, e, which)
    assert np.allclose(out[[0, 1, 3, 4]] - x[[0, 1, 3, 4]], [0.5, -0.25, 0.5, -0.25])
    assert np.allclose(out[[2, 5]], x[[2, 5]])


def test_closed_form_rejects_unknown_transform():
    with pytest.raises(ContractViolation):
        cl.cl_exact_update_closed_form(np.zeros(6), np.zeros(6), "t9")


def test_simulation_shapes_and_determinism():
    cfg = cl.ClNoiseConfig()
    a = cl.simulate_cl(4, 25, cfg, np.random.default_rng(7))
    b = cl.simulate_cl(4, 25, cfg, np.random.default_rng(7))
    assert a.truth.shape == (26, 12) and a.odometry.shape == (25, 12) and len(a.measurements) == 25
    assert np.array_equal(a.truth, b.truth) and np.array_equal(a.odometry, b.odometry)
    for step in a.measurements:
        for mm in step:
            assert mm.observer != mm.target and mm.R.shape == (2, 2)


def test_detection_rate_matches_probability():
    cfg = cl.ClNoiseConfig(detection_prob=0.2)
    data = cl.simulate_cl(5, 400, cfg, np.random.default_rng(1))
    rate = sum(len(s) for s in data.measurements) / (400 * 20)
    assert abs(rate - 0.2) < 0.02


def test_noise_free_simulation_has_exact_measurements():
    cfg = cl.ClNoiseConfig(sigma_v=0.0, sigma_omega=0.0, sigma_z=0.0, detection_prob=1.0)
    model = cl.cl_model(3, cfg)
    data = cl.simulate_cl(3, 10, cfg, np.random.default_rng(2))
    assert np.array_equal(data.odometry, data.true_inputs)
    mm = cl.cl_measurement(data.measurements[-1])
    assert np.allclose(mm.y, model.h(data.truth[-1], mm.ctx))


def test_quarter_turn_observer_example():
    model = cl.cl_model(2, cl.ClNoiseConfig())
    x = np.array([2.0, 3.0, np.pi / 2, 2.0, 4.0, 0.0])
    assert np.allclose(model.h(x, ((0, 1),)), [1.0, 0.0])
    assert np.allclose(model.h(np.array([0, 0, 0, 1.0, 0, 0]), ((0, 1),)), [1.0, 0.0])


def test_basis_at_origin_is_pure_translation_and_heading():
    N = cl.cl_unobservable_basis(np.zeros(9))
    assert np.array_equal(N[:, :2], np.tile(np.r_[np.eye(2), np.zeros((1, 2))], (3, 1)))
    assert np.array_equal(N[:, 2], np.tile([0.0, 0.0, 1.0], 3))


def test_t2_is_identity_at_origin():
    assert np.array_equal(cl.cl_transform_t2().T(np.zeros(9)), np.eye(9))
