import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tekf.apps import cl, tt
from tekf.audit import audit_report, cl_audit_trace, obs_audit, tt_audit_trace
from tekf.core import ContractViolation
from tekf.observability import (
    as_subspace,
    build_observability_matrix,
    is_forward_invariant,
    kernel_basis,
    kernel_in_measurement_kernel,
    mismatch_report,
    orthogonal_complement_within,
    principal_angles,
    subspace_contains,
    subspace_equal,
)


def test_build_single_block_is_measurement_jacobian():
    H = np.array([[1.0, 2.0, 3.0]])
    O = build_observability_matrix([], [H])
    assert np.array_equal(O.rows, H) and O.window == 0


def test_build_propagates_through_transition_chain():
    F = np.array([[1.0, 1.0], [0.0, 1.0]])
    H = np.array([[1.0, 0.0]])
    O = build_observability_matrix([F, F], [H, H, H])
    assert np.allclose(O.rows, [[1, 0], [1, 1], [1, 2]])


def test_build_handles_variable_and_empty_blocks():
    F = np.eye(2)
    O = build_observability_matrix([F, F], [np.zeros((0, 2)), np.eye(2), [[1.0, 1.0]]])
    assert O.rows.shape == (3, 2)
    assert O.block(0).shape == (0, 2) and O.block(2).shape == (1, 2)


def test_build_rejects_mismatched_lengths():
    with pytest.raises(ContractViolation):
        build_observability_matrix([np.eye(2)], [np.eye(2)])
    with pytest.raises(ContractViolation):
        build_observability_matrix([np.eye(3)], [np.eye(2), np.eye(2)])


def test_cl_block_matches_explicit_product():
    rng = np.random.default_rng(0)
    cfg = cl.ClNoiseConfig(detection_prob=1.0)
    model = cl.cl_model(2, cfg)
    data = cl.simulate_cl(2, 20, cfg, rng)
    Fs = [model.F(data.truth[k], data.true_inputs[k]) for k in range(20)]
    Hs = [np.zeros((0, 6))] + [model.H(data.truth[k + 1], ((0, 1), (1, 0))) for k in range(20)]
    O = build_observability_matrix(Fs, Hs)
    expected = Hs[5] @ Fs[4] @ Fs[3] @ Fs[2] @ Fs[1] @ Fs[0]
    assert np.linalg.norm(O.block(5) - expected) < 1e-12


def test_kernel_examples():
    K = kernel_basis(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
    assert K.dim == 1 and abs(abs(K.basis[2, 0]) - 1) < 1e-12
    assert kernel_basis(np.eye(3)).dim == 0
    assert kernel_basis(np.zeros((2, 3))).dim == 3
    assert kernel_basis(np.zeros((0, 4))).dim == 4


def test_kernel_respects_relative_tolerance():
    M = np.diag([1.0, 1e-10, 1.0])
    assert kernel_basis(M).dim == 1
    assert kernel_basis(M, tol=1e-12).dim == 0


def test_kernel_basis_is_orthonormal_and_annihilated():
    rng = np.random.default_rng(1)
    M = rng.normal(size=(4, 7))
    K = kernel_basis(M)
    assert K.dim == 3
    assert np.allclose(K.basis.T @ K.basis, np.eye(3), atol=1e-12)
    assert np.linalg.norm(M @ K.basis) < 1e-12


def test_containment_and_equality():
    e = np.eye(4)
    assert subspace_contains(e[:, :3], e[:, :2])
    assert not subspace_contains(e[:, :2], e[:, :3])
    assert subspace_equal(e[:, :2], e[:, :2] @ np.array([[1.0, 2.0], [3.0, -1.0]]))
    assert not subspace_equal(e[:, :2], e[:, 1:3])
    assert subspace_contains(e[:, :1], np.zeros((4, 0)))
    with pytest.raises(ContractViolation):
        subspace_contains(np.eye(3), np.eye(4)[:, :1])


def test_principal_angles_and_complement():
    a = np.array([[1.0], [0.0]])
    b = np.array([[1.0], [1.0]])
    assert principal_angles(a, b) == pytest.approx([np.pi / 4])
    comp = orthogonal_complement_within(np.eye(3), np.eye(3)[:, :1])
    assert comp.dim == 2 and subspace_equal(comp, np.eye(3)[:, 1:])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5))
def test_as_subspace_spans_input(seed, k):
    A = np.random.default_rng(seed).normal(size=(6, k))
    S = as_subspace(A)
    assert S.dim == k and subspace_contains(S, A, 1e-8)


def test_cl_nominal_kernel_is_translation_and_rotation():
    trace = cl_audit_trace("ekf", seed=2)
    N = cl.cl_unobservable_basis(trace.x_ref)
    K = trace.kernel(0, 36, "nominal")
    assert K.dim == 3 and subspace_equal(K, N, 1e-6)


def test_cl_ekf_mismatch_loses_rotation():
    trace = cl_audit_trace("ekf", seed=3)
    rep = mismatch_report(trace.window(0, 36, "nominal"), trace.window(0, 36, "estimator"))
    assert (rep.dim_nominal, rep.dim_estimator) == (3, 2)
    assert rep.lost_directions.dim == 1
    N = cl.cl_unobservable_basis(trace.x_ref)
    rot_dir = orthogonal_complement_within(N, N[:, :2]).basis[:, 0]
    assert abs(rot_dir @ rep.lost_directions.basis[:, 0]) > 1 - 1e-6
    # translation survives in the estimator kernel
    assert subspace_contains(trace.kernel(0, 36), N[:, :2], 1e-6)


@pytest.mark.parametrize("estimator", ["fej", "tekf1"])
def test_cl_structure_preserving_estimators_keep_dimension_three(estimator):
    rep = audit_report(cl_audit_trace(estimator, seed=4), 36)
    assert rep["dim_estimator"] == rep["dim_nominal"] == 3
    assert rep["lost_directions"] == 0


def test_tt_alternating_landmarks_fully_observable_nominally():
    rep = obs_audit("tt", seed=1, estimator="ekf")
    assert rep["dim_nominal"] == 0 and rep["dim_estimator"] == 0


def test_tt_single_landmark_kernel():
    trace = tt_audit_trace("ekf", seed=0, schedule="single")
    lm = tt.TtConfig().landmark_list()[0]
    K = trace.kernel(0, 12, "nominal")
    assert K.dim == 1
    assert subspace_equal(K, tt.tt_single_landmark_basis(trace.x_ref, lm), 1e-6)
    assert trace.kernel(0, 12).dim == 0


def test_tt_transformed_single_landmark_kernel_is_constant():
    cfg = tt.TtConfig()
    lm = cfg.landmark_list()[0]
    trace = tt_audit_trace("tekf1", seed=5, schedule="single")
    expected = np.r_[-cl.J @ lm.p_s, 1.0]
    for start in (0, 10, 20):
        K = trace.kernel(start, 12)
        assert K.dim == 1 and subspace_equal(K, expected, 1e-6)


def _nominal_cl_sequences(seed, steps=30, m=3):
    cfg = cl.ClNoiseConfig(detection_prob=0.5)
    model = cl.cl_model(m, cfg)
    data = cl.simulate_cl(m, steps, cfg, np.random.default_rng(seed))
    Fs = [model.F(data.truth[k], data.true_inputs[k]) for k in range(steps)]
    Hs = [np.zeros((0, 3 * m))]
    for k in range(steps):
        mm = cl.cl_measurement(data.measurements[k])
        Hs.append(model.H(data.truth[k + 1], mm.ctx) if mm.p else np.zeros((0, 3 * m)))
    return Fs, Hs


@pytest.mark.parametrize("seed", range(3))
def test_forward_invariance_and_measurement_containment(seed):
    Fs, Hs = _nominal_cl_sequences(seed)
    w = 12
    for k in range(0, len(Fs) - w - 1, 4):
        K_now = kernel_basis(build_observability_matrix(Fs[k:k + w], Hs[k:k + w + 1]))
        K_next = kernel_basis(build_observability_matrix(Fs[k + 1:k + w + 1], Hs[k + 1:k + w + 2]))
        assert is_forward_invariant(Fs[k], K_now, K_next, 1e-6)
        assert kernel_in_measurement_kernel(Hs[k], K_now, 1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_estimator_kernel_is_state_independent(seed):
    a = cl_audit_trace("ekf", seed=seed)
    b = cl_audit_trace("ekf", seed=seed + 100)
    Ka, Kb = a.kernel(0, 36), b.kernel(0, 36)
    assert Ka.dim == Kb.dim == 2
    assert subspace_equal(Ka, Kb, 1e-6)


def test_estimator_kernel_inside_nominal_kernel():
    for seed in range(3):
        trace = cl_audit_trace("ekf", seed=seed)
        assert subspace_contains(trace.kernel(0, 36, "nominal"), trace.kernel(0, 36), 1e-6)


def test_window_doubling_does_not_change_dimension():
    trace = cl_audit_trace("ekf", seed=6, steps=80)
    for which, dim in (("nominal", 3), ("estimator", 2)):
        assert trace.kernel(0, 36, which).dim == dim
        assert trace.kernel(0, 72, which).dim == dim


def test_window_past_end_is_rejected():
    trace = cl_audit_trace("ekf", seed=0, steps=10)
    with pytest.raises(ContractViolation):
        trace.window(0, 11)


def test_build_identity_chain_and_hand_product():
    O = build_observability_matrix([np.eye(2)], [np.eye(2), np.eye(2)])
    assert np.array_equal(O.rows, np.vstack([np.eye(2), np.eye(2)]))
    O = build_observability_matrix([np.array([[2.0]])], [np.array([[1.0]]), np.array([[1.0]])])
    assert np.array_equal(O.rows, [[1.0], [2.0]])


def test_kernel_of_rank_one_diagonal_spans_second_axis():
    K = kernel_basis(np.array([[1.0, 0.0], [0.0, 0.0]]))
    assert K.dim == 1 and subspace_equal(K, [[0.0], [1.0]])


def test_two_robot_nominal_kernel_has_dimension_three():
    Fs, Hs = _nominal_cl_sequences(0, steps=20, m=2)
    assert kernel_basis(build_observability_matrix(Fs, Hs)).dim == 3


@pytest.mark.parametrize("which", ["t1", "t2"])
def test_transformed_estimator_kernel_constant_across_seeds(which):
    kernels = [cl_audit_trace("tekf1", seed=s, transformation=which).kernel(0, 36) for s in range(3)]
    assert all(K.dim == 3 for K in kernels)
    assert all(subspace_equal(kernels[0], K, 1e-6) for K in kernels[1:])
