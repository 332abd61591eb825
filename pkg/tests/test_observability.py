import numpy as np
import pytest

from iekf_slam.exceptions import SingularCovarianceError
from iekf_slam.filters import EKFSlam, GaussianBelief, LINEAR, ekf_jacobians, iekf_jacobians2, linearized_invariant_error, right_invariant_error
from iekf_slam.liegroup import embed, rot2
from iekf_slam.observability import (
    ROTATION,
    TRANSLATION_X,
    AuditTrace,
    ShiftAuditor,
    ekf_inconsistency_residual,
    information_along_shift,
    kernel_residual,
    relative_residual,
    shifts_invariant,
    shifts_linear,
)
from iekf_slam.sim import SimConfig, generate_truth, run_filters, simulate_run
from iekf_slam.states import SlamState2

from conftest import random_state2


def global_motion(s, alpha, t):
    R = rot2(alpha)
    return SlamState2(s.theta + alpha, R @ s.x + t, s.landmarks @ R.T + t, s.ids)


def test_linear_shift_example():
    s = SlamState2(0.0, [1, 2], [[3, 4]])
    rot, tx, ty = shifts_linear(s)
    np.testing.assert_array_equal(rot.vector, [1, -2, 1, -4, 3])
    np.testing.assert_array_equal(tx.vector, [0, 1, 0, 1, 0])
    np.testing.assert_array_equal(ty.vector, [0, 0, 1, 0, 1])
    assert rot.kind == ROTATION and tx.kind == TRANSLATION_X


def test_linear_shifts_are_derivatives_of_global_motion(rng):
    eps = 1e-6
    for _ in range(20):
        s = random_state2(rng, 3)
        rot, tx, ty = shifts_linear(s)
        d_rot = (global_motion(s, eps, 0).vector() - global_motion(s, -eps, 0).vector()) / (2 * eps)
        d_tx = (global_motion(s, 0, [eps, 0]).vector() - s.vector()) / eps
        np.testing.assert_allclose(rot.vector, d_rot, atol=1e-8)
        np.testing.assert_allclose(tx.vector, d_tx, atol=1e-8)


def test_invariant_shifts_are_exact_errors_of_global_motion(rng):
    s = random_state2(rng, 3)
    rot, tx, ty = shifts_invariant(3)
    np.testing.assert_allclose(right_invariant_error(global_motion(s, 0.4, 0), s), 0.4 * rot.vector, atol=1e-12)
    t = np.array([0.7, -1.1])
    e = right_invariant_error(global_motion(s, 0, t), s)
    np.testing.assert_allclose(e, 0.7 * tx.vector - 1.1 * ty.vector, atol=1e-12)


def test_invariant_shifts_independent_of_estimate(rng):
    a, b = random_state2(rng, 2), random_state2(rng, 2)
    H_a = iekf_jacobians2(a, [0, 1]).H
    H_b = iekf_jacobians2(b, [0, 1]).H
    for s in shifts_invariant(2):
        assert np.abs(H_a @ s.vector).max() < 1e-12 and np.abs(H_b @ s.vector).max() < 1e-12
    assert not np.allclose(shifts_linear(a)[0].vector, shifts_linear(b)[0].vector)


def test_shifts_3d():
    shifts = shifts_invariant(2, spatial=True)
    assert len(shifts) == 6 and all(s.vector.size == 12 for s in shifts)
    np.testing.assert_array_equal(shifts[3].vector, [0, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0])


def test_coordinate_change_maps_linear_to_invariant_shifts(rng):
    # first-order map from linear to invariant error coordinates at the estimate
    s = random_state2(rng, 3)
    eps = 1e-6
    T = np.column_stack([
        linearized_invariant_error(SlamState2.from_vector(s.vector() + eps * e), s) / eps for e in np.eye(s.dim)
    ])
    for lin, inv in zip(shifts_linear(s), shifts_invariant(3)):
        np.testing.assert_allclose(T @ lin.vector, inv.vector, atol=1e-6)


def test_relative_residual():
    assert relative_residual(np.zeros((0, 3)), [1, 0, 0]) == 0.0
    assert relative_residual(np.eye(3)[:2], [0, 0, 1]) == 0.0
    assert relative_residual([[1.0, 0.0]], [1.0, 0.0]) == pytest.approx(1.0)


def test_kernel_residual_dimension_mismatch():
    with pytest.raises(ValueError):
        kernel_residual([(np.eye(3), np.eye(3))], np.ones(5))


def test_ekf_shifts_follow_truth_exactly():
    # linearized at the true states and true increments, the EKF
    # propagation carries the shift at one state onto the shift at the next
    cfg = SimConfig()
    truth = generate_truth(cfg)
    systems = []
    for n in range(40):
        F = ekf_jacobians(truth.states[n], truth.odometry[n].v).F
        ids = list(range(cfg.n_landmarks))
        H = ekf_jacobians(truth.states[n + 1], np.zeros(2), ids).H
        systems.append((F, H))
    for shift in shifts_linear(truth.states[0]):
        assert kernel_residual(systems, shift).max() < 1e-13


@pytest.fixture(scope="module")
def audited_run():
    cfg = SimConfig(n_loops=2)
    return run_filters(simulate_run(cfg, 3), cfg)


def test_iekf_kernel_residual_exactly_zero(audited_run):
    assert np.max(audited_run["iekf"].audit.arrays()["kernel"]) <= 1e-12


def test_ekf_kernel_residual_nonzero(audited_run):
    k = audited_run["ekf"].audit.arrays()["kernel"]
    assert k[:, 0].max() > 1e-4
    # translations stay in the kernel whatever the estimate
    assert k[:, 1:].max() <= 1e-12


def test_iekf_information_nonincreasing(audited_run):
    assert audited_run["iekf"].audit.information_nonincreasing()


def test_ekf_gains_spurious_rotation_information(audited_run):
    a = audited_run["ekf"].audit.arrays()
    prev, nxt = a["info_aug"][:, 0], a["info_post"][:, 0]
    finite = np.isfinite(prev) & np.isfinite(nxt)
    assert np.max(nxt[finite] / prev[finite]) > 1.01


def test_information_along_shift_examples():
    assert information_along_shift(np.eye(3), [1, 2, 2]) == pytest.approx(9.0)
    assert information_along_shift(np.diag([4.0, 1.0]), [2, 0]) == pytest.approx(1.0)
    with pytest.raises(SingularCovarianceError):
        information_along_shift(np.diag([1.0, 0.0]), [1, 0])


def test_information_matches_inverse(rng):
    A = rng.standard_normal((5, 5))
    P = A @ A.T + 0.1 * np.eye(5)
    s = rng.standard_normal(5)
    assert information_along_shift(P, s) == pytest.approx(s @ np.linalg.solve(P, s), rel=1e-10)


def test_information_margin():
    t = AuditTrace(("a",))
    t.info_prior = [[2.0]]
    t.info_pred = [[1.0]]
    t.info_aug = [[1.0]]
    t.info_post = [[1.5]]
    assert t.information_margin() == pytest.approx(1.5)
    assert not t.information_nonincreasing()
    t.info_post = [[np.inf]]
    assert t.information_margin() == np.inf
    t.info_aug = [[np.inf]]
    assert t.information_nonincreasing()


def test_inconsistency_residual_zero_without_updates(rng):
    s = random_state2(rng, 0)
    history = []
    for k in range(5):
        prior = SlamState2(s.theta, s.x + k, np.ones((1, 2)))
        history.append((prior, prior))
    for r in ekf_inconsistency_residual(history):
        assert np.array_equal(r, np.zeros_like(r))


def test_inconsistency_residual_example():
    p = np.array([[5.0, 0.0]])
    prior1 = SlamState2(0.0, [0.0, 0.0], p)
    post1 = SlamState2(0.0, [0.1, 0.0], p + [0.2, 0.0])
    prior2 = SlamState2(0.0, [1.1, 0.0], p + [0.2, 0.0])
    r = ekf_inconsistency_residual([(prior1, post1), (prior2, prior2)])
    np.testing.assert_allclose(r[1], [[-0.2 + 0.1, 0.0]])


def test_streaming_residual_matches_batch():
    cfg = SimConfig(n_loops=1)
    data = simulate_run(cfg, 11)
    flt = EKFSlam()
    Q, R_n = cfg.process_noise(), cfg.measurement_noise()
    belief = flt.initial_belief(SlamState2(0.0, [0.0, 0.0]))
    auditor = ShiftAuditor(belief, invariant=False)
    history = []
    for step in range(data.n_steps):
        belief, sys = flt.predict(belief, data.odometry[step], Q)
        auditor.on_predict(sys.F, belief.P)
        meas = data.measurements[step]
        new = [m for m in meas if m.landmark_id not in belief.state.ids]
        belief = flt.augment(belief, new)
        auditor.on_augment(belief, [m.landmark_id for m in new])
        prior = belief.state
        belief, H, _ = flt.update(belief, meas, R_n)
        auditor.on_update(H, belief)
        history.append((prior, belief.state))
    batch = [float(np.linalg.norm(r, axis=1).max()) for r in ekf_inconsistency_residual(history)]
    np.testing.assert_allclose(auditor.trace.ekf_residual, batch, atol=1e-12)
    assert max(batch) > 0


def test_auditor_rejects_linear_3d(rng):
    from conftest import random_state3

    s = random_state3(rng, 1)
    with pytest.raises(ValueError):
        ShiftAuditor(GaussianBelief(s, np.eye(9), "right-invariant"), invariant=False)
