"""EKF-SLAM, ideal EKF and invariant EKF-SLAM sharing one Kalman core.

Every filter carries a :class:`GaussianBelief` whose covariance lives in the
filter's own error coordinates: the additive error ``X - X_hat`` for the EKF
family, and the right-invariant linearized error for the IEKF.

The lower-level functions return beliefs; the filter classes additionally
return the linearized matrices so that audits can replay them.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from . import kernels
from .exceptions import NumericalFailure, SingularMeasurementError
from .liegroup import J, embed, exp3, extract, log2, log3, rot2, skew, wrap_angle
from .models import h_tilde_inverse, h_tilde_jacobian, innovation, measure, propagate2, propagate3
from .states import MODEL_CODES, MODEL_DIMS, SlamState2, SlamState3

LINEAR = "linear"
RIGHT_INVARIANT = "right-invariant"
SIGMA_INIT2 = 1e6


@dataclass(eq=False)
class GaussianBelief:
    state: object
    P: np.ndarray
    error_kind: str = LINEAR

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        if self.error_kind not in (LINEAR, RIGHT_INVARIANT):
            raise ValueError(f"unknown error kind {self.error_kind!r}")
        if self.P.shape != (self.state.dim, self.state.dim):
            raise ValueError(f"covariance shape {self.P.shape} does not match state dimension {self.state.dim}")

    @property
    def spatial(self):
        return isinstance(self.state, SlamState3)

    @property
    def pose_dim(self):
        return 6 if self.spatial else 3

    def pose_covariance(self):
        d = self.pose_dim
        return self.P[:d, :d]

    def copy(self):
        return GaussianBelief(self.state.copy(), self.P.copy(), self.error_kind)


@dataclass(eq=False)
class LinearizedSystem:
    """``F`` (n x n), noise columns ``G`` (n x q) and stacked ``H`` (m x n)."""

    F: np.ndarray
    G: np.ndarray
    H: np.ndarray = None


@dataclass(eq=False)
class InnovationBundle:
    z: np.ndarray
    S: np.ndarray
    K: np.ndarray


# ---------------------------------------------------------------------------
# Jacobians


def _model_of(measurements, default="relative"):
    models = {m.model for m in measurements}
    if len(models) > 1:
        raise ValueError(f"a stacked update needs a single measurement model, got {sorted(models)}")
    return models.pop() if models else default


def _propagation_ekf(est, v):
    n = est.dim
    F = np.eye(n)
    c = rot2(est.theta) @ J @ np.asarray(v, dtype=float)
    F[1:3, 0] = c
    G = np.zeros((n, 3))
    G[0, 0] = 1.0
    G[1:3, 1:3] = rot2(est.theta)
    return F, G


def _noise_columns_iekf2(est, v=None):
    """Noise columns of the invariant error propagation.

    The rotation column uses the predicted position ``x + R v``; with
    ``v=None`` the previous position is used instead, which is the noise
    restriction of ``adjoint2(embed(est))``.
    """
    n = est.dim
    G = np.zeros((n, 3))
    R = rot2(est.theta)
    x = est.x if v is None else est.x + R @ np.asarray(v, dtype=float)
    G[0, 0] = 1.0
    G[1:3, 0] = -J @ x
    G[3:, 0] = -(est.landmarks @ J.T).ravel()
    G[1:3, 1:3] = R
    return G


def _noise_columns_iekf3(est, v=None):
    n = est.dim
    G = np.zeros((n, 6))
    R = est.R
    x = est.x if v is None else est.x + R @ np.asarray(v, dtype=float)
    G[:3, :3] = R
    G[3:6, :3] = skew(x) @ R
    for k, p in enumerate(est.landmarks):
        G[6 + 3 * k : 9 + 3 * k, :3] = skew(p) @ R
    G[3:6, 3:6] = R
    return G


def _measurement_jacobian2(est, ids, model, invariant):
    H, ok = kernels.measurement_jacobian(
        est.theta, est.x, est.landmarks, est.slots(ids), MODEL_CODES[model], invariant
    )
    if not ok:
        raise SingularMeasurementError("bearing undefined at zero relative position")
    return H


def _measurement_jacobian3(est, ids):
    n = est.dim
    H = np.zeros((3 * len(ids), n))
    Rt = est.R.T
    for i, j in enumerate(est.slots(ids)):
        rows = slice(3 * i, 3 * i + 3)
        H[rows, 3:6] = -Rt
        H[rows, 6 + 3 * j : 9 + 3 * j] = Rt
    return H


def ekf_jacobians(est, v, visible=(), model="relative"):
    """Linear-error Jacobians of EKF-SLAM at ``est``."""
    F, G = _propagation_ekf(est, v)
    return LinearizedSystem(F, G, _measurement_jacobian2(est, list(visible), model, False))


def iekf_jacobians2(est, visible=(), v=None, model="relative"):
    """Invariant-error Jacobians; ``F`` is the identity.

    ``v`` selects the exact noise columns (rotation column at the predicted
    position). Leaving it out gives the adjoint restriction at ``est``.
    """
    return LinearizedSystem(
        np.eye(est.dim), _noise_columns_iekf2(est, v), _measurement_jacobian2(est, list(visible), model, True)
    )


def iekf_jacobians3(est, visible=(), v=None):
    return LinearizedSystem(np.eye(est.dim), _noise_columns_iekf3(est, v), _measurement_jacobian3(est, list(visible)))


# ---------------------------------------------------------------------------
# Kalman core


def stack_noise(R_n, n_meas, md):
    """Block-diagonal measurement covariance for ``n_meas`` stacked readings."""
    R_n = np.atleast_2d(np.asarray(R_n, dtype=float))
    if R_n.shape == (md, md):
        return np.kron(np.eye(n_meas), R_n)
    if R_n.shape == (n_meas * md, n_meas * md):
        return R_n
    raise ValueError(f"measurement covariance of shape {R_n.shape} fits neither one reading nor the stack")


def kalman_core(P_pred, H, R_n, z):
    """Gain and posterior covariance; returns ``(InnovationBundle, P_post)``.

    Raises :class:`NumericalFailure` when ``cond(S)`` exceeds the guard.
    """
    P_pred = np.ascontiguousarray(P_pred, dtype=float)
    H = np.ascontiguousarray(np.atleast_2d(H), dtype=float)
    z = np.ascontiguousarray(np.atleast_1d(z), dtype=float)
    if H.shape[0] == 0:
        n = P_pred.shape[0]
        return InnovationBundle(z[:0], np.zeros((0, 0)), np.zeros((n, 0))), P_pred.copy()
    R_n = np.ascontiguousarray(np.atleast_2d(R_n), dtype=float)
    _, P_post, K, S, cond = kernels.kalman_update(P_pred, H, R_n, z)
    if K.size == 0:
        raise NumericalFailure(cond)
    return InnovationBundle(z, S, K), P_post


# ---------------------------------------------------------------------------
# prediction


def _predict(belief, u, Q, lin=None):
    """Propagate ``belief``; Jacobians come from ``lin`` (defaults to the estimate)."""
    est = belief.state
    lin = est if lin is None else lin
    Q = np.asarray(Q, dtype=float)
    if belief.spatial:
        if belief.error_kind != RIGHT_INVARIANT:
            raise ValueError("only the invariant filter is available in 3D")
        G = _noise_columns_iekf3(lin, u.v)
        P = belief.P + G @ Q @ G.T
        P = 0.5 * (P + P.T)
        return GaussianBelief(propagate3(est, u), P, belief.error_kind), LinearizedSystem(np.eye(est.dim), G)
    P = np.ascontiguousarray(belief.P)
    if belief.error_kind == LINEAR:
        F, G = _propagation_ekf(lin, u.v)
        P = kernels.ekf_covariance_predict(P, np.ascontiguousarray(F[1:3, 0]))
    else:
        F = np.eye(est.dim)
        G = _noise_columns_iekf2(lin, u.v)
    P = kernels.add_process_noise(P, np.ascontiguousarray(G), np.ascontiguousarray(Q))
    return GaussianBelief(propagate2(est, u), P, belief.error_kind), LinearizedSystem(F, G)


def predict(belief, u, Q):
    """Deterministic propagation of the estimate and ``P <- F P F^T + G Q G^T``."""
    return _predict(belief, u, Q)[0]


# ---------------------------------------------------------------------------
# update


def retract2(xi, est):
    """``phi(xi, est) = exp(xi) * Psi(est)`` in closed form."""
    theta, cols = kernels.retract2(est.theta, np.ascontiguousarray(est.columns), np.ascontiguousarray(xi, dtype=float))
    return SlamState2.from_columns(theta, cols, est.ids)


def retract3(xi, est):
    return extract(exp3(xi) @ embed(est), est.ids, spatial=True)


def _stacked(measurements):
    return np.concatenate([m.value for m in measurements]) if measurements else np.zeros(0)


def _update(belief, measurements, R_n, lin=None):
    """Stacked update. Returns ``(belief, H, bundle)``.

    ``lin`` is the state at which ``H`` is evaluated; it must list the same
    landmarks in the same order as the estimate.
    """
    est = belief.state
    measurements = list(measurements)
    ids = [m.landmark_id for m in measurements]
    invariant = belief.error_kind == RIGHT_INVARIANT
    if belief.spatial:
        H = _measurement_jacobian3(est, ids)
        predicted = np.concatenate([measure(est, i) for i in ids]) if ids else np.zeros(0)
        z = _stacked(measurements) - predicted
        bundle, P = kalman_core(belief.P, H, stack_noise(R_n, len(ids), 3) if ids else R_n, z)
        new = retract3(bundle.K @ z, est) if ids else est
        return GaussianBelief(new, P, belief.error_kind), H, bundle
    model = _model_of(measurements)
    lin = est if lin is None else lin
    H = _measurement_jacobian2(lin, ids, model, invariant)
    if not ids:
        bundle, P = kalman_core(belief.P, H, None, np.zeros(0))
        return GaussianBelief(est, P, belief.error_kind), H, bundle
    predicted = kernels.predicted_measurements(est.theta, est.x, est.landmarks, est.slots(ids), MODEL_CODES[model])
    z = innovation(_stacked(measurements), predicted, model)
    bundle, P = kalman_core(belief.P, H, stack_noise(R_n, len(ids), MODEL_DIMS[model]), z)
    dx = bundle.K @ z
    if invariant:
        new = retract2(dx, est)
    else:
        new = SlamState2.from_vector(est.vector() + dx, est.ids)
    return GaussianBelief(new, P, belief.error_kind), H, bundle


def ekf_update(belief, measurements, R_n):
    """Additive update ``X_hat + K z``."""
    return _update(belief, measurements, R_n)[0]


def iekf_update2(belief, measurements, R_n):
    """Update through the retraction ``phi(K z, X_hat)``."""
    return _update(belief, measurements, R_n)[0]


def iekf_update3(belief, measurements, R_n):
    return _update(belief, measurements, R_n)[0]


# ---------------------------------------------------------------------------
# landmark initialisation


def augment(belief, measurements, sigma2=SIGMA_INIT2):
    """Append landmarks placed from their first reading, with a diffuse prior.

    The new block of ``P`` is ``sigma2 * I`` with zero cross-covariance.
    """
    measurements = list(measurements)
    if not measurements:
        return belief
    est = belief.state
    ids = [m.landmark_id for m in measurements]
    if belief.spatial:
        pos = [est.x + est.R @ np.asarray(m.value, dtype=float) for m in measurements]
        d = 3
    else:
        R = rot2(est.theta)
        pos = [est.x + R @ h_tilde_inverse(m.value, m.model) for m in measurements]
        d = 2
    new = est.with_landmarks(ids, np.array(pos))
    P = block_diag(belief.P, sigma2 * np.eye(d * len(ids)))
    return GaussianBelief(new, P, belief.error_kind)


def init_landmark(belief, measurement, R_n, sigma2=SIGMA_INIT2):
    """Augment with one landmark, then correlate it through its own reading."""
    return _update(augment(belief, [measurement], sigma2), [measurement], R_n)[0]


# ---------------------------------------------------------------------------
# errors


def right_invariant_error(truth, est):
    """``log(Psi(truth) Psi(est)^-1)`` over the landmarks held by ``est``."""
    truth = truth.subset(est.ids) if truth.ids != est.ids else truth
    if isinstance(est, SlamState3):
        return log3(embed(truth) @ embed(est).inverse())
    return log2(embed(truth) @ embed(est).inverse())


def linearized_invariant_error(truth, est):
    """First-order invariant error ``(dtheta, x - x_hat - dtheta J x_hat, ...)``."""
    truth = truth.subset(est.ids) if truth.ids != est.ids else truth
    dtheta = wrap_angle(truth.theta - est.theta)
    cols = truth.columns - est.columns - dtheta * (est.columns @ J.T)
    return np.concatenate(([dtheta], cols.ravel()))


def linear_error(truth, est):
    truth = truth.subset(est.ids) if truth.ids != est.ids else truth
    e = truth.vector() - est.vector()
    e[0] = wrap_angle(e[0])
    return e


# ---------------------------------------------------------------------------
# filter objects


class EKFSlam:
    """Standard EKF-SLAM with Jacobians at the current estimate."""

    name = "ekf"
    error_kind = LINEAR
    uses_truth = False

    def __init__(self, sigma_init2=SIGMA_INIT2):
        self.sigma_init2 = sigma_init2

    def initial_belief(self, state, P=None):
        P = np.zeros((state.dim, state.dim)) if P is None else P
        return GaussianBelief(state.copy(), P, self.error_kind)

    def linearization(self, belief, truth):
        return belief.state

    def _lin(self, belief, truth):
        lin = self.linearization(belief, truth)
        return lin if lin is belief.state else lin.subset(belief.state.ids)

    def predict(self, belief, u, Q, truth_prev=None):
        return _predict(belief, u, Q, self._lin(belief, truth_prev))

    def augment(self, belief, measurements):
        return augment(belief, measurements, self.sigma_init2)

    def update(self, belief, measurements, R_n, truth=None):
        return _update(belief, measurements, R_n, self._lin(belief, truth))


class IdealEKFSlam(EKFSlam):
    """EKF whose Jacobians are all evaluated on the true state."""

    name = "ideal-ekf"
    uses_truth = True

    def linearization(self, belief, truth):
        if truth is None:
            raise ValueError("the ideal EKF needs the true state")
        return truth


class InvariantEKFSlam(EKFSlam):
    name = "iekf"
    error_kind = RIGHT_INVARIANT


class InvariantEKFSlam3(InvariantEKFSlam):
    name = "iekf3"


FILTERS = {cls.name: cls for cls in (EKFSlam, InvariantEKFSlam, IdealEKFSlam)}


def make_filter(name, **kwargs):
    try:
        return FILTERS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown filter {name!r}; choose from {sorted(FILTERS)}") from None


def ideal_ekf_step(belief, truth_prev, truth, u, Q, measurements, R_n, flt=None):
    """One predict/augment/update cycle of the ideal EKF."""
    flt = flt or IdealEKFSlam()
    belief, _ = flt.predict(belief, u, Q, truth_prev)
    known = set(belief.state.ids)
    belief = flt.augment(belief, [m for m in measurements if m.landmark_id not in known])
    return flt.update(belief, measurements, R_n, truth)[0]
