"""Process and landmark-measurement models in 2D and 3D."""

import numpy as np

from .exceptions import SingularMeasurementError
from .liegroup import rot2, so3_exp, wrap_angle
from .states import SlamState2, SlamState3


def propagate2(state, u, w=None):
    """Unicycle step: heading += omega + w_omega, x += R(theta_prev)(v + w_v).

    ``w`` is ``(w_omega, w_vx, w_vy)`` or None for the deterministic part.
    """
    if w is None:
        dtheta, dv = u.omega, u.v
    else:
        w = np.asarray(w, dtype=float)
        dtheta, dv = u.omega + w[0], u.v + w[1:3]
    x = state.x + rot2(state.theta) @ dv
    return SlamState2(state.theta + dtheta, x, state.landmarks, state.ids)


def propagate3(state, u, w=None):
    """R <- R exp([w_omega]x) Omega, x <- x + R_prev (v + w_v)."""
    if w is None:
        R = state.R @ u.Omega
        dv = u.v
    else:
        w = np.asarray(w, dtype=float)
        R = state.R @ so3_exp(w[:3]) @ u.Omega
        dv = u.v + w[3:6]
    return SlamState3(R, state.x + state.R @ dv, state.landmarks, state.ids)


def body_frame(state, landmark_id):
    """Landmark position expressed in the robot frame, ``R^T (p - x)``."""
    p = state.landmark(landmark_id)
    if isinstance(state, SlamState3):
        return state.R.T @ (p - state.x)
    return rot2(state.theta).T @ (p - state.x)


def h_tilde(y, model="relative"):
    y = np.asarray(y, dtype=float)
    if model == "relative":
        return y.copy()
    if model == "range-bearing":
        return np.array([np.hypot(y[0], y[1]), np.arctan2(y[1], y[0])])
    if model == "bearing":
        return np.array([np.arctan2(y[1], y[0])])
    raise ValueError(f"unknown measurement model {model!r}")


def h_tilde_jacobian(y, model="relative"):
    y = np.asarray(y, dtype=float)
    if model == "relative":
        return np.eye(y.size)
    r2 = y[0] ** 2 + y[1] ** 2
    if r2 == 0.0:
        raise SingularMeasurementError("bearing undefined at zero relative position")
    if model == "range-bearing":
        r = np.sqrt(r2)
        return np.array([[y[0] / r, y[1] / r], [-y[1] / r2, y[0] / r2]])
    if model == "bearing":
        return np.array([[-y[1] / r2, y[0] / r2]])
    raise ValueError(f"unknown measurement model {model!r}")


def h_tilde_inverse(value, model="relative"):
    """Robot-frame position from a measurement value (used for initialisation)."""
    value = np.asarray(value, dtype=float)
    if model == "relative":
        return value.copy()
    if model == "range-bearing":
        r, b = value
        return np.array([r * np.cos(b), r * np.sin(b)])
    raise ValueError(f"measurement model {model!r} cannot initialise a landmark")


def measure(state, landmark_id, model="relative"):
    value = h_tilde(body_frame(state, landmark_id), model)
    if model in ("range-bearing", "bearing"):
        value[-1] = wrap_angle(value[-1])
    return value


def measure_gradient(state, landmark_id, model="relative"):
    """Jacobian of ``h_tilde`` at the body-frame landmark position."""
    return h_tilde_jacobian(body_frame(state, landmark_id), model)


def innovation(measured, predicted, model="relative"):
    """``measured - predicted`` with bearing components taken on the short arc."""
    z = np.asarray(measured, dtype=float) - np.asarray(predicted, dtype=float)
    if model == "range-bearing":
        z = z.reshape(-1, 2).copy()
        z[:, 1] = wrap_angle(z[:, 1])
        return z.ravel()
    if model == "bearing":
        return np.atleast_1d(wrap_angle(z))
    return z


def process_noise2(sigma_omega, sigma_v, sigma_v_lateral=0.0, dt=1.0):
    """3x3 covariance of ``(w_omega, w_v)`` for one step of length ``dt``."""
    return np.diag([sigma_omega**2 * dt, sigma_v**2 * dt, sigma_v_lateral**2 * dt])


def embed_process_noise(Q, K, spatial=False):
    """Full-state-dimension noise covariance with a zero landmark block."""
    q = Q.shape[0]
    n = (6 + 3 * K) if spatial else (3 + 2 * K)
    out = np.zeros((n, n))
    out[:q, :q] = Q
    return out

