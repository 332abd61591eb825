"""Per-step numeric kernels used by the 2D filters.

Each kernel exists twice: a vectorised numpy version and an explicit-loop
version compiled with ``numba.njit``. The active pair is chosen once at import
from the ``IEKF_SLAM_BACKEND`` environment variable (``numba`` by default,
``numpy`` to force the fallback). Both namespaces stay importable as
:data:`numpy_impl` and :data:`numba_impl` so they can be compared directly.

Kernels never raise; failures are reported through return flags and turned
into exceptions by the callers.
"""

from types import SimpleNamespace

import numpy as np

from ._backend import BACKEND, HAVE_NUMBA

RELATIVE, RANGE_BEARING, BEARING = 0, 1, 2
MEAS_DIM = (2, 2, 1)

SERIES_THRESHOLD = 1e-4
CONDITION_GUARD = 1e12
# Cholesky pivot^2 relative to the largest variance below which P is singular.
SINGULAR_PIVOT_RATIO = 1e-13


def _b_coeffs(a):
    """``(sin a / a, (1 - cos a) / a)`` with a series branch near zero."""
    if abs(a) < SERIES_THRESHOLD:
        a2 = a * a
        return 1.0 - a2 / 6.0 + a2 * a2 / 120.0, a * (0.5 - a2 / 24.0 + a2 * a2 / 720.0)
    return np.sin(a) / a, (1.0 - np.cos(a)) / a


# ---------------------------------------------------------------------------
# numpy implementations


def _np_retract2(theta, cols, xi):
    a = xi[0]
    c, s = np.cos(a), np.sin(a)
    sb, cb = _b_coeffs(a)
    rot = np.array([[c, -s], [s, c]])
    bmat = np.array([[sb, -cb], [cb, sb]])
    u = xi[1:].reshape(-1, 2)
    return theta + a, cols @ rot.T + u @ bmat.T


def _np_body_frame(theta, x, landmarks, slots):
    c, s = np.cos(theta), np.sin(theta)
    d = landmarks[slots] - x
    return c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]


def _np_predicted_measurements(theta, x, landmarks, slots, model):
    y0, y1 = _np_body_frame(theta, x, landmarks, slots)
    if model == RELATIVE:
        return np.column_stack((y0, y1)).ravel()
    if model == RANGE_BEARING:
        return np.column_stack((np.hypot(y0, y1), np.arctan2(y1, y0))).ravel()
    return np.arctan2(y1, y0)


def _np_measurement_jacobian(theta, x, landmarks, slots, model, invariant):
    n = 3 + 2 * landmarks.shape[0]
    md = MEAS_DIM[model]
    m = len(slots)
    H = np.zeros((m * md, n))
    if m == 0:
        return H, True
    y0, y1 = _np_body_frame(theta, x, landmarks, slots)
    r2 = y0 * y0 + y1 * y1
    if model != RELATIVE and np.any(r2 == 0.0):
        return H, False
    # Dh has shape (m, md, 2)
    if model == RELATIVE:
        Dh = np.broadcast_to(np.eye(2), (m, 2, 2))
    elif model == RANGE_BEARING:
        r = np.sqrt(r2)
        Dh = np.stack(
            (np.column_stack((y0 / r, y1 / r)), np.column_stack((-y1 / r2, y0 / r2))), axis=1
        )
    else:
        Dh = np.column_stack((-y1 / r2, y0 / r2))[:, None, :]
    c, s = np.cos(theta), np.sin(theta)
    rt = np.array([[c, s], [-s, c]])
    M = Dh @ rt
    rows = np.arange(m * md).reshape(m, md)
    H[:, 1:3] = -M.reshape(m * md, 2)
    for i, j in enumerate(slots):
        H[rows[i], 3 + 2 * j : 5 + 2 * j] = M[i]
    if not invariant:
        # d/dtheta of R(theta)^T d is -J y
        H[:, 0] = (Dh @ np.column_stack((y1, -y0))[:, :, None]).reshape(m * md)
    return H, True


def _np_add_process_noise(P, Gc, Q):
    out = P + Gc @ Q @ Gc.T
    return 0.5 * (out + out.T)


def _np_ekf_covariance_predict(P, c):
    out = P.copy()
    out[1:3, :] += np.outer(c, P[0, :])
    out[:, 1:3] += np.outer(out[:, 0], c)
    return 0.5 * (out + out.T)


def _np_kalman_update(P, H, Rn, z):
    S = H @ P @ H.T + Rn
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > CONDITION_GUARD:
        return np.zeros(0), np.zeros((0, 0)), np.zeros((0, 0)), S, cond
    K = np.linalg.solve(S, H @ P).T
    n = P.shape[0]
    P_post = (np.eye(n) - K @ H) @ P
    return K @ z, 0.5 * (P_post + P_post.T), K, S, cond


def _np_shift_information(P, shifts):
    out = np.full(shifts.shape[0], np.inf)
    scale = np.max(np.diag(P)) if P.size else 0.0
    if scale <= 0.0:
        return out
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        return out
    if np.min(np.diag(L)) ** 2 <= SINGULAR_PIVOT_RATIO * scale:
        return out
    w = np.linalg.solve(L, shifts.T)
    return np.sum(w * w, axis=0)


numpy_impl = SimpleNamespace(
    retract2=_np_retract2,
    predicted_measurements=_np_predicted_measurements,
    measurement_jacobian=_np_measurement_jacobian,
    add_process_noise=_np_add_process_noise,
    ekf_covariance_predict=_np_ekf_covariance_predict,
    kalman_update=_np_kalman_update,
    shift_information=_np_shift_information,
)


# ---------------------------------------------------------------------------
# loop implementations (compiled with numba)


def _lp_retract2(theta, cols, xi):
    a = xi[0]
    c, s = np.cos(a), np.sin(a)
    if abs(a) < SERIES_THRESHOLD:
        a2 = a * a
        sb = 1.0 - a2 / 6.0 + a2 * a2 / 120.0
        cb = a * (0.5 - a2 / 24.0 + a2 * a2 / 720.0)
    else:
        sb = np.sin(a) / a
        cb = (1.0 - np.cos(a)) / a
    out = np.empty_like(cols)
    for k in range(cols.shape[0]):
        u0 = xi[1 + 2 * k]
        u1 = xi[2 + 2 * k]
        out[k, 0] = c * cols[k, 0] - s * cols[k, 1] + sb * u0 - cb * u1
        out[k, 1] = s * cols[k, 0] + c * cols[k, 1] + cb * u0 + sb * u1
    return theta + a, out


def _lp_predicted_measurements(theta, x, landmarks, slots, model):
    m = slots.shape[0]
    md = 1 if model == BEARING else 2
    out = np.empty(m * md)
    c, s = np.cos(theta), np.sin(theta)
    for i in range(m):
        d0 = landmarks[slots[i], 0] - x[0]
        d1 = landmarks[slots[i], 1] - x[1]
        y0 = c * d0 + s * d1
        y1 = -s * d0 + c * d1
        if model == RELATIVE:
            out[2 * i] = y0
            out[2 * i + 1] = y1
        elif model == RANGE_BEARING:
            out[2 * i] = np.sqrt(y0 * y0 + y1 * y1)
            out[2 * i + 1] = np.arctan2(y1, y0)
        else:
            out[i] = np.arctan2(y1, y0)
    return out


def _lp_measurement_jacobian(theta, x, landmarks, slots, model, invariant):
    n = 3 + 2 * landmarks.shape[0]
    m = slots.shape[0]
    md = 1 if model == BEARING else 2
    H = np.zeros((m * md, n))
    c, s = np.cos(theta), np.sin(theta)
    dh = np.zeros((2, 2))
    for i in range(m):
        j = slots[i]
        d0 = landmarks[j, 0] - x[0]
        d1 = landmarks[j, 1] - x[1]
        y0 = c * d0 + s * d1
        y1 = -s * d0 + c * d1
        r2 = y0 * y0 + y1 * y1
        if model == RELATIVE:
            dh[0, 0] = 1.0
            dh[0, 1] = 0.0
            dh[1, 0] = 0.0
            dh[1, 1] = 1.0
        else:
            if r2 == 0.0:
                return H, False
            if model == RANGE_BEARING:
                r = np.sqrt(r2)
                dh[0, 0] = y0 / r
                dh[0, 1] = y1 / r
                dh[1, 0] = -y1 / r2
                dh[1, 1] = y0 / r2
            else:
                dh[0, 0] = -y1 / r2
                dh[0, 1] = y0 / r2
        for a in range(md):
            row = i * md + a
            # row a of dh @ R^T, R^T = [[c, s], [-s, c]]
            m0 = dh[a, 0] * c - dh[a, 1] * s
            m1 = dh[a, 0] * s + dh[a, 1] * c
            H[row, 1] = -m0
            H[row, 2] = -m1
            H[row, 3 + 2 * j] = m0
            H[row, 4 + 2 * j] = m1
            if not invariant:
                H[row, 0] = dh[a, 0] * y1 - dh[a, 1] * y0
    return H, True


def _lp_add_process_noise(P, Gc, Q):
    n = P.shape[0]
    T = np.zeros((n, 3))
    for i in range(n):
        for b in range(3):
            acc = 0.0
            for a in range(3):
                acc += Gc[i, a] * Q[a, b]
            T[i, b] = acc
    out = np.empty_like(P)
    for i in range(n):
        for j in range(i, n):
            acc = 0.0
            for b in range(3):
                acc += T[i, b] * Gc[j, b]
            v = 0.5 * ((P[i, j] + acc) + (P[j, i] + acc))
            out[i, j] = v
            out[j, i] = v
    return out


def _lp_ekf_covariance_predict(P, c):
    n = P.shape[0]
    out = P.copy()
    for j in range(n):
        out[1, j] += c[0] * P[0, j]
        out[2, j] += c[1] * P[0, j]
    for i in range(n):
        out[i, 1] += out[i, 0] * c[0]
        out[i, 2] += out[i, 0] * c[1]
    for i in range(n):
        for j in range(i + 1, n):
            v = 0.5 * (out[i, j] + out[j, i])
            out[i, j] = v
            out[j, i] = v
    return out


def _lp_kalman_update(P, H, Rn, z):
    HP = H @ P
    S = HP @ H.T + Rn
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > CONDITION_GUARD:
        return np.zeros(0), np.zeros((0, 0)), np.zeros((0, 0)), S, cond
    K = np.linalg.solve(S, HP).T.copy()
    n = P.shape[0]
    IKH = np.eye(n) - K @ H
    P_post = IKH @ P
    for i in range(n):
        for j in range(i + 1, n):
            v = 0.5 * (P_post[i, j] + P_post[j, i])
            P_post[i, j] = v
            P_post[j, i] = v
    return K @ z, P_post, K, S, cond


def _lp_shift_information(P, shifts):
    n = P.shape[0]
    k = shifts.shape[0]
    out = np.full(k, np.inf)
    scale = 0.0
    for i in range(n):
        if P[i, i] > scale:
            scale = P[i, i]
    if scale <= 0.0:
        return out
    L = np.zeros((n, n))
    for j in range(n):
        acc = P[j, j]
        for q in range(j):
            acc -= L[j, q] * L[j, q]
        if acc <= SINGULAR_PIVOT_RATIO * scale:
            return out
        d = np.sqrt(acc)
        L[j, j] = d
        for i in range(j + 1, n):
            acc = P[i, j]
            for q in range(j):
                acc -= L[i, q] * L[j, q]
            L[i, j] = acc / d
    for r in range(k):
        w = np.zeros(n)
        total = 0.0
        for i in range(n):
            acc = shifts[r, i]
            for q in range(i):
                acc -= L[i, q] * w[q]
            w[i] = acc / L[i, i]
            total += w[i] * w[i]
        out[r] = total
    return out


loop_impl = SimpleNamespace(
    retract2=_lp_retract2,
    predicted_measurements=_lp_predicted_measurements,
    measurement_jacobian=_lp_measurement_jacobian,
    add_process_noise=_lp_add_process_noise,
    ekf_covariance_predict=_lp_ekf_covariance_predict,
    kalman_update=_lp_kalman_update,
    shift_information=_lp_shift_information,
)

if HAVE_NUMBA:
    import numba

    numba_impl = SimpleNamespace(
        **{name: numba.njit(cache=True)(fn) for name, fn in vars(loop_impl).items()}
    )
else:  # pragma: no cover
    numba_impl = None

active = numba_impl if BACKEND == "numba" else numpy_impl

retract2 = active.retract2
add_process_noise = active.add_process_noise
ekf_covariance_predict = active.ekf_covariance_predict
kalman_update = active.kalman_update
shift_information = active.shift_information


def predicted_measurements(theta, x, landmarks, slots, model):
    return active.predicted_measurements(
        float(theta), np.ascontiguousarray(x, float), np.ascontiguousarray(landmarks, float),
        np.ascontiguousarray(slots, np.int64), int(model),
    )


def measurement_jacobian(theta, x, landmarks, slots, model, invariant):
    return active.measurement_jacobian(
        float(theta), np.ascontiguousarray(x, float), np.ascontiguousarray(landmarks, float),
        np.ascontiguousarray(slots, np.int64), int(model), bool(invariant),
    )
