"""Closed-form group operations for SE_{K+1}(2) and SE_{K+1}(3).

An element is a rotation together with K+1 translation columns (robot
position first, then landmarks). Elements are kept in that structured form;
:meth:`GroupElement2.matrix` builds the homogeneous ``(K+3, K+3)`` embedding
only when an explicit matrix is wanted.

Tangent vectors are flat arrays: ``(alpha, u0, u1, ..., uK)`` of length
``3 + 2K`` in the plane and ``(omega, u0, ..., uK)`` of length ``6 + 3K`` in
space.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import BranchError
from .kernels import SERIES_THRESHOLD
from .states import SlamState2, SlamState3

J = np.array([[0.0, -1.0], [1.0, 0.0]])
_BRANCH_MARGIN = 1e-9


def rot2(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def wrap_angle(a):
    """Wrap to ``(-pi, pi]``."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def b_matrix(alpha):
    """Left Jacobian of SO(2) acting on translations, ``B(alpha)``.

    Switches to a Taylor expansion below ``|alpha| < 1e-4``.
    """
    alpha = float(alpha)
    if abs(alpha) < SERIES_THRESHOLD:
        a2 = alpha * alpha
        s = 1.0 - a2 / 6.0 + a2 * a2 / 120.0
        c = alpha * (0.5 - a2 / 24.0 + a2 * a2 / 720.0)
    else:
        s = np.sin(alpha) / alpha
        c = (1.0 - np.cos(alpha)) / alpha
    return np.array([[s, -c], [c, s]])


def b_matrix_inv(alpha):
    b = b_matrix(alpha)
    s, c = b[0, 0], b[1, 0]
    return np.array([[s, c], [-c, s]]) / (s * s + c * c)


# ---------------------------------------------------------------------------
# SE_{K+1}(2)


@dataclass(eq=False)
class GroupElement2:
    theta: float
    cols: np.ndarray

    def __post_init__(self):
        self.theta = float(self.theta)
        self.cols = np.asarray(self.cols, dtype=float).reshape(-1, 2)

    @property
    def K(self):
        return self.cols.shape[0] - 1

    @property
    def rotation(self):
        return rot2(self.theta)

    def matrix(self):
        n = self.K + 3
        M = np.eye(n)
        M[:2, :2] = self.rotation
        M[:2, 2:] = self.cols.T
        return M

    @classmethod
    def from_matrix(cls, M, atol=1e-9):
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 3:
            raise ValueError(f"expected a square matrix of size >= 3, got shape {M.shape}")
        n = M.shape[0]
        R = M[:2, :2]
        if not np.allclose(R @ R.T, np.eye(2), atol=atol) or np.linalg.det(R) < 0:
            raise ValueError("top-left block is not a rotation")
        if not np.allclose(M[2:, :2], 0.0, atol=atol) or not np.allclose(M[2:, 2:], np.eye(n - 2), atol=atol):
            raise ValueError("matrix does not have the SE_{K+1}(2) block structure")
        return cls(np.arctan2(R[1, 0], R[0, 0]), M[:2, 2:].T)

    def __matmul__(self, other):
        return GroupElement2(self.theta + other.theta, other.cols @ self.rotation.T + self.cols)

    def inverse(self):
        return GroupElement2(-self.theta, -self.cols @ self.rotation)

    def __repr__(self):
        return f"GroupElement2(theta={self.theta:.6g}, K={self.K})"


def identity2(K):
    return GroupElement2(0.0, np.zeros((K + 1, 2)))


def algebra2(zeta):
    """Embedded algebra matrix of a planar tangent vector."""
    zeta = np.asarray(zeta, dtype=float)
    n = (zeta.size - 3) // 2 + 3
    L = np.zeros((n, n))
    L[:2, :2] = zeta[0] * J
    L[:2, 2:] = zeta[1:].reshape(-1, 2).T
    return L


def exp2(zeta):
    zeta = np.asarray(zeta, dtype=float)
    alpha = zeta[0]
    return GroupElement2(alpha, zeta[1:].reshape(-1, 2) @ b_matrix(alpha).T)


def log2(g):
    theta = wrap_angle(g.theta)
    if abs(theta) > np.pi - _BRANCH_MARGIN:
        raise BranchError(f"heading {theta} at the pi branch cut")
    u = g.cols @ b_matrix_inv(theta).T
    return np.concatenate(([theta], u.ravel()))


def adjoint2(g):
    """Full adjoint of SE_{K+1}(2).

    Column 0 carries ``-J c_k`` for every translation column ``c_k``; the
    diagonal 2x2 blocks are all ``R(theta)``.
    """
    K = g.K
    n = 3 + 2 * K
    A = np.zeros((n, n))
    A[0, 0] = 1.0
    R = g.rotation
    for k in range(K + 1):
        sl = slice(1 + 2 * k, 3 + 2 * k)
        A[sl, 0] = -J @ g.cols[k]
        A[sl, sl] = R
    return A


# ---------------------------------------------------------------------------
# SO(3) / SE_{K+1}(3)


def skew(w):
    w = np.asarray(w, dtype=float)
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def vee(W):
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


def _so3_coeffs(t):
    """``sin t / t``, ``(1 - cos t)/t^2`` and ``(t - sin t)/t^3``."""
    if t < SERIES_THRESHOLD:
        t2 = t * t
        return (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    return np.sin(t) / t, (1.0 - np.cos(t)) / (t * t), (t - np.sin(t)) / (t * t * t)


def so3_exp(w):
    w = np.asarray(w, dtype=float)
    t = float(np.linalg.norm(w))
    a, b, _ = _so3_coeffs(t)
    W = skew(w)
    return np.eye(3) + a * W + b * (W @ W)


def so3_log(R):
    R = np.asarray(R, dtype=float)
    s = 0.5 * np.linalg.norm(vee(R - R.T))
    c = 0.5 * (np.trace(R) - 1.0)
    t = float(np.arctan2(s, c))
    if t > np.pi - 1e-6:
        raise BranchError(f"rotation angle {t} at the pi branch cut")
    if t < SERIES_THRESHOLD:
        factor = 1.0 + t * t / 6.0 + 7.0 * t**4 / 360.0
    else:
        factor = t / np.sin(t)
    return 0.5 * factor * vee(R - R.T)


def so3_left_jacobian(w):
    w = np.asarray(w, dtype=float)
    t = float(np.linalg.norm(w))
    _, b, c = _so3_coeffs(t)
    W = skew(w)
    return np.eye(3) + b * W + c * (W @ W)


def so3_left_jacobian_inv(w):
    w = np.asarray(w, dtype=float)
    t = float(np.linalg.norm(w))
    W = skew(w)
    if t < SERIES_THRESHOLD:
        t2 = t * t
        d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        d = (1.0 - t * np.sin(t) / (2.0 * (1.0 - np.cos(t)))) / (t * t)
    return np.eye(3) - 0.5 * W + d * (W @ W)


@dataclass(eq=False)
class GroupElement3:
    R: np.ndarray
    cols: np.ndarray

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)
        self.cols = np.asarray(self.cols, dtype=float).reshape(-1, 3)

    @property
    def K(self):
        return self.cols.shape[0] - 1

    def matrix(self):
        n = self.K + 4
        M = np.eye(n)
        M[:3, :3] = self.R
        M[:3, 3:] = self.cols.T
        return M

    @classmethod
    def from_matrix(cls, M, atol=1e-9):
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 4:
            raise ValueError(f"expected a square matrix of size >= 4, got shape {M.shape}")
        n = M.shape[0]
        R = M[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=atol) or np.linalg.det(R) < 0:
            raise ValueError("top-left block is not a rotation")
        if not np.allclose(M[3:, :3], 0.0, atol=atol) or not np.allclose(M[3:, 3:], np.eye(n - 3), atol=atol):
            raise ValueError("matrix does not have the SE_{K+1}(3) block structure")
        return cls(R, M[:3, 3:].T)

    def __matmul__(self, other):
        return GroupElement3(self.R @ other.R, other.cols @ self.R.T + self.cols)

    def inverse(self):
        return GroupElement3(self.R.T, -self.cols @ self.R)


def identity3(K):
    return GroupElement3(np.eye(3), np.zeros((K + 1, 3)))


def algebra3(zeta):
    zeta = np.asarray(zeta, dtype=float)
    n = (zeta.size - 6) // 3 + 4
    L = np.zeros((n, n))
    L[:3, :3] = skew(zeta[:3])
    L[:3, 3:] = zeta[3:].reshape(-1, 3).T
    return L


def exp3(zeta):
    """Closed-form exponential; the series coefficients use the rotation norm."""
    zeta = np.asarray(zeta, dtype=float)
    w = zeta[:3]
    t = float(np.linalg.norm(w))
    a, b, c = _so3_coeffs(t)
    W = skew(w)
    W2 = W @ W
    R = np.eye(3) + a * W + b * W2
    V = np.eye(3) + b * W + c * W2
    return GroupElement3(R, zeta[3:].reshape(-1, 3) @ V.T)


def log3(g):
    w = so3_log(g.R)
    u = g.cols @ so3_left_jacobian_inv(w).T
    return np.concatenate((w, u.ravel()))


def adjoint3(g):
    K = g.K
    n = 6 + 3 * K
    A = np.zeros((n, n))
    R = g.R
    A[:3, :3] = R
    for k in range(K + 1):
        sl = slice(3 + 3 * k, 6 + 3 * k)
        A[sl, :3] = skew(g.cols[k]) @ R
        A[sl, sl] = R
    return A


# ---------------------------------------------------------------------------
# state <-> group


def embed(state):
    if isinstance(state, SlamState2):
        return GroupElement2(state.theta, state.columns)
    if isinstance(state, SlamState3):
        return GroupElement3(state.R, state.columns)
    raise TypeError(f"cannot embed {type(state).__name__}")


def extract(g, ids=(), spatial=False):
    """Inverse of :func:`embed`. Accepts group elements or raw matrices.

    Raw matrices are validated against the block structure; pass
    ``spatial=True`` for SE_{K+1}(3) embeddings.
    """
    if isinstance(g, np.ndarray):
        g = GroupElement3.from_matrix(g) if spatial else GroupElement2.from_matrix(g)
    if isinstance(g, GroupElement2):
        return SlamState2.from_columns(g.theta, g.cols, ids)
    if isinstance(g, GroupElement3):
        return SlamState3.from_columns(g.R, g.cols, ids)
    raise TypeError(f"cannot extract a state from {type(g).__name__}")
