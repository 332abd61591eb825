"""State, input and measurement containers shared by every module.

2D state vectors are ordered ``(theta, x, p1, ..., pK)``; 3D error vectors
are ordered ``(omega, x, p1, ..., pK)``. Landmarks are stored as rows of a
``(K, d)`` array whose order matches ``ids``.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DuplicateLandmarkError, UnknownLandmarkError

MEASUREMENT_MODELS = ("relative", "range-bearing", "bearing")
MODEL_CODES = {name: code for code, name in enumerate(MEASUREMENT_MODELS)}
MODEL_DIMS = {"relative": 2, "range-bearing": 2, "bearing": 1}


def _as_rows(a, d):
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return np.zeros((0, d))
    return a.reshape(-1, d)


class _LandmarkMixin:
    @property
    def K(self):
        return self.landmarks.shape[0]

    def index_of(self, landmark_id):
        try:
            return self.ids.index(landmark_id)
        except ValueError:
            raise UnknownLandmarkError(landmark_id) from None

    def slots(self, landmark_ids):
        return np.array([self.index_of(i) for i in landmark_ids], dtype=np.int64)

    def landmark(self, landmark_id):
        return self.landmarks[self.index_of(landmark_id)]

    def _checked_ids(self, new_ids):
        new_ids = tuple(int(i) for i in new_ids)
        clash = set(new_ids) & set(self.ids)
        if clash or len(set(new_ids)) != len(new_ids):
            raise DuplicateLandmarkError(f"landmark ids already present: {sorted(clash)}")
        return self.ids + new_ids


@dataclass(eq=False)
class SlamState2(_LandmarkMixin):
    """Planar pose plus point landmarks. ``theta`` is kept unwrapped."""

    theta: float
    x: np.ndarray
    landmarks: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    ids: tuple = ()

    def __post_init__(self):
        self.theta = float(self.theta)
        self.x = np.asarray(self.x, dtype=float).reshape(2)
        self.landmarks = _as_rows(self.landmarks, 2)
        if not self.ids:
            self.ids = tuple(range(self.landmarks.shape[0]))
        self.ids = tuple(int(i) for i in self.ids)
        if len(self.ids) != self.landmarks.shape[0]:
            raise ValueError("ids and landmarks differ in length")

    @property
    def dim(self):
        return 3 + 2 * self.K

    @property
    def columns(self):
        """Translation columns ``(x, p1, ..., pK)`` as a ``(K+1, 2)`` array."""
        return np.vstack((self.x[None, :], self.landmarks))

    def vector(self):
        return np.concatenate(([self.theta], self.x, self.landmarks.ravel()))

    @classmethod
    def from_vector(cls, v, ids=()):
        v = np.asarray(v, dtype=float)
        return cls(v[0], v[1:3], v[3:].reshape(-1, 2), ids)

    @classmethod
    def from_columns(cls, theta, cols, ids=()):
        cols = np.asarray(cols, dtype=float)
        return cls(theta, cols[0], cols[1:], ids)

    def with_landmarks(self, new_ids, positions):
        ids = self._checked_ids(new_ids)
        return SlamState2(self.theta, self.x, np.vstack((self.landmarks, _as_rows(positions, 2))), ids)

    def subset(self, landmark_ids):
        idx = self.slots(landmark_ids)
        return SlamState2(self.theta, self.x, self.landmarks[idx], tuple(landmark_ids))

    def copy(self):
        return SlamState2(self.theta, self.x.copy(), self.landmarks.copy(), self.ids)

    def __repr__(self):
        return f"SlamState2(theta={self.theta:.6g}, x={self.x.tolist()}, K={self.K})"


@dataclass(eq=False)
class SlamState3(_LandmarkMixin):
    """Spatial pose (rotation matrix) plus point landmarks."""

    R: np.ndarray
    x: np.ndarray
    landmarks: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    ids: tuple = ()

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)
        self.x = np.asarray(self.x, dtype=float).reshape(3)
        self.landmarks = _as_rows(self.landmarks, 3)
        if not self.ids:
            self.ids = tuple(range(self.landmarks.shape[0]))
        self.ids = tuple(int(i) for i in self.ids)
        if len(self.ids) != self.landmarks.shape[0]:
            raise ValueError("ids and landmarks differ in length")

    @property
    def dim(self):
        return 6 + 3 * self.K

    @property
    def columns(self):
        return np.vstack((self.x[None, :], self.landmarks))

    @classmethod
    def from_columns(cls, R, cols, ids=()):
        cols = np.asarray(cols, dtype=float)
        return cls(R, cols[0], cols[1:], ids)

    def with_landmarks(self, new_ids, positions):
        ids = self._checked_ids(new_ids)
        return SlamState3(self.R, self.x, np.vstack((self.landmarks, _as_rows(positions, 3))), ids)

    def subset(self, landmark_ids):
        idx = self.slots(landmark_ids)
        return SlamState3(self.R, self.x, self.landmarks[idx], tuple(landmark_ids))

    def copy(self):
        return SlamState3(self.R.copy(), self.x.copy(), self.landmarks.copy(), self.ids)


@dataclass(eq=False)
class Odometry2:
    """Heading increment ``omega`` (rad) and body-frame shift ``v`` (m)."""

    omega: float
    v: np.ndarray

    def __post_init__(self):
        self.omega = float(self.omega)
        self.v = np.asarray(self.v, dtype=float).reshape(2)


@dataclass(eq=False)
class Odometry3:
    """Rotation increment ``Omega`` (orthonormal) and body-frame shift ``v``."""

    Omega: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.Omega = np.asarray(self.Omega, dtype=float).reshape(3, 3)
        self.v = np.asarray(self.v, dtype=float).reshape(3)


@dataclass(eq=False)
class Measurement:
    landmark_id: int
    value: np.ndarray
    model: str = "relative"

    def __post_init__(self):
        if self.model not in MODEL_DIMS:
            raise ValueError(f"unknown measurement model {self.model!r}")
        self.landmark_id = int(self.landmark_id)
        self.value = np.atleast_1d(np.asarray(self.value, dtype=float))

    def __repr__(self):
        return f"Measurement({self.landmark_id}, {self.value.tolist()}, {self.model!r})"
