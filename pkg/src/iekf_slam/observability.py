"""Unobservable shifts, kernel membership and information along shifts.

A shift is a direction in a filter's error coordinates that a global
rotation or translation of robot and map would produce. For the IEKF the
shifts are constant; for the EKF the rotation shift depends on the
estimate, and the sequence ``dX_n = F_n dX_{n-1}`` has to be followed.

:class:`ShiftAuditor` tracks those sequences during a run, including the
components that new landmarks append, and records per-step audit scalars.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .exceptions import SingularCovarianceError
from .liegroup import J
from .states import SlamState3

ROTATION = "rotation"
TRANSLATION_X = "translation-x"
TRANSLATION_Y = "translation-y"
KINDS_2D = (ROTATION, TRANSLATION_X, TRANSLATION_Y)
KINDS_3D = ("rotation-x", "rotation-y", "rotation-z", "translation-x", "translation-y", "translation-z")

INFORMATION_SLACK = 1e-6


@dataclass(eq=False)
class UnobservableShift:
    vector: np.ndarray
    kind: str

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=float)


def _translation_shifts(K, d, offset):
    out = []
    for a in range(d):
        v = np.zeros(offset + d * (K + 1))
        v[offset + a :: d] = 1.0
        out.append(v)
    return out


def shifts_linear(est):
    """Rotation ``(1; J x; J p1; ...)`` and the two translation shifts."""
    rot = np.concatenate(([1.0], (est.columns @ J.T).ravel()))
    tx, ty = _translation_shifts(est.K, 2, 1)
    return [UnobservableShift(rot, ROTATION), UnobservableShift(tx, TRANSLATION_X), UnobservableShift(ty, TRANSLATION_Y)]


def shifts_invariant(K, spatial=False):
    """Constant shifts of the invariant error; independent of the estimate."""
    if spatial:
        vecs = []
        for a in range(3):
            v = np.zeros(6 + 3 * K)
            v[a] = 1.0
            vecs.append(v)
        vecs += _translation_shifts(K, 3, 3)
        return [UnobservableShift(v, k) for v, k in zip(vecs, KINDS_3D)]
    rot = np.zeros(3 + 2 * K)
    rot[0] = 1.0
    tx, ty = _translation_shifts(K, 2, 1)
    return [UnobservableShift(rot, ROTATION), UnobservableShift(tx, TRANSLATION_X), UnobservableShift(ty, TRANSLATION_Y)]


def relative_residual(H, shift):
    """``|H s| / (|H|_F |s|)``; zero for an empty ``H``."""
    H = np.atleast_2d(H)
    s = np.asarray(getattr(shift, "vector", shift), dtype=float)
    if H.shape[0] == 0:
        return 0.0
    denom = np.linalg.norm(H) * np.linalg.norm(s)
    return float(np.linalg.norm(H @ s) / denom) if denom > 0 else 0.0


def kernel_residual(systems, shift):
    """Relative residuals along ``dX_n = F_n dX_{n-1}``, one per system.

    ``systems`` is a sequence of objects with ``F`` and ``H`` attributes (or
    ``(F, H)`` pairs) of constant dimension.
    """
    s = np.asarray(getattr(shift, "vector", shift), dtype=float)
    out = []
    for sys in systems:
        F, H = (sys.F, sys.H) if hasattr(sys, "F") else sys
        if F is not None:
            if F.shape[1] != s.size:
                raise ValueError(f"system dimension {F.shape[1]} does not match shift dimension {s.size}")
            s = F @ s
        out.append(relative_residual(np.zeros((0, s.size)) if H is None else H, s))
    return np.array(out)


def information_along_shift(P, shift):
    """``s^T P^-1 s`` from a Cholesky factor of the symmetrized ``P``."""
    P = np.asarray(P, dtype=float)
    s = np.asarray(getattr(shift, "vector", shift), dtype=float)
    P = np.ascontiguousarray(0.5 * (P + P.T))
    value = kernels.shift_information(P, np.ascontiguousarray(s[None, :]))[0]
    if not np.isfinite(value):
        raise SingularCovarianceError("covariance is singular")
    return float(value)


def ekf_inconsistency_residual(history):
    """Per-step residual ``-(p_n|n-1 - p_init) + sum_i (x_i|i - x_i|i-1)``.

    ``history`` is a sequence of ``(prior, posterior)`` states, where the
    prior already holds any landmark initialised at that step. Returns one
    ``(K_n, 2)`` array per step (sum running from each landmark's first step).
    """
    out = []
    cum = np.zeros(2)
    init = {}
    for prior, post in history:
        for k, lid in enumerate(prior.ids):
            if lid not in init:
                init[lid] = (prior.landmarks[k].copy(), cum.copy())
        res = np.empty((prior.K, 2))
        for k, lid in enumerate(prior.ids):
            p0, c0 = init[lid]
            res[k] = -(prior.landmarks[k] - p0) + (cum - c0)
        out.append(res)
        cum = cum + (post.x - prior.x)
    return out


@dataclass
class AuditTrace:
    """Per-step audit scalars of one filter run; columns follow ``kinds``."""

    kinds: tuple
    info_prior: list = field(default_factory=list)
    info_pred: list = field(default_factory=list)
    info_aug: list = field(default_factory=list)
    info_post: list = field(default_factory=list)
    kernel: list = field(default_factory=list)
    ekf_residual: list = field(default_factory=list)

    def arrays(self):
        return {
            name: np.array(getattr(self, name), dtype=float)
            for name in ("info_prior", "info_pred", "info_aug", "info_post", "kernel", "ekf_residual")
        }

    @property
    def n_steps(self):
        return len(self.kernel)

    def information_margin(self, slack=INFORMATION_SLACK):
        """Worst ratio ``info_next / info_prev`` at propagation and update steps.

        Infinite values (singular covariance) only compare against infinity;
        the returned margin is below ``1 + slack`` when the check passes.
        """
        a = self.arrays()
        worst = 0.0
        for prev, nxt in ((a["info_prior"], a["info_pred"]), (a["info_aug"], a["info_post"])):
            if prev.size == 0:
                continue
            finite = np.isfinite(prev)
            if np.any(finite & ~np.isfinite(nxt)):
                return np.inf
            p, q = prev[finite], nxt[finite]
            if np.any((p == 0) & (q > 0)):
                return np.inf
            pos = p > 0
            if np.any(pos):
                worst = max(worst, float(np.max(q[pos] / p[pos])))
        return worst

    def information_nonincreasing(self, slack=INFORMATION_SLACK):
        return self.information_margin(slack) <= 1.0 + slack


class ShiftAuditor:
    """Follows the shifts of one run and records audit scalars.

    Call :meth:`on_predict` after each propagation with the filter's ``F``,
    :meth:`on_augment` after landmarks are appended and :meth:`on_update`
    with the stacked ``H``. ``lin`` is the state the filter linearizes at.
    """

    def __init__(self, belief, invariant, lin=None):
        self.invariant = invariant
        self.spatial = isinstance(belief.state, SlamState3)
        lin = belief.state if lin is None else lin
        if invariant:
            shifts = shifts_invariant(belief.state.K, self.spatial)
        else:
            if self.spatial:
                raise ValueError("linear-error shifts are only defined in 2D")
            shifts = shifts_linear(lin.subset(belief.state.ids) if lin.ids != belief.state.ids else lin)
        self.kinds = tuple(s.kind for s in shifts)
        self.chain = np.array([s.vector for s in shifts])
        self.trace = AuditTrace(self.kinds)
        self._info = self._information(belief.P)
        self._cum = np.zeros(2)
        self._init = {}

    def _information(self, P):
        return kernels.shift_information(np.ascontiguousarray(P), np.ascontiguousarray(self.chain))

    def on_predict(self, F, P):
        self.trace.info_prior.append(self._info.copy())
        if not self.invariant:
            self.chain = np.ascontiguousarray(self.chain @ F.T)
        self._info = self._information(P)
        self.trace.info_pred.append(self._info.copy())

    def on_augment(self, belief, new_ids, lin=None):
        """Extend the shifts over landmarks just appended to ``belief``."""
        est = belief.state
        if new_ids:
            d = 3 if self.spatial else 2
            ext = np.zeros((self.chain.shape[0], d * len(new_ids)))
            r = 0
            if not self.spatial:
                if not self.invariant:
                    lin = est if lin is None else lin
                    x_lin = lin.x
                    for i, lid in enumerate(new_ids):
                        p_lin = lin.landmark(lid)
                        ext[0, 2 * i : 2 * i + 2] = J @ p_lin + (self.chain[0, 1:3] - J @ x_lin)
                r = 1
            else:
                r = 3
            for a in range(d):
                ext[r + a, a::d] = 1.0
            self.chain = np.ascontiguousarray(np.hstack((self.chain, ext)))
        self._info = self._information(belief.P)
        self.trace.info_aug.append(self._info.copy())
        if not self.spatial:
            for k, lid in enumerate(est.ids):
                if lid not in self._init:
                    self._init[lid] = (est.landmarks[k].copy(), self._cum.copy())
            self._prior_x = est.x.copy()
            self._prior_landmarks = est.landmarks.copy()
            self._prior_ids = est.ids

    def on_update(self, H, belief):
        self.trace.kernel.append([relative_residual(H, s) for s in self.chain])
        if not self.spatial:
            worst = 0.0
            for k, lid in enumerate(self._prior_ids):
                p0, c0 = self._init[lid]
                res = -(self._prior_landmarks[k] - p0) + (self._cum - c0)
                worst = max(worst, float(np.linalg.norm(res)))
            self.trace.ekf_residual.append(worst)
            self._cum = self._cum + (belief.state.x - self._prior_x)
        else:
            self.trace.ekf_residual.append(0.0)
        self._info = self._information(belief.P)
        self.trace.info_post.append(self._info.copy())
