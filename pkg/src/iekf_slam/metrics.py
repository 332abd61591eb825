"""Consistency and accuracy indicators: NEES, RMS, covariance ellipses."""

import csv
from dataclasses import dataclass

import numpy as np

from .filters import RIGHT_INVARIANT
from .liegroup import J, wrap_angle

CHI2_2_099 = 9.2103
POSE_DIM = 3


@dataclass(eq=False)
class ErrorSample:
    """Pose error in a filter's native coordinates and its marginal covariance."""

    error: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.error = np.asarray(self.error, dtype=float)
        self.covariance = np.asarray(self.covariance, dtype=float)


def pose_error(truth, belief):
    """Heading/position error matching the meaning of ``belief.P``.

    Linear-error filters use ``(wrap(theta - theta_hat), x - x_hat)``; the
    invariant filter subtracts the first-order rotation of the estimate,
    ``x - x_hat - dtheta J x_hat``.
    """
    est = belief.state
    dtheta = wrap_angle(truth.theta - est.theta)
    dx = truth.x - est.x
    if belief.error_kind == RIGHT_INVARIANT:
        dx = dx - dtheta * (J @ est.x)
    return ErrorSample(np.concatenate(([dtheta], dx)), belief.P[:POSE_DIM, :POSE_DIM])


def quadratic_form(error, covariance, max_condition=1e12):
    """``e^T P^-1 e`` or NaN when ``P`` is singular or too ill-conditioned."""
    P = 0.5 * (covariance + covariance.T)
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        return np.nan
    d = np.diag(L)
    if d.min() <= 0 or (d.max() / d.min()) ** 2 > max_condition:
        return np.nan
    w = np.linalg.solve(L, error)
    return float(w @ w)


def nees(samples, strict=True):
    """``(1 / (p d)) sum e_i^T P_i^-1 e_i``.

    With ``strict`` a singular marginal raises; otherwise such samples are
    skipped and the average runs over the remaining ones.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("no samples")
    d = samples[0].error.size
    total, count = 0.0, 0
    for s in samples:
        if s.error.size != d:
            raise ValueError("samples differ in dimension")
        q = quadratic_form(s.error, s.covariance)
        if np.isnan(q):
            if strict:
                raise np.linalg.LinAlgError("singular marginal covariance")
            continue
        total += q
        count += 1
    return total / (count * d) if count else np.nan


def rms(errors, axis=0):
    """Root mean square across runs (``axis=0``) of scalar errors."""
    e = np.asarray(errors, dtype=float)
    return np.sqrt(np.mean(e * e, axis=axis))


def metric_series(quad, pos_err, head_err):
    """Per-step NEES and RMS from arrays of shape ``(runs, steps)``.

    ``quad`` holds ``e^T P^-1 e`` (NaN where undefined), ``pos_err`` the
    position error norms and ``head_err`` the wrapped heading errors.
    """
    quad = np.asarray(quad, dtype=float)
    with np.errstate(invalid="ignore"):
        valid = np.sum(~np.isnan(quad), axis=0)
        total = np.nansum(quad, axis=0)
        nees_pose = np.where(valid > 0, total / np.maximum(valid, 1) / POSE_DIM, np.nan)
    return {"nees_pose": nees_pose, "rms_pos_m": rms(pos_err), "rms_heading_rad": rms(head_err)}


def ellipse(center, cov, confidence_scale=CHI2_2_099):
    """Semi-axes and orientation of ``{p : (p - c)^T cov^-1 (p - c) <= scale}``."""
    cov = 0.5 * (np.asarray(cov, dtype=float) + np.asarray(cov, dtype=float).T)
    w, V = np.linalg.eigh(cov)
    if w[0] <= 0:
        raise np.linalg.LinAlgError("landmark marginal is not positive definite")
    major = V[:, 1]
    return {
        "center": [float(c) for c in center],
        "semi_major": float(np.sqrt(w[1] * confidence_scale)),
        "semi_minor": float(np.sqrt(w[0] * confidence_scale)),
        "angle_rad": float(np.arctan2(major[1], major[0])),
    }


def export_ellipses(belief, confidence_scale=CHI2_2_099):
    """99% ellipse per landmark from the ``2 x 2`` marginals of ``P``."""
    est = belief.state
    out = []
    for k, lid in enumerate(est.ids):
        i = 3 + 2 * k
        e = ellipse(est.landmarks[k], belief.P[i : i + 2, i : i + 2], confidence_scale)
        out.append({"id": lid, **e})
    return out


def write_metrics_csv(path, series_by_filter):
    """``step, filter, nees_pose, rms_pos_m, rms_heading_rad`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "filter", "nees_pose", "rms_pos_m", "rms_heading_rad"])
        for name, s in series_by_filter.items():
            for n in range(len(s["rms_pos_m"])):
                w.writerow([n + 1, name, repr(float(s["nees_pose"][n])), repr(float(s["rms_pos_m"][n])),
                            repr(float(s["rms_heading_rad"][n]))])
