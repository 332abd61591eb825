import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from iekf_slam.filters import LINEAR, RIGHT_INVARIANT, GaussianBelief
from iekf_slam.metrics import (
    CHI2_2_099,
    ErrorSample,
    ellipse,
    export_ellipses,
    metric_series,
    nees,
    pose_error,
    quadratic_form,
    rms,
    write_metrics_csv,
)
from iekf_slam.states import SlamState2


def test_chi2_constant():
    from scipy.stats import chi2

    assert CHI2_2_099 == pytest.approx(chi2.ppf(0.99, 2), abs=1e-4)


def test_nees_example():
    assert nees([ErrorSample([1, 0, 0], np.eye(3))]) == pytest.approx(1 / 3)


def test_nees_of_consistent_samples_is_one(rng):
    A = rng.standard_normal((3, 3))
    P = A @ A.T + 0.1 * np.eye(3)
    L = np.linalg.cholesky(P)
    e = rng.standard_normal((100_000, 3)) @ L.T
    assert nees(ErrorSample(x, P) for x in e) == pytest.approx(1.0, abs=0.01)


def test_nees_overconfident(rng):
    e = rng.standard_normal((20_000, 3)) * 2.0
    assert nees(ErrorSample(x, np.eye(3)) for x in e) == pytest.approx(4.0, rel=0.03)


def test_nees_singular():
    samples = [ErrorSample([1, 0, 0], np.diag([1.0, 1.0, 0.0])), ErrorSample([1, 0, 0], np.eye(3))]
    with pytest.raises(np.linalg.LinAlgError):
        nees(samples)
    assert nees(samples, strict=False) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        nees([])


def test_quadratic_form_conditioning():
    assert np.isnan(quadratic_form(np.ones(2), np.diag([1.0, 1e-14])))
    assert quadratic_form(np.ones(2), np.diag([1.0, 1e-6])) == pytest.approx(1 + 1e6)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30))
def test_rms_matches_definition(values):
    assert rms(values) == pytest.approx(np.sqrt(np.mean(np.square(values))), rel=1e-12, abs=1e-12)


def test_rms_across_runs():
    e = np.array([[3.0, 0.0], [4.0, 0.0]])
    np.testing.assert_allclose(rms(e), [np.sqrt(12.5), 0.0])


def test_metric_series_with_missing():
    quad = np.array([[3.0, np.nan], [6.0, 9.0]])
    s = metric_series(quad, np.ones((2, 2)), np.zeros((2, 2)))
    np.testing.assert_allclose(s["nees_pose"], [1.5, 3.0])
    s = metric_series(np.full((2, 1), np.nan), np.ones((2, 1)), np.zeros((2, 1)))
    assert np.isnan(s["nees_pose"][0])


def test_ellipse_circle():
    e = ellipse([1, 2], 0.04 * np.eye(2))
    assert e["semi_major"] == pytest.approx(0.2 * np.sqrt(CHI2_2_099))
    assert e["semi_minor"] == pytest.approx(e["semi_major"])
    assert e["center"] == [1.0, 2.0]


def test_ellipse_axis_aligned():
    e = ellipse([0, 0], np.diag([1.0, 4.0]))
    assert e["semi_major"] == pytest.approx(2 * np.sqrt(CHI2_2_099))
    assert e["semi_minor"] == pytest.approx(np.sqrt(CHI2_2_099))
    assert abs(np.cos(e["angle_rad"])) < 1e-12


def test_ellipse_coverage(rng):
    C = np.array([[0.5, 0.3], [0.3, 0.4]])
    e = ellipse([0, 0], C)
    pts = rng.multivariate_normal([0, 0], C, size=200_000)
    c, s = np.cos(e["angle_rad"]), np.sin(e["angle_rad"])
    u = pts @ np.array([c, s])
    v = pts @ np.array([-s, c])
    inside = (u / e["semi_major"]) ** 2 + (v / e["semi_minor"]) ** 2 <= 1
    assert inside.mean() == pytest.approx(0.99, abs=0.002)


def test_ellipse_rejects_singular():
    with pytest.raises(np.linalg.LinAlgError):
        ellipse([0, 0], np.diag([1.0, 0.0]))


def test_export_ellipses():
    s = SlamState2(0.0, [0, 0], [[1, 2], [3, 4]], ids=(7, 2))
    P = np.eye(7)
    P[5:, 5:] = np.diag([4.0, 1.0])
    out = export_ellipses(GaussianBelief(s, P))
    assert [e["id"] for e in out] == [7, 2]
    assert out[1]["center"] == [3.0, 4.0] and out[1]["semi_major"] == pytest.approx(2 * np.sqrt(CHI2_2_099))


def test_pose_error_linear():
    truth = SlamState2(0.1, [1, 1])
    est = GaussianBelief(SlamState2(2 * np.pi, [0.5, 1]), np.eye(3), LINEAR)
    np.testing.assert_allclose(pose_error(truth, est).error, [0.1, 0.5, 0.0], atol=1e-12)


def test_pose_error_invariant_matches_first_order_error():
    from iekf_slam.filters import linearized_invariant_error

    est = SlamState2(0.4, [2.0, -1.0])
    truth = SlamState2(0.45, [2.1, -0.9])
    e = pose_error(truth, GaussianBelief(est, np.eye(3), RIGHT_INVARIANT)).error
    np.testing.assert_allclose(e, linearized_invariant_error(truth, est), atol=1e-15)
    # dx - dtheta J x_hat
    np.testing.assert_allclose(e[1:], [0.1 - 0.05 * 1.0, 0.1 - 0.05 * 2.0], atol=1e-12)


def test_write_metrics_csv(tmp_path):
    s = metric_series(np.ones((2, 3)), np.ones((2, 3)), np.zeros((2, 3)))
    p = tmp_path / "m.csv"
    write_metrics_csv(p, {"iekf": s})
    rows = list(csv.reader(p.open()))
    assert rows[0] == ["step", "filter", "nees_pose", "rms_pos_m", "rms_heading_rad"]
    assert len(rows) == 4 and float(rows[1][2]) == pytest.approx(1 / 3)
