"""Invariant EKF SLAM in 2D and 3D with EKF baselines, simulation and audits."""

from .filters import (
    EKFSlam,
    GaussianBelief,
    IdealEKFSlam,
    InvariantEKFSlam,
    InvariantEKFSlam3,
    make_filter,
)
from .sim import SimConfig, run_monte_carlo, run_once
from .states import Measurement, Odometry2, Odometry3, SlamState2, SlamState3

__version__ = "0.1.0"
