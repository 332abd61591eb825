"""Circular-loop SLAM simulation, Monte-Carlo runner and run files.

Each run draws from two counter-based Philox streams (odometry and
observations) spawned from ``SeedSequence(base_seed + i)``, so a run's
samples do not depend on which worker executes it or in what order.
"""

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from ._backend import worker_count
from .exceptions import ConfigError, NumericalFailure
from .filters import (
    RIGHT_INVARIANT,
    SIGMA_INIT2,
    GaussianBelief,
    InvariantEKFSlam3,
    _predict,
    _update,
    augment,
    make_filter,
)
from .liegroup import so3_exp, wrap_angle
from .metrics import pose_error, quadratic_form
from .models import h_tilde, measure, process_noise2, propagate2, propagate3
from .observability import ShiftAuditor
from .states import MEASUREMENT_MODELS, Measurement, Odometry2, Odometry3, SlamState2, SlamState3

FILTER_NAMES = ("ekf", "iekf", "ideal-ekf")
FORMAT_VERSION = 1


@dataclass
class SimConfig:
    """Experiment constants. Angles in radians, lengths in metres, times in seconds."""

    speed: float = 1.0
    angular_rate: float = math.radians(9.0)
    n_loops: int = 10
    dt: float = 1.0
    n_landmarks: int = 20
    ring_offset: float = 2.0
    sensing_range: float = 5.0
    wheel_sigma_fraction: float = 0.02
    wheel_base: float = 0.5
    obs_sigma: float = 0.1
    bearing_sigma: float = 0.01
    init_sigma2: float = SIGMA_INIT2
    base_seed: int = 0
    measurement_model: str = "relative"
    n_runs: int = 50
    loop_radius: float = None

    def __post_init__(self):
        self.n_loops, self.n_landmarks = int(self.n_loops), int(self.n_landmarks)
        self.base_seed, self.n_runs = int(self.base_seed), int(self.n_runs)
        positive = ("speed", "angular_rate", "n_loops", "dt", "n_landmarks", "sensing_range",
                    "wheel_base", "init_sigma2", "n_runs")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ("ring_offset", "wheel_sigma_fraction", "obs_sigma", "bearing_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.measurement_model not in MEASUREMENT_MODELS:
            raise ConfigError(f"measurement_model must be one of {MEASUREMENT_MODELS}")
        if self.measurement_model == "bearing":
            raise ConfigError("bearing-only readings cannot initialise landmarks in the loop simulation")
        steps = self.n_loops * 2.0 * math.pi / (self.angular_rate * self.dt)
        if abs(steps - round(steps)) > 1e-6:
            raise ConfigError(f"n_loops * 2 pi / (angular_rate * dt) = {steps} is not an integer step count")
        if self.ring_offset >= self.derived_radius:
            raise ConfigError("ring_offset must be smaller than the loop radius")
        if self.loop_radius is not None and abs(self.loop_radius - self.derived_radius) > 1e-6 * self.derived_radius:
            raise ConfigError(
                f"loop_radius {self.loop_radius} is inconsistent with speed and angular_rate "
                f"(implied {self.derived_radius:.6f})"
            )

    @property
    def n_steps(self):
        return int(round(self.n_loops * 2.0 * math.pi / (self.angular_rate * self.dt)))

    @property
    def steps_per_loop(self):
        return int(round(2.0 * math.pi / (self.angular_rate * self.dt)))

    @property
    def derived_radius(self):
        """Circumradius of the Euler-integrated polygon (tends to v / omega)."""
        s, a = self.speed * self.dt, self.angular_rate * self.dt
        return s / (2.0 * math.sin(a / 2.0))

    @property
    def loop_center(self):
        s, a = self.speed * self.dt, self.angular_rate * self.dt
        return np.array([s / 2.0, s / (2.0 * math.tan(a / 2.0))])

    @property
    def wheel_sigma(self):
        return self.wheel_sigma_fraction * self.speed

    @property
    def sigma_v(self):
        return math.sqrt(2.0) / 2.0 * self.wheel_sigma

    @property
    def sigma_omega(self):
        return math.sqrt(2.0) / self.wheel_base * self.wheel_sigma

    def process_noise(self):
        return process_noise2(self.sigma_omega, self.sigma_v, 0.0, self.dt)

    def measurement_noise(self):
        if self.measurement_model == "relative":
            return self.obs_sigma**2 * np.eye(2)
        return np.diag([self.obs_sigma**2, self.bearing_sigma**2])

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d, require_all=False):
        """Build from a mapping; unknown keys are rejected by name.

        With ``require_all`` every field except ``loop_radius`` must be given.
        """
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config field {unknown[0]!r}")
        if require_all:
            for name in sorted(names - {"loop_radius"}):
                if name not in d:
                    raise ConfigError(f"missing config field {name!r}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# ground truth and sampling


@dataclass(eq=False)
class Truth:
    states: list
    odometry: list
    landmarks: np.ndarray


def landmark_rings(config):
    """Two concentric rings of landmarks, ``ring_offset`` inside and outside the loop."""
    n = config.n_landmarks
    outer, inner = (n + 1) // 2, n // 2
    c, r = config.loop_center, config.derived_radius
    pts = []
    for count, radius, phase in ((outer, r + config.ring_offset, 0.0), (inner, r - config.ring_offset, 0.5)):
        for j in range(count):
            a = 2.0 * math.pi * (j + phase) / count
            pts.append(c + radius * np.array([math.cos(a), math.sin(a)]))
    return np.array(pts)


def generate_truth(config):
    """Noise-free loop from the origin heading along +x."""
    landmarks = landmark_rings(config)
    u = Odometry2(config.angular_rate * config.dt, (config.speed * config.dt, 0.0))
    state = SlamState2(0.0, np.zeros(2), landmarks)
    states = [state]
    for _ in range(config.n_steps):
        state = propagate2(state, u)
        states.append(state)
    return Truth(states, [u] * config.n_steps, landmarks)


def run_streams(seed):
    """Independent odometry and observation generators for one run."""
    odo, obs = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.Generator(np.random.Philox(odo)), np.random.Generator(np.random.Philox(obs))


def sample_odometry(u_true, config, rng):
    """Noisy increments; variances scale with ``dt``."""
    dw, dv = rng.standard_normal(2)
    sq = math.sqrt(config.dt)
    return Odometry2(u_true.omega + config.sigma_omega * sq * dw,
                     (u_true.v[0] + config.sigma_v * sq * dv, 0.0))


def sample_observations(state, config, rng):
    """Readings of every landmark within ``sensing_range`` (inclusive).

    Noise is drawn for all landmarks every step so the stream position does
    not depend on visibility.
    """
    model = config.measurement_model
    md = 1 if model == "bearing" else 2
    scale = {"relative": [config.obs_sigma] * 2, "range-bearing": [config.obs_sigma, config.bearing_sigma],
             "bearing": [config.bearing_sigma]}[model]
    noise = rng.standard_normal((state.K, md)) * np.array(scale)
    dist = np.linalg.norm(state.landmarks - state.x, axis=1)
    out = []
    for k in np.flatnonzero(dist <= config.sensing_range):
        lid = state.ids[k]
        value = measure(state, lid, model) + noise[k]
        if model != "relative":
            value[-1] = wrap_angle(value[-1])
        out.append(Measurement(lid, value, model))
    return out


@dataclass(eq=False)
class RunData:
    """Inputs of one run: truth, noisy odometry and readings per step."""

    seed: int
    truth: list
    odometry: list
    measurements: list

    @property
    def n_steps(self):
        return len(self.odometry)


def simulate_run(config, seed, truth=None):
    truth = truth or generate_truth(config)
    odo_rng, obs_rng = run_streams(seed)
    odometry = [sample_odometry(u, config, odo_rng) for u in truth.odometry]
    measurements = [sample_observations(s, config, obs_rng) for s in truth.states[1:]]
    return RunData(int(seed), truth.states, odometry, measurements)


# ---------------------------------------------------------------------------
# running filters


@dataclass(eq=False)
class FilterTrace:
    name: str
    quad: np.ndarray
    pos_err: np.ndarray
    head_err: np.ndarray
    poses: np.ndarray
    final: GaussianBelief
    audit: object = None
    failures: list = field(default_factory=list)
    beliefs: list = None

    @property
    def failed(self):
        return bool(self.failures)


@dataclass(eq=False)
class RunResult:
    seed: int
    traces: dict

    def __getitem__(self, name):
        return self.traces[name]


def run_filter(name, data, config, audit=True, keep_beliefs=False):
    """Feed one run's odometry and readings to a filter."""
    flt = make_filter(name, sigma_init2=config.init_sigma2)
    Q, R_n = config.process_noise(), config.measurement_noise()
    truth = data.truth
    belief = flt.initial_belief(SlamState2(truth[0].theta, truth[0].x))
    invariant = flt.error_kind == RIGHT_INVARIANT
    auditor = ShiftAuditor(belief, invariant, truth[0] if flt.uses_truth else None) if audit else None
    n = data.n_steps
    quad, pos_err, head_err = np.empty(n), np.empty(n), np.empty(n)
    poses = np.empty((n, 3))
    failures, beliefs = [], [] if keep_beliefs else None
    for step in range(n):
        t_prev, t_now = truth[step], truth[step + 1]
        belief, sys = flt.predict(belief, data.odometry[step], Q, t_prev)
        if auditor:
            auditor.on_predict(sys.F, belief.P)
        meas = data.measurements[step]
        known = set(belief.state.ids)
        new = [m for m in meas if m.landmark_id not in known]
        belief = flt.augment(belief, new)
        if auditor:
            auditor.on_augment(belief, [m.landmark_id for m in new], t_now if flt.uses_truth else None)
        try:
            belief, H, _ = flt.update(belief, meas, R_n, t_now)
        except NumericalFailure as exc:
            failures.append((step + 1, exc.condition))
            H = np.zeros((0, belief.state.dim))
        if auditor:
            auditor.on_update(H, belief)
        err = pose_error(t_now, belief)
        quad[step] = quadratic_form(err.error, err.covariance)
        head_err[step] = err.error[0]
        pos_err[step] = np.linalg.norm(t_now.x - belief.state.x)
        poses[step] = (belief.state.theta, *belief.state.x)
        if keep_beliefs:
            beliefs.append(belief)
    return FilterTrace(name, quad, pos_err, head_err, poses, belief,
                       auditor.trace if auditor else None, failures, beliefs)


def run_filters(data, config, filters=FILTER_NAMES, audit=True, keep_beliefs=False):
    with threadpool_limits(limits=1):
        traces = {name: run_filter(name, data, config, audit, keep_beliefs) for name in filters}
    return RunResult(data.seed, traces)


def run_once(config, filters=FILTER_NAMES, seed=None, audit=True, keep_beliefs=False):
    seed = config.base_seed if seed is None else seed
    return run_filters(simulate_run(config, seed), config, filters, audit, keep_beliefs)


def _run_job(args):
    config, filters, seed, audit = args
    return run_once(config, filters, seed, audit)


def run_monte_carlo(config, filters=FILTER_NAMES, n_runs=None, audit=True, workers=None, seeds=None):
    """Runs with seeds ``base_seed + i``; results come back in seed order."""
    n_runs = config.n_runs if n_runs is None else n_runs
    if n_runs < 1:
        raise ConfigError("n_runs must be at least 1")
    seeds = [config.base_seed + i for i in range(n_runs)] if seeds is None else list(seeds)
    workers = worker_count() if workers is None else workers
    jobs = [(config, tuple(filters), s, audit) for s in seeds]
    if workers <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def replay(data, config, filters=FILTER_NAMES, audit=True):
    """Re-feed recorded odometry and readings, bypassing sampling."""
    return run_filters(data, config, filters, audit)


# ---------------------------------------------------------------------------
# run files (one header line, then one line per step)


def _state_dict(s):
    return {"theta": s.theta, "x": s.x.tolist()}


def write_run(path, data, config, result=None):
    """Line-delimited JSON; optional filter estimates with row-major ``P``."""
    path = Path(path)
    beliefs = {}
    if result is not None:
        beliefs = {n: t.beliefs for n, t in result.traces.items() if t.beliefs is not None}
    with open(path, "w") as fh:
        header = {
            "type": "header", "version": FORMAT_VERSION, "seed": data.seed, "n_steps": data.n_steps,
            "config": config.to_dict(), "initial": _state_dict(data.truth[0]),
            "landmarks": data.truth[0].landmarks.tolist(), "landmark_ids": list(data.truth[0].ids),
        }
        fh.write(json.dumps(header) + "\n")
        for n in range(data.n_steps):
            u = data.odometry[n]
            rec = {
                "step": n + 1,
                "truth": _state_dict(data.truth[n + 1]),
                "odometry": {"omega": u.omega, "v": u.v.tolist()},
                "measurements": [
                    {"id": m.landmark_id, "value": m.value.tolist(), "model": m.model} for m in data.measurements[n]
                ],
            }
            if beliefs:
                rec["filters"] = {
                    name: {**_state_dict(b[n].state), "ids": list(b[n].state.ids),
                           "landmarks": b[n].state.landmarks.tolist(), "P": b[n].P.ravel().tolist()}
                    for name, b in beliefs.items()
                }
            fh.write(json.dumps(rec) + "\n")


def read_run(path):
    """Load a run file. Returns ``(RunData, SimConfig)``.

    Malformed or truncated files raise :class:`ConfigError` naming the line
    and step.
    """
    path = Path(path)
    with open(path) as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ConfigError(f"{path}: empty run file")

    def parse(i):
        try:
            return json.loads(lines[i])
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{i + 1}: malformed record (step {i}): {exc.msg}") from None

    header = parse(0)
    if header.get("type") != "header":
        raise ConfigError(f"{path}:1: missing header record")
    config = SimConfig.from_dict(header["config"])
    ids = tuple(header["landmark_ids"])
    landmarks = np.array(header["landmarks"], dtype=float).reshape(-1, 2)
    init = header["initial"]
    truth = [SlamState2(init["theta"], init["x"], landmarks, ids)]
    odometry, measurements = [], []
    for i in range(1, len(lines)):
        rec = parse(i)
        try:
            if rec["step"] != i:
                raise ConfigError(f"{path}:{i + 1}: expected step {i}, found {rec['step']}")
            truth.append(SlamState2(rec["truth"]["theta"], rec["truth"]["x"], landmarks, ids))
            odometry.append(Odometry2(rec["odometry"]["omega"], rec["odometry"]["v"]))
            measurements.append([Measurement(m["id"], m["value"], m["model"]) for m in rec["measurements"]])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{path}:{i + 1}: bad record at step {i}: {exc!r}") from None
    if len(odometry) != header["n_steps"]:
        raise ConfigError(
            f"{path}: truncated after step {len(odometry)}, header announces {header['n_steps']} steps"
        )
    return RunData(header["seed"], truth, odometry, measurements), config


def write_dataset(directory, config, seeds=None):
    """One run file per seed; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    seeds = [config.base_seed + i for i in range(config.n_runs)] if seeds is None else seeds
    truth = generate_truth(config)
    paths = []
    for s in seeds:
        p = directory / f"run_{s:06d}.jsonl"
        write_run(p, simulate_run(config, s, truth), config)
        paths.append(p)
    return paths


def dataset_files(directory):
    directory = Path(directory)
    if directory.is_file():
        return [directory]
    files = sorted(directory.glob("run_*.jsonl"))
    if not files:
        raise ConfigError(f"{directory}: no run files found")
    return files


def _replay_job(args):
    path, filters, audit = args
    data, config = read_run(path)
    return replay(data, config, filters, audit), config


def replay_dataset(directory, filters=FILTER_NAMES, audit=True, workers=None):
    files = dataset_files(directory)
    workers = worker_count() if workers is None else workers
    jobs = [(os.fspath(f), tuple(filters), audit) for f in files]
    if workers <= 1:
        out = [_replay_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_replay_job, jobs))
    return [r for r, _ in out], out[0][1]


# ---------------------------------------------------------------------------
# 3D random walk


@dataclass(eq=False)
class RunData3:
    truth: list
    odometry: list
    measurements: list
    Q: np.ndarray
    R_n: np.ndarray


def random_walk3(n_steps=500, n_landmarks=12, seed=0, sensing_range=6.0,
                 sigma_rot=0.01, sigma_pos=0.02, obs_sigma=0.1, extent=5.0):
    """Random 3D motion among uniformly scattered landmarks.

    The robot walks forward 0.5 m per step while turning by a random small
    rotation; readings are noisy relative positions of nearby landmarks.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    landmarks = rng.uniform(-extent, extent, size=(n_landmarks, 3))
    state = SlamState3(np.eye(3), np.zeros(3), landmarks)
    Q = np.diag([sigma_rot**2] * 3 + [sigma_pos**2] * 3)
    R_n = obs_sigma**2 * np.eye(3)
    truth, odometry, measurements = [state], [], []
    for _ in range(n_steps):
        Omega = so3_exp(rng.normal(0.0, 0.15, 3))
        v = np.array([0.5, 0.0, 0.0])
        # steer back toward the origin to stay among the landmarks
        if np.linalg.norm(state.x) > extent:
            v = 0.5 * state.R.T @ (-state.x / np.linalg.norm(state.x))
        w = np.concatenate((rng.normal(0.0, sigma_rot, 3), rng.normal(0.0, sigma_pos, 3)))
        state = propagate3(state, Odometry3(Omega, v), w)
        truth.append(state)
        odometry.append(Odometry3(Omega, v))
        dist = np.linalg.norm(state.landmarks - state.x, axis=1)
        meas = [Measurement(state.ids[k], h_tilde(state.R.T @ (state.landmarks[k] - state.x))
                            + rng.normal(0.0, obs_sigma, 3)) for k in np.flatnonzero(dist <= sensing_range)]
        measurements.append(meas)
    return RunData3(truth, odometry, measurements, Q, R_n)


def run_iekf3(data, sigma_init2=SIGMA_INIT2):
    """Invariant filter on a 3D run; returns the final belief and per-step checks."""
    flt = InvariantEKFSlam3(sigma_init2)
    t0 = data.truth[0]
    belief = GaussianBelief(SlamState3(t0.R, t0.x), np.zeros((6, 6)), RIGHT_INVARIANT)
    auditor = ShiftAuditor(belief, invariant=True)
    ortho, min_eig = [], []
    with threadpool_limits(limits=1):
        for step, u in enumerate(data.odometry):
            belief, sys = _predict(belief, u, data.Q)
            auditor.on_predict(sys.F, belief.P)
            meas = data.measurements[step]
            known = set(belief.state.ids)
            new = [m for m in meas if m.landmark_id not in known]
            belief = augment(belief, new, sigma_init2)
            auditor.on_augment(belief, [m.landmark_id for m in new])
            belief, H, _ = _update(belief, meas, data.R_n)
            auditor.on_update(H, belief)
            R = belief.state.R
            ortho.append(float(np.max(np.abs(R @ R.T - np.eye(3)))))
            min_eig.append(float(np.linalg.eigvalsh(belief.P)[0]))
    return belief, {"orthonormality": np.array(ortho), "min_eig": np.array(min_eig), "audit": auditor.trace}
