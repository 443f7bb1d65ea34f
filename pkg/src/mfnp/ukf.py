"""Unscented Kalman filter used as the high-fidelity label oracle.

Generic scaled sigma-point transforms (pluggable process/measurement
functions, angle-aware averaging on chosen dimensions) plus the concrete
robot filter that fuses encoder-implied velocities, IMU yaw rate and the
sparse high-fidelity pose stream into 50 Hz fused states.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .physics import (
    BodyVelocity,
    KinematicParams,
    RobotState,
    WheelCmd,
    body_velocity_from_state,
    diff_drive_derivative,
    skid_steer_step,
    wrap_angle,
)

FUSED_COLUMNS = ["t", "x", "y", "th", "vx", "vy", "w"]


class FilterNumericsError(RuntimeError):
    pass


@dataclass
class GaussianBelief:
    """Mean vector and covariance; covariance re-symmetrized on every write."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = symmetrize(np.asarray(self.cov, dtype=np.float64))


def symmetrize(P):
    return 0.5 * (P + P.T)


@dataclass(frozen=True)
class UkfConfig:
    """Scaled unscented-transform parameters and noise matrices."""

    alpha: float = 0.1
    beta: float = 2.0
    kappa: float = 0.0
    q_diag: tuple = (1e-4,) * 6
    r_wheel: tuple = ()  # (vx, vy, w) variances; derived when empty
    r_imu: float = 0.0  # yaw-rate variance; derived when 0
    r_hifi: tuple = ()  # full-state variances; derived when empty
    # kinematic-map mismatch of the wheel-implied velocity measurement
    # (vx, vy, w); without it the filter trusts wheel odometry so hard that
    # the fused velocities just reproduce dead reckoning
    wheel_model_error: tuple = (0.1, 0.1, 0.05)

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        if any(q <= 0 for q in self.q_diag):
            raise ValueError("process noise diagonal must be positive")


def derive_measurement_noise(config, noise, params):
    """Fill empty R blocks from the sensor noise spec.

    Encoder noise propagates through the differential-drive map (each wheel
    contributes r_w/2 to speed and r_w/L to yaw rate) and is inflated by
    the configured model-error term in quadrature.
    """
    sv = (params.wheel_radius / 2.0) * math.sqrt(2.0) * noise.encoder_sigma
    sw = (params.wheel_radius / params.chassis_width) * math.sqrt(2.0) * noise.encoder_sigma
    mvx, mvy, mw = config.wheel_model_error
    svx = max(math.hypot(sv, mvx), 1e-6)
    svy = max(math.hypot(sv, mvy), 1e-6)
    sww = max(math.hypot(sw, mw), 1e-6)
    r_wheel = config.r_wheel or (svx * svx, svy * svy, sww * sww)
    r_imu = config.r_imu or max(noise.imu_sigma, 1e-6) ** 2
    hp = max(noise.hifi_pos_sigma, 1e-6)
    hh = max(noise.hifi_heading_sigma, 1e-6)
    r_hifi = config.r_hifi or (hp * hp, hp * hp, hh * hh, hp * hp, hp * hp, hh * hh)
    return np.array(r_wheel), float(r_imu), np.array(r_hifi)


# ---------------------------------------------------------------------------
# generic scaled unscented transform


def sigma_points(belief, config):
    """2n+1 scaled sigma points plus mean/covariance weights.

    A failed Cholesky factorization gets one 1e-9 jitter retry before the
    belief is declared unusable.
    """
    mean = belief.mean
    P = symmetrize(belief.cov)
    n = mean.shape[0]
    lam = config.alpha**2 * (n + config.kappa) - n
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        try:
            L = np.linalg.cholesky(P + 1e-9 * np.eye(n))
        except np.linalg.LinAlgError as e:
            raise FilterNumericsError(f"covariance not PSD: {e}") from None
    scaled = math.sqrt(n + lam) * L
    pts = np.empty((2 * n + 1, n))
    pts[0] = mean
    for i in range(n):
        pts[1 + i] = mean + scaled[:, i]
        pts[1 + n + i] = mean - scaled[:, i]
    wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = wm[0] + (1.0 - config.alpha**2 + config.beta)
    return pts, wm, wc


def _weighted_mean(points, wm, angle_dims):
    mean = wm @ points
    for d in angle_dims:
        s = float(wm @ np.sin(points[:, d]))
        c = float(wm @ np.cos(points[:, d]))
        mean[d] = math.atan2(s, c)
    return mean


def _residuals(points, mean, angle_dims):
    d = points - mean
    for dim in angle_dims:
        d[:, dim] = np.vectorize(wrap_angle)(d[:, dim])
    return d


def ut_predict(belief, f, Q, config, angle_dims=()):
    """Propagate a belief through process function f and add Q."""
    pts, wm, wc = sigma_points(belief, config)
    prop = np.array([f(p) for p in pts])
    mean = _weighted_mean(prop, wm, angle_dims)
    d = _residuals(prop, mean, angle_dims)
    cov = (d.T * wc) @ d + Q
    return GaussianBelief(mean, cov)


def ut_update(belief, z, h, R, config, angle_dims=(), meas_angle_dims=()):
    """Standard sigma-point measurement update with circular innovations."""
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    pts, wm, wc = sigma_points(belief, config)
    zs = np.array([np.atleast_1d(h(p)) for p in pts])
    if zs.shape[1] != z.shape[0]:
        raise ValueError(
            f"measurement dim {z.shape[0]} does not match model output {zs.shape[1]}"
        )
    zhat = _weighted_mean(zs, wm, meas_angle_dims)
    dz = _residuals(zs, zhat, meas_angle_dims)
    dx = _residuals(pts, belief.mean, angle_dims)
    S = (dz.T * wc) @ dz + R
    C = (dx.T * wc) @ dz
    try:
        K = np.linalg.solve(S, C.T).T
    except np.linalg.LinAlgError:
        try:
            K = np.linalg.solve(S + 1e-9 * np.eye(S.shape[0]), C.T).T
        except np.linalg.LinAlgError as e:
            raise FilterNumericsError(f"singular innovation covariance: {e}") from None
    innov = z - zhat
    for d in meas_angle_dims:
        innov[d] = wrap_angle(innov[d])
    mean = belief.mean + K @ innov
    for d in angle_dims:
        mean[d] = wrap_angle(mean[d])
    cov = belief.cov - K @ S @ K.T
    return GaussianBelief(mean, cov)


# ---------------------------------------------------------------------------
# the robot filter


STATE_ANGLE_DIMS = (2,)  # heading


class RobotUkf:
    """Six-state filter over (x, y, th, vx, vy, w) with the skid-steer
    model as its process."""

    def __init__(self, config=None, params=None, noise=None, initial=None):
        from .simworld import SensorNoiseSpec

        self.config = config or UkfConfig()
        self.params = params or KinematicParams()
        noise = noise or SensorNoiseSpec()
        self.r_wheel, self.r_imu, self.r_hifi = derive_measurement_noise(
            self.config, noise, self.params
        )
        self.Q = np.diag(self.config.q_diag)
        self.belief = initial or GaussianBelief(np.zeros(6), 1e-6 * np.eye(6))

    def _process(self, cmd, dk):
        params = self.params

        def f(p):
            state = RobotState(*p)
            body = body_velocity_from_state(state)
            nxt, _ = skid_steer_step(state, body, cmd, params, dk)
            return np.array(nxt.as_tuple())

        return f

    def predict(self, cmd, dk):
        if dk <= 0:
            raise ValueError("predict: dk must be positive")
        self.belief = ut_predict(
            self.belief,
            self._process(cmd, dk),
            self.Q * dk,
            self.config,
            angle_dims=STATE_ANGLE_DIMS,
        )
        return self.belief

    def update_wheel_odometry(self, enc_wr, enc_wl):
        """Velocity measurement implied by the encoders through the
        differential-drive map, evaluated at the current heading estimate."""
        ref = RobotState(th=float(self.belief.mean[2]))
        z = diff_drive_derivative(ref, WheelCmd(enc_wr, enc_wl), self.params)
        self.belief = ut_update(
            self.belief,
            np.array(z),
            lambda p: p[3:6],
            np.diag(self.r_wheel),
            self.config,
            angle_dims=STATE_ANGLE_DIMS,
        )
        return self.belief

    def update_imu(self, yaw_rate):
        self.belief = ut_update(
            self.belief,
            np.array([yaw_rate]),
            lambda p: p[5:6],
            np.array([[self.r_imu]]),
            self.config,
            angle_dims=STATE_ANGLE_DIMS,
        )
        return self.belief

    def update_hifi(self, odom):
        z = np.array([odom.x, odom.y, odom.th, odom.vx, odom.vy, odom.w])
        self.belief = ut_update(
            self.belief,
            z,
            lambda p: p,
            np.diag(self.r_hifi),
            self.config,
            angle_dims=STATE_ANGLE_DIMS,
            meas_angle_dims=(2,),
        )
        return self.belief

    def step(self, frame):
        """One full fusion tick: predict over dk, then apply every
        measurement the frame carries."""
        self.predict(WheelCmd(frame.enc_wr, frame.enc_wl), frame.dk)
        self.update_wheel_odometry(frame.enc_wr, frame.enc_wl)
        self.update_imu(frame.imu_yaw_rate)
        if frame.hifi is not None:
            self.update_hifi(frame.hifi)
        return self.belief


def run_fusion(frames, config=None, params=None, noise=None, initial=None):
    """Fuse a sensor stream into posterior mean states, one per lofi tick."""
    ukf = RobotUkf(config=config, params=params, noise=noise, initial=initial)
    out = []
    for frame in frames:
        belief = ukf.step(frame)
        out.append(RobotState(*belief.mean))
    return out


def save_fused(states, times, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(FUSED_COLUMNS)
        for t, s in zip(times, states):
            w.writerow([repr(float(v)) for v in (t, s.x, s.y, s.th, s.vx, s.vy, s.w)])


def load_fused(path):
    times = []
    states = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != FUSED_COLUMNS:
            raise ValueError(f"{path}: expected columns {FUSED_COLUMNS}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: bad row ({e})") from None
            times.append(vals[0])
            states.append(RobotState(*vals[1:7]))
    return times, states
