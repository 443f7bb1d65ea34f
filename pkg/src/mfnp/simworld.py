"""Desk-scale robot simulator: ground-truth trajectories with
Ornstein-Uhlenbeck disturbances, multi-rate noisy sensor streams, and a
lossless CSV interchange format.

The truth integrator is the Newton-Euler skid-steer model; the encoder/IMU
stream ticks at a jittered nominal 50 Hz while a simulated high-fidelity
odometry source (truth plus small Gaussian noise) appears on every
``hifi_divisor``-th tick, preserving the fast-and-drifty versus
slow-and-accurate sensor asymmetry.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .physics import (
    WHEEL_RATE_LIMIT,
    BodyVelocity,
    KinematicParams,
    RobotState,
    WheelCmd,
    body_velocity_from_state,
    diff_drive_step,
    skid_steer_step,
    wrap_angle,
)

CSV_COLUMNS = [
    "t",
    "dk",
    "enc_wr",
    "enc_wl",
    "imu_yawrate",
    "hifi_flag",
    "hifi_x",
    "hifi_y",
    "hifi_th",
    "hifi_vx",
    "hifi_vy",
    "hifi_w",
    "true_x",
    "true_y",
    "true_th",
    "true_vx",
    "true_vy",
    "true_w",
]


class DatasetFormatError(ValueError):
    pass


@dataclass
class TrajectoryProfile:
    """Named open-loop command schedule: ordered (duration s, WheelCmd)."""

    name: str
    schedule: list

    def __post_init__(self):
        if not self.schedule or any(d <= 0 for d, _ in self.schedule):
            raise ValueError("schedule needs positive-duration segments")

    @property
    def total_duration(self):
        return sum(d for d, _ in self.schedule)

    def cmd_at(self, t):
        """Command active at time t; the schedule repeats cyclically."""
        t = t % self.total_duration
        acc = 0.0
        for dur, cmd in self.schedule:
            acc += dur
            if t < acc:
                return cmd
        return self.schedule[-1][1]

    def pieces(self, t0, t1):
        """Constant-command pieces covering [t0, t1), as (duration, cmd).

        Splitting integration at command boundaries keeps segment edges
        exact regardless of tick phase; otherwise boundary quantization
        random-walks the net command impulse under jittered ticks.
        """
        out = []
        t = t0
        while t < t1 - 1e-12:
            local = t % self.total_duration
            acc = 0.0
            for dur, cmd in self.schedule:
                acc += dur
                if local < acc - 1e-12:
                    step = min(acc - local, t1 - t)
                    out.append((step, cmd))
                    t += step
                    break
            else:
                # landed exactly on a cycle boundary
                step = min(self.schedule[0][0], t1 - t)
                out.append((step, self.schedule[0][1]))
                t += step
        return out


@dataclass(frozen=True)
class SensorNoiseSpec:
    """Standard deviations of the simulated sensor suite."""

    encoder_sigma: float = 0.05  # rad/s on each wheel rate
    imu_sigma: float = 0.01  # rad/s on the yaw-rate channel
    imu_bias_walk: float = 0.001  # rad/s per sqrt(s) random walk
    hifi_pos_sigma: float = 0.01  # m on hifi x, y (also used for vx, vy)
    hifi_heading_sigma: float = 0.005  # rad on hifi heading (also yaw rate)

    def __post_init__(self):
        for name in (
            "encoder_sigma",
            "imu_sigma",
            "imu_bias_walk",
            "hifi_pos_sigma",
            "hifi_heading_sigma",
        ):
            if getattr(self, name) < 0.0:
                raise ValueError(f"SensorNoiseSpec.{name} must be nonnegative")


@dataclass(frozen=True)
class DisturbanceSpec:
    """Unmodeled-dynamics process added to the state derivatives.

    kind "none" disables it; kind "ou" runs an Ornstein-Uhlenbeck process
    per state dimension with reversion `rate` (1/s) and diffusion `sigma`
    (stationary std sigma/sqrt(2*rate)).
    """

    kind: str = "ou"
    rate: tuple = (0.5, 0.5, 0.5, 0.5, 0.5, 0.5)
    sigma: tuple = (0.004, 0.004, 0.001, 0.01, 0.01, 0.002)

    def __post_init__(self):
        if self.kind not in ("none", "ou"):
            raise ValueError(f"unknown disturbance kind: {self.kind!r}")
        if len(self.rate) != 6 or len(self.sigma) != 6:
            raise ValueError("rate and sigma must have six entries")
        if any(r < 0 for r in self.rate) or any(s < 0 for s in self.sigma):
            raise ValueError("rate and sigma must be nonnegative")


@dataclass(frozen=True)
class SimRates:
    """Tick rates: low-fidelity nominal Hz, hifi tick divisor, dk jitter."""

    lofi_hz: float = 50.0
    hifi_divisor: int = 5
    jitter: float = 0.2

    def __post_init__(self):
        if self.lofi_hz <= 0:
            raise ValueError("lofi_hz must be positive")
        if self.hifi_divisor < 1:
            raise ValueError("hifi_divisor must be >= 1")
        if not (0.0 <= self.jitter < 0.5):
            raise ValueError("jitter fraction must lie in [0, 0.5)")


@dataclass(frozen=True)
class HifiOdom:
    x: float
    y: float
    th: float
    vx: float
    vy: float
    w: float


@dataclass(frozen=True)
class SensorFrame:
    t: float
    dk: float
    enc_wr: float
    enc_wl: float
    imu_yaw_rate: float
    hifi: Optional[HifiOdom] = None


@dataclass(frozen=True)
class GroundTruthFrame:
    t: float
    state: RobotState
    body: BodyVelocity
    disturbance: tuple = (0.0,) * 6


def _ou_advance(value, rate, sigma, dk, noise):
    # exact discretization of dX = -rate*X dt + sigma dW
    if rate > 0.0:
        decay = math.exp(-rate * dk)
        scale = sigma * math.sqrt((1.0 - decay * decay) / (2.0 * rate))
    else:
        decay = 1.0
        scale = sigma * math.sqrt(dk)
    return value * decay + scale * noise


def simulate(
    profile,
    params=None,
    disturbance=None,
    noise=None,
    rates=None,
    seed=0,
    duration=None,
    initial_state=None,
):
    """Generate aligned ground-truth and sensor streams.

    Truth follows the skid-steer model driven by the profile's commands,
    with the OU disturbance added to the state derivatives each tick.
    Fully reproducible from `seed`. Returns (truth frames, sensor frames).
    """
    params = params or KinematicParams()
    disturbance = disturbance or DisturbanceSpec()
    noise = noise or SensorNoiseSpec()
    rates = rates or SimRates()
    if duration is None:
        duration = profile.total_duration
    rng = np.random.default_rng(seed)

    state = initial_state or RobotState()
    body = body_velocity_from_state(state)
    ou = [0.0] * 6
    bias = 0.0
    nominal = 1.0 / rates.lofi_hz

    truth_frames = []
    sensor_frames = []
    t = 0.0
    index = 0
    while t < duration - 1e-12:
        dk = nominal * (1.0 + rates.jitter * (2.0 * rng.random() - 1.0))
        pieces = profile.pieces(t, t + dk)
        wr_sum = 0.0
        wl_sum = 0.0
        for dur, cmd in pieces:
            state, body = skid_steer_step(state, body, cmd, params, dur)
            wr_sum += dur * cmd.wr
            wl_sum += dur * cmd.wl
        span = sum(dur for dur, _ in pieces)
        cmd = WheelCmd(wr_sum / span, wl_sum / span)

        if disturbance.kind == "ou":
            draws = rng.standard_normal(6)
            for j in range(6):
                ou[j] = _ou_advance(
                    ou[j], disturbance.rate[j], disturbance.sigma[j], dk, draws[j]
                )
            state = RobotState(
                x=state.x + dk * ou[0],
                y=state.y + dk * ou[1],
                th=wrap_angle(state.th + dk * ou[2]),
                vx=state.vx + dk * ou[3],
                vy=state.vy + dk * ou[4],
                w=state.w + dk * ou[5],
            )
            body = body_velocity_from_state(state)
        t += dk
        index += 1

        enc = rng.standard_normal(2)
        enc_wr = cmd.wr + noise.encoder_sigma * enc[0]
        enc_wl = cmd.wl + noise.encoder_sigma * enc[1]
        bias += noise.imu_bias_walk * math.sqrt(dk) * rng.standard_normal()
        imu_w = state.w + bias + noise.imu_sigma * rng.standard_normal()

        hifi = None
        if index % rates.hifi_divisor == 0:
            hn = rng.standard_normal(6)
            hifi = HifiOdom(
                x=state.x + noise.hifi_pos_sigma * hn[0],
                y=state.y + noise.hifi_pos_sigma * hn[1],
                th=wrap_angle(state.th + noise.hifi_heading_sigma * hn[2]),
                vx=state.vx + noise.hifi_pos_sigma * hn[3],
                vy=state.vy + noise.hifi_pos_sigma * hn[4],
                w=state.w + noise.hifi_heading_sigma * hn[5],
            )

        truth_frames.append(
            GroundTruthFrame(
                t=t,
                state=RobotState(*state.as_tuple()),
                body=BodyVelocity(body.u, body.v),
                disturbance=tuple(ou) if disturbance.kind == "ou" else (0.0,) * 6,
            )
        )
        sensor_frames.append(
            SensorFrame(
                t=t, dk=dk, enc_wr=enc_wr, enc_wl=enc_wl, imu_yaw_rate=imu_w, hifi=hifi
            )
        )
    return truth_frames, sensor_frames


def dead_reckon(frames, params=None, initial_state=None):
    """Chain differential-drive steps over the encoder readings.

    This stream is the low-fidelity odometry estimate used as conditioning
    data everywhere downstream; it drifts without bound by construction.
    """
    if not frames:
        raise ValueError("dead_reckon: empty sensor stream")
    params = params or KinematicParams()
    state = initial_state or RobotState()
    out = []
    for fr in frames:
        state = diff_drive_step(state, WheelCmd(fr.enc_wr, fr.enc_wl), params, fr.dk)
        out.append(state)
    return out


# ---------------------------------------------------------------------------
# persistence


def _fmt(x):
    return repr(float(x))


def record(truth_frames, sensor_frames, path):
    """Write aligned truth/sensor streams as CSV (one row per lofi tick)."""
    if len(truth_frames) != len(sensor_frames):
        raise ValueError("truth and sensor streams must align one-to-one")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for tf, sf in zip(truth_frames, sensor_frames):
            hifi = sf.hifi
            row = [
                _fmt(sf.t),
                _fmt(sf.dk),
                _fmt(sf.enc_wr),
                _fmt(sf.enc_wl),
                _fmt(sf.imu_yaw_rate),
                "1" if hifi else "0",
            ]
            if hifi:
                row += [_fmt(v) for v in (hifi.x, hifi.y, hifi.th, hifi.vx, hifi.vy, hifi.w)]
            else:
                row += [""] * 6
            s = tf.state
            row += [_fmt(v) for v in (s.x, s.y, s.th, s.vx, s.vy, s.w)]
            w.writerow(row)


def load(path):
    """Read a recorded dataset; returns (truth frames, sensor frames).

    Truth body velocities are recovered by rotating the inertial velocity
    into the body frame; applied disturbances are not part of the schema.
    """
    truth_frames = []
    sensor_frames = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise DatasetFormatError(f"{path}: missing column '{missing[0]}'")
        idx = {c: header.index(c) for c in CSV_COLUMNS}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                flag = row[idx["hifi_flag"]].strip() == "1"
                hifi = None
                if flag:
                    hifi = HifiOdom(
                        *(float(row[idx[c]]) for c in CSV_COLUMNS[6:12])
                    )
                sf = SensorFrame(
                    t=float(row[idx["t"]]),
                    dk=float(row[idx["dk"]]),
                    enc_wr=float(row[idx["enc_wr"]]),
                    enc_wl=float(row[idx["enc_wl"]]),
                    imu_yaw_rate=float(row[idx["imu_yawrate"]]),
                    hifi=hifi,
                )
                state = RobotState(
                    *(float(row[idx[c]]) for c in CSV_COLUMNS[12:18])
                )
            except (ValueError, IndexError) as e:
                raise DatasetFormatError(f"{path}:{lineno}: bad row ({e})") from None
            if sf.dk <= 0:
                raise DatasetFormatError(f"{path}:{lineno}: dk must be positive")
            truth_frames.append(
                GroundTruthFrame(
                    t=sf.t, state=state, body=body_velocity_from_state(state)
                )
            )
            sensor_frames.append(sf)
    return truth_frames, sensor_frames


# ---------------------------------------------------------------------------
# built-in profiles


def _figure_eight(params):
    # two opposite full circles; each segment lasts exactly one circle period
    wr, wl = 12.0, 8.0
    yaw_rate = (params.wheel_radius / params.chassis_width) * (wr - wl)
    period = 2.0 * math.pi / yaw_rate
    return TrajectoryProfile(
        "figure-eight",
        [(period, WheelCmd(wr, wl)), (period, WheelCmd(wl, wr))],
    )


def _pulsed_eight(pulse=0.25):
    """Bang-bang variant of the figure-eight commands.

    The force model has no longitudinal or yaw damping, so any command
    schedule with a sustained nonzero average integrates body speed or yaw
    rate without bound (and the u-v coupling then diverges exponentially).
    Alternating each command with its negation at a short period keeps the
    truth rollout bounded while still exercising both turn directions, which
    is what a high-fidelity simulation scenario needs.
    """
    half = []
    for _ in range(26):
        half.append((pulse, WheelCmd(12.0, 8.0)))
        half.append((pulse, WheelCmd(-12.0, -8.0)))
    other = [(d, WheelCmd(c.wl, c.wr)) for d, c in half]
    return TrajectoryProfile("pulsed-eight", half + other)


def random_teleop(seed=0, segments=48, limit=WHEEL_RATE_LIMIT):
    """Seeded piecewise-constant commands mimicking a cautious teleoperator:
    every pulse is followed by its negation so speeds stay bounded under the
    undamped force model."""
    rng = np.random.default_rng(seed)
    schedule = []
    for _ in range(segments):
        dur = float(rng.uniform(0.2, 0.6))
        base = float(rng.uniform(0.0, 14.0))
        diff = float(rng.uniform(-5.0, 5.0))
        cmd = WheelCmd(base + diff, base - diff).clamped(limit)
        schedule.append((dur, cmd))
        schedule.append((dur, WheelCmd(-cmd.wr, -cmd.wl)))
    return TrajectoryProfile("random-teleop", schedule)


def builtin_profiles(params=None, teleop_seed=0):
    """The stock command schedules, keyed by name."""
    params = params or KinematicParams()
    return {
        "straight": TrajectoryProfile("straight", [(10.0, WheelCmd(10.0, 10.0))]),
        "arc": TrajectoryProfile("arc", [(12.0, WheelCmd(12.0, 8.0))]),
        "figure-eight": _figure_eight(params),
        "pulsed-eight": _pulsed_eight(),
        "random-teleop": random_teleop(teleop_seed),
    }
