"""Planar physics models for a four-wheeled skid-steer robot.

Two fidelity levels share one parameter set:

* a differential-drive kinematic model (wheel odometry level), integrated
  with explicit Euler, and
* a Newton-Euler force model with longitudinal traction, lateral slip and
  yaw inertia, integrated with classic RK4.

All functions are pure and operate on plain floats, so they are cheap
enough to sit inside sigma-point loops and per-tick simulator updates.
"""

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi

# default |wheel rate| limit, rad/s
WHEEL_RATE_LIMIT = 25.0


def wrap_angle(theta):
    """Wrap an angle to the half-open interval (-pi, pi]."""
    return math.pi - (math.pi - theta) % TWO_PI


@dataclass
class RobotState:
    """Planar pose and inertial-frame velocities.

    x, y in meters; th (heading) in radians, wrapped to (-pi, pi];
    vx, vy in m/s; w (yaw rate) in rad/s.
    """

    x: float = 0.0
    y: float = 0.0
    th: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    w: float = 0.0

    def as_tuple(self):
        return (self.x, self.y, self.th, self.vx, self.vy, self.w)

    @staticmethod
    def from_tuple(t):
        return RobotState(*map(float, t))


@dataclass(frozen=True)
class WheelCmd:
    """Right/left wheel angular rates in rad/s."""

    wr: float
    wl: float

    def clamped(self, limit=WHEEL_RATE_LIMIT):
        return WheelCmd(
            max(-limit, min(limit, self.wr)), max(-limit, min(limit, self.wl))
        )


@dataclass(frozen=True)
class KinematicParams:
    """Static platform constants.

    mass kg, wheel_radius m, chassis_width m (wheel-to-wheel), yaw_inertia
    kg*m^2, traction_gain N*s/m, slip_gain N*s/m.
    """

    mass: float = 10.7
    wheel_radius: float = 0.034
    chassis_width: float = 0.288
    yaw_inertia: float = 4.35
    traction_gain: float = 15.0
    slip_gain: float = 11.5

    def __post_init__(self):
        for name in (
            "mass",
            "wheel_radius",
            "chassis_width",
            "yaw_inertia",
            "traction_gain",
            "slip_gain",
        ):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"KinematicParams.{name} must be strictly positive")


@dataclass(frozen=True)
class BodyForces:
    """Net longitudinal force, lateral slip force and yaw moment, together
    with the body-frame velocities they were computed from."""

    fx: float
    fy: float
    mz: float
    u: float
    v: float


@dataclass
class BodyVelocity:
    """Body-frame longitudinal (u) and lateral (v) velocity, m/s."""

    u: float = 0.0
    v: float = 0.0


def body_velocity_from_state(state):
    """Recover body-frame velocities by rotating the inertial velocity
    into the heading frame."""
    c, s = math.cos(state.th), math.sin(state.th)
    return BodyVelocity(u=c * state.vx + s * state.vy, v=-s * state.vx + c * state.vy)


def body_forces(cmd, body, params):
    """Traction/slip forces and yaw moment for the current wheel rates."""
    fx = 0.5 * params.traction_gain * (cmd.wr + cmd.wl)
    fy = -params.slip_gain * body.v
    mz = params.chassis_width * params.traction_gain * (cmd.wr - cmd.wl)
    return BodyForces(fx=fx, fy=fy, mz=mz, u=body.u, v=body.v)


# ---------------------------------------------------------------------------
# low-fidelity model: differential-drive kinematics


def diff_drive_derivative(state, cmd, params):
    """Instantaneous (dx, dy, dth) of the differential-drive model.

    Right-minus-left wheel rate drives positive yaw.
    """
    half_r = 0.5 * params.wheel_radius
    speed = half_r * (cmd.wr + cmd.wl)
    dx = speed * math.cos(state.th)
    dy = speed * math.sin(state.th)
    dth = (params.wheel_radius / params.chassis_width) * (cmd.wr - cmd.wl)
    return dx, dy, dth


def diff_drive_step(state, cmd, params, dk):
    """One explicit-Euler step of the differential-drive model over dk seconds.

    The returned velocity fields are the derivatives at the step start,
    matching what a wheel-odometry sensor would report for the interval.
    """
    if dk <= 0.0:
        raise ValueError(f"diff_drive_step: dk must be positive, got {dk}")
    dx, dy, dth = diff_drive_derivative(state, cmd, params)
    return RobotState(
        x=state.x + dk * dx,
        y=state.y + dk * dy,
        th=wrap_angle(state.th + dk * dth),
        vx=dx,
        vy=dy,
        w=dth,
    )


# ---------------------------------------------------------------------------
# higher-fidelity model: planar Newton-Euler skid-steer


def skid_steer_derivative(state, body, cmd, params):
    """Time derivatives of the Newton-Euler skid-steer model.

    Body-frame momentum balance with centripetal coupling,
    m*(du - v*w) = F_x and m*(dv + u*w) = F_y; any other sign pairing
    makes the u-v subsystem exponentially unstable for every nonzero yaw
    rate, which overflows long rollouts.

    Returns (du, dv, dw, dx, dy): body-frame accelerations, yaw
    acceleration, and the inertial-frame velocity of the body origin.
    """
    f = body_forces(cmd, body, params)
    m = params.mass
    du = (f.fx + m * body.v * state.w) / m
    dv = (f.fy - m * body.u * state.w) / m
    dw = f.mz / params.yaw_inertia
    c, s = math.cos(state.th), math.sin(state.th)
    dx = c * body.u - s * body.v
    dy = s * body.u + c * body.v
    return du, dv, dw, dx, dy


def _skid_rhs(y, cmd, params):
    # y = (x, y, th, u, v, w); returns dy/dt
    x_, y_, th, u, v, w = y
    f_fx = 0.5 * params.traction_gain * (cmd.wr + cmd.wl)
    f_fy = -params.slip_gain * v
    f_mz = params.chassis_width * params.traction_gain * (cmd.wr - cmd.wl)
    m = params.mass
    du = (f_fx + m * v * w) / m
    dv = (f_fy - m * u * w) / m
    dw = f_mz / params.yaw_inertia
    c, s = math.cos(th), math.sin(th)
    return (c * u - s * v, s * u + c * v, w, du, dv, dw)


def skid_steer_step(state, body, cmd, params, dk):
    """One RK4 step of the skid-steer model over dk seconds.

    Returns (next RobotState, next BodyVelocity); the output velocities are
    the instantaneous values at the end of the step.
    """
    if dk <= 0.0:
        raise ValueError(f"skid_steer_step: dk must be positive, got {dk}")
    y0 = (state.x, state.y, state.th, body.u, body.v, state.w)
    k1 = _skid_rhs(y0, cmd, params)
    y1 = tuple(y0[i] + 0.5 * dk * k1[i] for i in range(6))
    k2 = _skid_rhs(y1, cmd, params)
    y2 = tuple(y0[i] + 0.5 * dk * k2[i] for i in range(6))
    k3 = _skid_rhs(y2, cmd, params)
    y3 = tuple(y0[i] + dk * k3[i] for i in range(6))
    k4 = _skid_rhs(y3, cmd, params)
    yn = tuple(
        y0[i] + (dk / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        for i in range(6)
    )
    x_, yy, th, u, v, w = yn
    th = wrap_angle(th)
    c, s = math.cos(th), math.sin(th)
    next_state = RobotState(
        x=x_, y=yy, th=th, vx=c * u - s * v, vy=s * u + c * v, w=w
    )
    return next_state, BodyVelocity(u=u, v=v)
