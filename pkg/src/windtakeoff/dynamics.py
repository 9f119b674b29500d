"""Vertical-plane quadrotor dynamics under a horizontal wind disturbance.

State ordering everywhere is

    [p_north, p_down, pitch, u_rel, w_rel, pitch_rate]

with north-down inertial positions (m), pitch angle (rad), flow-relative
body-axis velocities (m/s), and pitch rate (rad/s).  Controls are the
front and rear thrusts (N).  The wind enters the kinematics only: the
north position rate picks up the local horizontal wind, while the force
balance acts on flow-relative velocity through quadratic drag, gravity,
and thrust.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

__all__ = [
    "VehicleParams",
    "QuadState",
    "ControlInput",
    "Trajectory",
    "IntegrationError",
    "drag_forces",
    "eom",
    "eom_array",
    "eom_jacobians",
    "integrate",
    "rk4_rollout",
]

STATE_NAMES = ("p_north", "p_down", "pitch", "u_rel", "w_rel", "pitch_rate")
TRAJECTORY_COLUMNS = (
    "t_sec",
    "pN_m",
    "pD_m",
    "theta_rad",
    "ur_mps",
    "wr_mps",
    "q_radps",
    "Tf_N",
    "Tr_N",
)


class IntegrationError(RuntimeError):
    """The adaptive integrator failed (step underflow / blow-up)."""


@dataclass(frozen=True)
class VehicleParams:
    """Rigid-body and aerodynamic constants of the quadrotor."""

    mass: float
    drag_coeffs: tuple
    areas: tuple
    max_thrust: float
    air_density: float
    pitch_inertia: float
    prop_distance: float
    gravity: float = 9.81

    def __post_init__(self):
        object.__setattr__(self, "drag_coeffs", tuple(float(c) for c in self.drag_coeffs))
        object.__setattr__(self, "areas", tuple(float(a) for a in self.areas))
        values = (
            self.mass,
            *self.drag_coeffs,
            *self.areas,
            self.max_thrust,
            self.air_density,
            self.pitch_inertia,
            self.prop_distance,
            self.gravity,
        )
        if any(v <= 0.0 for v in values):
            raise ValueError("all vehicle parameters must be strictly positive")

    @classmethod
    def default(cls) -> "VehicleParams":
        return cls(
            mass=3.696,
            drag_coeffs=(0.8, 0.4),
            areas=(0.0279, 0.109),
            max_thrust=41.6964,
            air_density=1.293,
            pitch_inertia=0.0292,
            prop_distance=0.254,
        )

    @property
    def hover_thrust(self) -> float:
        """Per-rotor-pair thrust that exactly cancels weight at level pitch."""
        return 0.5 * self.mass * self.gravity

    def to_dict(self) -> dict:
        return {
            "mass_kg": self.mass,
            "drag_coeffs": list(self.drag_coeffs),
            "areas_m2": list(self.areas),
            "max_thrust_N": self.max_thrust,
            "air_density_kgpm3": self.air_density,
            "pitch_inertia_kgm2": self.pitch_inertia,
            "prop_distance_m": self.prop_distance,
            "gravity_mps2": self.gravity,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "VehicleParams":
        return cls(
            mass=doc["mass_kg"],
            drag_coeffs=tuple(doc["drag_coeffs"]),
            areas=tuple(doc["areas_m2"]),
            max_thrust=doc["max_thrust_N"],
            air_density=doc["air_density_kgpm3"],
            pitch_inertia=doc["pitch_inertia_kgm2"],
            prop_distance=doc["prop_distance_m"],
            gravity=doc["gravity_mps2"],
        )


@dataclass(frozen=True)
class QuadState:
    p_north: float
    p_down: float
    pitch: float
    u_rel: float
    w_rel: float
    pitch_rate: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError("state components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.p_north, self.p_down, self.pitch, self.u_rel, self.w_rel, self.pitch_rate]
        )

    @classmethod
    def from_array(cls, x) -> "QuadState":
        x = np.asarray(x, dtype=float)
        return cls(*(float(v) for v in x))


@dataclass(frozen=True)
class ControlInput:
    thrust_front: float
    thrust_rear: float

    def as_array(self) -> np.ndarray:
        return np.array([self.thrust_front, self.thrust_rear])

    def clipped(self, max_thrust: float) -> "ControlInput":
        return ControlInput(
            thrust_front=float(np.clip(self.thrust_front, 0.0, max_thrust)),
            thrust_rear=float(np.clip(self.thrust_rear, 0.0, max_thrust)),
        )


def _drag(u_rel, w_rel, params: VehicleParams):
    # -0.5 rho C A v^2 sign(v); writing v*|v| makes sign(0) = 0 automatic.
    rho = params.air_density
    c1, c3 = params.drag_coeffs
    a1, a3 = params.areas
    fd1 = -0.5 * rho * c1 * a1 * u_rel * np.abs(u_rel)
    fd3 = -0.5 * rho * c3 * a3 * w_rel * np.abs(w_rel)
    return fd1, fd3


def drag_forces(state: QuadState, params: VehicleParams) -> tuple:
    """Quadratic drag opposing the flow-relative velocity, per body axis."""
    fd1, fd3 = _drag(state.u_rel, state.w_rel, params)
    return float(fd1), float(fd3)


def eom_array(x, u, wind, t, params: VehicleParams) -> np.ndarray:
    """Vectorized state derivative; ``x`` is (..., 6), ``u`` is (..., 2)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    p_north = x[..., 0]
    pitch = x[..., 2]
    u_rel = x[..., 3]
    w_rel = x[..., 4]
    q = x[..., 5]
    thrust_front = u[..., 0]
    thrust_rear = u[..., 1]

    cos_p = np.cos(pitch)
    sin_p = np.sin(pitch)
    delta = np.asarray(wind(p_north, t), dtype=float)
    fd1, fd3 = _drag(u_rel, w_rel, params)
    m = params.mass
    g = params.gravity

    out = np.empty(np.broadcast_shapes(x[..., 0].shape, u[..., 0].shape) + (6,))
    out[..., 0] = u_rel * cos_p + w_rel * sin_p + delta
    out[..., 1] = -u_rel * sin_p + w_rel * cos_p
    out[..., 2] = q
    out[..., 3] = -q * w_rel + (-m * g * sin_p + fd1) / m
    out[..., 4] = q * u_rel + (m * g * cos_p + fd3 - thrust_front - thrust_rear) / m
    out[..., 5] = (thrust_front - thrust_rear) * params.prop_distance / params.pitch_inertia
    return out


def eom(state, control, wind, t: float, params: VehicleParams) -> np.ndarray:
    """State derivative at one state/control/time; accepts the dataclasses."""
    x = state.as_array() if isinstance(state, QuadState) else np.asarray(state, dtype=float)
    u = control.as_array() if isinstance(control, ControlInput) else np.asarray(control, dtype=float)
    return eom_array(x, u, wind, t, params)


def _wind_gradient(wind, p_north, t):
    grad = getattr(wind, "gradient", None)
    if grad is not None:
        return grad(p_north, t)
    # Central differences for plain callables that expose no gradient.
    h = 1e-6
    dp = (np.asarray(wind(p_north + h, t)) - np.asarray(wind(p_north - h, t))) / (2 * h)
    dt = (np.asarray(wind(p_north, t + h)) - np.asarray(wind(p_north, t - h))) / (2 * h)
    return dp, dt


def eom_jacobians(x, u, wind, t, params: VehicleParams):
    """Partials of the state derivative: (A = df/dx, B = df/du, tau = df/dt).

    Vectorized over leading dimensions like :func:`eom_array`.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    pitch = x[..., 2]
    u_rel = x[..., 3]
    w_rel = x[..., 4]
    q = x[..., 5]
    cos_p = np.cos(pitch)
    sin_p = np.sin(pitch)
    m = params.mass
    g = params.gravity
    rho = params.air_density
    c1, c3 = params.drag_coeffs
    a1, a3 = params.areas

    d_dp, d_dt = _wind_gradient(wind, x[..., 0], t)

    base = np.broadcast_shapes(x[..., 0].shape, u[..., 0].shape)
    A = np.zeros(base + (6, 6))
    A[..., 0, 0] = d_dp
    A[..., 0, 2] = -u_rel * sin_p + w_rel * cos_p
    A[..., 0, 3] = cos_p
    A[..., 0, 4] = sin_p
    A[..., 1, 2] = -u_rel * cos_p - w_rel * sin_p
    A[..., 1, 3] = -sin_p
    A[..., 1, 4] = cos_p
    A[..., 2, 5] = 1.0
    A[..., 3, 2] = -g * cos_p
    A[..., 3, 3] = -(rho * c1 * a1 / m) * np.abs(u_rel)
    A[..., 3, 4] = -q
    A[..., 3, 5] = -w_rel
    A[..., 4, 2] = -g * sin_p
    A[..., 4, 3] = q
    A[..., 4, 4] = -(rho * c3 * a3 / m) * np.abs(w_rel)
    A[..., 4, 5] = u_rel

    B = np.zeros(base + (6, 2))
    B[..., 4, 0] = -1.0 / m
    B[..., 4, 1] = -1.0 / m
    B[..., 5, 0] = params.prop_distance / params.pitch_inertia
    B[..., 5, 1] = -params.prop_distance / params.pitch_inertia

    tau = np.zeros(base + (6,))
    tau[..., 0] = d_dt
    return A, B, tau


@dataclass(frozen=True)
class Trajectory:
    """Time-sampled state and control history."""

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        controls = np.asarray(self.controls, dtype=float)
        if states.shape != (times.size, 6) or controls.shape != (times.size, 2):
            raise ValueError("states must be (n, 6) and controls (n, 2)")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRAJECTORY_COLUMNS)
        for t, x, u in zip(self.times, self.states, self.controls):
            writer.writerow([f"{v:.17g}" for v in (t, *x, *u)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != TRAJECTORY_COLUMNS:
            raise ValueError(f"expected header {','.join(TRAJECTORY_COLUMNS)}")
        data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
        return cls(times=data[:, 0], states=data[:, 1:7], controls=data[:, 7:9])


def integrate(
    initial,
    control_schedule,
    wind,
    t_span,
    params: VehicleParams,
    t_eval=None,
    rtol: float = 1e-9,
    atol: float = 1e-9,
) -> Trajectory:
    """Adaptive Dormand-Prince (RK45) rollout of the equations of motion.

    ``control_schedule`` maps a time to the (front, rear) thrust pair.
    Output is sampled at ``t_eval`` when given, otherwise at the solver's
    own accepted steps.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    x0 = initial.as_array() if isinstance(initial, QuadState) else np.asarray(initial, dtype=float)

    def rhs(t, y):
        u = np.asarray(control_schedule(t), dtype=float)
        return eom_array(y, u, wind, t, params)

    sol = solve_ivp(rhs, (t0, t1), x0, method="RK45", rtol=rtol, atol=atol, t_eval=t_eval)
    if not sol.success:
        raise IntegrationError(sol.message)
    times = sol.t
    states = sol.y.T
    controls = np.array([np.asarray(control_schedule(t), dtype=float) for t in times])
    return Trajectory(times=times, states=states, controls=controls)


def rk4_rollout(
    initial,
    control_schedule,
    wind,
    t_span,
    n_steps: int,
    params: VehicleParams,
) -> Trajectory:
    """Fixed-step classic Runge-Kutta rollout, for convergence studies."""
    t0, t1 = float(t_span[0]), float(t_span[1])
    h = (t1 - t0) / n_steps
    x0 = initial.as_array() if isinstance(initial, QuadState) else np.asarray(initial, dtype=float)

    def rhs(t, y):
        u = np.asarray(control_schedule(t), dtype=float)
        return eom_array(y, u, wind, t, params)

    times = t0 + h * np.arange(n_steps + 1)
    states = np.empty((n_steps + 1, 6))
    states[0] = x0
    x = x0.copy()
    for i in range(n_steps):
        t = times[i]
        k1 = rhs(t, x)
        k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = rhs(t + h, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        states[i + 1] = x
    controls = np.array([np.asarray(control_schedule(t), dtype=float) for t in times])
    return Trajectory(times=times, states=states, controls=controls)
