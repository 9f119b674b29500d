"""Minimum-time takeoff planning by direct collocation.

The free-final-time optimal control problem (reach a vertical-plane
waypoint as fast as possible under thrust and state limits, with the wind
treated as a known disturbance) is transcribed into a nonlinear program:
states and controls at K+1 nodes plus the horizon length form the decision
vector, the dynamics become per-segment defect equalities, and every box
limit becomes a bound on a decision variable.  Hermite-Simpson defects are
the default,

    0 = x[k+1] - x[k] - h/6 * (f[k] + 4 f[mid] + f[k+1]),
    x[mid] = (x[k] + x[k+1])/2 + h/8 * (f[k] - f[k+1]),

with a plain trapezoidal rule available as a fallback.  Variables are
nondimensionalized (lengths by a reference length, speeds by sqrt(g*L),
time by sqrt(L/g), thrust by its limit) so the NLP is well scaled.

The NLP is solved by an augmented-Lagrangian outer loop over the equality
constraints with L-BFGS-B as the bound-constrained quasi-Newton inner
solver.  Constraint Jacobians are analytic throughout.  Solutions are
re-simulated with an adaptive Runge-Kutta integrator and accepted only
when the replay under the same wind lands within 2% of the
initial-to-waypoint distance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.interpolate import CubicSpline

from .dynamics import (
    QuadState,
    Trajectory,
    VehicleParams,
    eom_array,
    eom_jacobians,
    integrate,
)

__all__ = [
    "BoundarySpec",
    "PathBounds",
    "TranscriptionConfig",
    "TranscribedProblem",
    "TrajectoryPlan",
    "VerificationReport",
    "transcribe",
    "solve",
    "verify",
    "kinematic_lower_bound",
]

WAYPOINT_MISS_FRACTION = 0.02


@dataclass(frozen=True)
class BoundarySpec:
    """Takeoff boundary conditions: full initial state, terminal waypoint
    plus terminal boxes on the remaining states, and the final-time window.
    """

    initial_state: QuadState
    final_position: tuple
    final_pitch_bounds: tuple = (-math.radians(30.0), math.radians(30.0))
    final_u_rel_bounds: tuple = (-5.0, 5.0)
    final_w_rel_bounds: tuple = (-5.0, 5.0)
    final_pitch_rate_bounds: tuple = (-math.radians(100.0), math.radians(100.0))
    t_init: float = 0.0
    t_final_bounds: tuple = (0.0, 30.0)

    def __post_init__(self):
        for name in (
            "final_pitch_bounds",
            "final_u_rel_bounds",
            "final_w_rel_bounds",
            "final_pitch_rate_bounds",
        ):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: ({lo}, {hi})")
        if self.t_final_bounds[1] <= self.t_init:
            raise ValueError("t_final upper bound must exceed t_init")

    @property
    def waypoint(self) -> np.ndarray:
        return np.asarray(self.final_position, dtype=float)

    @property
    def waypoint_distance(self) -> float:
        start = self.initial_state.as_array()[:2]
        return float(np.linalg.norm(self.waypoint - start))

    def terminal_boxes(self) -> np.ndarray:
        """(lo, hi) rows for the four box-bounded terminal states."""
        return np.array(
            [
                self.final_pitch_bounds,
                self.final_u_rel_bounds,
                self.final_w_rel_bounds,
                self.final_pitch_rate_bounds,
            ]
        )

    def to_dict(self) -> dict:
        return {
            "initial_state": list(self.initial_state.as_array()),
            "final_position_m": list(self.waypoint),
            "final_pitch_bounds_rad": list(self.final_pitch_bounds),
            "final_u_rel_bounds_mps": list(self.final_u_rel_bounds),
            "final_w_rel_bounds_mps": list(self.final_w_rel_bounds),
            "final_pitch_rate_bounds_radps": list(self.final_pitch_rate_bounds),
            "t_init_s": self.t_init,
            "t_final_bounds_s": list(self.t_final_bounds),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BoundarySpec":
        return cls(
            initial_state=QuadState.from_array(doc["initial_state"]),
            final_position=tuple(doc["final_position_m"]),
            final_pitch_bounds=tuple(doc["final_pitch_bounds_rad"]),
            final_u_rel_bounds=tuple(doc["final_u_rel_bounds_mps"]),
            final_w_rel_bounds=tuple(doc["final_w_rel_bounds_mps"]),
            final_pitch_rate_bounds=tuple(doc["final_pitch_rate_bounds_radps"]),
            t_init=doc["t_init_s"],
            t_final_bounds=tuple(doc["t_final_bounds_s"]),
        )


@dataclass(frozen=True)
class PathBounds:
    """Box limits enforced on every collocation node."""

    state_lower: np.ndarray
    state_upper: np.ndarray
    control_lower: float = 0.0
    control_upper: float = float("inf")

    def __post_init__(self):
        lower = np.asarray(self.state_lower, dtype=float)
        upper = np.asarray(self.state_upper, dtype=float)
        if lower.shape != (6,) or upper.shape != (6,):
            raise ValueError("state bounds must have 6 entries")
        if np.any(lower > upper) or self.control_lower > self.control_upper:
            raise ValueError("bounds describe an empty box")
        object.__setattr__(self, "state_lower", lower)
        object.__setattr__(self, "state_upper", upper)

    @classmethod
    def default(cls, max_thrust: float) -> "PathBounds":
        big_angle = math.radians(60.0)
        big_rate = math.radians(1000.0)
        return cls(
            state_lower=np.array([-50.0, -50.0, -big_angle, -50.0, -50.0, -big_rate]),
            state_upper=np.array([50.0, 50.0, big_angle, 50.0, 50.0, big_rate]),
            control_lower=0.0,
            control_upper=max_thrust,
        )


@dataclass(frozen=True)
class TranscriptionConfig:
    """Knobs of the transcription and of the NLP solver."""

    scheme: str = "hermite-simpson"
    num_segments: int = 60
    feasibility_tol: float = 1e-6
    optimality_tol: float = 1e-4
    max_outer_iters: int = 25
    max_inner_iters: int = 60
    # Penalty acts on step-normalized defect rows; a soft start lets the
    # first subproblems find the fast basin before feasibility tightens.
    penalty_init: float = 0.05
    penalty_max: float = 1e5
    guess_policy: str = "linear"
    guess_jitter: float = 0.02
    ref_length: float = 40.0
    min_horizon: float = 0.01

    def __post_init__(self):
        if self.scheme not in ("hermite-simpson", "trapezoidal"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.num_segments < 10:
            raise ValueError("num_segments must be at least 10")
        if self.guess_policy != "linear":
            raise ValueError(f"unknown guess policy {self.guess_policy!r}")


def kinematic_lower_bound(boundary: BoundarySpec, wind, params: VehicleParams) -> float:
    """Shortest time any control could cover the waypoint distance.

    Inertial speed can grow no faster than (2 T_max / m + g) and starts no
    higher than the largest wind magnitude, so the distance covered by
    time t is bounded by a quadratic whose positive root bounds the cost
    from below.
    """
    dist = boundary.waypoint_distance
    if dist == 0.0:
        return 0.0
    if hasattr(wind, "max_abs"):
        wind_cap = float(wind.max_abs)
    else:
        span = np.linspace(-100.0, 100.0, 101)
        wind_cap = float(np.max(np.abs(wind(span, np.full_like(span, boundary.t_init)))))
    a_max = 2.0 * params.max_thrust / params.mass + params.gravity
    return (-wind_cap + math.sqrt(wind_cap**2 + 2.0 * a_max * dist)) / a_max


@dataclass(frozen=True)
class _Scaling:
    length: float
    gravity: float

    @property
    def speed(self) -> float:
        return math.sqrt(self.gravity * self.length)

    @property
    def time(self) -> float:
        return math.sqrt(self.length / self.gravity)

    @property
    def state(self) -> np.ndarray:
        return np.array(
            [self.length, self.length, 1.0, self.speed, self.speed, 1.0 / self.time]
        )


class TranscribedProblem:
    """The direct-collocation NLP: bounds, objective, equality constraints.

    Decision vector layout (all nondimensional):

        z = [states at K+1 nodes (row-major), controls at K+1 nodes,
             horizon length]

    Equality constraints are the K*6 collocation defects followed by the
    6 initial-state equalities and the 2 terminal-position equalities.
    Boundary equalities are additionally pinned through the variable
    bounds, so the inner solver never violates them.
    """

    def __init__(
        self,
        boundary: BoundarySpec,
        bounds: PathBounds,
        wind,
        params: VehicleParams,
        cfg: TranscriptionConfig,
    ):
        self.boundary = boundary
        self.path_bounds = bounds
        self.wind = wind
        self.params = params
        self.cfg = cfg
        self.scaling = _Scaling(length=cfg.ref_length, gravity=params.gravity)

        k = cfg.num_segments
        self.num_segments = k
        self.n_state_vars = 6 * (k + 1)
        self.n_control_vars = 2 * (k + 1)
        self.n_vars = self.n_state_vars + self.n_control_vars + 1
        self.n_defects = 6 * k
        self.n_eq = self.n_defects + 8

        s = self.scaling
        state_scale = s.state
        self._state_scale = state_scale
        self._thrust_scale = params.max_thrust
        self._time_scale = s.time
        # Chain-rule factors taking physical Jacobians to scaled ones.
        self._A_factor = s.time * state_scale[None, :] / state_scale[:, None]
        self._B_factor = s.time * self._thrust_scale / state_scale[:, None] * np.ones((6, 2))
        self._tau_factor = s.time**2 / state_scale
        self._f_factor = s.time / state_scale

        self._alpha = np.arange(k + 1) / k
        self._node_index = np.arange(k)

        self._x_init_scaled = boundary.initial_state.as_array() / state_scale
        self._waypoint_scaled = boundary.waypoint / s.length
        self.kinematic_bound = kinematic_lower_bound(boundary, wind, params)
        self._build_bounds()

    # -- bounds -----------------------------------------------------------

    def _build_bounds(self):
        k = self.num_segments
        state_scale = self._state_scale
        xl = self.path_bounds.state_lower / state_scale
        xu = self.path_bounds.state_upper / state_scale

        x_lower = np.tile(xl, (k + 1, 1))
        x_upper = np.tile(xu, (k + 1, 1))

        x0 = self._x_init_scaled
        if np.any(x0 < xl - 1e-12) or np.any(x0 > xu + 1e-12):
            raise ValueError("initial state lies outside the path bounds")
        x_lower[0] = x0
        x_upper[0] = x0

        # terminal_boxes rows are (pitch, u_rel, w_rel, pitch_rate); scale
        # each row by its state scale and intersect with the path bounds.
        boxes = self.boundary.terminal_boxes() / state_scale[2:][:, None]
        term_lo = np.maximum(boxes[:, 0], xl[2:])
        term_hi = np.minimum(boxes[:, 1], xu[2:])
        if np.any(term_lo > term_hi):
            raise ValueError("terminal boxes do not intersect the path bounds")
        wp = self._waypoint_scaled
        if np.any(wp < xl[:2] - 1e-12) or np.any(wp > xu[:2] + 1e-12):
            raise ValueError("waypoint lies outside the path bounds")
        x_lower[k, :2] = wp
        x_upper[k, :2] = wp
        x_lower[k, 2:] = term_lo
        x_upper[k, 2:] = term_hi

        u_lo = self.path_bounds.control_lower / self._thrust_scale
        u_hi = self.path_bounds.control_upper / self._thrust_scale
        u_lower = np.full((k + 1, 2), u_lo)
        u_upper = np.full((k + 1, 2), u_hi)

        horizon_hi = self.boundary.t_final_bounds[1] - self.boundary.t_init
        # No feasible plan can beat the kinematic bound, so it is a valid
        # hard lower bound on the horizon; without it a weakly penalized
        # subproblem can crush the horizon variable instead of flying.
        horizon_lo = max(self.cfg.min_horizon, 0.995 * self.kinematic_bound)
        horizon_lo = min(horizon_lo, 0.5 * horizon_hi)
        self.lower = np.concatenate(
            [x_lower.ravel(), u_lower.ravel(), [horizon_lo / self._time_scale]]
        )
        self.upper = np.concatenate(
            [x_upper.ravel(), u_upper.ravel(), [horizon_hi / self._time_scale]]
        )

    # -- packing ----------------------------------------------------------

    def _split(self, z):
        k = self.num_segments
        x = z[: self.n_state_vars].reshape(k + 1, 6)
        u = z[self.n_state_vars : self.n_state_vars + self.n_control_vars].reshape(k + 1, 2)
        return x, u, z[-1]

    def pack(self, states_scaled, controls_scaled, horizon_scaled) -> np.ndarray:
        return np.concatenate(
            [np.ravel(states_scaled), np.ravel(controls_scaled), [horizon_scaled]]
        )

    def unpack(self, z):
        """Physical (times, states, controls, t_final) from a decision vector."""
        x, u, horizon = self._split(z)
        times = self.boundary.t_init + self._alpha * horizon * self._time_scale
        return (
            times,
            x * self._state_scale,
            u * self._thrust_scale,
            float(times[-1]),
        )

    # -- scaled dynamics ---------------------------------------------------

    def _f_scaled(self, x_scaled, u_scaled, t_scaled):
        x = x_scaled * self._state_scale
        u = u_scaled * self._thrust_scale
        t = self.boundary.t_init + t_scaled * self._time_scale
        f = eom_array(x, u, self.wind, t, self.params)
        return f * self._f_factor

    def _f_jac_scaled(self, x_scaled, u_scaled, t_scaled):
        x = x_scaled * self._state_scale
        u = u_scaled * self._thrust_scale
        t = self.boundary.t_init + t_scaled * self._time_scale
        f = eom_array(x, u, self.wind, t, self.params)
        a, b, tau = eom_jacobians(x, u, self.wind, t, self.params)
        return (
            f * self._f_factor,
            a * self._A_factor,
            b * self._B_factor,
            tau * self._tau_factor,
        )

    # -- constraints -------------------------------------------------------

    def _boundary_residuals(self, x):
        k = self.num_segments
        res_init = x[0] - self._x_init_scaled
        res_term = x[k, :2] - self._waypoint_scaled
        return np.concatenate([res_init, res_term])

    def constraints(self, z) -> np.ndarray:
        c, _ = self._eval(z, need_jac=False)
        return c

    def constraints_jac(self, z) -> np.ndarray:
        """Dense Jacobian of the equality constraints (rows) wrt z (cols)."""
        _, blocks = self._eval(z, need_jac=True)
        return self._assemble_dense(blocks)

    def _eval(self, z, need_jac):
        k = self.num_segments
        x, u, horizon = self._split(z)
        h = horizon / k
        t_nodes = self._alpha * horizon
        alpha_k = self._alpha[:-1]
        alpha_k1 = self._alpha[1:]

        if not need_jac:
            f = self._f_scaled(x, u, t_nodes)
        else:
            f, a, b, tau = self._f_jac_scaled(x, u, t_nodes)
        fk, fk1 = f[:-1], f[1:]

        if self.cfg.scheme == "trapezoidal":
            defects = x[1:] - x[:-1] - (h / 2.0) * (fk + fk1)
            if not need_jac:
                return self._stack(defects, x), None
            eye6 = np.eye(6)
            d_xk = -eye6 - (h / 2.0) * a[:-1]
            d_xk1 = eye6 - (h / 2.0) * a[1:]
            d_uk = -(h / 2.0) * b[:-1]
            d_uk1 = -(h / 2.0) * b[1:]
            d_T = (
                -(1.0 / (2.0 * k)) * (fk + fk1)
                - (h / 2.0)
                * (tau[:-1] * alpha_k[:, None] + tau[1:] * alpha_k1[:, None])
            )
            return self._stack(defects, x), (d_xk, d_xk1, d_uk, d_uk1, d_T)

        # Hermite-Simpson with the midpoint state eliminated.
        x_mid = 0.5 * (x[:-1] + x[1:]) + (h / 8.0) * (fk - fk1)
        u_mid = 0.5 * (u[:-1] + u[1:])
        alpha_m = alpha_k + 0.5 / k
        t_mid = alpha_m * horizon
        if not need_jac:
            f_mid = self._f_scaled(x_mid, u_mid, t_mid)
            defects = x[1:] - x[:-1] - (h / 6.0) * (fk + 4.0 * f_mid + fk1)
            return self._stack(defects, x), None

        f_mid, a_mid, b_mid, tau_mid = self._f_jac_scaled(x_mid, u_mid, t_mid)
        defects = x[1:] - x[:-1] - (h / 6.0) * (fk + 4.0 * f_mid + fk1)

        eye6 = np.eye(6)
        a_k, a_k1 = a[:-1], a[1:]
        b_k, b_k1 = b[:-1], b[1:]
        tau_k, tau_k1 = tau[:-1], tau[1:]

        dxm_dxk = 0.5 * eye6 + (h / 8.0) * a_k
        dxm_dxk1 = 0.5 * eye6 - (h / 8.0) * a_k1
        dxm_dT = (1.0 / (8.0 * k)) * (fk - fk1) + (h / 8.0) * (
            tau_k * alpha_k[:, None] - tau_k1 * alpha_k1[:, None]
        )

        am_dxk = np.einsum("kij,kjl->kil", a_mid, dxm_dxk)
        am_dxk1 = np.einsum("kij,kjl->kil", a_mid, dxm_dxk1)
        am_buk = np.einsum("kij,kjl->kil", a_mid, (h / 8.0) * b_k)
        am_buk1 = np.einsum("kij,kjl->kil", a_mid, -(h / 8.0) * b_k1)
        dfm_dT = (
            np.einsum("kij,kj->ki", a_mid, dxm_dT) + tau_mid * alpha_m[:, None]
        )

        d_xk = -eye6 - (h / 6.0) * (a_k + 4.0 * am_dxk)
        d_xk1 = eye6 - (h / 6.0) * (a_k1 + 4.0 * am_dxk1)
        d_uk = -(h / 6.0) * (b_k + 4.0 * (am_buk + 0.5 * b_mid))
        d_uk1 = -(h / 6.0) * (b_k1 + 4.0 * (am_buk1 + 0.5 * b_mid))
        d_T = (
            -(1.0 / (6.0 * k)) * (fk + 4.0 * f_mid + fk1)
            - (h / 6.0)
            * (
                tau_k * alpha_k[:, None]
                + 4.0 * dfm_dT
                + tau_k1 * alpha_k1[:, None]
            )
        )
        return self._stack(defects, x), (d_xk, d_xk1, d_uk, d_uk1, d_T)

    def _stack(self, defects, x):
        return np.concatenate([defects.ravel(), self._boundary_residuals(x)])

    def _assemble_dense(self, blocks) -> np.ndarray:
        d_xk, d_xk1, d_uk, d_uk1, d_T = blocks
        k = self.num_segments
        n = self.n_vars
        jac = np.zeros((self.n_eq, n))
        rows = jac[: self.n_defects].reshape(k, 6, n)

        seg = self._node_index[:, None, None]
        comp = np.arange(6)[None, :, None]
        cols_x = (6 * self._node_index)[:, None, None] + np.arange(6)[None, None, :]
        cols_u = (
            self.n_state_vars
            + (2 * self._node_index)[:, None, None]
            + np.arange(2)[None, None, :]
        )
        rows[seg, comp, cols_x] = d_xk
        rows[seg, comp, cols_x + 6] = d_xk1
        rows[seg, comp, cols_u] = d_uk
        rows[seg, comp, cols_u + 2] = d_uk1
        rows[:, :, n - 1] = d_T

        base = self.n_defects
        for i in range(6):
            jac[base + i, i] = 1.0
        jac[base + 6, 6 * k + 0] = 1.0
        jac[base + 7, 6 * k + 1] = 1.0
        return jac

    def _jac_t_vec(self, blocks, v) -> np.ndarray:
        """J(z)^T v without materializing the dense Jacobian."""
        d_xk, d_xk1, d_uk, d_uk1, d_T = blocks
        k = self.num_segments
        vd = v[: self.n_defects].reshape(k, 6)
        v_init = v[self.n_defects : self.n_defects + 6]
        v_term = v[self.n_defects + 6 :]

        g = np.zeros(self.n_vars)
        gx = g[: self.n_state_vars].reshape(k + 1, 6)
        gu = g[self.n_state_vars : self.n_state_vars + self.n_control_vars].reshape(k + 1, 2)
        gx[:-1] += np.einsum("kij,ki->kj", d_xk, vd)
        gx[1:] += np.einsum("kij,ki->kj", d_xk1, vd)
        gu[:-1] += np.einsum("kij,ki->kj", d_uk, vd)
        gu[1:] += np.einsum("kij,ki->kj", d_uk1, vd)
        g[-1] += float(np.sum(d_T * vd))
        gx[0] += v_init
        gx[-1, 0] += v_term[0]
        gx[-1, 1] += v_term[1]
        return g

    # -- NLP callbacks -----------------------------------------------------

    def objective(self, z):
        """Scaled horizon length and its (constant) gradient."""
        grad = np.zeros(self.n_vars)
        grad[-1] = 1.0
        return float(z[-1]), grad

    def lagrangian(self, z, multipliers, penalty):
        """Augmented-Lagrangian value and gradient at ``z``."""
        c, blocks = self._eval(z, need_jac=True)
        v = multipliers + penalty * c
        value = float(z[-1]) + float(multipliers @ c) + 0.5 * penalty * float(c @ c)
        grad = self._jac_t_vec(blocks, v)
        grad[-1] += 1.0
        return value, grad

    def kkt_residual(self, z, multipliers) -> float:
        """Projected-gradient norm of the Lagrangian at multiplier estimate."""
        _, blocks = self._eval(z, need_jac=True)
        grad = self._jac_t_vec(blocks, multipliers)
        grad[-1] += 1.0
        at_lower = z <= self.lower + 1e-12
        at_upper = z >= self.upper - 1e-12
        proj = np.where(at_lower, np.minimum(grad, 0.0), grad)
        proj = np.where(at_upper, np.maximum(proj, 0.0), proj)
        return float(np.max(np.abs(proj)))

    def initial_guess(self, jitter_seed=None) -> np.ndarray:
        """Linear state interpolation, hover thrust, doubled kinematic bound.

        With ``jitter_seed`` a bounded random perturbation is added, used
        by multi-start robustness checks.
        """
        k = self.num_segments
        x0 = self._x_init_scaled
        x_final = np.array([*self._waypoint_scaled, 0.0, 0.0, 0.0, 0.0])
        frac = self._alpha[:, None]
        states = (1.0 - frac) * x0[None, :] + frac * x_final[None, :]
        hover = self.params.hover_thrust / self._thrust_scale
        controls = np.full((k + 1, 2), hover)
        horizon = 2.0 * self.kinematic_bound / self._time_scale
        horizon = float(np.clip(horizon, self.lower[-1], self.upper[-1]))
        z = self.pack(states, controls, horizon)
        if jitter_seed is not None and self.cfg.guess_jitter > 0.0:
            rng = np.random.default_rng(jitter_seed)
            z = z + self.cfg.guess_jitter * rng.standard_normal(z.size)
        return np.clip(z, self.lower, self.upper)


def transcribe(
    boundary: BoundarySpec,
    bounds: PathBounds,
    wind,
    params: VehicleParams,
    cfg: TranscriptionConfig | None = None,
) -> TranscribedProblem:
    """Build the collocation NLP for one takeoff problem."""
    return TranscribedProblem(boundary, bounds, wind, params, cfg or TranscriptionConfig())


@dataclass(frozen=True)
class TrajectoryPlan:
    """A solved plan: node trajectory, cost, and solver diagnostics."""

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    cost: float
    converged: bool
    diagnostics: dict
    boundary: BoundarySpec
    thrust_limit: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("plan times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", np.asarray(self.states, dtype=float))
        object.__setattr__(self, "controls", np.asarray(self.controls, dtype=float))

    def control_schedule(self):
        """Cubic-spline interpolant of the node controls, clamped to limits.

        Interpolation can overshoot around thrust switches; clamping keeps
        the replayed control physical.
        """
        spline = CubicSpline(self.times, self.controls, axis=0)
        lo, hi = 0.0, self.thrust_limit
        t0, t1 = self.times[0], self.times[-1]

        def schedule(t):
            return np.clip(spline(np.clip(t, t0, t1)), lo, hi)

        return schedule

    def to_trajectory(self) -> Trajectory:
        return Trajectory(times=self.times, states=self.states, controls=self.controls)

    def to_csv(self) -> str:
        return self.to_trajectory().to_csv()

    def diagnostics_json(self) -> str:
        doc = {
            "cost_s": self.cost,
            "converged": self.converged,
            "thrust_limit_N": self.thrust_limit,
            "boundary": self.boundary.to_dict(),
            **self.diagnostics,
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_artifacts(cls, csv_text: str, diag_json: str) -> "TrajectoryPlan":
        traj = Trajectory.from_csv(csv_text)
        doc = json.loads(diag_json)
        boundary = BoundarySpec.from_dict(doc.pop("boundary"))
        cost = doc.pop("cost_s")
        converged = doc.pop("converged")
        thrust_limit = doc.pop("thrust_limit_N")
        return cls(
            times=traj.times,
            states=traj.states,
            controls=traj.controls,
            cost=cost,
            converged=converged,
            diagnostics=doc,
            boundary=boundary,
            thrust_limit=thrust_limit,
        )


def _estimate_multipliers(problem: TranscribedProblem, z: np.ndarray, row_scale) -> np.ndarray:
    """Least-squares multiplier estimate from the stationarity condition.

    Solves min over multipliers of || grad f + J^T multipliers || restricted
    to coordinates strictly inside their bounds (bound-active coordinates
    have their own multipliers, so they drop out of the fit).
    """
    jac = row_scale[:, None] * problem.constraints_jac(z)
    _, grad_f = problem.objective(z)
    free = (z > problem.lower + 1e-10) & (z < problem.upper - 1e-10)
    if not np.any(free):
        return np.zeros(problem.n_eq)
    sol, *_ = np.linalg.lstsq(jac[:, free].T, -grad_f[free], rcond=None)
    return sol


def _row_scale(problem: TranscribedProblem) -> np.ndarray:
    """Constraint row scaling: defects are divided by the nominal step.

    Raw defects are integrals of the dynamics mismatch over one segment,
    so their natural size (and their Jacobian rows) carry a factor of the
    step length; normalizing by it equalizes row norms and keeps the
    penalty Hessian from becoming needlessly anisotropic.
    """
    scale = np.ones(problem.n_eq)
    horizon_guess = max(
        2.0 * problem.kinematic_bound / problem.scaling.time, problem.lower[-1], 0.1
    )
    scale[: problem.n_defects] = problem.num_segments / horizon_guess
    return scale


def _scaled_lagrangian_parts(problem, z, multipliers, penalty, row_scale):
    """AL value, gradient, scaled residual, and dense scaled Jacobian."""
    c, blocks = problem._eval(z, need_jac=True)
    c_scaled = row_scale * c
    v = row_scale * (multipliers + penalty * c_scaled)
    value = (
        float(z[-1])
        + float(multipliers @ c_scaled)
        + 0.5 * penalty * float(c_scaled @ c_scaled)
    )
    grad = problem._jac_t_vec(blocks, v)
    grad[-1] += 1.0
    jac_scaled = row_scale[:, None] * problem._assemble_dense(blocks)
    return value, grad, c_scaled, jac_scaled


def _al_value(problem, z, multipliers, penalty, row_scale):
    c_scaled = row_scale * problem.constraints(z)
    return (
        float(z[-1])
        + float(multipliers @ c_scaled)
        + 0.5 * penalty * float(c_scaled @ c_scaled)
    )


def _pgn_minimize(problem, z, multipliers, penalty, row_scale, gtol, maxiter):
    """Projected quasi-Newton descent on one AL subproblem.

    A dense BFGS matrix, seeded from the Gauss-Newton curvature
    penalty * J^T J of the quadratic penalty term, is updated with full
    gradient differences, so the tangential curvature the Gauss-Newton
    seed lacks is learned as the iteration proceeds.  Steps solve the
    model restricted to coordinates away from active bounds (dense
    Cholesky with Levenberg damping) and are globalized by projected
    Armijo backtracking.
    """
    lower, upper = problem.lower, problem.upper
    z = np.clip(z, lower, upper)
    damping = 1e-3
    iters = 0
    value, grad, _, jac = _scaled_lagrangian_parts(
        problem, z, multipliers, penalty, row_scale
    )
    approx = penalty * (jac.T @ jac)
    approx[np.diag_indices_from(approx)] += 1e-4
    for _ in range(maxiter):
        iters += 1
        at_lo = z <= lower + 1e-12
        at_hi = z >= upper - 1e-12
        pg = np.where(at_lo, np.minimum(grad, 0.0), grad)
        pg = np.where(at_hi, np.maximum(pg, 0.0), pg)
        if float(np.max(np.abs(pg))) <= gtol:
            break
        free = ~((at_lo & (grad >= 0.0)) | (at_hi & (grad <= 0.0)))
        if not np.any(free):
            break
        hess = approx[np.ix_(free, free)].copy()
        hess[np.diag_indices_from(hess)] += damping
        try:
            factor = scipy.linalg.cho_factor(hess, check_finite=False)
            step_free = scipy.linalg.cho_solve(factor, -grad[free], check_finite=False)
        except scipy.linalg.LinAlgError:
            damping = max(10.0 * damping, 1e-2)
            continue
        step = np.zeros_like(z)
        step[free] = step_free
        slope = float(grad[free] @ step_free)
        if slope >= 0.0:
            damping = max(10.0 * damping, 1e-2)
            continue

        alpha = 1.0
        accepted = False
        for _ls in range(25):
            trial = np.clip(z + alpha * step, lower, upper)
            trial_value = _al_value(problem, trial, multipliers, penalty, row_scale)
            if trial_value <= value + 1e-4 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            damping = max(10.0 * damping, 1e-2)
            if damping > 1e10:
                break
            continue
        step_taken = trial - z
        z = trial
        damping = max(1e-10, damping * (0.33 if alpha == 1.0 else 3.0))
        grad_old = grad
        value, grad, _, jac = _scaled_lagrangian_parts(
            problem, z, multipliers, penalty, row_scale
        )
        # BFGS update with the actual gradient change; skipped unless it
        # carries convex curvature, which keeps the model positive
        # definite.
        y = grad - grad_old
        sy = float(step_taken @ y)
        bs = approx @ step_taken
        sbs = float(step_taken @ bs)
        if sy > 1e-10 * float(np.linalg.norm(step_taken)) * float(np.linalg.norm(y)) and sbs > 0:
            approx -= np.outer(bs, bs) / sbs
            approx += np.outer(y, y) / sy
    return z, iters


def _bcl_loop(problem, z, cfg: TranscriptionConfig, inner_budget: int):
    """Bound-constrained-Lagrangian iterations on one transcription.

    Returns (z, raw constraint norm, kkt residual, total inner iterations,
    outer count, final penalty, converged flag).
    """
    row_scale = _row_scale(problem)
    multipliers = _estimate_multipliers(problem, z, row_scale)
    penalty = cfg.penalty_init
    total_iters = 0
    prev_cnorm = np.inf
    best = None
    converged = False
    kkt = np.inf
    raw_cnorm = np.inf

    for outer in range(cfg.max_outer_iters):
        maxiter = 2 * inner_budget if outer == 0 else inner_budget
        z, nit = _pgn_minimize(
            problem, z, multipliers, penalty, row_scale,
            gtol=0.3 * cfg.optimality_tol, maxiter=maxiter,
        )
        total_iters += nit
        c_raw = problem.constraints(z)
        c_scaled = row_scale * c_raw
        raw_cnorm = float(np.max(np.abs(c_raw)))
        cnorm = float(np.max(np.abs(c_scaled)))
        trial = multipliers + penalty * c_scaled
        kkt = problem.kkt_residual(z, row_scale * trial)

        score = (max(raw_cnorm - cfg.feasibility_tol, 0.0), float(z[-1]))
        if best is None or score < best[0]:
            best = (score, z.copy(), raw_cnorm, kkt)

        if raw_cnorm <= cfg.feasibility_tol and kkt <= cfg.optimality_tol:
            converged = True
            break

        multipliers = trial
        if cnorm > 0.3 * prev_cnorm and raw_cnorm > cfg.feasibility_tol:
            penalty = min(penalty * 6.0, cfg.penalty_max)
        prev_cnorm = cnorm

    if not converged and best is not None:
        _, z, raw_cnorm, kkt = best
    return z, raw_cnorm, kkt, total_iters, outer + 1, penalty, converged


def _mesh_levels(num_segments: int) -> list:
    levels = [num_segments]
    while levels[0] > 20:
        levels.insert(0, max(15, levels[0] // 2))
    return levels


def _refine_guess(coarse: TranscribedProblem, fine: TranscribedProblem, z: np.ndarray):
    """Interpolate a coarse-level iterate onto a finer node grid."""
    x, u, horizon = coarse._split(z)
    frac_c = coarse._alpha
    frac_f = fine._alpha
    states = np.column_stack([np.interp(frac_f, frac_c, x[:, i]) for i in range(6)])
    controls = np.column_stack([np.interp(frac_f, frac_c, u[:, i]) for i in range(2)])
    z_fine = fine.pack(states, controls, horizon)
    return np.clip(z_fine, fine.lower, fine.upper)


def solve(
    problem: TranscribedProblem,
    cfg: TranscriptionConfig | None = None,
    guess: np.ndarray | None = None,
    guess_seed=None,
) -> TrajectoryPlan:
    """Augmented-Lagrangian solve of the transcribed problem.

    Equality constraints are absorbed into the augmented Lagrangian;
    L-BFGS-B handles the variable bounds.  Multipliers start from a
    least-squares stationarity fit and are refreshed by the first-order
    update each outer round; the penalty grows only when the constraint
    norm stalls.  The full-resolution solve is warm-started through a
    short mesh-continuation ladder (each level solved the same way), which
    both speeds it up and avoids poor basins.  Returns the best iterate
    found with a ``converged`` flag; non-convergence is reported, never
    raised.
    """
    cfg = cfg or problem.cfg
    total_iters = 0
    outer_total = 0

    if guess is not None:
        z = np.clip(np.asarray(guess, dtype=float), problem.lower, problem.upper)
        z, cnorm, kkt, iters, outers, penalty, converged = _bcl_loop(
            problem, z, cfg, cfg.max_inner_iters
        )
        total_iters += iters
        outer_total += outers
    else:
        from dataclasses import replace as _replace

        levels = _mesh_levels(cfg.num_segments)
        subproblems = []
        for k in levels:
            if k == problem.num_segments:
                subproblems.append(problem)
            else:
                subproblems.append(
                    TranscribedProblem(
                        problem.boundary,
                        problem.path_bounds,
                        problem.wind,
                        problem.params,
                        _replace(cfg, num_segments=k),
                    )
                )
        z = subproblems[0].initial_guess(guess_seed)
        cnorm = kkt = np.inf
        penalty = cfg.penalty_init
        converged = False
        for idx, sub in enumerate(subproblems):
            if idx > 0:
                z = _refine_guess(subproblems[idx - 1], sub, z)
            budget = cfg.max_inner_iters if sub is problem else cfg.max_inner_iters // 2
            z, cnorm, kkt, iters, outers, penalty, converged = _bcl_loop(
                sub, z, cfg, budget
            )
            total_iters += iters
            outer_total += outers

    times, states, controls, t_final = problem.unpack(z)
    bound_violation = float(
        max(
            np.max(np.maximum(problem.lower - z, 0.0)),
            np.max(np.maximum(z - problem.upper, 0.0)),
        )
    )
    diagnostics = {
        "max_defect": cnorm,
        "max_bound_violation": bound_violation,
        "iterations": total_iters,
        "outer_iterations": outer_total,
        "kkt_residual": kkt,
        "penalty": penalty,
        "num_segments": problem.num_segments,
        "scheme": cfg.scheme,
        "kinematic_lower_bound_s": problem.kinematic_bound,
    }
    return TrajectoryPlan(
        times=times,
        states=states,
        controls=controls,
        cost=t_final - problem.boundary.t_init,
        converged=converged,
        diagnostics=diagnostics,
        boundary=problem.boundary,
        thrust_limit=problem.params.max_thrust,
    )


@dataclass(frozen=True)
class VerificationReport:
    """Replay results: the acceptance gate plus the true-wind miss."""

    passed: bool
    waypoint_miss: float
    waypoint_tolerance: float
    final_error: float
    est_final_state: np.ndarray
    true_final_state: np.ndarray
    est_trajectory: Trajectory
    true_trajectory: Trajectory

    def to_json(self) -> str:
        doc = {
            "passed": bool(self.passed),
            "waypoint_miss_m": self.waypoint_miss,
            "waypoint_tolerance_m": self.waypoint_tolerance,
            "final_error_m": self.final_error,
            "est_final_state": [float(v) for v in self.est_final_state],
            "true_final_state": [float(v) for v in self.true_final_state],
        }
        return json.dumps(doc, indent=1)


def verify(
    plan: TrajectoryPlan,
    wind_est,
    wind_true,
    params: VehicleParams,
    samples: int = 400,
    rtol: float = 1e-9,
    atol: float = 1e-9,
) -> VerificationReport:
    """Replay the planned controls under estimated and true wind.

    The plan passes when the estimated-wind replay lands within 2% of the
    initial-to-waypoint distance of the desired waypoint; the true-wind
    replay's distance from the planned endpoint is the reported final
    Euclidean error.
    """
    schedule = plan.control_schedule()
    t_eval = np.linspace(plan.times[0], plan.times[-1], samples)
    initial = plan.states[0]
    est_traj = integrate(
        initial, schedule, wind_est, (plan.times[0], plan.times[-1]), params,
        t_eval=t_eval, rtol=rtol, atol=atol,
    )
    true_traj = integrate(
        initial, schedule, wind_true, (plan.times[0], plan.times[-1]), params,
        t_eval=t_eval, rtol=rtol, atol=atol,
    )
    waypoint = plan.boundary.waypoint
    tolerance = WAYPOINT_MISS_FRACTION * plan.boundary.waypoint_distance
    miss = float(np.linalg.norm(est_traj.final_state[:2] - waypoint))
    final_error = float(np.linalg.norm(true_traj.final_state[:2] - plan.states[-1, :2]))
    return VerificationReport(
        passed=miss <= tolerance,
        waypoint_miss=miss,
        waypoint_tolerance=tolerance,
        final_error=final_error,
        est_final_state=est_traj.final_state,
        true_final_state=true_traj.final_state,
        est_trajectory=est_traj,
        true_trajectory=true_traj,
    )
