"""Convected Gaussian-process wind fields and anemometer sampling.

The wind is a scalar horizontal velocity that varies along one spatial
coordinate and rides through the inertial frame at a constant signed speed
``c``.  In a frame translating with the field the profile is static
("frozen"), so a single random draw over a wind-frame grid fully specifies
the field for all time.  The frame relation used throughout is

    wind_x = p_north - c * t

so an inertial point ``p_north`` sweeps through the profile as time
advances, and a feature pinned at wind-frame coordinate ``x`` sits at
inertial position ``x + c * t``.

The profile itself is a stationary Gaussian process with constant mean and
a squared exponential covariance.  Realizations are drawn over a uniform
grid spanning ``[0, operating_length + |c| * horizon]`` so the field stays
defined over the whole operating region for the full planning horizon.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SpanError",
    "GpHyperparams",
    "ConvectionSpec",
    "ConvectedField",
    "ConstantWind",
    "WindProfile",
    "AnemometerArray",
    "MeasurementLog",
    "kernel",
    "kernel_matrix",
    "sample_profile",
    "wind_at",
    "run_sensors",
]


class SpanError(ValueError):
    """A query mapped to a wind-frame coordinate outside the profile span."""


@dataclass(frozen=True)
class GpHyperparams:
    """Squared exponential kernel parameters plus the process mean.

    ``length_scale`` sets how quickly the wind decorrelates in space (gust
    duration), ``std_dev`` the gust magnitude, and ``mean`` the constant
    wind speed the fluctuations ride on.
    """

    length_scale: float
    std_dev: float
    mean: float = 0.0

    def __post_init__(self):
        if self.length_scale <= 0.0:
            raise ValueError(f"length_scale must be positive, got {self.length_scale}")
        if self.std_dev < 0.0:
            raise ValueError(f"std_dev must be nonnegative, got {self.std_dev}")

    @property
    def variance(self) -> float:
        return self.std_dev**2


@dataclass(frozen=True)
class ConvectionSpec:
    """Geometry of the convected field: signed speed, region, horizon.

    ``span`` is the wind-frame length a profile must cover so every
    inertial point of the operating region ``[0, operating_length]`` maps
    inside it for all times up to ``horizon``.
    """

    speed: float
    operating_length: float
    horizon: float

    def __post_init__(self):
        if self.operating_length <= 0.0:
            raise ValueError("operating_length must be positive")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")

    @property
    def span(self) -> float:
        return self.operating_length + abs(self.speed) * self.horizon

    def wind_frame_x(self, p_north, t):
        """Map inertial position/time to the wind-frame coordinate."""
        return np.asarray(p_north) - self.speed * np.asarray(t)

    def inertial_x(self, wind_x, t):
        """Inertial position of wind-frame coordinate ``wind_x`` at time t."""
        return np.asarray(wind_x) + self.speed * np.asarray(t)


def kernel(h, hyper: GpHyperparams):
    """Squared exponential covariance as a function of spatial lag ``h``."""
    h = np.asarray(h, dtype=float)
    return hyper.variance * np.exp(-(h**2) / (2.0 * hyper.length_scale**2))


def kernel_matrix(a, b, hyper: GpHyperparams) -> np.ndarray:
    """Covariance matrix between coordinate vectors ``a`` (rows) and ``b``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    return kernel(a[:, None] - b[None, :], hyper)


class ConvectedField:
    """Linear interpolant of wind-frame samples, convected at a fixed speed.

    Callable as ``field(p_north, t)``; also exposes the exact gradient of
    the interpolant, which downstream optimization uses.  In strict mode
    (``clamp=False``) queries outside the sampled span raise
    :class:`SpanError`; with ``clamp=True`` the edge values are held, which
    keeps the field evaluable at wild intermediate optimizer iterates.
    """

    def __init__(self, grid, values, speed, clamp=False):
        self.grid = np.asarray(grid, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.speed = float(speed)
        self.clamp = bool(clamp)
        if self.grid.ndim != 1 or self.grid.size < 2:
            raise ValueError("grid must be 1-D with at least two points")
        if self.values.shape != self.grid.shape:
            raise ValueError("values must match grid shape")
        self._slopes = np.diff(self.values) / np.diff(self.grid)
        # Tiny slack absorbs roundoff at the exact span endpoints.
        self._edge_tol = 1e-9 * (self.grid[-1] - self.grid[0])

    def _wind_x(self, p_north, t):
        x = np.asarray(p_north, dtype=float) - self.speed * np.asarray(t, dtype=float)
        lo, hi = self.grid[0], self.grid[-1]
        if not self.clamp:
            if np.any(x < lo - self._edge_tol) or np.any(x > hi + self._edge_tol):
                bad = np.atleast_1d(x)
                bad = bad[(bad < lo - self._edge_tol) | (bad > hi + self._edge_tol)]
                raise SpanError(
                    f"wind-frame coordinate {bad.flat[0]:.6g} outside span "
                    f"[{lo:.6g}, {hi:.6g}]"
                )
        return np.clip(x, lo, hi)

    def __call__(self, p_north, t):
        x = self._wind_x(p_north, t)
        out = np.interp(x, self.grid, self.values)
        if np.isscalar(p_north) and np.isscalar(t):
            return float(out)
        return out

    def gradient(self, p_north, t):
        """Spatial and temporal partials (d/dp, d/dt) of the interpolant."""
        x = self._wind_x(p_north, t)
        idx = np.clip(np.searchsorted(self.grid, x, side="right") - 1, 0, self._slopes.size - 1)
        s = self._slopes[idx]
        if self.clamp:
            outside = (np.asarray(p_north, dtype=float) - self.speed * np.asarray(t, dtype=float) != x)
            s = np.where(outside, 0.0, s)
        return s, -self.speed * s

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


class ConstantWind:
    """Spatially and temporally uniform wind; handy for tests and demos."""

    def __init__(self, value: float = 0.0):
        self.value = float(value)

    def __call__(self, p_north, t):
        shape = np.broadcast_shapes(np.shape(p_north), np.shape(t))
        if shape == ():
            return self.value
        return np.full(shape, self.value)

    def gradient(self, p_north, t):
        shape = np.broadcast_shapes(np.shape(p_north), np.shape(t))
        zero = 0.0 if shape == () else np.zeros(shape)
        return zero, zero

    @property
    def max_abs(self) -> float:
        return abs(self.value)


@dataclass(frozen=True)
class WindProfile:
    """One frozen wind realization over a uniform wind-frame grid."""

    grid: np.ndarray
    values: np.ndarray
    hyperparams: GpHyperparams
    convection: ConvectionSpec
    seed: tuple = ()

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        if grid.ndim != 1 or grid.size < 2:
            raise ValueError("grid must be 1-D with at least two points")
        steps = np.diff(grid)
        if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9):
            raise ValueError("grid must be strictly increasing and uniform")
        if values.shape != grid.shape:
            raise ValueError("values length must equal grid length")

    def field(self, clamp: bool = False) -> ConvectedField:
        return ConvectedField(self.grid, self.values, self.convection.speed, clamp=clamp)

    def at(self, p_north, t, clamp: bool = False):
        return self.field(clamp=clamp)(p_north, t)

    def to_json(self) -> str:
        doc = {
            "type": "wind_profile",
            "grid_m": self.grid.tolist(),
            "values_mps": self.values.tolist(),
            "hyperparams": {
                "length_scale_m": self.hyperparams.length_scale,
                "std_dev_mps": self.hyperparams.std_dev,
                "mean_mps": self.hyperparams.mean,
            },
            "convection": {
                "speed_mps": self.convection.speed,
                "operating_length_m": self.convection.operating_length,
                "horizon_s": self.convection.horizon,
            },
            "seed": list(self.seed),
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "WindProfile":
        doc = json.loads(text)
        hyper = GpHyperparams(
            length_scale=doc["hyperparams"]["length_scale_m"],
            std_dev=doc["hyperparams"]["std_dev_mps"],
            mean=doc["hyperparams"]["mean_mps"],
        )
        conv = ConvectionSpec(
            speed=doc["convection"]["speed_mps"],
            operating_length=doc["convection"]["operating_length_m"],
            horizon=doc["convection"]["horizon_s"],
        )
        return cls(
            grid=np.asarray(doc["grid_m"]),
            values=np.asarray(doc["values_mps"]),
            hyperparams=hyper,
            convection=conv,
            seed=tuple(doc.get("seed", ())),
        )


# Cholesky factors depend only on (hyperparams, grid geometry); reusing them
# across seeds makes ensemble sampling cheap.
_CHOL_CACHE: dict = {}
_JITTER_START = 1e-10
_JITTER_MAX = 1e-4


def _cholesky_factor(hyper: GpHyperparams, n_grid: int, span: float) -> np.ndarray:
    key = (hyper.length_scale, hyper.std_dev, n_grid, span)
    factor = _CHOL_CACHE.get(key)
    if factor is not None:
        return factor
    grid = np.linspace(0.0, span, n_grid)
    cov = kernel_matrix(grid, grid, hyper)
    jitter = _JITTER_START * hyper.variance
    last_err = None
    while jitter <= _JITTER_MAX * hyper.variance:
        try:
            factor = np.linalg.cholesky(cov + jitter * np.eye(n_grid))
            break
        except np.linalg.LinAlgError as err:
            last_err = err
            jitter *= 10.0
    else:
        raise np.linalg.LinAlgError(
            f"covariance factorization failed up to jitter {jitter / hyper.variance:.1e}"
            f" * variance: {last_err}"
        )
    if len(_CHOL_CACHE) > 16:
        _CHOL_CACHE.clear()
    _CHOL_CACHE[key] = factor
    return factor


def sample_profile(
    hyper: GpHyperparams,
    conv: ConvectionSpec,
    n_grid: int,
    seed,
) -> WindProfile:
    """Draw one wind-profile realization over the uniform span grid.

    The draw is ``mean + chol(K) @ z`` with ``z`` standard normal from a
    dedicated generator, so it is deterministic given ``seed``.
    """
    if n_grid < 2:
        raise ValueError("n_grid must be at least 2")
    grid = np.linspace(0.0, conv.span, n_grid)
    seed_key = tuple(np.atleast_1d(seed).tolist())
    if hyper.std_dev == 0.0:
        values = np.full(n_grid, hyper.mean)
    else:
        factor = _cholesky_factor(hyper, n_grid, conv.span)
        rng = np.random.default_rng(seed)
        values = hyper.mean + factor @ rng.standard_normal(n_grid)
    return WindProfile(grid=grid, values=values, hyperparams=hyper, convection=conv, seed=seed_key)


def wind_at(profile: WindProfile, p_north: float, t: float) -> float:
    """True wind at an inertial position and time (strict span check)."""
    return profile.at(p_north, t, clamp=False)


@dataclass(frozen=True)
class AnemometerArray:
    """Fixed ground sensors that sample the passing wind before takeoff."""

    positions: tuple
    sample_rate: float
    noise_var: float
    sampling_end: float

    def __post_init__(self):
        object.__setattr__(self, "positions", tuple(float(z) for z in self.positions))
        if self.sample_rate <= 0.0:
            raise ValueError("sample_rate must be positive")
        if self.noise_var < 0.0:
            raise ValueError("noise_var must be nonnegative")
        if self.sampling_end <= 0.0:
            raise ValueError("sampling_end must be positive")

    @property
    def samples_per_sensor(self) -> int:
        n = self.sample_rate * self.sampling_end
        n_int = int(round(n))
        if abs(n - n_int) > 1e-9:
            raise ValueError(
                f"sample_rate * sampling_end = {n} is not an integer sample count"
            )
        return n_int


@dataclass(frozen=True)
class MeasurementLog:
    """Flat (time, position, value) record of every anemometer sample.

    Rows are ordered time-major: all sensors at the first sample time, then
    all sensors at the second, and so on.  ``noise_var`` is carried along as
    metadata so downstream regression knows the sensor quality.
    """

    times: np.ndarray
    positions: np.ndarray
    values: np.ndarray
    noise_var: float = 0.0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        positions = np.asarray(self.positions, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if not (times.shape == positions.shape == values.shape) or times.ndim != 1:
            raise ValueError("times, positions, values must be equal-length 1-D arrays")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.times.size

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t_sec", "z_m", "y_mps"])
        for t, z, y in zip(self.times, self.positions, self.values):
            writer.writerow([f"{t:.17g}", f"{z:.17g}", f"{y:.17g}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, noise_var: float = 0.0) -> "MeasurementLog":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["t_sec", "z_m", "y_mps"]:
            raise ValueError("expected header t_sec,z_m,y_mps")
        data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
        if data.size == 0:
            data = data.reshape(0, 3)
        return cls(times=data[:, 0], positions=data[:, 1], values=data[:, 2], noise_var=noise_var)

    def to_json(self) -> str:
        doc = {
            "type": "measurement_log",
            "noise_var_mps2": self.noise_var,
            "rows": [
                [t, z, y] for t, z, y in zip(self.times, self.positions, self.values)
            ],
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "MeasurementLog":
        doc = json.loads(text)
        rows = np.asarray(doc["rows"], dtype=float).reshape(-1, 3)
        return cls(
            times=rows[:, 0],
            positions=rows[:, 1],
            values=rows[:, 2],
            noise_var=doc["noise_var_mps2"],
        )


def run_sensors(profile: WindProfile, array: AnemometerArray, seed) -> MeasurementLog:
    """Simulate the anemometer campaign against a true profile.

    Sample times are k / sample_rate for k = 1..N (the first reading lands
    one period after the campaign starts), each reading is the true wind at
    the sensor plus i.i.d. zero-mean Gaussian noise.
    """
    n = array.samples_per_sensor
    sample_times = np.arange(1, n + 1) / array.sample_rate
    sensors = np.asarray(array.positions, dtype=float)
    times = np.repeat(sample_times, sensors.size)
    positions = np.tile(sensors, n)
    truth = profile.at(positions, times, clamp=False)
    if array.noise_var > 0.0:
        rng = np.random.default_rng(seed)
        values = truth + np.sqrt(array.noise_var) * rng.standard_normal(times.size)
    else:
        values = truth
    return MeasurementLog(times=times, positions=positions, values=values, noise_var=array.noise_var)
