"""Ordinary-Kriging assimilation of anemometer data into a wind estimate.

Ordinary Kriging is GP regression for a process whose constant mean is
unknown.  Given observations f at wind-frame locations b, the predictor at
grid points g solves one bordered symmetric system

    [ K(b,b) + noise*I   1 ] [ W ]   [ K(b,g) ]
    [       1^T          0 ] [ v ] = [   1    ]

whose extra row constrains every column of weights W to sum to one.  The
posterior mean is W^T f and the posterior covariance is
K(g,g) - [K(g,b) 1] * inv(augmented) * [K(g,b) 1]^T, which inflates the
plain GP variance by the cost of estimating the mean.  Because each sensor
reading is taken from a field that rides past at a known speed, measurement
positions are first corrected into the wind frame; the fitted estimate is
frozen there and convected forward when queried at later times.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .windfield import (
    ConvectedField,
    ConvectionSpec,
    GpHyperparams,
    MeasurementLog,
    kernel_matrix,
)

__all__ = [
    "DuplicateObservationError",
    "ObservationSet",
    "TruncationZone",
    "WindEstimate",
    "correct_locations",
    "truncate",
    "fit",
    "query_inertial",
]

# Posterior variances more negative than this (times the prior variance)
# indicate a genuinely broken solve rather than Schur-complement roundoff.
_VAR_CLAMP_REL = 1e-8


class DuplicateObservationError(ValueError):
    """Noise-free observations at identical locations make the system singular."""


@dataclass(frozen=True)
class ObservationSet:
    """Wind-frame observations ready for regression.

    ``convection`` records the frame correction the locations came from so
    the fitted estimate can be convected back into the inertial frame.
    """

    locations: np.ndarray
    values: np.ndarray
    noise_var: float
    convection: ConvectionSpec | None = None

    def __post_init__(self):
        locations = np.asarray(self.locations, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if locations.shape != values.shape or locations.ndim != 1:
            raise ValueError("locations and values must be equal-length 1-D arrays")
        if self.noise_var < 0.0:
            raise ValueError("noise_var must be nonnegative")
        object.__setattr__(self, "locations", locations)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.locations.size


@dataclass(frozen=True)
class TruncationZone:
    """Time-dependent window of wind-frame locations kept for regression.

    At time t the window spans every location the vehicle's operating
    region can map to during the remaining horizon, inflated by ``margin``
    kernel length scales on each side; three or more length scales leave
    the discarded measurements with negligible influence.
    """

    margin: float
    convection: ConvectionSpec
    length_scale: float

    def __post_init__(self):
        if self.margin <= 0.0:
            raise ValueError("margin must be positive")
        if self.length_scale <= 0.0:
            raise ValueError("length_scale must be positive")

    def interval(self, t: float) -> tuple:
        pad = self.margin * self.length_scale
        conv = self.convection
        lo = abs(conv.speed) * t - pad
        hi = conv.operating_length + abs(conv.speed) * conv.horizon + pad
        return lo, hi


def correct_locations(log: MeasurementLog, conv: ConvectionSpec) -> ObservationSet:
    """Shift measurement positions into the wind frame.

    A sensor at inertial position z sampling at time t sees the profile
    point that will have drifted past it, so its wind-frame location is
    z - speed * t.
    """
    return ObservationSet(
        locations=conv.wind_frame_x(log.positions, log.times),
        values=np.array(log.values, dtype=float),
        noise_var=log.noise_var,
        convection=conv,
    )


def truncate(
    obs: ObservationSet,
    t: float,
    conv: ConvectionSpec,
    margin: float,
    length_scale: float,
) -> ObservationSet:
    """Drop observations outside the acceptance window at time ``t``."""
    zone = TruncationZone(margin=margin, convection=conv, length_scale=length_scale)
    lo, hi = zone.interval(t)
    keep = (obs.locations >= lo) & (obs.locations <= hi)
    return ObservationSet(
        locations=obs.locations[keep],
        values=obs.values[keep],
        noise_var=obs.noise_var,
        convection=obs.convection if obs.convection is not None else conv,
    )


@dataclass(frozen=True)
class WindEstimate:
    """Posterior over the wind profile, frozen in the wind frame.

    ``mean`` and ``cov`` live on ``grid``; queries at any (position, time)
    convect the same frozen curve, mirroring how the truth itself moves.
    ``from_prior`` flags the no-data fallback (zero mean, prior variance).
    """

    grid: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    convection: ConvectionSpec
    length_scale: float
    std_dev: float
    from_prior: bool = False

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if grid.ndim != 1 or mean.shape != grid.shape:
            raise ValueError("grid and mean must be matching 1-D arrays")
        if cov.shape != (grid.size, grid.size):
            raise ValueError("cov must be square over the grid")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def variance(self) -> np.ndarray:
        return np.diag(self.cov).copy()

    def field(self, clamp: bool = False) -> ConvectedField:
        return ConvectedField(self.grid, self.mean, self.convection.speed, clamp=clamp)

    def query(self, p_north, t, clamp: bool = False):
        return self.field(clamp=clamp)(p_north, t)

    def to_json(self, include_cov: bool = False) -> str:
        doc = {
            "type": "wind_estimate",
            "grid_m": self.grid.tolist(),
            "mean_mps": self.mean.tolist(),
            "var_mps2": np.diag(self.cov).tolist(),
            "convection": {
                "speed_mps": self.convection.speed,
                "operating_length_m": self.convection.operating_length,
                "horizon_s": self.convection.horizon,
            },
            "length_scale_m": self.length_scale,
            "std_dev_mps": self.std_dev,
            "from_prior": self.from_prior,
        }
        if include_cov:
            doc["cov_mps2"] = self.cov.tolist()
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "WindEstimate":
        doc = json.loads(text)
        grid = np.asarray(doc["grid_m"], dtype=float)
        if "cov_mps2" in doc:
            cov = np.asarray(doc["cov_mps2"], dtype=float)
        else:
            cov = np.diag(np.asarray(doc["var_mps2"], dtype=float))
        conv = ConvectionSpec(
            speed=doc["convection"]["speed_mps"],
            operating_length=doc["convection"]["operating_length_m"],
            horizon=doc["convection"]["horizon_s"],
        )
        return cls(
            grid=grid,
            mean=np.asarray(doc["mean_mps"], dtype=float),
            cov=cov,
            convection=conv,
            length_scale=doc["length_scale_m"],
            std_dev=doc["std_dev_mps"],
            from_prior=doc.get("from_prior", False),
        )


def _check_duplicates(locations: np.ndarray) -> None:
    order = np.argsort(locations)
    sorted_locs = locations[order]
    gaps = np.diff(sorted_locs)
    scale = max(1.0, float(np.max(np.abs(sorted_locs))) if sorted_locs.size else 1.0)
    dup = np.nonzero(gaps <= 1e-12 * scale)[0]
    if dup.size:
        where = ", ".join(f"{sorted_locs[i]:.9g}" for i in dup[:5])
        raise DuplicateObservationError(
            f"noise-free observations share locations ({where}); the regression "
            "system is singular"
        )


def fit(
    obs: ObservationSet,
    grid,
    hyper: GpHyperparams,
    conv: ConvectionSpec | None = None,
) -> WindEstimate:
    """Ordinary-Kriging posterior of the wind profile over ``grid``.

    Only (length_scale, std_dev) of ``hyper`` are used; the process mean is
    estimated from the data through the sum-to-one weight constraint.  With
    no observations the prior is returned (zero mean, since nothing else is
    known) with a warning flag set.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a nonempty 1-D array")
    if conv is None:
        conv = obs.convection
    if conv is None:
        raise ValueError("observation set carries no convection spec; pass conv=")
    m = len(obs)
    if m == 0:
        warnings.warn("no observations: falling back to the prior", stacklevel=2)
        return WindEstimate(
            grid=grid,
            mean=np.zeros(grid.size),
            cov=kernel_matrix(grid, grid, hyper),
            convection=conv,
            length_scale=hyper.length_scale,
            std_dev=hyper.std_dev,
            from_prior=True,
        )

    if hyper.std_dev == 0.0:
        # Degenerate prior: every location is perfectly correlated with
        # every other, so the only consistent estimate is a constant.
        const = float(np.mean(obs.values))
        return WindEstimate(
            grid=grid,
            mean=np.full(grid.size, const),
            cov=np.zeros((grid.size, grid.size)),
            convection=conv,
            length_scale=hyper.length_scale,
            std_dev=hyper.std_dev,
        )

    if obs.noise_var == 0.0:
        _check_duplicates(obs.locations)

    # Bordered system: kernel block with per-row noise, ones border, zero corner.
    k_obs = kernel_matrix(obs.locations, obs.locations, hyper)
    k_obs[np.diag_indices_from(k_obs)] += obs.noise_var
    aug = np.zeros((m + 1, m + 1))
    aug[:m, :m] = k_obs
    aug[m, :m] = 1.0
    aug[:m, m] = 1.0

    cross = np.empty((grid.size, m + 1))
    cross[:, :m] = kernel_matrix(grid, obs.locations, hyper)
    cross[:, m] = 1.0

    try:
        solved = scipy.linalg.solve(aug, cross.T, assume_a="sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as err:
        raise DuplicateObservationError(f"singular regression system: {err}") from err
    if not np.all(np.isfinite(solved)):
        raise DuplicateObservationError("regression system produced non-finite weights")

    rhs = np.concatenate([obs.values, [0.0]])
    mean = solved.T @ rhs
    cov = kernel_matrix(grid, grid, hyper) - cross @ solved
    cov = 0.5 * (cov + cov.T)
    diag = np.diag(cov)
    floor = -_VAR_CLAMP_REL * hyper.variance
    if np.any(diag < floor):
        worst = float(np.min(diag))
        raise FloatingPointError(
            f"posterior variance {worst:.3e} below the roundoff clamp {floor:.3e}"
        )
    np.fill_diagonal(cov, np.maximum(diag, 0.0))

    return WindEstimate(
        grid=grid,
        mean=mean,
        cov=cov,
        convection=conv,
        length_scale=hyper.length_scale,
        std_dev=hyper.std_dev,
    )


def query_inertial(est: WindEstimate, p_north: float, t: float) -> float:
    """Estimated wind at an inertial position and time (strict span check)."""
    return est.query(p_north, t, clamp=False)
