"""Batch runner wiring wind simulation, regression, planning, and replay.

A trial is one scenario definition (wind statistics, sensor quality,
geometry, waypoint) run over an ensemble of seeds.  Each seed draws its
own wind truth, simulates the sensor campaign, fits the estimate, plans
under the estimate, and verifies the plan by replay under both winds.
Every artifact needed to re-derive the reported numbers lands in the run
directory.  Only verification-passing seeds enter the aggregate medians;
single-realization numbers are noise.
"""

from __future__ import annotations

import concurrent.futures
import csv
import io
import json
import math
import os
import traceback
from dataclasses import dataclass, field

import numpy as np

from . import kriging, ocp, windfield
from .dynamics import QuadState, Trajectory, VehicleParams

__all__ = [
    "TrialConfig",
    "TrialResult",
    "run_trial",
    "run_seed",
    "emit_plots",
    "verify_run",
    "OUTPUT_ROOT_ENV",
]

OUTPUT_ROOT_ENV = "WINDTAKEOFF_OUT"

SEED_DIR_FMT = "seed_{:04d}"
SEED_ARTIFACTS = (
    "wind_truth.json",
    "measurements.csv",
    "estimate.json",
    "plan.csv",
    "plan_diag.json",
    "replay_est.csv",
    "replay_true.csv",
    "verification.json",
)

# Stock scenario geometry shared by the six canned trials.
_SPEED = -1.0
_REGION = 40.0
_HORIZON = 30.0
_GRID_POINTS = 2000
_MARGIN = 7.0
_SENSORS = (10.0, 17.5, 25.0)
_START = (5.0, 0.0)
_WAYPOINT = (15.0, -5.0)
_T_FINAL_MAX = 30.0

_TRIAL_ROWS = {
    1: dict(wind_mean=4.0, wind_var=1.0, length_scale=3.0, noise_var=0.6, sample_rate=10.0),
    2: dict(wind_mean=4.0, wind_var=1.0, length_scale=3.0, noise_var=1.2, sample_rate=2.0),
    3: dict(wind_mean=8.0, wind_var=4.0, length_scale=1.5, noise_var=0.6, sample_rate=10.0),
    4: dict(wind_mean=8.0, wind_var=4.0, length_scale=1.5, noise_var=1.2, sample_rate=2.0),
    5: dict(wind_mean=12.0, wind_var=6.0, length_scale=1.5, noise_var=0.6, sample_rate=10.0),
    6: dict(wind_mean=12.0, wind_var=6.0, length_scale=1.5, noise_var=1.2, sample_rate=2.0),
}

DEFAULT_SEEDS = tuple(range(20))


@dataclass(frozen=True)
class TrialConfig:
    """One scenario: wind statistics, sensing setup, geometry, seeds."""

    wind_mean: float
    wind_var: float
    length_scale: float
    noise_var: float
    sample_rate: float
    trial_id: int | None = None
    anemometers: tuple = _SENSORS
    initial_position: tuple = _START
    waypoint: tuple = _WAYPOINT
    speed: float = _SPEED
    operating_length: float = _REGION
    horizon: float = _HORIZON
    grid_points: int = _GRID_POINTS
    truncation_margin: float = _MARGIN
    t_final_max: float = _T_FINAL_MAX
    sampling_end: float | None = None
    t_init: float | None = None
    num_segments: int = 60
    seeds: tuple = DEFAULT_SEEDS
    vehicle: VehicleParams = field(default_factory=VehicleParams.default)

    def __post_init__(self):
        object.__setattr__(self, "anemometers", tuple(float(z) for z in self.anemometers))
        object.__setattr__(self, "initial_position", tuple(float(v) for v in self.initial_position))
        object.__setattr__(self, "waypoint", tuple(float(v) for v in self.waypoint))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.resolved_t_init < self.resolved_sampling_end - 1e-12:
            raise ValueError("t_init must not precede the end of sampling")

    @property
    def resolved_sampling_end(self) -> float:
        """Sampling ends when the first upstream reading reaches the start."""
        if self.sampling_end is not None:
            return self.sampling_end
        return (min(self.anemometers) - self.initial_position[0]) / abs(self.speed)

    @property
    def resolved_t_init(self) -> float:
        return self.t_init if self.t_init is not None else self.resolved_sampling_end

    @classmethod
    def preset(cls, trial_id: int, seeds=None) -> "TrialConfig":
        if trial_id not in _TRIAL_ROWS:
            raise ValueError(f"trial_id must be 1..6, got {trial_id}")
        row = _TRIAL_ROWS[trial_id]
        return cls(trial_id=trial_id, seeds=tuple(seeds) if seeds is not None else DEFAULT_SEEDS, **row)

    def convection(self) -> windfield.ConvectionSpec:
        return windfield.ConvectionSpec(
            speed=self.speed,
            operating_length=self.operating_length,
            horizon=self.horizon,
        )

    def hyperparams(self) -> windfield.GpHyperparams:
        return windfield.GpHyperparams(
            length_scale=self.length_scale,
            std_dev=math.sqrt(self.wind_var),
            mean=self.wind_mean,
        )

    def boundary(self) -> ocp.BoundarySpec:
        t_init = self.resolved_t_init
        return ocp.BoundarySpec(
            initial_state=QuadState(
                p_north=self.initial_position[0],
                p_down=self.initial_position[1],
                pitch=0.0,
                u_rel=0.0,
                w_rel=0.0,
                pitch_rate=0.0,
            ),
            final_position=self.waypoint,
            t_init=t_init,
            t_final_bounds=(t_init, self.t_final_max),
        )

    def to_dict(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "wind_mean_mps": self.wind_mean,
            "wind_var_mps2": self.wind_var,
            "length_scale_m": self.length_scale,
            "noise_var_mps2": self.noise_var,
            "sample_rate_hz": self.sample_rate,
            "anemometers_m": list(self.anemometers),
            "initial_position_m": list(self.initial_position),
            "waypoint_m": list(self.waypoint),
            "speed_mps": self.speed,
            "operating_length_m": self.operating_length,
            "horizon_s": self.horizon,
            "grid_points": self.grid_points,
            "truncation_margin": self.truncation_margin,
            "t_final_max_s": self.t_final_max,
            "sampling_end_s": self.sampling_end,
            "t_init_s": self.t_init,
            "num_segments": self.num_segments,
            "seeds": list(self.seeds),
            "vehicle": self.vehicle.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrialConfig":
        return cls(
            trial_id=doc.get("trial_id"),
            wind_mean=doc["wind_mean_mps"],
            wind_var=doc["wind_var_mps2"],
            length_scale=doc["length_scale_m"],
            noise_var=doc["noise_var_mps2"],
            sample_rate=doc["sample_rate_hz"],
            anemometers=tuple(doc.get("anemometers_m", _SENSORS)),
            initial_position=tuple(doc.get("initial_position_m", _START)),
            waypoint=tuple(doc.get("waypoint_m", _WAYPOINT)),
            speed=doc.get("speed_mps", _SPEED),
            operating_length=doc.get("operating_length_m", _REGION),
            horizon=doc.get("horizon_s", _HORIZON),
            grid_points=doc.get("grid_points", _GRID_POINTS),
            truncation_margin=doc.get("truncation_margin", _MARGIN),
            t_final_max=doc.get("t_final_max_s", _T_FINAL_MAX),
            sampling_end=doc.get("sampling_end_s"),
            t_init=doc.get("t_init_s"),
            num_segments=doc.get("num_segments", 60),
            seeds=tuple(doc.get("seeds", DEFAULT_SEEDS)),
            vehicle=VehicleParams.from_dict(doc["vehicle"])
            if "vehicle" in doc
            else VehicleParams.default(),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "TrialConfig":
        return cls.from_dict(json.loads(text))


def _estimate_rmse(cfg: TrialConfig, estimate, profile, t_final: float) -> float:
    """RMSE of the posterior mean against the truth over the flight corridor.

    The corridor is the wind-frame image of the segment between start and
    waypoint positions swept over [t_init, t_final].
    """
    t0 = cfg.resolved_t_init
    p_lo = min(cfg.initial_position[0], cfg.waypoint[0])
    p_hi = max(cfg.initial_position[0], cfg.waypoint[0])
    corners = [
        p_lo - cfg.speed * t0,
        p_lo - cfg.speed * t_final,
        p_hi - cfg.speed * t0,
        p_hi - cfg.speed * t_final,
    ]
    mask = (profile.grid >= min(corners)) & (profile.grid <= max(corners))
    if not np.any(mask):
        return float("nan")
    diff = estimate.mean[mask] - profile.values[mask]
    return float(np.sqrt(np.mean(diff**2)))


def run_seed(cfg: TrialConfig, seed: int) -> tuple:
    """Full single-seed pipeline; returns (record, artifact texts).

    Seed streams for the truth draw and the sensor noise are decoupled so
    changing one leg never silently changes the other.
    """
    record = {
        "seed": seed,
        "planned_cost_s": None,
        "converged": None,
        "verified": None,
        "waypoint_miss_m": None,
        "final_error_m": None,
        "est_rmse_mps": None,
        "error": None,
    }
    artifacts: dict = {}
    try:
        conv = cfg.convection()
        hyper = cfg.hyperparams()
        profile = windfield.sample_profile(hyper, conv, cfg.grid_points, seed=[seed, 0])
        artifacts["wind_truth.json"] = profile.to_json()

        array = windfield.AnemometerArray(
            positions=cfg.anemometers,
            sample_rate=cfg.sample_rate,
            noise_var=cfg.noise_var,
            sampling_end=cfg.resolved_sampling_end,
        )
        log = windfield.run_sensors(profile, array, seed=[seed, 1])
        artifacts["measurements.csv"] = log.to_csv()

        obs = kriging.correct_locations(log, conv)
        obs = kriging.truncate(
            obs, cfg.resolved_sampling_end, conv, cfg.truncation_margin, cfg.length_scale
        )
        estimate = kriging.fit(obs, profile.grid, hyper)
        artifacts["estimate.json"] = estimate.to_json()

        boundary = cfg.boundary()
        bounds = ocp.PathBounds.default(cfg.vehicle.max_thrust)
        tcfg = ocp.TranscriptionConfig(
            num_segments=cfg.num_segments, ref_length=cfg.operating_length
        )
        problem = ocp.transcribe(
            boundary, bounds, estimate.field(clamp=True), cfg.vehicle, tcfg
        )
        plan = ocp.solve(problem)
        artifacts["plan.csv"] = plan.to_csv()
        artifacts["plan_diag.json"] = plan.diagnostics_json()
        record["planned_cost_s"] = plan.cost
        record["converged"] = plan.converged

        report = ocp.verify(plan, estimate.field(), profile.field(), cfg.vehicle)
        artifacts["replay_est.csv"] = report.est_trajectory.to_csv()
        artifacts["replay_true.csv"] = report.true_trajectory.to_csv()
        artifacts["verification.json"] = report.to_json()
        record["verified"] = report.passed
        record["waypoint_miss_m"] = report.waypoint_miss
        record["final_error_m"] = report.final_error
        record["est_rmse_mps"] = _estimate_rmse(cfg, estimate, profile, plan.times[-1])
    except Exception:
        record["error"] = traceback.format_exc(limit=8)
        artifacts["error.txt"] = record["error"]
    return record, artifacts


def _run_seed_task(cfg_json: str, seed: int):
    # Process-pool entry point; reconstructing from JSON keeps workers
    # independent of the parent's object graph.
    return seed, run_seed(TrialConfig.from_json(cfg_json), seed)


@dataclass(frozen=True)
class TrialResult:
    """Per-seed records plus verification-gated aggregate medians."""

    config: TrialConfig
    records: tuple
    aggregates: dict

    @classmethod
    def collect(cls, config: TrialConfig, records) -> "TrialResult":
        records = tuple(records)
        passing = [r for r in records if r["verified"]]

        def median_of(key):
            vals = [r[key] for r in passing if r[key] is not None]
            return float(np.median(vals)) if vals else None

        aggregates = {
            "n_seeds": len(records),
            "n_converged": sum(bool(r["converged"]) for r in records),
            "n_verified": len(passing),
            "median_cost_s": median_of("planned_cost_s"),
            "median_final_error_m": median_of("final_error_m"),
            "median_est_rmse_mps": median_of("est_rmse_mps"),
        }
        return cls(config=config, records=records, aggregates=aggregates)

    def to_json(self) -> str:
        doc = {
            "config": self.config.to_dict(),
            "records": list(self.records),
            "aggregates": self.aggregates,
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "TrialResult":
        doc = json.loads(text)
        return cls(
            config=TrialConfig.from_dict(doc["config"]),
            records=tuple(doc["records"]),
            aggregates=doc["aggregates"],
        )


def run_trial(cfg: TrialConfig, out_dir: str, workers: int = 1) -> TrialResult:
    """Run every seed of a trial and persist all artifacts under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        fh.write(cfg.to_json())

    results = {}
    if workers > 1 and len(cfg.seeds) > 1:
        cfg_json = cfg.to_json()
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_seed_task, cfg_json, s) for s in cfg.seeds]
            for fut in concurrent.futures.as_completed(futures):
                seed, payload = fut.result()
                results[seed] = payload
    else:
        for seed in cfg.seeds:
            results[seed] = run_seed(cfg, seed)

    records = []
    for seed in cfg.seeds:
        record, artifacts = results[seed]
        seed_dir = os.path.join(out_dir, SEED_DIR_FMT.format(seed))
        os.makedirs(seed_dir, exist_ok=True)
        for name, text in artifacts.items():
            with open(os.path.join(seed_dir, name), "w") as fh:
                fh.write(text)
        records.append(record)

    result = TrialResult.collect(cfg, records)
    with open(os.path.join(out_dir, "result.json"), "w") as fh:
        fh.write(result.to_json())
    return result


# -- plot emission ----------------------------------------------------------

_PANELS = ("path", "thrust", "pitch", "pitch_rate", "ur", "wr")

_GNUPLOT_STUB = """\
# gnuplot stub: run from inside a seed plot directory
set datafile separator ','
set key autotitle columnhead
set terminal pngcairo size 1200,800
set output 'panels.png'
set multiplot layout 2,3
plot 'path.csv' using 2:3 with lines
plot 'thrust.csv' using 2:3 with lines, '' using 2:4 with lines
plot 'pitch.csv' using 2:3 with lines
plot 'pitch_rate.csv' using 2:3 with lines
plot 'ur.csv' using 2:3 with lines
plot 'wr.csv' using 2:3 with lines
unset multiplot
"""


def _series_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([row[0]] + [f"{v:.17g}" for v in row[1:]])
    return buf.getvalue()


def _panel_files(planned: Trajectory, actual: Trajectory) -> dict:
    def series(traj: Trajectory, label: str, col: int):
        return [(label, t, x[col]) for t, x in zip(traj.times, traj.states)]

    files = {
        "path.csv": _series_csv(
            ("series", "pN_m", "pD_m"),
            [("planned", x[0], x[1]) for x in planned.states]
            + [("actual", x[0], x[1]) for x in actual.states],
        ),
        "thrust.csv": _series_csv(
            ("series", "t_sec", "Tf_N", "Tr_N"),
            [("planned", t, u[0], u[1]) for t, u in zip(planned.times, planned.controls)],
        ),
        "pitch.csv": _series_csv(
            ("series", "t_sec", "theta_rad"),
            series(planned, "planned", 2) + series(actual, "actual", 2),
        ),
        "pitch_rate.csv": _series_csv(
            ("series", "t_sec", "q_radps"),
            series(planned, "planned", 5) + series(actual, "actual", 5),
        ),
        "ur.csv": _series_csv(
            ("series", "t_sec", "ur_mps"),
            series(planned, "planned", 3) + series(actual, "actual", 3),
        ),
        "wr.csv": _series_csv(
            ("series", "t_sec", "wr_mps"),
            series(planned, "planned", 4) + series(actual, "actual", 4),
        ),
    }
    return files


def emit_plots(run_dir: str) -> list:
    """Write per-seed panel CSVs plus a gnuplot stub; returns written paths.

    Panels mirror the standard result layout: vertical-plane path, thrust
    history, pitch, pitch rate, and both flow-relative velocities.
    """
    result_path = os.path.join(run_dir, "result.json")
    if not os.path.exists(result_path):
        raise FileNotFoundError(f"missing artifact: {result_path}")
    result = TrialResult.from_json(open(result_path).read())

    missing = []
    for record in result.records:
        seed_dir = os.path.join(run_dir, SEED_DIR_FMT.format(record["seed"]))
        for name in ("plan.csv", "replay_true.csv"):
            path = os.path.join(seed_dir, name)
            if record["error"] is None and not os.path.exists(path):
                missing.append(path)
    if missing:
        raise FileNotFoundError("missing artifacts: " + ", ".join(missing))

    written = []
    for record in result.records:
        if record["error"] is not None:
            continue
        seed_dir = os.path.join(run_dir, SEED_DIR_FMT.format(record["seed"]))
        planned = Trajectory.from_csv(open(os.path.join(seed_dir, "plan.csv")).read())
        actual = Trajectory.from_csv(open(os.path.join(seed_dir, "replay_true.csv")).read())
        plot_dir = os.path.join(run_dir, "plots", SEED_DIR_FMT.format(record["seed"]))
        os.makedirs(plot_dir, exist_ok=True)
        for name, text in _panel_files(planned, actual).items():
            path = os.path.join(plot_dir, name)
            with open(path, "w") as fh:
                fh.write(text)
            written.append(path)
        stub = os.path.join(plot_dir, "plots.gp")
        with open(stub, "w") as fh:
            fh.write(_GNUPLOT_STUB)
        written.append(stub)
    return written


def verify_run(run_dir: str) -> list:
    """Re-run replay verification from stored artifacts.

    Returns one record per seed with the recomputed gate outcome and
    whether it matches what the run originally stored.
    """
    config_path = os.path.join(run_dir, "config.json")
    if not os.path.exists(config_path):
        raise FileNotFoundError(f"missing artifact: {config_path}")
    cfg = TrialConfig.from_json(open(config_path).read())

    outcomes = []
    for seed in cfg.seeds:
        seed_dir = os.path.join(run_dir, SEED_DIR_FMT.format(seed))
        needed = ["plan.csv", "plan_diag.json", "wind_truth.json", "estimate.json"]
        if not all(os.path.exists(os.path.join(seed_dir, n)) for n in needed):
            outcomes.append({"seed": seed, "status": "missing-artifacts"})
            continue
        plan = ocp.TrajectoryPlan.from_artifacts(
            open(os.path.join(seed_dir, "plan.csv")).read(),
            open(os.path.join(seed_dir, "plan_diag.json")).read(),
        )
        profile = windfield.WindProfile.from_json(
            open(os.path.join(seed_dir, "wind_truth.json")).read()
        )
        estimate = kriging.WindEstimate.from_json(
            open(os.path.join(seed_dir, "estimate.json")).read()
        )
        report = ocp.verify(plan, estimate.field(), profile.field(), cfg.vehicle)
        stored_path = os.path.join(seed_dir, "verification.json")
        stored = json.loads(open(stored_path).read()) if os.path.exists(stored_path) else None
        outcomes.append(
            {
                "seed": seed,
                "status": "ok",
                "passed": report.passed,
                "waypoint_miss_m": report.waypoint_miss,
                "final_error_m": report.final_error,
                "matches_stored": None if stored is None else stored["passed"] == report.passed,
            }
        )
    return outcomes
