"""Convected wind-field estimation and minimum-time quadrotor takeoff planning.

The toolkit simulates a horizontally convected Gaussian-process wind field
sampled by noisy ground anemometers, assimilates the measurements by
ordinary Kriging, plans a minimum-time vertical-plane takeoff through the
estimated field by direct collocation, and verifies the plan against the
true field by re-simulation.

Modules
-------
windfield
    GP wind realizations, convection, anemometer sampling.
kriging
    Ordinary-Kriging regression of the measurement log.
dynamics
    3-DOF longitudinal quadrotor equations of motion and integrators.
ocp
    Direct-collocation transcription, augmented-Lagrangian NLP solve,
    replay verification.
harness
    Batch trial runner with seeded reproducibility and plot emission.
"""

from . import dynamics, harness, kriging, ocp, windfield
from .dynamics import QuadState, Trajectory, VehicleParams
from .harness import TrialConfig, TrialResult, emit_plots, run_trial
from .kriging import ObservationSet, WindEstimate, correct_locations, fit, query_inertial, truncate
from .ocp import (
    BoundarySpec,
    PathBounds,
    TrajectoryPlan,
    TranscriptionConfig,
    solve,
    transcribe,
    verify,
)
from .windfield import (
    AnemometerArray,
    ConstantWind,
    ConvectionSpec,
    GpHyperparams,
    MeasurementLog,
    WindProfile,
    run_sensors,
    sample_profile,
    wind_at,
)

__version__ = "0.1.0"
