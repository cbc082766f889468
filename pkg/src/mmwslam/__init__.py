"""Bistatic mmWave snapshot SLAM on synthetic scenes.

Stages: beam-swept power-map synthesis, SVD-based AoD/AoA extraction (with
a CFAR baseline), two-stage ToA estimation, robust regularized Gauss-Newton
SLAM with unknown clock bias, and GOSPA/SLFD evaluation metrics.
"""

from .angles import AngleCandidate, AngleEstimate, SvdParams, cfar_detect, svd_extract
from .geometry import (
    SPEED_OF_LIGHT,
    DegenerateGeometryError,
    JointState,
    Landmark,
    Measurement,
    PathKind,
    Pose2,
    UEState,
    jacobian_measurement,
    predict_measurement,
    wrap_angle,
)
from .metrics import EvalReport, GospaParams, gospa_angles, slfd_metric, trajectory_stats
from .pipeline import PathEstimate, PipelineConfig, run_pipeline, run_trajectory
from .simulate import (
    BeamCodebook,
    BrsrpMap,
    PathTruth,
    Scene,
    WaveformConfig,
    beam_gain,
    default_scene,
    exact_brsrp,
    synth_brsrp,
    synth_measurements,
    synth_rs_samples,
    true_paths,
)
from .slam import (
    GaussianPrior,
    Hypothesis,
    RankDeficiencyError,
    SlamConfig,
    SlamSolution,
    SolveError,
    enumerate_hypotheses,
    gn_solve,
    init_landmark,
    init_ue_from_los,
    inflate_covariance,
    objective,
    solve_snapshot,
)
from .toa import CoarseToa, FineToa, coarse_toa, combine_toa, fine_toa, make_reference

__version__ = "0.1.0"
