"""Gate-relative monocular visual-inertial state estimation.

A real-time error-state Kalman filter fusing IMU data with gate-corner
reprojection residuals, an offline factor-graph smoother for reference
trajectories, and a simulator plus evaluation harness.
"""

from .eskf import EskfConfig, EskfEstimator, UpdateReport, huber_weight
from .fgo import FactorGraph, FgoWeights, Keyframe, build_graph, optimize, select_keyframes
from .frontend import VisionConfig, associate, build_measurements, image_up_right, reorder_corners, resolve_flip
from .geometry import (
    BehindCamera,
    CameraModel,
    Extrinsics,
    NoConvergence,
    project,
    project_jacobian,
    rotation_matrix,
    skew,
    so3_exp,
    so3_log,
    undistort_normalize,
    world_to_camera,
)
from .metrics import ReprojectionStats, TrajectoryError, min_corner_sweep, reprojection_error, robustness_ablation, trajectory_error
from .preintegrate import PreintegratedImu, preintegrate
from .sim import CorruptionSpec, TrajectorySpec, generate_trajectory, synthesize_detections, synthesize_imu
from .state import (
    CornerLabel,
    CornerMeasurement,
    Gate,
    GateDetection,
    GateMap,
    ImuSample,
    NoiseParams,
    NominalState,
    Trajectory,
    compose_state,
    state_boxminus,
)

__version__ = "0.1.0"
