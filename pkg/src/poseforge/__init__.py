"""poseforge: a 6D object pose estimation toolkit.

Two pose pipelines over a shared geometry core — direct quaternion +
translation regression from semantic feature vectors, and dense-feature
keypoint matching followed by PnP-RANSAC and ICP refinement — plus ADD /
ADD-S / rotation / translation evaluation and a synthetic-scene oracle that
makes every stage verifiable without real sensors.
"""

from .exceptions import (
    BehindCameraError,
    ConfigRejectedError,
    ConsensusFailureError,
    DegenerateInputError,
    DegenerateOutputError,
    DimensionMismatchError,
    GatingFailureError,
    InsufficientCorrespondencesError,
    InvalidRotationError,
    ModelParseError,
    NumericError,
    PoseForgeError,
    SingularSystemError,
    VfmtError,
)
from .features import (
    Correspondences,
    DenseFeatureMap,
    Detection,
    KeypointTemplate,
    build_correspondences,
    load_feature_map,
    match_keypoints,
    save_feature_map,
)
from .geometry import (
    CameraIntrinsics,
    Pose,
    Quaternion,
    compose,
    invert,
    project,
    project_points,
    quat_from_axis_angle,
    quat_to_rotmat,
    rotation_geodesic_deg,
    rotmat_to_quat,
    translation_error_mm,
)
from .icp import IcpConfig, IcpRefiner, IcpResult, icp_refine, kabsch_align, load_cloud, save_cloud
from .metrics import (
    EvalRecord,
    Report,
    add_metric,
    adds_metric,
    evaluate_scene,
    render_csv,
    render_report,
)
from .object_model import KeypointSet, ObjectModel, load_model, model_diameter, sample_keypoints
from .pnp import PnpResult, RansacConfig, RansacPnpSolver, pnp_dlt, pnp_ransac, pnp_refine
from .regressor import (
    FeatureVector,
    MlpParams,
    PoseRegressor,
    TrainConfig,
    backward,
    forward,
    init_params,
    load_checkpoint,
    loss,
    save_checkpoint,
    train,
)
from .synth import (
    Scene,
    SceneConfig,
    generate_regression_dataset,
    generate_scene,
    random_blob_model,
    sample_pose,
)

__version__ = "0.1.0"
