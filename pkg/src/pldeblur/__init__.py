"""Blind motion-kernel estimation and deconvolution for photon-limited images.

Kernels are modeled as spline trajectories over a handful of key points,
estimated by descending a reblurring loss through a Poisson non-blind solver,
then fine-tuned over the full kernel support with an l1 split.
"""

from .calibration import CalibrationResult, calibrate_init_constants, synthetic_scene
from .core import (
    Boundary,
    ConvPlan,
    NoiseParams,
    as_image,
    convolve,
    convolve_adjoint,
    correlate,
    delta_kernel,
    estimate_photon_level,
    gradients_adjoint,
    kernel_center,
    kernel_ncc,
    poisson_forward,
    psnr,
    snr_db,
    spatial_gradients,
    ssim,
    validate_kernel,
)
from .estimation import (
    EstimateResult,
    FlatImageWarning,
    HqsConfig,
    InitConfig,
    PipelineConfig,
    PipelineStageError,
    ReblurObjective,
    Stage1Result,
    Stage2Result,
    StageConfig,
    directional_gradient_response,
    estimate,
    grad_h_fixed_xhat,
    grad_z,
    init_kernel,
    loss_of_z,
    soft_threshold,
    stage1,
    stage2,
)
from .solver import (
    AnscombeGaussianDenoiser,
    Denoiser,
    IdentityDenoiser,
    LossMode,
    OracleDenoiser,
    SolverConfig,
    denoise,
    reblur_loss,
    richardson_lucy,
)
from .trajectory import (
    Centering,
    KernelWindowError,
    RenderConfig,
    TrajectorySpline,
    as_keypoints,
    generate_kernel_dataset,
    interpolate_spline,
    keypoints_from_line,
    keypoints_to_vector,
    random_keypoints,
    render_kernel,
    vector_to_keypoints,
)

__version__ = "0.1.0"
