"""Quantitative MRI parameter-map reconstruction from undersampled radial
k-space data with parameter-specific adaptive dictionary learning."""

from .adl import (
    AdlConstants,
    AdlState,
    Dictionary,
    SparseCodeSet,
    aitkrm,
    aomp,
    estimate_noise,
    itkrm_step,
    sparse_code_all,
)
from .encoding import (
    EncodingOperator,
    KSpaceData,
    NormalOperator,
    RadialTrajectory,
    adjoint,
    forward,
    golden_angle_trajectory,
    normal_apply,
    radial_density_compensation,
    simulate_coil_maps,
)
from .model import ParameterMaps, TimeGrid, fit_objective_grad, m0_star, r1_star, signal
from .optim import BoxBounds, cg_solve, lbfgs_bounded, soft_threshold
from .patches import PatchGeometry, PatchMatrix, assemble, assemble_patches, extract
from .phantom import TissuePhantom, brain_phantom, flip_profile, simulate_acquisition
from .recon import (
    ReconConfig,
    ReconResult,
    adlqmri,
    default_config,
    dl_fit,
    init_p0,
    map_lite,
    reconstruct,
    sparsity_recon,
    update_u,
)

__version__ = "0.1.0"
