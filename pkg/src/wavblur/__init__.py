"""Sparse wavelet-domain approximation of spatially varying blur operators."""

from .blurop import KernelSpec, apply_exact, apply_exact_adjoint, blur_operator, kernel_eval
from .dwt import SubbandIndex, WaveletCoeffs, forward, get_family, inverse, synthesize_atom
from .imagecore import NoiseModel, add_noise, load_image, save_image, snr_db
from .patterns import PatternMask, build_theta_masked, generate_mask, load_neighborhood
from .restore import RestoreResult, SolverConfig, restore, tv_value
from .thetaop import (
    SparseTheta,
    apply_theta,
    apply_theta_adjoint,
    build_theta,
    load_theta,
    operator_error,
    save_theta,
    threshold_theta,
    verify_decay_1d,
)

__version__ = "0.1.0"

__all__ = [
    "KernelSpec", "apply_exact", "apply_exact_adjoint", "blur_operator", "kernel_eval",
    "SubbandIndex", "WaveletCoeffs", "forward", "get_family", "inverse", "synthesize_atom",
    "NoiseModel", "add_noise", "load_image", "save_image", "snr_db",
    "PatternMask", "build_theta_masked", "generate_mask", "load_neighborhood",
    "RestoreResult", "SolverConfig", "restore", "tv_value",
    "SparseTheta", "apply_theta", "apply_theta_adjoint", "build_theta", "load_theta", "operator_error",
    "save_theta", "threshold_theta", "verify_decay_1d",
]
