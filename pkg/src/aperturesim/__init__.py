"""aperturesim: camera-aperture optical effect simulation and evaluation.

The package simulates what a camera's aperture shape and size do to an
image: it extracts spatially varying, depth-dependent PSF kernel banks from
impulse-response frames, filters synthetic pinhole images depth bin by depth
bin with per-channel kernels, compensates smaller apertures with gain and
gain-calibrated sensor noise, and evaluates the downstream effect with
detection precision statistics (fold-weighted mAP and pairwise Welch tests).
"""

__version__ = "0.1.0"

from .optics import (ApertureSpec, CameraModel, ObjectClassGeometry, PowerLawFit,
                     bbox_width_px, distance_for_width, effective_f_number,
                     f_number, fit_power_law, gain_factor_db, horizontal_fov,
                     min_spot_size, numerical_aperture)
from .psf import (CHANNELS, BlockGrid, DepthPlanSpec, ImpulseGridSpec, PsfBank,
                  PsfKernel, extract_bank, kernel_at, synthesize_impulse_grid)
from .bank_io import load_bank, save_bank
from .noise import ExtrapolationWarning, NoiseModel, fit_noise_model, noise_std_for_gain
from .render import (POLICY_CLAMP, POLICY_PASSTHROUGH, RenderConfig, add_awgn,
                     apply_gain, bin_depth, derive_seed, filter_image, render)
from .replicate import ReplicationReport, replicate_dataset
from .dataset import (Manifest, SceneRecord, SizeClassification, classify_bbox,
                      export_report, group_of_class, load_manifest)
from .stats import (Detection, FoldMetric, GroundTruth, MatchResult, WelchResult,
                    iou, map_iou_sweep, match_detections, mean_class_precision,
                    pairwise_tests, t_cdf, weighted_mean, weighted_std, welch_p_value,
                    welch_t, welch_test)
from .config import Profile, load_profile

__all__ = [name for name in dir() if not name.startswith("_")]
