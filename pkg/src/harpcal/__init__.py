"""Lens distortion measurement and plumb-line calibration from harp photographs."""
from .calib import CalibrationProblem, CalibrationResult, energy_D, energy_E, minimize_D, minimize_E_alternating
from .metrics import MeasurementReport, fit_regression_line, rms_distance
from .model import DistortionModel, Homography, correct_image, correct_points, distort_points, normalize_homography
from .pipeline import ExtractConfig, extract_chains
from .raster import GrayImage, load_image, save_image
from .resample import read_chains, write_chains
from .synth import HarpScene, HarpString, harp_scene, render, synth_chains

__version__ = "0.1.0"

__all__ = [
    "CalibrationProblem", "CalibrationResult", "DistortionModel", "ExtractConfig", "GrayImage",
    "HarpScene", "HarpString", "Homography", "MeasurementReport", "correct_image", "correct_points",
    "distort_points", "energy_D", "energy_E", "extract_chains", "fit_regression_line", "harp_scene",
    "load_image", "minimize_D", "minimize_E_alternating", "normalize_homography", "read_chains",
    "render", "rms_distance", "save_image", "synth_chains", "write_chains",
]
