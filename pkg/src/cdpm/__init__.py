"""Centered diffusion for single-view point-cloud reconstruction."""

from .conditioning import ConditioningContext, FeatureMap, apply_mask, gather_global, gather_local, render_feature_map
from .config import DESK, FULL, RunConfig
from .denoiser import Denoiser, DenoiserConfig
from .diffusion import (DiffusionState, center_projection, forward_sample, forward_step, reverse_step,
                        sample_chain, sample_chains, sample_noise, training_step)
from .errors import DataError, DivergedTrainingError, InvalidInputError, InvalidStateError
from .geometry import Camera, centralize, centroid, project
from .metrics import chamfer, drift_stats, fscore, oracle_best
from .schedule import NoiseSchedule, linear_schedule

__version__ = "0.1.0"
