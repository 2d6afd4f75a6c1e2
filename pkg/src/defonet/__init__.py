"""Voxel deformation prediction for robot traversal of flexible terrain."""

from .assess import DEFAULT_CLEARANCE, PredictionReport, SafetyVerdict, assess, evaluate
from .condition import CONDITION_DIM, Condition, decode_vector, encode_block_masks, encode_vector
from .dataset import Dataset, DatasetConfig, generate_dataset, read_dataset, write_dataset
from .estimator import DefoNet
from .model import Discriminator, DiscriminatorSpec, Generator, GeneratorSpec
from .physics import BeamScene, BeamSpec, FoamScene, LoadCase, beam_deflection, beam_deflection_fd, generate_sample
from .training import TrainConfig, TrainLog, loss_ae, loss_gan, loss_total, train
from .voxel import DepthImage, GridSpec, HeightField, OrthoCamera, VoxelGrid, depth_to_grid, grid_metrics, render_depth, voxelize

__all__ = [
    "CONDITION_DIM", "DEFAULT_CLEARANCE", "BeamScene", "BeamSpec", "Condition", "Dataset", "DatasetConfig",
    "DefoNet", "DepthImage", "Discriminator", "DiscriminatorSpec", "FoamScene", "Generator", "GeneratorSpec",
    "GridSpec", "HeightField", "LoadCase", "OrthoCamera", "PredictionReport", "SafetyVerdict", "TrainConfig",
    "TrainLog", "VoxelGrid", "assess", "beam_deflection", "beam_deflection_fd", "decode_vector",
    "depth_to_grid", "encode_block_masks", "encode_vector", "evaluate", "generate_dataset", "generate_sample",
    "grid_metrics", "loss_ae", "loss_gan", "loss_total", "read_dataset", "render_depth", "train",
    "voxelize", "write_dataset",
]
