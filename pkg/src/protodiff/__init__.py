"""Diffusion-based semi-supervised segmentation with prototype anchors."""

from .config import Config, DEFAULTS
from .schedule import NoiseSchedule, TimeGrid, make_time_grid
from .labels import LabelEncoder, encode_labels, one_hot, reencode_prediction
from .prototypes import LatentProjector, PrototypeBank
from .backbone import SpecificBranch, TinyResBackbone
from .decoder import DiffusionDecoder, timestep_embedding
from .model import Conditions, ProtoDiffNet, build_model
from .training import TrainConfig, Trainer, build_batch, compose_loss, load_model_from_checkpoint
from .sampler import SampleTrace, batch_infer, sample
from .data import (
    DatasetManifest,
    SegSample,
    image_to_tensor,
    load_arrays,
    load_dataset,
    make_synthetic,
    read_image,
    read_mask,
    write_mask,
)
from .metrics import confusion_matrix, iou_from_confusion, miou

__version__ = "0.1.0"

__all__ = [
    "Config",
    "DEFAULTS",
    "NoiseSchedule",
    "TimeGrid",
    "make_time_grid",
    "LabelEncoder",
    "encode_labels",
    "one_hot",
    "reencode_prediction",
    "LatentProjector",
    "PrototypeBank",
    "TinyResBackbone",
    "SpecificBranch",
    "DiffusionDecoder",
    "timestep_embedding",
    "ProtoDiffNet",
    "Conditions",
    "build_model",
    "Trainer",
    "TrainConfig",
    "build_batch",
    "compose_loss",
    "load_model_from_checkpoint",
    "sample",
    "batch_infer",
    "SampleTrace",
    "DatasetManifest",
    "SegSample",
    "make_synthetic",
    "load_dataset",
    "load_arrays",
    "image_to_tensor",
    "read_image",
    "read_mask",
    "write_mask",
    "confusion_matrix",
    "iou_from_confusion",
    "miou",
]
