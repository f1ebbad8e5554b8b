"""Event-camera simulation toolkit.

Event streams and volumes, classical simulators, a GAN pipeline turning
grayscale frame pairs into event volumes, and downstream evaluation metrics.
"""

from .volumes import (
    Event,
    EventStream,
    EventVolume,
    FramePair,
    average_timestamp_image,
    build_volume,
    collapse_time,
    event_count_image,
    normalize_volume,
    read_volume,
    write_volume,
)
from .simulate import AffineMotion, ThresholdModel, affine_sim_events, frame_pair_events
from .networks import (
    DiscriminatorConfig,
    FlowNet,
    FlowNetConfig,
    Generator,
    GeneratorConfig,
    PatchDiscriminator,
    ReconNet,
    ReconNetConfig,
)
from .training import TrainConfig, pretrain_cycle_nets, train_event_generator

__version__ = "0.1.0"

__all__ = [
    "AffineMotion",
    "DiscriminatorConfig",
    "Event",
    "EventStream",
    "EventVolume",
    "FlowNet",
    "FlowNetConfig",
    "FramePair",
    "Generator",
    "GeneratorConfig",
    "PatchDiscriminator",
    "ReconNet",
    "ReconNetConfig",
    "ThresholdModel",
    "TrainConfig",
    "affine_sim_events",
    "average_timestamp_image",
    "build_volume",
    "collapse_time",
    "event_count_image",
    "frame_pair_events",
    "normalize_volume",
    "pretrain_cycle_nets",
    "read_volume",
    "train_event_generator",
    "write_volume",
    "__version__",
]
