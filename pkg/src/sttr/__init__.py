"""Spatial-temporal transformer lab for skeleton action recognition."""
from .errors import (CheckpointError, ConfigError, ContractError, DimensionError, FormatError,
                     NumericError, STTRError, TopologyError)
from .tensor import Tensor, backward, fresh_tape, no_grad
from .graph import SkeletonTopology, build_adjacency, kinetics18, load_topology, ntu25
from .attention import SpatialSelfAttention, TemporalSelfAttention
from .conv import AgcnLayer, GcnLayer, TcnLayer
from .networks import (STREAM_KINDS, NetworkConfig, StreamModel, build_stream, count_parameters,
                       extract_attention_maps, fuse_streams)
from .data import SkeletonSample, generate_synthetic, read_dataset, stack_samples, write_dataset
from .training import TrainConfig, evaluate, train
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check

__version__ = "0.1.0"
