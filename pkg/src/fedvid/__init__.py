"""Federated self-supervised video pretraining simulator."""

from .aggregation import AggregationConfig, ClientUpdate, GlobalState, aggregate_round
from .config import RunConfig, default_config, load_config
from .data import DatasetConfig, make_dataset
from .engine import EngineConfig, run_centralized, run_pretraining
from .evaluation import evaluate_retrieval, knn_retrieval, linear_probe, loss_landscape
from .model import ModelSpec, TrainingConfig, init_weights
from .params import WeightSet, load_checkpoint, save_checkpoint
from .partition import PartitionSpec, partition_by_class, partition_iid

__version__ = "0.1.0"

__all__ = [
    "AggregationConfig", "ClientUpdate", "DatasetConfig", "EngineConfig", "GlobalState",
    "ModelSpec", "PartitionSpec", "RunConfig", "TrainingConfig", "WeightSet",
    "aggregate_round", "default_config", "evaluate_retrieval", "init_weights", "knn_retrieval",
    "linear_probe", "load_checkpoint", "load_config", "loss_landscape", "make_dataset",
    "partition_by_class", "partition_iid", "run_centralized", "run_pretraining",
    "save_checkpoint",
]
