"""JSON run configuration: strict parsing, defaults and a provenance digest."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .aggregation import AggregationConfig
from .data import DatasetConfig
from .engine import EngineConfig, equivalent_centralized_epochs
from .errors import ConfigError
from .evaluation import DEFAULT_LEVELS, ProbeConfig
from .model import ModelSpec, TrainingConfig
from .partition import CLASS_NONIID, IID
from .pretext import TASKS


@dataclass(frozen=True)
class ModelSection:
    hidden1: int = 64
    embed_dim: int = 32
    vcop_hidden: int = 64


@dataclass(frozen=True)
class PartitionSection:
    mode: str = CLASS_NONIID
    classes_per_client: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (IID, CLASS_NONIID):
            raise ConfigError(f"partition.mode must be {IID!r} or {CLASS_NONIID!r}")


@dataclass(frozen=True)
class FederationSection:
    rounds: int = 200
    clients_per_round: int = 5
    n_clients: int = 16
    local_epochs: int = 1
    client_lr: float | None = None
    batch_size: int = 4
    weight_decay: float = 1e-4
    checkpoint_every: int = 0
    record_wire: bool = False
    centralized_epochs: int | None = None


@dataclass(frozen=True)
class EvaluationSection:
    ks: tuple[int, ...] = (1, 5)
    probe_epochs: int = 30
    probe_lr: float = 0.05
    probe_batch_size: int = 32
    perturbation_levels: tuple[float, ...] = DEFAULT_LEVELS
    perturbation_seed: int = 0
    landscape_grid: int = 41
    landscape_range: tuple[float, float] = (-1.0, 1.0)
    landscape_seed: int = 0
    landscape_samples: int = 640
    landscape_head_epochs: int = 3


@dataclass(frozen=True)
class SeedsSection:
    master_seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelSection = field(default_factory=ModelSection)
    task: str = "ctp"
    partition: PartitionSection = field(default_factory=PartitionSection)
    federation: FederationSection = field(default_factory=FederationSection)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    seeds: SeedsSection = field(default_factory=SeedsSection)
    output_dir: str = "runs/default"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        # Surface engine-level invariants before any work starts.
        self.engine_config()
        self.training_config()

    # -- derived objects --

    def model_spec(self) -> ModelSpec:
        m = self.model
        return ModelSpec((self.dataset.H, self.dataset.W), m.hidden1, m.embed_dim, m.vcop_hidden)

    def training_config(self) -> TrainingConfig:
        f = self.federation
        return TrainingConfig(client_lr=f.client_lr, batch_size=f.batch_size,
                              local_epochs=f.local_epochs, weight_decay=f.weight_decay)

    def engine_config(self, output_dir: str | None = None, workers: int = 1) -> EngineConfig:
        f = self.federation
        return EngineConfig(
            rounds=f.rounds, clients_per_round=f.clients_per_round, n_clients=f.n_clients,
            master_seed=self.seeds.master_seed, task=self.task,
            training=self.training_config(), aggregation=self.aggregation,
            checkpoint_every=f.checkpoint_every, output_dir=output_dir,
            record_wire=f.record_wire, workers=workers,
        )

    def probe_config(self) -> ProbeConfig:
        e = self.evaluation
        return ProbeConfig(epochs=e.probe_epochs, lr=e.probe_lr, batch_size=e.probe_batch_size,
                           seed=self.seeds.master_seed)

    def centralized_epochs(self) -> int:
        f = self.federation
        if f.centralized_epochs is not None:
            return f.centralized_epochs
        # Mean client size is total / n_clients for every partition mode here.
        return round(equivalent_centralized_epochs(f.rounds, f.clients_per_round, f.local_epochs,
                                                   1.0 / f.n_clients, 1.0))

    # -- serialization --

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    def with_overrides(self, **sections) -> "RunConfig":
        """Return a copy with ``section={key: value}`` (or scalar) overrides applied."""
        d = self.to_dict()
        for sec, val in sections.items():
            if isinstance(val, dict):
                d[sec].update(val)
            else:
                d[sec] = val
        return from_dict(d)


def _coerce(value, default, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where} must be a list")
        return tuple(value)
    return value


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    defaults = cls()
    kwargs = {}
    for key, value in data.items():
        default = getattr(defaults, key)
        if default is None:
            if value is not None and (isinstance(value, bool) or not isinstance(value, (int, float))):
                raise ConfigError(f"{where}.{key} must be a number or null")
        else:
            value = _coerce(value, default, f"{where}.{key}")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from None


_SECTIONS = {
    "dataset": DatasetConfig,
    "model": ModelSection,
    "partition": PartitionSection,
    "federation": FederationSection,
    "aggregation": AggregationConfig,
    "evaluation": EvaluationSection,
    "seeds": SeedsSection,
}


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    allowed = set(_SECTIONS) | {"task", "output_dir"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs = {sec: _build(cls, data[sec], sec) for sec, cls in _SECTIONS.items() if sec in data}
    for key in ("task", "output_dir"):
        if key in data:
            if not isinstance(data[key], str):
                raise ConfigError(f"{key} must be a string")
            kwargs[key] = data[key]
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return from_dict(data)


def default_config() -> RunConfig:
    return RunConfig()
