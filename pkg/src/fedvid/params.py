"""Named, role-tagged parameter collections and checkpoint I/O.

A :class:`WeightSet` maps parameter names to ``(role, array)`` pairs where
``role`` is ``"backbone"`` or ``"head"``. Arrays are float64, finite and
read-only; every operation returns a new set. Names are kept in
lexicographic order so that reductions and serialization never depend on
construction order.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .errors import CheckpointError, NonFiniteError, ShapeMismatchError

BACKBONE = "backbone"
HEAD = "head"
ROLES = (BACKBONE, HEAD)
FORMAT_VERSION = 1
CKPT_SUFFIX = ".ckpt.json"


def _freeze(arr) -> np.ndarray:
    a = np.array(arr, dtype=np.float64, copy=True)
    if not np.isfinite(a).all():
        raise NonFiniteError("weight tensor contains NaN or Inf")
    a.flags.writeable = False
    return a


class WeightSet:
    """Immutable ordered mapping ``name -> (role, float64 array)``."""

    __slots__ = ("_entries",)

    def __init__(self, entries: Mapping[str, tuple[str, np.ndarray]] | None = None,
                 *, _trusted: bool = False):
        entries = entries or {}
        out = {}
        for name in sorted(entries):
            role, arr = entries[name]
            if role not in ROLES:
                raise ValueError(f"unknown role {role!r} for {name!r}")
            if _trusted:
                arr.flags.writeable = False
            else:
                arr = _freeze(arr)
            out[name] = (role, arr)
        self._entries = out

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], role: str) -> "WeightSet":
        return cls({k: (role, v) for k, v in arrays.items()})

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name][1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightSet):
            return NotImplemented
        return self.signature() == other.signature() and all(
            np.array_equal(self[n], other[n]) for n in self
        )

    def __repr__(self) -> str:
        return f"WeightSet({len(self)} entries, {self.num_params()} params)"

    @property
    def names(self) -> list[str]:
        return list(self._entries)

    def role(self, name: str) -> str:
        return self._entries[name][0]

    def items(self):
        """Yield ``(name, role, array)`` in lexicographic name order."""
        for name, (role, arr) in self._entries.items():
            yield name, role, arr

    def signature(self) -> dict[str, tuple[str, tuple[int, ...]]]:
        return {n: (r, a.shape) for n, (r, a) in self._entries.items()}

    def num_params(self, role: str | None = None) -> int:
        return sum(a.size for _, r, a in self.items() if role is None or r == role)

    def roles(self) -> set[str]:
        return {r for r, _ in self._entries.values()}

    def filter_role(self, role: str | tuple[str, ...]) -> "WeightSet":
        keep = (role,) if isinstance(role, str) else tuple(role)
        return WeightSet({n: (r, a) for n, r, a in self.items() if r in keep}, _trusted=True)

    def merge(self, other: "WeightSet") -> "WeightSet":
        """Union of two sets with disjoint names."""
        clash = set(self._entries) & set(other._entries)
        if clash:
            raise ValueError(f"duplicate parameter names: {sorted(clash)}")
        entries = dict(self._entries)
        entries.update(other._entries)
        return WeightSet(entries, _trusted=True)

    def map(self, fn) -> "WeightSet":
        return WeightSet({n: (r, _freeze(fn(a))) for n, r, a in self.items()}, _trusted=True)

    def flat(self) -> np.ndarray:
        if not self._entries:
            return np.zeros(0)
        return np.concatenate([a.ravel() for _, _, a in self.items()])


def filter_role(w: WeightSet, role) -> WeightSet:
    return w.filter_role(role)


def check_compatible(x: WeightSet, y: WeightSet) -> None:
    sx, sy = x.signature(), y.signature()
    if sx == sy:
        return
    for name in sorted(set(sx) | set(sy)):
        if sx.get(name) != sy.get(name):
            raise ShapeMismatchError(
                f"parameter {name!r}: {sx.get(name)} vs {sy.get(name)}", name=name
            )


def axpy(a: float, x: WeightSet, y: WeightSet) -> WeightSet:
    """Return ``a * x + y`` per matching parameter name."""
    check_compatible(x, y)
    return WeightSet(
        {n: (r, _freeze(a * x[n] + y[n])) for n, r, _ in y.items()}, _trusted=True
    )


def scale(a: float, x: WeightSet) -> WeightSet:
    return x.map(lambda v: a * v)


def sub(x: WeightSet, y: WeightSet) -> WeightSet:
    check_compatible(x, y)
    return WeightSet({n: (r, _freeze(x[n] - y[n])) for n, r, _ in x.items()}, _trusted=True)


def zeros_like(x: WeightSet) -> WeightSet:
    return WeightSet({n: (r, np.zeros(a.shape)) for n, r, a in x.items()})


def weighted_sum(coeffs, sets) -> WeightSet:
    """``sum_i coeffs[i] * sets[i]``, accumulated in the given order."""
    sets = list(sets)
    if not sets:
        raise ValueError("weighted_sum of an empty list")
    for s in sets[1:]:
        check_compatible(sets[0], s)
    out = {}
    for n, r, _ in sets[0].items():
        acc = coeffs[0] * sets[0][n]
        for c, s in zip(coeffs[1:], sets[1:]):
            acc = acc + c * s[n]
        out[n] = (r, _freeze(acc))
    return WeightSet(out, _trusted=True)


def l2_distance(x: WeightSet, y: WeightSet, role: str | None = None) -> float:
    """Euclidean norm of ``x - y`` over the entries of ``role`` (all if None)."""
    if role is not None:
        x, y = x.filter_role(role), y.filter_role(role)
    check_compatible(x, y)
    total = 0.0
    for n in x:
        d = x[n] - y[n]
        total += float(np.dot(d.ravel(), d.ravel()))
    return math.sqrt(total)


# -- checkpoints -------------------------------------------------------------


@dataclass(frozen=True)
class CheckpointMeta:
    round: int
    master_seed: str
    config_sha256: str
    created_unix_ms: int

    @classmethod
    def now(cls, round: int, master_seed: int, config_sha256: str) -> "CheckpointMeta":
        return cls(round, str(master_seed), config_sha256, int(time.time() * 1000))


def weights_to_json(w: WeightSet) -> dict:
    return {
        n: {"role": r, "shape": list(a.shape), "data": a.ravel().tolist()}
        for n, r, a in w.items()
    }


def weights_from_json(params) -> WeightSet:
    if not isinstance(params, dict):
        raise CheckpointError("malformed checkpoint: 'params' must be an object")
    entries = {}
    for name, rec in params.items():
        try:
            role, shape, data = rec["role"], rec["shape"], rec["data"]
        except (KeyError, TypeError) as exc:
            raise CheckpointError(f"malformed checkpoint: entry {name!r} lacks {exc}") from None
        if role not in ROLES:
            raise CheckpointError(f"malformed checkpoint: bad role {role!r} for {name!r}")
        if not isinstance(shape, list) or any(
            not isinstance(d, int) or d < 1 for d in shape
        ):
            raise CheckpointError(f"malformed checkpoint: bad shape for {name!r}")
        if not isinstance(data, list) or len(data) != math.prod(shape):
            raise CheckpointError(
                f"malformed checkpoint: {name!r} has {len(data) if isinstance(data, list) else '?'}"
                f" values for shape {shape}"
            )
        try:
            arr = np.asarray(data, dtype=np.float64).reshape(shape)
        except (TypeError, ValueError):
            raise CheckpointError(f"malformed checkpoint: non-numeric data in {name!r}") from None
        if not np.isfinite(arr).all():
            raise CheckpointError(f"non-finite value in checkpoint entry {name!r}")
        entries[name] = (role, arr)
    return WeightSet(entries)


def save_checkpoint(w: WeightSet, meta: CheckpointMeta, path) -> Path:
    path = Path(path)
    doc = {"format_version": FORMAT_VERSION, "meta": asdict(meta), "params": weights_to_json(w)}
    # json emits shortest round-trip reprs for floats.
    text = json.dumps(doc, allow_nan=False, separators=(",", ":"))
    path.write_text(text)
    return path


def load_checkpoint(path) -> tuple[WeightSet, CheckpointMeta]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise CheckpointError(f"malformed checkpoint {path}: top level is not an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint version mismatch: file has {version!r}, expected {FORMAT_VERSION}"
        )
    try:
        meta = CheckpointMeta(**doc["meta"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint meta in {path}: {exc}") from None
    return weights_from_json(doc.get("params")), meta
