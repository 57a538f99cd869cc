"""Dataset types and on-disk schema.

A dataset directory holds ``manifest.txt`` (UTF-8 key=value lines) and one
flat binary file per split. Split files are little-endian float32, prefixed by
a 16-byte header::

    b"RAIN" | u32 sample count | u32 N (agents) | u32 T (frames)

followed, per sample, by ``states[N*T*4]``, ``charges[N]`` and ``graph[N*N]``.
"""

import logging
import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, get_type_hints

import numpy as np

from ..config import ParticleConfig, parse_key_value_lines, coerce_value, render_value
from ..errors import DatasetFormatError, DatasetIOError, ContractViolation
from ..utils.constants import DATASET_MAGIC, MANIFEST_FILE, STATE_DIM, Split


logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)

HEADER = struct.Struct("<4sIII")


@dataclass
class TrajectorySample:
    """One simulated case.

    Attributes:
        states: [N, T, 4] agent states (px, py, vx, vy)
        charges: [N] values in {+q, -q, 0}
        truth_graph: [N, N] binary directed adjacency, zero diagonal
        seed: simulator seed the case was generated with
    """

    states: np.ndarray
    charges: np.ndarray
    truth_graph: np.ndarray
    seed: Optional[int] = None

    @property
    def n_agents(self) -> int:
        return self.states.shape[0]

    def history(self, history_steps: int) -> np.ndarray:
        return self.states[:, :history_steps]

    def future(self, history_steps: int, future_steps: int) -> np.ndarray:
        return self.states[:, history_steps:history_steps + future_steps]


@dataclass
class Normalizer:
    """Per-channel standardization statistics of the training split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_samples(cls, samples: Sequence[TrajectorySample]) -> "Normalizer":
        stacked = np.concatenate([s.states.reshape(-1, STATE_DIM) for s in samples])
        return cls(mean=stacked.mean(axis=0), std=np.maximum(stacked.std(axis=0), 1e-8))

    def standardize(self, states: np.ndarray) -> np.ndarray:
        return (states - self.mean) / self.std

    def destandardize(self, states: np.ndarray) -> np.ndarray:
        return states * self.std + self.mean


@dataclass
class Manifest:
    config: ParticleConfig
    seed: int
    split_sizes: Dict[str, int]
    normalizer: Normalizer
    regenerations: int = 0

    def to_lines(self) -> List[str]:
        lines = [f"sim.{f.name}={render_value(getattr(self.config, f.name))}" for f in fields(self.config)]
        lines.append(f"dataset.seed={self.seed}")
        lines += [f"split.{name}={self.split_sizes[name]}" for name in Split.ALL]
        lines.append(f"norm.mean={','.join(repr(float(v)) for v in self.normalizer.mean)}")
        lines.append(f"norm.std={','.join(repr(float(v)) for v in self.normalizer.std)}")
        lines.append(f"dataset.regenerations={self.regenerations}")
        return lines

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "Manifest":
        values = parse_key_value_lines(lines)
        hints = get_type_hints(ParticleConfig)
        try:
            config = ParticleConfig(**{
                key[4:]: coerce_value(value, hints[key[4:]], key)
                for key, value in values.items() if key.startswith("sim.")
            })
            return cls(
                config=config,
                seed=int(values["dataset.seed"]),
                split_sizes={name: int(values[f"split.{name}"]) for name in Split.ALL},
                normalizer=Normalizer(
                    mean=np.array([float(v) for v in values["norm.mean"].split(",")]),
                    std=np.array([float(v) for v in values["norm.std"].split(",")]),
                ),
                regenerations=int(values.get("dataset.regenerations", 0)),
            )
        except (KeyError, ValueError, TypeError) as e:
            raise DatasetFormatError(f"malformed manifest: {e}")


def write_manifest(directory: Path, manifest: Manifest) -> Path:
    path = Path(directory) / MANIFEST_FILE
    path.write_text("\n".join(manifest.to_lines()) + "\n", encoding="utf-8")
    return path


def read_manifest(directory: Path) -> Manifest:
    path = Path(directory) / MANIFEST_FILE
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetIOError(f"cannot read manifest {path}: {e}")
    return Manifest.from_lines(text.splitlines())


def split_path(directory: Path, split: str) -> Path:
    return Path(directory) / f"{split}.bin"


def write_split(path: Path, samples: Sequence[TrajectorySample]) -> None:
    """Write samples to one split file. All samples must share N and T."""
    if not samples:
        raise ContractViolation("cannot write an empty split")
    n, t = samples[0].states.shape[:2]
    with open(path, "wb") as f:
        f.write(HEADER.pack(DATASET_MAGIC, len(samples), n, t))
        for sample in samples:
            if sample.states.shape != (n, t, STATE_DIM):
                raise ContractViolation(f"sample shape {sample.states.shape} differs from ({n}, {t}, 4)")
            record = np.concatenate([
                sample.states.reshape(-1),
                sample.charges.reshape(-1),
                sample.truth_graph.reshape(-1),
            ]).astype("<f4")
            f.write(record.tobytes())


def read_split(path: Path, seeds: Optional[Sequence[int]] = None) -> List[TrajectorySample]:
    """Decode a split file written by ``write_split``."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DatasetIOError(f"cannot read split {path}: {e}")
    if len(raw) < HEADER.size or (len(raw) - HEADER.size) % 4:
        raise DatasetFormatError(f"{path}: truncated file ({len(raw)} bytes)")
    magic, count, n, t = HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    per_sample = n * t * STATE_DIM + n + n * n
    body = np.frombuffer(raw, dtype="<f4", offset=HEADER.size)
    if body.size != count * per_sample:
        raise DatasetFormatError(
            f"{path}: expected {count * per_sample} floats for {count} samples, found {body.size}"
        )
    records = body.reshape(count, per_sample)
    samples = []
    for index, record in enumerate(records):
        states = record[:n * t * STATE_DIM].reshape(n, t, STATE_DIM)
        charges = record[n * t * STATE_DIM:n * t * STATE_DIM + n]
        graph = record[n * t * STATE_DIM + n:].reshape(n, n).astype(np.int8)
        samples.append(TrajectorySample(
            states=states.astype(np.float32),
            charges=charges.astype(np.float32),
            truth_graph=graph,
            seed=None if seeds is None else int(seeds[index]),
        ))
    return samples
