"""Dataset generation and loading."""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

from cachetools import LRUCache, cached
from cachetools.keys import hashkey

from ..config import ParticleConfig
from ..errors import ContractViolation, DatasetIOError, NumericalBlowUpError
from ..particles.simulator import simulate
from ..utils.constants import MAX_ATTEMPTS, SEED_BLOCK, Split
from .models import (
    Manifest,
    Normalizer,
    TrajectorySample,
    read_manifest,
    read_split,
    split_path,
    write_manifest,
    write_split,
)

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)

# Decoded splits, keyed by (directory, split, file mtime)
split_cache = LRUCache(maxsize=8)


def sample_seed(seed: int, global_index: int, attempt: int = 0) -> int:
    """Seed of one sample; distinct for every (index, attempt) pair of a dataset."""
    return seed * SEED_BLOCK + global_index * MAX_ATTEMPTS + attempt


def generate_sample(config: ParticleConfig, seed: int, global_index: int) -> Tuple[TrajectorySample, int]:
    """Simulate one sample, regenerating with the next seed on numerical blow-up.

    Returns:
        tuple: (sample, number of regenerations it took)
    """
    for attempt in range(MAX_ATTEMPTS):
        try:
            return simulate(replace(config, seed=sample_seed(seed, global_index, attempt))), attempt
        except NumericalBlowUpError as e:
            logger.warning(f"Sample {global_index}: {e}; regenerating")
    raise NumericalBlowUpError(f"sample {global_index} blew up on all {MAX_ATTEMPTS} seeds")


def _generate_range(args) -> List[Tuple[TrajectorySample, int]]:
    config, seed, indices = args
    return [generate_sample(config, seed, index) for index in indices]


@dataclass
class DatasetHandle:
    """A dataset directory on disk."""

    path: Path
    manifest: Manifest

    @classmethod
    def open(cls, path: Path) -> "DatasetHandle":
        path = Path(path)
        if not path.is_dir():
            raise DatasetIOError(f"dataset directory {path} does not exist")
        return cls(path=path, manifest=read_manifest(path))

    @property
    def config(self) -> ParticleConfig:
        return self.manifest.config

    @property
    def normalizer(self) -> Normalizer:
        return self.manifest.normalizer

    def load(self, split: str) -> List[TrajectorySample]:
        return load_split(self.path, split)

    def seeds(self, split: str) -> List[int]:
        return read_seeds(self.path, split)


def seeds_path(directory: Path, split: str) -> Path:
    return Path(directory) / f"{split}.seeds"


def read_seeds(directory: Path, split: str) -> List[int]:
    try:
        text = seeds_path(directory, split).read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetIOError(f"cannot read seeds for split {split}: {e}")
    return [int(line) for line in text.split()]


def load_split(directory: Path, split: str) -> List[TrajectorySample]:
    """Load one split, served from ``split_cache`` while the file is unchanged."""
    if split not in Split.ALL:
        raise ContractViolation(f"unknown split '{split}'")
    path = split_path(directory, split)
    try:
        mtime = path.stat().st_mtime_ns
    except OSError as e:
        raise DatasetIOError(f"cannot stat split {path}: {e}")
    return _load_split_cached(str(Path(directory).resolve()), split, mtime)


@cached(cache=split_cache, key=lambda directory, split, mtime: hashkey(directory, split, mtime))
def _load_split_cached(directory: str, split: str, mtime: int) -> List[TrajectorySample]:
    logger.debug(f"Cache miss for split {split} in {directory}")
    return read_split(split_path(directory, split), read_seeds(directory, split))


def generate_dataset(
    config: ParticleConfig,
    n_train: int,
    n_val: int,
    n_test: int,
    seed: int,
    out_dir: Path,
    workers: int = 1,
) -> DatasetHandle:
    """Generate three disjoint seeded splits and write them to ``out_dir``.

    Args:
        config: particle system settings; its own ``seed`` is ignored
        n_train, n_val, n_test: split sizes, each >= 1
        seed: dataset seed; sample seeds derive from it via ``sample_seed``
        out_dir: destination directory, created if missing
        workers: processes used for simulation

    Returns:
        DatasetHandle: the written dataset
    """
    config.validate()
    sizes: Dict[str, int] = {Split.TRAIN: n_train, Split.VAL: n_val, Split.TEST: n_test}
    if min(sizes.values()) < 1:
        raise ContractViolation(f"split sizes must be >= 1, got {sizes}")

    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        logger.error(f"Cannot create dataset directory {out_dir}: {e}", exc_info=e)
        raise DatasetIOError(f"cannot create {out_dir}: {e}")

    total = sum(sizes.values())
    logger.info(f"Generating {total} samples ({n_train}/{n_val}/{n_test}) into {out_dir} with seed {seed}")
    results = _simulate_all(config, seed, total, workers)
    regenerations = sum(attempts for _, attempts in results)
    if regenerations:
        logger.warning(f"{regenerations} samples were regenerated after numerical blow-up")

    splits: Dict[str, List[TrajectorySample]] = {}
    start = 0
    for name in Split.ALL:
        splits[name] = [sample for sample, _ in results[start:start + sizes[name]]]
        start += sizes[name]

    manifest = Manifest(
        config=config,
        seed=seed,
        split_sizes=sizes,
        normalizer=Normalizer.from_samples(splits[Split.TRAIN]),
        regenerations=regenerations,
    )
    try:
        for name, samples in splits.items():
            write_split(split_path(out_dir, name), samples)
            seeds_path(out_dir, name).write_text(
                "\n".join(str(s.seed) for s in samples) + "\n", encoding="utf-8"
            )
        write_manifest(out_dir, manifest)
    except OSError as e:
        logger.error(f"Failed writing dataset to {out_dir}: {e}", exc_info=e)
        raise DatasetIOError(f"cannot write dataset to {out_dir}: {e}")

    logger.info(f"Dataset written to {out_dir}")
    return DatasetHandle(path=out_dir, manifest=manifest)


def _simulate_all(config: ParticleConfig, seed: int, total: int, workers: int):
    if workers <= 1:
        return [generate_sample(config, seed, index) for index in range(total)]
    chunks = [list(range(start, total, workers)) for start in range(workers)]
    ordered = [None] * total
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for indices, chunk in zip(chunks, pool.map(_generate_range, [(config, seed, c) for c in chunks])):
            for index, result in zip(indices, chunk):
                ordered[index] = result
    return ordered
