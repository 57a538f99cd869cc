"""Constants used throughout rain."""

from enum import IntEnum


class ExitCode(IntEnum):
    OK = 0
    USAGE = 1
    IO = 2
    MISSING_PREREQUISITE = 3
    NUMERICAL_FAILURE = 4


# Edge actions of the hard-attention agent
class EdgeAction(IntEnum):
    STAY = 0
    FLIP = 1


class Split:
    TRAIN = "train"
    VAL = "val"
    TEST = "test"
    ALL = ("train", "val", "test")


class Ablation:
    TRUE_SOFT = "true+soft"
    FULL_SOFT = "full+soft"
    HYBRID_STATIC = "hybrid_static"
    HYBRID_DYNAMIC = "hybrid_dynamic"
    SUPERVISED = "supervised"
    ALL = ("true+soft", "full+soft", "hybrid_static", "hybrid_dynamic", "supervised")


# Binary formats
DATASET_MAGIC = b"RAIN"
CHECKPOINT_MAGIC = b"RNCK"
MANIFEST_FILE = "manifest.txt"

# State layout: (px, py, vx, vy)
STATE_DIM = 4
POSITION_DIM = 2

# Horizons (subsampled frames)
HISTORY_STEPS = 30
FUTURE_STEPS = 50

# Layer widths
GMP_HIDDEN = 64
LSTM_HIDDEN = 128
CONTEXT_DIM = 64
Q_HIDDEN = 128

# Dataset sizes
DESK_SPLITS = (1000, 500, 500)
FULL_SCALE_SPLITS = (8000, 4000, 4000)

# Sample seeds: seed * SEED_BLOCK + global_index * MAX_ATTEMPTS + attempt
SEED_BLOCK = 1_000_000_000
MAX_ATTEMPTS = 1_000

# Run directory layout
RUN_CONFIG_FILE = "config.txt"
RUN_LOG_FILE = "log.txt"
CHECKPOINT_DIR = "checkpoints"
METRICS_DIR = "metrics"
PRETRAIN_DIR = "pretrain"
CHECKPOINT_SUFFIX = ".rnck"
