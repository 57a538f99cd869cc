"""Configuration for rain.

Each module owns a dataclass config with a ``validate()`` method. ``RunConfig``
stacks them into one layered key=value document with dotted keys
(``sim.n_charged``, ``train.epochs``, ...), which is what the CLI reads and
echoes into every run directory.
"""

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, get_type_hints

from ..errors import ContractViolation, UsageError, DatasetIOError
from ..utils.constants import (
    HISTORY_STEPS,
    FUTURE_STEPS,
    GMP_HIDDEN,
    LSTM_HIDDEN,
    Q_HIDDEN,
    DESK_SPLITS,
    FULL_SCALE_SPLITS,
    CHECKPOINT_DIR,
)

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)


@dataclass
class ParticleConfig:
    """Mixed charged/uncharged particle system."""

    n_charged: int = 3
    n_uncharged: int = 3
    charge: float = 1.0
    coulomb_constant: float = 1.0
    dt_sim: float = 0.001
    subsample_stride: int = 100
    history_steps: int = HISTORY_STEPS
    future_steps: int = FUTURE_STEPS
    total_steps: int = HISTORY_STEPS + FUTURE_STEPS
    force_clip: float = 10.0
    init_pos_std: float = 0.5
    init_vel_scale: float = 0.5
    min_separation: float = 1e-3
    overflow_bound: float = 1e4
    seed: int = 0

    @property
    def n_agents(self) -> int:
        return self.n_charged + self.n_uncharged

    def validate(self) -> None:
        if self.n_charged < 0 or self.n_uncharged < 0 or self.n_agents < 2:
            raise ContractViolation(
                f"need at least 2 particles, got {self.n_charged} charged + {self.n_uncharged} uncharged"
            )
        for name in ("charge", "coulomb_constant", "dt_sim", "force_clip", "init_pos_std",
                     "init_vel_scale", "min_separation", "overflow_bound"):
            if not getattr(self, name) > 0:
                raise ContractViolation(f"sim.{name} must be strictly positive")
        if self.subsample_stride < 1:
            raise ContractViolation("sim.subsample_stride must be >= 1")
        if self.history_steps < 1 or self.future_steps < 1:
            raise ContractViolation("history and future horizons must be >= 1")
        if self.total_steps < self.history_steps + self.future_steps:
            raise ContractViolation(
                f"total_steps={self.total_steps} shorter than T_h + T_f = "
                f"{self.history_steps + self.future_steps}"
            )


@dataclass
class OptimizerSpec:
    """Adaptive-moment gradient descent settings."""

    learning_rate: float = 1e-3
    batch_size: int = 32
    weight_decay: float = 0.0

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ContractViolation("opt.learning_rate must be > 0")
        if self.batch_size < 1:
            raise ContractViolation("opt.batch_size must be >= 1")
        if self.weight_decay < 0:
            raise ContractViolation("opt.weight_decay must be >= 0")


@dataclass
class GMPConfig:
    hidden: int = GMP_HIDDEN
    pretrain_epochs: int = 20

    def validate(self) -> None:
        if self.hidden < 1 or self.pretrain_epochs < 0:
            raise ContractViolation("gmp.hidden must be >= 1 and gmp.pretrain_epochs >= 0")


@dataclass
class GeneratorConfig:
    """Soft-attention motion generator settings.

    ``noise_cov`` is the diagonal of the output noise covariance used for
    training and deterministic evaluation; ``sample_noise_cov`` is used when
    drawing ``k_samples`` trajectories for the minADE/minFDE/MR metrics.
    """

    n_heads: int = 4
    hidden: int = LSTM_HIDDEN
    noise_cov: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    sample_noise_cov: Tuple[float, ...] = (1e-4, 1e-4, 1e-4, 1e-4)
    k_samples: int = 20
    tau: int = FUTURE_STEPS
    burn_in: int = HISTORY_STEPS
    horizon: int = FUTURE_STEPS
    pretrain_epochs: int = 20

    def validate(self) -> None:
        if self.n_heads < 1 or self.hidden % self.n_heads:
            raise ContractViolation(f"gen.hidden={self.hidden} must split evenly over {self.n_heads} heads")
        if not 1 <= self.tau <= self.horizon:
            raise ContractViolation(f"gen.tau={self.tau} must lie in [1, {self.horizon}]")
        if self.k_samples < 1:
            raise ContractViolation("gen.k_samples must be >= 1")
        for cov in (self.noise_cov, self.sample_noise_cov):
            if len(cov) != 4 or any(c < 0 for c in cov):
                raise ContractViolation("noise covariances must be 4 non-negative values")


@dataclass
class RewardSpec:
    beta_imp: float = 0.01
    beta_sti: float = 0.01
    beta_pun: float = 0.01
    omega_s: float = 1.0
    omega_p: float = 1.0
    sti_pun_enabled: bool = False
    success_threshold: float = 1.0

    def validate(self) -> None:
        for name in ("beta_imp", "beta_sti", "beta_pun", "omega_s", "omega_p"):
            if getattr(self, name) < 0:
                raise ContractViolation(f"reward.{name} must be >= 0")


@dataclass
class DQNConfig:
    """Double-DQN settings for the hard-attention agent."""

    t_rl: int = 10
    hidden: int = Q_HIDDEN
    gamma: float = 0.95
    eps_start: float = 1.0
    eps_end: float = 0.05
    anneal_fraction: float = 0.5
    target_sync: int = 100
    buffer_capacity: int = 50_000
    batch_size: int = 32
    learning_rate: float = 1e-3
    updates_per_epoch: int = 10
    replay_mode: str = "transition"

    def validate(self) -> None:
        if self.t_rl < 1:
            raise ContractViolation("dqn.t_rl must be >= 1")
        if not 0 <= self.gamma <= 1:
            raise ContractViolation("dqn.gamma must lie in [0, 1]")
        if not 0 <= self.eps_end <= self.eps_start <= 1:
            raise ContractViolation("dqn epsilons must satisfy 0 <= eps_end <= eps_start <= 1")
        if self.buffer_capacity < 1 or self.batch_size < 1 or self.target_sync < 1:
            raise ContractViolation("dqn buffer_capacity, batch_size and target_sync must be >= 1")
        if self.replay_mode not in ("transition", "episode"):
            raise ContractViolation(f"unknown dqn.replay_mode '{self.replay_mode}'")


@dataclass
class TrainConfig:
    """Double-stage training schedule."""

    epochs: int = 30
    n_s: int = 10
    n_ft: int = 5
    seed: int = 7
    seeds: Tuple[int, ...] = ()
    desk_scale: bool = True
    checkpoint_dir: str = CHECKPOINT_DIR
    classifier_epochs: int = 10

    def validate(self) -> None:
        if self.epochs < 1:
            raise ContractViolation("train.epochs must be >= 1")
        if self.n_s < 0:
            raise ContractViolation("train.n_s must be >= 0")
        if self.n_ft < 1:
            raise ContractViolation("train.n_ft must be >= 1")
        checkpoints = Path(self.checkpoint_dir)
        if not self.checkpoint_dir or checkpoints.is_absolute() or ".." in checkpoints.parts:
            raise ContractViolation(
                f"train.checkpoint_dir must be relative to the run directory, got '{self.checkpoint_dir}'"
            )


@dataclass
class EvalConfig:
    mode: str = "static"
    tau: int = 2
    miss_threshold: float = 1.0
    n_attention_cases: int = 4
    plots: bool = True

    def validate(self) -> None:
        if self.mode not in ("static", "dynamic"):
            raise ContractViolation(f"eval.mode must be static or dynamic, got '{self.mode}'")
        if self.tau < 1:
            raise ContractViolation("eval.tau must be >= 1")
        if not self.miss_threshold > 0:
            raise ContractViolation("eval.miss_threshold must be > 0")


@dataclass
class RunSection:
    command: str = ""
    data: str = ""
    dir: str = ""
    n_train: int = DESK_SPLITS[0]
    n_val: int = DESK_SPLITS[1]
    n_test: int = DESK_SPLITS[2]
    workers: int = 1

    def validate(self) -> None:
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ContractViolation("split sizes must be >= 1")


SECTIONS = {
    "run": RunSection,
    "sim": ParticleConfig,
    "opt": OptimizerSpec,
    "gmp": GMPConfig,
    "gen": GeneratorConfig,
    "reward": RewardSpec,
    "dqn": DQNConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}

FULL_SCALE_PRESET = {
    "train.epochs": "100",
    "train.desk_scale": "false",
    "run.n_train": str(FULL_SCALE_SPLITS[0]),
    "run.n_val": str(FULL_SCALE_SPLITS[1]),
    "run.n_test": str(FULL_SCALE_SPLITS[2]),
}


def coerce_value(raw: str, hint: Any, key: str) -> Any:
    """Convert a text value to the type a config field declares."""
    text = raw.strip()
    try:
        if hint is bool:
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint in (Tuple[float, ...], Tuple[int, ...]):
            item = float if hint == Tuple[float, ...] else int
            return tuple(item(part) for part in text.split(",") if part.strip())
        return text
    except ValueError:
        raise UsageError(f"invalid value '{raw}' for {key}")


def render_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_key_value_lines(lines: Iterable[str]) -> Dict[str, str]:
    """Parse UTF-8 key=value lines, skipping blanks and # comments."""
    values = {}
    for number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"line {number}: expected key=value, got '{line}'")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


@dataclass
class RunConfig:
    """All module configs as one layered key=value document."""

    run: RunSection = field(default_factory=RunSection)
    sim: ParticleConfig = field(default_factory=ParticleConfig)
    opt: OptimizerSpec = field(default_factory=OptimizerSpec)
    gmp: GMPConfig = field(default_factory=GMPConfig)
    gen: GeneratorConfig = field(default_factory=GeneratorConfig)
    reward: RewardSpec = field(default_factory=RewardSpec)
    dqn: DQNConfig = field(default_factory=DQNConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def layered(
        cls,
        full_scale: bool = False,
        config_file: Optional[Path] = None,
        overrides: Optional[Dict[str, str]] = None,
    ) -> "RunConfig":
        """Resolve defaults, scale preset, config file and overrides, in that order."""
        config = cls()
        if full_scale:
            config.update(FULL_SCALE_PRESET)
        if config_file is not None:
            try:
                text = Path(config_file).read_text(encoding="utf-8")
            except OSError as e:
                logger.error(f"Cannot read config file {config_file}: {e}", exc_info=e)
                raise DatasetIOError(f"cannot read config file {config_file}: {e}")
            config.update(parse_key_value_lines(text.splitlines()))
        if overrides:
            config.update(overrides)
        config.validate()
        return config

    def update(self, values: Dict[str, str]) -> None:
        for key, raw in values.items():
            self.set(key, raw)

    def set(self, key: str, raw: str) -> None:
        section_name, _, name = key.partition(".")
        if section_name not in SECTIONS or not name:
            raise UsageError(f"unknown config key '{key}'")
        section = getattr(self, section_name)
        hints = get_type_hints(type(section))
        if name not in hints:
            raise UsageError(f"unknown config key '{key}'")
        value = coerce_value(str(raw), hints[name], key)
        setattr(self, section_name, replace(section, **{name: value}))

    def validate(self) -> None:
        for name in SECTIONS:
            getattr(self, name).validate()
        if self.gen.burn_in != self.sim.history_steps or self.gen.horizon != self.sim.future_steps:
            raise ContractViolation(
                "gen.burn_in/gen.horizon must match sim.history_steps/sim.future_steps"
            )

    def to_lines(self) -> List[str]:
        lines = []
        for name in SECTIONS:
            section = getattr(self, name)
            for f in fields(section):
                lines.append(f"{name}.{f.name}={render_value(getattr(section, f.name))}")
        return lines

    def write(self, path: Path) -> None:
        """Echo every resolved value to ``path``."""
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")
        except OSError as e:
            logger.error(f"Cannot write config to {path}: {e}", exc_info=e)
            raise DatasetIOError(f"cannot write config {path}: {e}")
        logger.debug(f"Wrote resolved config to {path}")

    @classmethod
    def read(cls, path: Path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            logger.error(f"Cannot read config {path}: {e}", exc_info=e)
            raise DatasetIOError(f"cannot read config {path}: {e}")
        config = cls()
        config.update(parse_key_value_lines(text.splitlines()))
        config.validate()
        return config
