"""Double-stage training and ablation runs.

Stage one pretrains the GMP encoder as an autoencoder and the motion generator
on fully connected graphs. Stage two alternates, once per epoch: one rollout
into the replay buffer, DDQN updates once more than ``train.n_s`` rollouts
have been collected, and ``train.n_ft`` generator finetune minibatches on
graphs inferred by the current policy. GMP stays frozen throughout stage two.

A run directory holds::

    config.txt
    log.txt                      one line per formal epoch
    checkpoints/pretrain/        gmp.rnck, generator.rnck
    checkpoints/epoch_NNN/       policy, target, optimizers, generator, replay, counters
    checkpoints/final/           policy.rnck, generator.rnck
    checkpoints/ablations/NAME/  finetuned generators of the reference ablations
    metrics/                     key=value reports, curve tables, attention maps
"""

import hashlib
import logging
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from .config import RunConfig
from .dataset.models import Normalizer, TrajectorySample
from .dataset.operations import DatasetHandle
from .errors import ContractViolation, DatasetIOError, MissingPrerequisiteError, RolloutAbortedError, UsageError
from .evaluation import reports
from .evaluation.metrics import (
    all_edges_graphs,
    min_ade_fde,
    miss_rate,
    mse_curve,
    no_edges_graphs,
    relation_metrics,
    summarize_runs,
)
from .learners.checkpoint import load_checkpoint, save_checkpoint
from .learners.params import (
    ParamSet,
    build_optimizer,
    load_optimizer_state,
    optimizer_state,
    seeded_init,
    substream,
)
from .models.gmp import GraphMessagePassing, HistoryDecoder, pretrain_autoencoder, standardized_histories
from .models.replay import ReplayBuffer
from .models.rl_ha import Case, DDQNAgent, PolicyGraphs, QNetwork, rollout
from .models.sga_mg import (
    ConstantGraphs,
    GraphProvider,
    GraphSource,
    MotionGenerator,
    evaluate_loss,
    fc_provider,
    fc_source,
    predict_batch,
    stack_cases,
    train_generator,
    train_step,
    truth_source,
)
from .models.supervised import classify_edges, train_edge_classifier
from .utils.constants import (
    CHECKPOINT_DIR,
    CHECKPOINT_SUFFIX,
    METRICS_DIR,
    PRETRAIN_DIR,
    RUN_CONFIG_FILE,
    RUN_LOG_FILE,
    Ablation,
    Split,
)
from .utils.formatting import format_epoch_line

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)

EPOCH_LOGGER = "rain.pipeline.epochs"

# (case indices) -> graph provider for those cases
ProviderFactory = Callable[[np.ndarray], GraphProvider]


class RunDirectory:
    """Paths of one training run.

    Checkpoints live under ``checkpoint_dir`` (``train.checkpoint_dir``),
    relative to the run directory.
    """

    def __init__(self, path: Path, checkpoint_dir: str = CHECKPOINT_DIR):
        self.path = Path(path)
        self.checkpoint_dir = checkpoint_dir

    @classmethod
    def for_config(cls, path: Path, config: RunConfig) -> "RunDirectory":
        return cls(path, config.train.checkpoint_dir)

    @property
    def config_file(self) -> Path:
        return self.path / RUN_CONFIG_FILE

    @property
    def log_file(self) -> Path:
        return self.path / RUN_LOG_FILE

    @property
    def checkpoints(self) -> Path:
        return self.path / self.checkpoint_dir

    @property
    def pretrain(self) -> Path:
        return self.checkpoints / PRETRAIN_DIR

    @property
    def final(self) -> Path:
        return self.checkpoints / "final"

    @property
    def metrics(self) -> Path:
        return self.path / METRICS_DIR

    def epoch_dir(self, epoch: int) -> Path:
        return self.checkpoints / f"epoch_{epoch:03d}"

    def ablation_dir(self, name: str) -> Path:
        return self.checkpoints / "ablations" / name.replace("+", "_")

    def checkpoint(self, directory: Path, role: str) -> Path:
        return directory / f"{role}{CHECKPOINT_SUFFIX}"

    def latest_epoch(self) -> int:
        """Last epoch whose counters file (written last) exists; 0 if none."""
        epochs = [
            int(p.name.split("_")[1]) for p in self.checkpoints.glob("epoch_*")
            if self.checkpoint(p, "counters").exists()
        ]
        return max(epochs, default=0)

    def require(self, *paths: Path) -> None:
        missing = [str(p) for p in paths if not p.exists()]
        if missing:
            raise MissingPrerequisiteError(f"missing checkpoints: {', '.join(missing)}")

    def prepare(self, config: RunConfig) -> None:
        try:
            self.path.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            logger.error(f"Cannot create run directory {self.path}: {e}", exc_info=e)
            raise DatasetIOError(f"cannot create run directory {self.path}: {e}")
        config.write(self.config_file)


def open_epoch_log(run_dir: RunDirectory) -> logging.Logger:
    """Attach ``log.txt`` (append mode, bare messages) to the epoch logger."""
    epoch_log = logging.getLogger(EPOCH_LOGGER)
    epoch_log.setLevel(logging.INFO)
    epoch_log.propagate = False
    close_epoch_log()
    try:
        run_dir.path.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(run_dir.log_file, mode="a", encoding="utf-8")
    except OSError as e:
        logger.error(f"Cannot open epoch log {run_dir.log_file}: {e}", exc_info=e)
        raise DatasetIOError(f"cannot open epoch log {run_dir.log_file}: {e}")
    handler.setFormatter(logging.Formatter("%(message)s"))
    epoch_log.addHandler(handler)
    return epoch_log


def close_epoch_log() -> None:
    epoch_log = logging.getLogger(EPOCH_LOGGER)
    for handler in list(epoch_log.handlers):
        handler.close()
        epoch_log.removeHandler(handler)


def build_gmp(config: RunConfig) -> GraphMessagePassing:
    with seeded_init(config.train.seed, "gmp"):
        return GraphMessagePassing(history_steps=config.sim.history_steps, hidden=config.gmp.hidden)


def build_generator(config: RunConfig) -> MotionGenerator:
    with seeded_init(config.train.seed, "generator"):
        return MotionGenerator.from_config(config.gen)


def build_q_network(config: RunConfig) -> QNetwork:
    with seeded_init(config.train.seed, "q_network"):
        return QNetwork(obs_dim=2 * config.gmp.hidden + 1, hidden=config.dqn.hidden)


def load_gmp(config: RunConfig, params: ParamSet) -> GraphMessagePassing:
    gmp = params.load_into(build_gmp(config))
    gmp.requires_grad_(False)
    return gmp.eval()


def run_pretraining(dataset: DatasetHandle, config: RunConfig, run_dir: Optional[RunDirectory] = None,
                    progress: bool = False) -> Tuple[ParamSet, ParamSet]:
    """Pretrain GMP (history autoencoder) then the generator on fully connected graphs.

    Returns:
        tuple: (frozen GMP params, FC-pretrained generator params)
    """
    train = dataset.load(Split.TRAIN)
    normalizer = dataset.normalizer
    seed = config.train.seed

    gmp = build_gmp(config)
    with seeded_init(seed, "gmp_decoder"):
        decoder = HistoryDecoder(config.sim.history_steps, config.gmp.hidden)
    gmp_params, gmp_losses = pretrain_autoencoder(
        train, gmp, normalizer, config.opt, config.gmp.pretrain_epochs, seed, decoder, progress
    )

    generator = build_generator(config)
    generator_params, gen_losses = train_generator(
        train, fc_source, generator, normalizer, config.gen, config.opt, config.gen.pretrain_epochs,
        seed, progress=progress,
    )
    logger.info(
        f"Pretraining done: GMP loss {gmp_losses[0]:.4f} -> {gmp_losses[-1]:.4f}, "
        f"generator loss {gen_losses[0]:.4f} -> {gen_losses[-1]:.4f}"
    )

    if run_dir is not None:
        save_checkpoint(gmp_params, run_dir.checkpoint(run_dir.pretrain, "gmp"))
        save_checkpoint(generator_params, run_dir.checkpoint(run_dir.pretrain, "generator"))
        reports.write_metrics(run_dir.metrics / "pretrain.txt", {
            "gmp.loss_initial": gmp_losses[0],
            "gmp.loss_final": gmp_losses[-1],
            "generator.loss_initial": gen_losses[0],
            "generator.loss_final": gen_losses[-1],
        })
    return gmp_params, generator_params


def has_pretrained(run_dir: RunDirectory) -> bool:
    return all(run_dir.checkpoint(run_dir.pretrain, role).exists() for role in ("gmp", "generator"))


def load_pretrained(run_dir: RunDirectory) -> Tuple[ParamSet, ParamSet]:
    gmp_path = run_dir.checkpoint(run_dir.pretrain, "gmp")
    generator_path = run_dir.checkpoint(run_dir.pretrain, "generator")
    run_dir.require(gmp_path, generator_path)
    return load_checkpoint(gmp_path), load_checkpoint(generator_path)


@dataclass
class FormalState:
    """Everything the formal stage needs to continue from an epoch boundary."""

    agent: DDQNAgent
    generator: MotionGenerator
    generator_optimizer: torch.optim.Optimizer
    buffer: ReplayBuffer
    epoch: int = 0
    rollouts: int = 0
    finetune_steps: int = 0
    aborted_rollouts: int = 0
    history: List[Dict[str, float]] = field(default_factory=list)

    @property
    def updates(self) -> int:
        return self.agent.update_count

    def counters(self) -> ParamSet:
        values = [self.epoch, self.rollouts, self.agent.update_count, self.finetune_steps, self.aborted_rollouts]
        return ParamSet(tensors=OrderedDict(counters=torch.tensor(values, dtype=torch.float32)))

    def save(self, run_dir: RunDirectory) -> Path:
        directory = run_dir.epoch_dir(self.epoch)
        save_checkpoint(ParamSet.from_module(self.agent.q_network, self.epoch), run_dir.checkpoint(directory, "policy"))
        save_checkpoint(ParamSet.from_module(self.agent.target_network, self.epoch), run_dir.checkpoint(directory, "target"))
        save_checkpoint(optimizer_state(self.agent.optimizer), run_dir.checkpoint(directory, "policy_optimizer"))
        save_checkpoint(ParamSet.from_module(self.generator, self.epoch), run_dir.checkpoint(directory, "generator"))
        save_checkpoint(optimizer_state(self.generator_optimizer), run_dir.checkpoint(directory, "generator_optimizer"))
        save_checkpoint(self.buffer.state(), run_dir.checkpoint(directory, "replay"))
        save_checkpoint(self.counters(), run_dir.checkpoint(directory, "counters"))
        previous = run_dir.checkpoint(run_dir.epoch_dir(self.epoch - 1), "replay")
        if previous.exists():
            previous.unlink()
        return directory

    @classmethod
    def fresh(cls, config: RunConfig, generator_params: ParamSet) -> "FormalState":
        generator = generator_params.load_into(build_generator(config))
        return cls(
            agent=DDQNAgent(config.dqn, build_q_network(config)),
            generator=generator,
            generator_optimizer=build_optimizer(config.opt, generator.parameters()),
            buffer=ReplayBuffer(config.dqn.buffer_capacity, 2 * config.gmp.hidden + 1),
        )

    @classmethod
    def load(cls, config: RunConfig, run_dir: RunDirectory, epoch: int) -> "FormalState":
        directory = run_dir.epoch_dir(epoch)
        roles = ("policy", "target", "policy_optimizer", "generator", "generator_optimizer", "replay", "counters")
        run_dir.require(*(run_dir.checkpoint(directory, role) for role in roles))
        params = {role: load_checkpoint(run_dir.checkpoint(directory, role)) for role in roles}

        state = cls.fresh(config, params["generator"])
        params["policy"].load_into(state.agent.q_network)
        params["target"].load_into(state.agent.target_network)
        load_optimizer_state(state.agent.optimizer, params["policy_optimizer"])
        load_optimizer_state(state.generator_optimizer, params["generator_optimizer"])
        state.buffer = ReplayBuffer.from_state(params["replay"], config.dqn.buffer_capacity)
        epoch_, rollouts, updates, finetune, aborted = (int(v) for v in params["counters"]["counters"].tolist())
        state.epoch, state.rollouts, state.finetune_steps, state.aborted_rollouts = epoch_, rollouts, finetune, aborted
        state.agent.update_count = updates
        logger.info(f"Resumed formal training after epoch {epoch}: {rollouts} rollouts, {updates} DDQN updates")
        return state


def _minibatch(rng: np.random.Generator, size: int, batch_size: int) -> np.ndarray:
    return rng.choice(size, size=min(batch_size, size), replace=False)


def run_formal_training(
    dataset: DatasetHandle,
    gmp_params: ParamSet,
    generator_params: ParamSet,
    config: RunConfig,
    run_dir: Optional[RunDirectory] = None,
    resume: bool = True,
    progress: bool = False,
) -> FormalState:
    """Alternate rollouts, DDQN updates and policy-graph generator finetuning.

    Per epoch: one rollout on a uniformly drawn training case, DDQN updates
    only once the rollout count exceeds ``train.n_s``, then exactly
    ``train.n_ft`` finetune minibatches. Every epoch draws its randomness from
    its own substream, so resuming from a saved epoch replays the same run.
    """
    train = dataset.load(Split.TRAIN)
    val = dataset.load(Split.VAL)
    normalizer = dataset.normalizer
    history, future = stack_cases(train, normalizer, config.gen.burn_in, config.gen.horizon)
    val_history, val_future = stack_cases(val, normalizer, config.gen.burn_in, config.gen.horizon)
    gmp = load_gmp(config, gmp_params)
    gmp_digest = gmp_params.digest()

    start = run_dir.latest_epoch() if (run_dir is not None and resume) else 0
    state = FormalState.load(config, run_dir, start) if start else FormalState.fresh(config, generator_params)
    epoch_log = open_epoch_log(run_dir) if run_dir is not None else None
    epochs = config.train.epochs
    seed = config.train.seed
    policy = PolicyGraphs(gmp, state.agent.q_network, config.dqn.t_rl)

    try:
        for epoch in tqdm(range(start + 1, epochs + 1), desc="formal", disable=not progress):
            rng = substream(seed, "formal", epoch)
            index = int(rng.integers(len(train)))
            case = Case(history=history[index], future=future[index], truth_graph=train[index].truth_graph)
            epsilon = state.agent.epsilon(epoch - 1, epochs)

            final_reward = None
            try:
                result = rollout(case, gmp, state.agent.q_network, state.generator, config.reward,
                                 epsilon, config.dqn.t_rl, rng)
                state.buffer.add_episode(result.transitions)
                state.rollouts += 1
                final_reward = result.rewards[-1]
            except RolloutAbortedError as e:
                state.aborted_rollouts += 1
                logger.warning(f"Epoch {epoch}: rollout on case {index} aborted: {e}")

            dqn_losses = []
            if state.rollouts > config.train.n_s:
                for _ in range(config.dqn.updates_per_epoch):
                    loss = state.agent.update(state.buffer, rng)
                    if loss is not None:
                        dqn_losses.append(loss)

            finetune_losses = []
            for _ in range(config.train.n_ft):
                picks = _minibatch(rng, len(train), config.opt.batch_size)
                graphs = policy(history[picks])
                finetune_losses.append(train_step(state.generator, state.generator_optimizer,
                                                  history[picks], future[picks], graphs))
                state.finetune_steps += 1

            val_loss = evaluate_loss(state.generator, val_history, val_future, policy(val_history))
            state.epoch = epoch
            record = {
                "epsilon": epsilon,
                "rollouts": state.rollouts,
                "updates": state.updates,
                "reward": final_reward,
                "dqn_loss": float(np.mean(dqn_losses)) if dqn_losses else None,
                "finetune_loss": float(np.mean(finetune_losses)),
                "val_loss": val_loss,
            }
            state.history.append(record)
            logger.info(f"Epoch {epoch}/{epochs}: val loss {val_loss:.5f}, {state.updates} DDQN updates")
            if run_dir is not None:
                state.save(run_dir)
                epoch_log.info(format_epoch_line(epoch, record))
    finally:
        if epoch_log is not None:
            close_epoch_log()

    if ParamSet.from_module(gmp).digest() != gmp_digest:
        raise ContractViolation("GMP parameters changed during formal training")
    if run_dir is not None:
        save_checkpoint(ParamSet.from_module(state.agent.q_network, state.epoch), run_dir.checkpoint(run_dir.final, "policy"))
        save_checkpoint(ParamSet.from_module(state.generator, state.epoch), run_dir.checkpoint(run_dir.final, "generator"))
    return state


def load_final(config: RunConfig, run_dir: RunDirectory) -> Tuple[GraphMessagePassing, QNetwork, MotionGenerator]:
    gmp_path = run_dir.checkpoint(run_dir.pretrain, "gmp")
    policy_path = run_dir.checkpoint(run_dir.final, "policy")
    generator_path = run_dir.checkpoint(run_dir.final, "generator")
    run_dir.require(gmp_path, policy_path, generator_path)
    gmp = load_gmp(config, load_checkpoint(gmp_path))
    q_network = load_checkpoint(policy_path).load_into(build_q_network(config)).eval()
    generator = load_checkpoint(generator_path).load_into(build_generator(config)).eval()
    return gmp, q_network, generator


@dataclass
class Evaluation:
    """Deterministic and sampled predictions of one configuration on one split."""

    curve: np.ndarray
    predictions: np.ndarray
    masks: np.ndarray
    weights: np.ndarray
    min_ade: float
    min_fde: float
    miss_rate: float

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.predictions, dtype="<f4").tobytes()).hexdigest()

    def values(self, prefix: str) -> Dict[str, object]:
        values: Dict[str, object] = {
            f"{prefix}.mse_final": float(self.curve[-1]),
            f"{prefix}.min_ade": self.min_ade,
            f"{prefix}.min_fde": self.min_fde,
            f"{prefix}.miss_rate": self.miss_rate,
            f"{prefix}.predictions_sha256": self.digest(),
        }
        values.update(reports.curve_values(self.curve, f"{prefix}.mse"))
        return values


def evaluate_generator(
    generator: MotionGenerator,
    providers: ProviderFactory,
    samples: Sequence[TrajectorySample],
    normalizer: Normalizer,
    config: RunConfig,
    tau: Optional[int] = None,
    chunk: int = 64,
    keep_weights: int = 0,
) -> Evaluation:
    """MSE curve from one noise-free prediction per case, minADE/minFDE/MR from K noisy samples."""
    history, future = stack_cases(samples, normalizer, config.gen.burn_in, config.gen.horizon)
    deterministic = replace(config.gen, tau=tau or config.gen.horizon, k_samples=1,
                            noise_cov=(0.0,) * 4)
    sampled = replace(deterministic, k_samples=config.gen.k_samples, noise_cov=config.gen.sample_noise_cov)
    seed = config.train.seed

    preds, masks, weights, ade, fde, missed = [], [], [], [], [], []
    for start in range(0, len(samples), chunk):
        indices = np.arange(start, min(start + chunk, len(samples)))
        provider = providers(indices)
        p, m, w = predict_batch(history[indices], provider, deterministic, generator, seed=seed)
        preds.append(p[:, 0])
        masks.append(m[:, 0, 0])
        if keep_weights > sum(len(x) for x in weights):
            weights.append(w[:, 0])

        draws, _, _ = predict_batch(history[indices], provider, sampled, generator, seed=seed + start)
        truth = future[indices].numpy()
        a, f = min_ade_fde(draws, truth)
        ade.append(a * len(indices))
        fde.append(f * len(indices))
        missed.append(miss_rate(draws, truth, config.eval.miss_threshold) * len(indices))

    predictions = np.concatenate(preds)
    curve = mse_curve(normalizer.destandardize(predictions), normalizer.destandardize(future.numpy()))
    total = len(samples)
    kept = np.concatenate(weights)[:keep_weights] if weights else np.zeros((0,))
    return Evaluation(
        curve=curve,
        predictions=predictions,
        masks=np.concatenate(masks),
        weights=kept,
        min_ade=sum(ade) / total,
        min_fde=sum(fde) / total,
        miss_rate=sum(missed) / total,
    )


def finetune_reference(dataset: DatasetHandle, config: RunConfig, generator_params: ParamSet,
                       source: GraphSource, name: str, progress: bool = False) -> MotionGenerator:
    """Finetune the FC-pretrained generator on fixed graphs for as many steps as the formal stage finetunes."""
    train = dataset.load(Split.TRAIN)
    history, future = stack_cases(train, dataset.normalizer, config.gen.burn_in, config.gen.horizon)
    generator = generator_params.load_into(build_generator(config))
    optimizer = build_optimizer(config.opt, generator.parameters())
    rng = substream(config.train.seed, f"finetune_{name}")
    steps = config.train.epochs * config.train.n_ft
    for _ in tqdm(range(steps), desc=name, disable=not progress):
        picks = _minibatch(rng, len(train), config.opt.batch_size)
        train_step(generator, optimizer, history[picks], future[picks], source(picks, history[picks]))
    return generator.eval()


def scale_name(config: RunConfig) -> str:
    return "desk" if config.train.desk_scale else "full"


def _relation_block(inferred: np.ndarray, truth: np.ndarray, prefix: str = "relation") -> Dict[str, object]:
    values = reports.relation_values(relation_metrics(inferred, truth), prefix)
    values.update(reports.relation_values(relation_metrics(all_edges_graphs(truth), truth), "reference.all_edges"))
    values.update(reports.relation_values(relation_metrics(no_edges_graphs(truth), truth), "reference.no_edges"))
    return values


def run_ablation(name: str, dataset: DatasetHandle, config: RunConfig, run_dir: RunDirectory,
                 progress: bool = False) -> Dict[str, object]:
    """Evaluate one named configuration on the test split and write ``metrics/<name>.txt``."""
    if name not in Ablation.ALL:
        raise UsageError(f"unknown ablation '{name}', expected one of {', '.join(Ablation.ALL)}")
    test = dataset.load(Split.TEST)
    normalizer = dataset.normalizer
    truth = np.stack([s.truth_graph for s in test])
    values: Dict[str, object] = {"ablation": name, "scale": scale_name(config)}

    if name == Ablation.SUPERVISED:
        gmp_params, _ = load_pretrained(run_dir)
        gmp = load_gmp(config, gmp_params)
        with seeded_init(config.train.seed, "edge_classifier"):
            classifier, losses = train_edge_classifier(
                dataset.load(Split.TRAIN), gmp, normalizer, config.opt, config.train.classifier_epochs,
                config.train.seed, progress=progress,
            )
        directory = run_dir.ablation_dir(name)
        save_checkpoint(ParamSet.from_module(classifier), run_dir.checkpoint(directory, "classifier"))
        inferred = classify_edges(classifier, gmp, standardized_histories(test, normalizer, config.sim.history_steps))
        values["classifier.loss_final"] = losses[-1] if losses else float("nan")
        values.update(_relation_block(inferred, truth))
    else:
        if name in (Ablation.TRUE_SOFT, Ablation.FULL_SOFT):
            _, generator_params = load_pretrained(run_dir)
            directory = run_dir.ablation_dir(name)
            path = run_dir.checkpoint(directory, "generator")
            if path.exists():
                generator = load_checkpoint(path).load_into(build_generator(config)).eval()
            else:
                train_graphs = truth_source(dataset.load(Split.TRAIN)) if name == Ablation.TRUE_SOFT else fc_source
                generator = finetune_reference(dataset, config, generator_params, train_graphs, name, progress)
                save_checkpoint(ParamSet.from_module(generator), path)
            if name == Ablation.TRUE_SOFT:
                providers = lambda indices: ConstantGraphs(torch.as_tensor(truth[indices]))
            else:
                providers = lambda indices: fc_provider
            tau = None
        else:
            gmp, q_network, generator = load_final(config, run_dir)
            policy = PolicyGraphs(gmp, q_network, config.dqn.t_rl)
            providers = lambda indices: policy
            tau = config.eval.tau if name == Ablation.HYBRID_DYNAMIC else None
        evaluation = evaluate_generator(generator, providers, test, normalizer, config, tau)
        values.update(evaluation.values("test"))
        values.update(_relation_block(evaluation.masks, truth))

    reports.write_metrics(run_dir.metrics / f"{name.replace('+', '_')}.txt", values, header=f"ablation {name}")
    logger.info(f"Ablation {name} written to {run_dir.metrics}")
    return values


def run_evaluation(dataset: DatasetHandle, config: RunConfig, run_dir: RunDirectory, mode: str = "static",
                   tau: Optional[int] = None) -> Dict[str, object]:
    """Evaluate the hybrid model on the test split; write metrics, curve table and attention maps."""
    if not run_dir.path.is_dir():
        raise MissingPrerequisiteError(f"run directory {run_dir.path} does not exist")
    if mode not in ("static", "dynamic"):
        raise UsageError(f"unknown mode '{mode}'")
    tau = (tau or config.eval.tau) if mode == "dynamic" else None
    gmp, q_network, generator = load_final(config, run_dir)
    test = dataset.load(Split.TEST)
    truth = np.stack([s.truth_graph for s in test])
    policy = PolicyGraphs(gmp, q_network, config.dqn.t_rl)

    n_maps = min(config.eval.n_attention_cases, len(test))
    evaluation = evaluate_generator(generator, lambda indices: policy, test, dataset.normalizer, config, tau,
                                    keep_weights=n_maps)
    values: Dict[str, object] = {"mode": mode, "tau": tau or config.gen.horizon, "scale": scale_name(config)}
    values.update(evaluation.values("test"))
    values.update(_relation_block(evaluation.masks, truth))

    tag = mode if mode == "static" else f"dynamic_tau{tau}"
    reports.write_metrics(run_dir.metrics / f"evaluate_{tag}.txt", values, header=f"hybrid {tag}")
    columns = OrderedDict(hybrid=evaluation.curve)
    for name in (Ablation.TRUE_SOFT, Ablation.FULL_SOFT):
        report = run_dir.metrics / f"{name.replace('+', '_')}.txt"
        if report.exists():
            parsed = reports.parse_metrics(report)
            columns[name] = [float(parsed[f"test.mse.t{t + 1}"]) for t in range(len(evaluation.curve))]
    reports.write_curve_table(run_dir.metrics / f"mse_curve_{tag}.txt", columns)

    attention = run_dir.metrics / f"attention_{tag}"
    for case in range(n_maps):
        reports.write_attention_map(attention, case, evaluation.masks[case], evaluation.weights[case], truth[case])
    if config.eval.plots:
        reports.plot_curves(run_dir.metrics / f"mse_curve_{tag}.png", columns)
        for case in range(n_maps):
            reports.plot_attention(attention / f"case_{case:03d}.png", evaluation.masks[case],
                                   evaluation.weights[case], truth[case])
    logger.info(f"Evaluation ({tag}) written to {run_dir.metrics}")
    return values


def run_all(dataset: DatasetHandle, config: RunConfig, run_dir: RunDirectory, stage: str = "all",
            progress: bool = False) -> None:
    """Run ``pretrain``, ``formal`` or both.

    With ``all``, existing pretrain checkpoints are reused so an interrupted run
    resumes its formal stage on the same frozen GMP.
    """
    run_dir.prepare(config)
    if stage == "all" and has_pretrained(run_dir):
        logger.info(f"Reusing pretrain checkpoints in {run_dir.pretrain}")
        gmp_params, generator_params = load_pretrained(run_dir)
    elif stage in ("pretrain", "all"):
        gmp_params, generator_params = run_pretraining(dataset, config, run_dir, progress)
    elif stage == "formal":
        gmp_params, generator_params = load_pretrained(run_dir)
    else:
        raise UsageError(f"unknown stage '{stage}'")
    if stage in ("formal", "all"):
        run_formal_training(dataset, gmp_params, generator_params, config, run_dir, progress=progress)


def run_seeds(dataset: DatasetHandle, config: RunConfig, run_dir: RunDirectory, seeds: Sequence[int],
              progress: bool = False) -> Dict[str, str]:
    """Full training plus the reference ablations per seed; Mean±Std over seeds."""
    run_dir.prepare(config)
    per_seed: List[Dict[str, object]] = []
    for seed in seeds:
        seeded = replace(config, train=replace(config.train, seed=seed, seeds=()))
        sub = RunDirectory(run_dir.path / f"seed_{seed}", run_dir.checkpoint_dir)
        logger.info(f"Seed {seed}: training into {sub.path}")
        run_all(dataset, seeded, sub, "all", progress)
        values = {}
        for name in (Ablation.TRUE_SOFT, Ablation.FULL_SOFT, Ablation.HYBRID_STATIC):
            report = run_ablation(name, dataset, seeded, sub, progress)
            values[f"{name}.mse_final"] = report["test.mse_final"]
            if name == Ablation.HYBRID_STATIC:
                for key in ("accuracy", "precision", "recall", "f1"):
                    values[f"hybrid.{key}"] = report[f"relation.{key}"]
        per_seed.append(values)
    summary = summarize_runs(per_seed, percent_keys=[f"hybrid.{k}" for k in ("accuracy", "precision", "recall", "f1")])
    header = f"seeds {','.join(map(str, seeds))} ({scale_name(config)} scale)"
    reports.write_metrics(run_dir.metrics / "summary.txt", summary, header=header)
    return summary
