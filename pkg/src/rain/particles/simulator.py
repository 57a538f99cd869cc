"""Mixed charged/uncharged particle simulator.

Charged particles interact through clipped Coulomb forces, uncharged ones move
in straight lines. States are integrated with leapfrog (kick-drift-kick) at
``dt_sim`` and subsampled every ``subsample_stride`` raw steps.
"""

import logging

import numpy as np

from ..config import ParticleConfig
from ..dataset.models import TrajectorySample
from ..errors import ContractViolation, DegenerateGeometryError, NumericalBlowUpError

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)


def _check_finite(name: str, array: np.ndarray) -> None:
    if not np.all(np.isfinite(array)):
        raise ContractViolation(f"{name} contains non-finite values")


def pairwise_forces(
    positions: np.ndarray,
    charges: np.ndarray,
    coulomb_constant: float,
    min_separation: float = 1e-3,
) -> np.ndarray:
    """Unclipped pair forces ``F[i, j]`` exerted by j on i, shape [N, N, 2].

    ``min_separation`` floors the pair distance in the denominator.
    """
    positions = np.asarray(positions, dtype=np.float64)
    charges = np.asarray(charges, dtype=np.float64)
    _check_finite("positions", positions)
    _check_finite("charges", charges)
    if positions.ndim != 2 or positions.shape[1] != 2 or charges.shape != (positions.shape[0],):
        raise ContractViolation(
            f"expected positions [N, 2] and charges [N], got {positions.shape} and {charges.shape}"
        )
    return _pair_forces(positions, charges, coulomb_constant, min_separation)


def _pair_forces(positions, charges, coulomb_constant, min_separation):
    n = positions.shape[0]
    offsets = positions[:, None, :] - positions[None, :, :]
    distances = np.sqrt((offsets ** 2).sum(axis=-1))
    off_diagonal = ~np.eye(n, dtype=bool)
    if np.any(distances[off_diagonal] == 0.0):
        i, j = np.argwhere((distances == 0.0) & off_diagonal)[0]
        raise DegenerateGeometryError(f"particles {i} and {j} are coincident at {positions[i]}")

    distances = np.maximum(distances, min_separation)
    np.fill_diagonal(distances, 1.0)
    strength = coulomb_constant * np.outer(charges, charges) / distances ** 3
    np.fill_diagonal(strength, 0.0)
    return strength[:, :, None] * offsets


def coulomb_forces(
    positions: np.ndarray,
    charges: np.ndarray,
    coulomb_constant: float,
    force_clip: float,
    min_separation: float = 1e-3,
) -> np.ndarray:
    """Net Coulomb force on every particle, each component clipped to ±force_clip."""
    forces = pairwise_forces(positions, charges, coulomb_constant, min_separation).sum(axis=1)
    return np.clip(forces, -force_clip, force_clip)


def ground_truth_graph(charges: np.ndarray) -> np.ndarray:
    """Directed edge (i, j) exists iff i != j and both particles are charged."""
    charged = np.asarray(charges) != 0
    graph = np.outer(charged, charged).astype(np.int8)
    np.fill_diagonal(graph, 0)
    return graph


def _initial_state(config: ParticleConfig, rng: np.random.Generator):
    n = config.n_agents
    positions = rng.normal(0.0, config.init_pos_std, size=(n, 2))
    angles = rng.uniform(0.0, 2.0 * np.pi, size=n)
    velocities = config.init_vel_scale * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    signs = rng.choice(np.array([-1.0, 1.0]), size=config.n_charged)
    charges = np.concatenate([signs * config.charge, np.zeros(config.n_uncharged)])
    return positions, velocities, charges


def simulate(config: ParticleConfig) -> TrajectorySample:
    """Integrate one case, deterministic in ``config.seed``.

    Raises:
        NumericalBlowUpError: a state component left the overflow bound.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    positions, velocities, charges = _initial_state(config, rng)
    return integrate(config, positions, velocities, charges)


def integrate(
    config: ParticleConfig,
    positions: np.ndarray,
    velocities: np.ndarray,
    charges: np.ndarray,
) -> TrajectorySample:
    """Leapfrog from the given initial condition; frame 0 is the initial state."""
    positions = np.array(positions, dtype=np.float64)
    velocities = np.array(velocities, dtype=np.float64)
    charges = np.asarray(charges, dtype=np.float64)
    dt = config.dt_sim
    n_frames = config.total_steps
    states = np.zeros((config.n_agents, n_frames, 4))
    states[:, 0, :2], states[:, 0, 2:] = positions, velocities

    def force(x):
        pair = _pair_forces(x, charges, config.coulomb_constant, config.min_separation)
        return np.clip(pair.sum(axis=1), -config.force_clip, config.force_clip)

    acceleration = force(positions)
    for step in range(1, (n_frames - 1) * config.subsample_stride + 1):
        velocities += 0.5 * dt * acceleration
        positions += dt * velocities
        acceleration = force(positions)
        velocities += 0.5 * dt * acceleration
        if step % config.subsample_stride == 0:
            frame = step // config.subsample_stride
            states[:, frame, :2], states[:, frame, 2:] = positions, velocities
            if np.abs(states[:, frame]).max() > config.overflow_bound:
                raise NumericalBlowUpError(
                    f"seed {config.seed}: state left overflow bound {config.overflow_bound} at frame {frame}"
                )

    return TrajectorySample(
        states=states,
        charges=charges.copy(),
        truth_graph=ground_truth_graph(charges),
        seed=config.seed,
    )
