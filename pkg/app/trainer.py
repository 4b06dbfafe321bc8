"""
Q-learning offline sobre el dataset generado.

Cada paso muestrea T unidades con reemplazo, calcula el objetivo con la red
objetivo congelada y aplica T actualizaciones de SGD secuenciales. La red
objetivo se sincroniza cada C pasos y se registra un checkpoint cada E.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
import pandas as pd
from loguru import logger

from app.dataset import Dataset, TransitionUnit
from app.qnet import (
    NumericFaultError,
    QNetwork,
    backward_step,
    build,
    checkpoint_bytes,
    clone,
    forward,
    load_checkpoint,
    load_checkpoint_bytes,
    save_checkpoint,
    sync_target,
)
from app.rl_core import State
from app.schemas import NetworkArch, TrainConfig
from app.sim_world import JointConfig


SAMPLER_STREAM = 2
LOG_COLUMNS = ["step", "mean_loss", "checkpoint_id"]


@dataclass
class CheckpointRecord:
    """Checkpoint emitido durante el entrenamiento (en disco o en memoria)."""

    checkpoint_id: int
    step: int
    path: Optional[Path] = None
    data: Optional[bytes] = None

    def load(self) -> QNetwork:
        if self.path is not None:
            return load_checkpoint(self.path)
        return load_checkpoint_bytes(self.data, f"checkpoint {self.checkpoint_id}")


@dataclass
class TrainLog:
    """Pérdida media por paso y checkpoints emitidos."""

    steps: list[int] = field(default_factory=list)
    mean_losses: list[float] = field(default_factory=list)
    checkpoints: dict[int, int] = field(default_factory=dict)  # paso → id

    def record(self, step: int, mean_loss: float) -> None:
        self.steps.append(step)
        self.mean_losses.append(mean_loss)

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({"step": self.steps, "mean_loss": self.mean_losses}, columns=LOG_COLUMNS[:2])
        df["checkpoint_id"] = pd.array([self.checkpoints.get(s) for s in self.steps], dtype="Int64")
        return df

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path


class TrainResult(NamedTuple):
    net: QNetwork
    log: TrainLog
    checkpoints: list[CheckpointRecord]


class TrainingAbortedError(Exception):
    """
    Fallo numérico durante el entrenamiento.

    Attributes:
        step: Paso en que ocurrió el fallo
        log: Registro hasta el último paso completo
        checkpoints: Checkpoints emitidos antes del fallo
    """

    def __init__(self, message: str, step: int, log: TrainLog, checkpoints: list[CheckpointRecord]):
        super().__init__(message)
        self.step = step
        self.log = log
        self.checkpoints = checkpoints

    @property
    def last_checkpoint(self) -> Optional[CheckpointRecord]:
        return self.checkpoints[-1] if self.checkpoints else None


def compute_target(u: TransitionUnit, target_net: QNetwork, gamma: float) -> float:
    """
    y = r + γ · max_a′ Q̂(s′, a′); sin caso terminal.

    Raises:
        NumericFaultError: Si el objetivo no es finito
    """
    y = u.r + gamma * float(np.max(forward(target_net, u.s_next)))
    if not np.isfinite(y):
        raise NumericFaultError(f"Objetivo no finito: {y}")
    return y


def compute_targets(records: np.ndarray, target_net: QNetwork, gamma: float) -> np.ndarray:
    """Objetivos de un lote de registros con un solo forward de la red objetivo."""
    q_next = target_net.q_values_batch(records["n_image"], records["n_joints"])
    y = records["reward"] + gamma * q_next.max(axis=1)
    if not np.all(np.isfinite(y)):
        raise NumericFaultError("Objetivo no finito en el lote")
    return y


def sampler(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, SAMPLER_STREAM]))


def train(
    train_set: Dataset,
    cfg: TrainConfig,
    arch: Optional[NetworkArch] = None,
    checkpoint_dir: Optional[str | Path] = None,
    net: Optional[QNetwork] = None,
) -> TrainResult:
    """
    Entrena la red sobre `train_set`.

    Args:
        train_set: Dataset de entrenamiento (no vacío)
        cfg: Hiperparámetros (M, T, C, E, γ, lr, semilla)
        arch: Arquitectura (por defecto, la superficial)
        checkpoint_dir: Carpeta de checkpoints; None = se guardan en memoria
        net: Red inicial; por defecto build(arch, cfg.seed)

    Returns:
        TrainResult(net, log, checkpoints)

    Raises:
        ValueError: Si el dataset está vacío
        TrainingAbortedError: Ante un fallo numérico
    """
    if len(train_set) == 0:
        raise ValueError("El dataset de entrenamiento está vacío")

    net = net or build(arch or NetworkArch.shallow(), cfg.seed)
    target = clone(net)
    rng = sampler(cfg.seed)
    log = TrainLog()
    checkpoints: list[CheckpointRecord] = []
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    records = train_set.records
    report_every = max(cfg.train_steps // 10, 1)

    logger.info(
        f"Entrenando {net.arch.variant}: M={cfg.train_steps}, T={cfg.units_per_step}, "
        f"C={cfg.sync_interval}, E={cfg.checkpoint_interval}, γ={cfg.gamma}, lr={cfg.lr}, "
        f"{len(train_set)} unidades"
    )

    for step in range(1, cfg.train_steps + 1):
        batch = records[rng.integers(0, len(records), size=cfg.units_per_step)]
        try:
            targets = compute_targets(batch, target, cfg.gamma)
            losses = [
                backward_step(
                    net,
                    State(rec["s_image"], JointConfig.from_array(rec["s_joints"])),
                    int(rec["action"]),
                    float(y),
                    cfg.lr,
                )
                for rec, y in zip(batch, targets)
            ]
        except NumericFaultError as e:
            logger.error(f"Fallo numérico en el paso {step}: {e}")
            raise TrainingAbortedError(f"Entrenamiento abortado en el paso {step}: {e}", step, log, checkpoints) from e

        log.record(step, float(np.mean(losses)))

        if step % cfg.sync_interval == 0:
            sync_target(net, target)

        if step % cfg.checkpoint_interval == 0:
            ckpt_id = step // cfg.checkpoint_interval
            if ckpt_dir is not None:
                path = save_checkpoint(net, ckpt_dir / f"ckpt_{ckpt_id:05d}.bin", step, ckpt_id)
                checkpoints.append(CheckpointRecord(ckpt_id, step, path=path))
            else:
                checkpoints.append(CheckpointRecord(ckpt_id, step, data=checkpoint_bytes(net, step, ckpt_id)))
            log.checkpoints[step] = ckpt_id

        if step % report_every == 0:
            logger.info(f"   paso {step}/{cfg.train_steps}: pérdida media {log.mean_losses[-1]:.4f}")

    return TrainResult(net, log, checkpoints)
