"""
Política de comportamiento y generación del dataset offline.

Cada bloque de 10 unidades alterna dos reglas: las unidades con
units_num % 10 < 5 usan la regla parcialmente aleatoria (evitan las acciones
que alejan el ContactRate del valor ideal) y las restantes eligen entre las
9 acciones de forma uniforme.
"""

from concurrent.futures import ProcessPoolExecutor
from typing import Optional

import numpy as np
from loguru import logger

from app.dataset import RECORD_DTYPE, Dataset, merge_datasets
from app.rl_core import ActionClasses, ActionEffectClass, class_subset, reward
from app.schemas import N_ACTIONS, ContactBand, EnvConfig
from app.sim_world import SimulationError, SurfaceEnv


POLICY_STREAM = 1


class BehaviorPolicyError(Exception):
    """Conjunto de acciones candidatas vacío (clasificación inconsistente)."""
    pass


class DatasetGenerationError(Exception):
    """
    Fallo del entorno durante la generación.

    Attributes:
        units_completed: Unidades generadas antes del fallo
        partial: Dataset con esas unidades
    """

    def __init__(self, message: str, units_completed: int, partial: Optional[Dataset] = None):
        super().__init__(f"{message} ({units_completed} unidades completadas)")
        self.units_completed = units_completed
        self.partial = partial


def policy_rng(seed: int) -> np.random.Generator:
    """Generador de la política, independiente de los del entorno con la misma semilla."""
    return np.random.default_rng(np.random.SeedSequence([seed, POLICY_STREAM]))


def uses_complete_rule(units_num: int) -> bool:
    return units_num % 10 >= 5


def select_behavior_action(
    units_num: int,
    cr: float,
    classes: ActionClasses,
    rng: np.random.Generator,
    band: Optional[ContactBand] = None,
) -> int:
    """
    Elige la acción de la unidad `units_num` (base 1).

    Args:
        units_num: Índice de la unidad, desde 1
        cr: ContactRate del estado actual
        classes: Clasificación de acciones
        rng: Generador con semilla
        band: Banda de contacto (define cr_ideal)

    Returns:
        ActionId elegido

    Raises:
        ValueError: Si units_num < 1
        BehaviorPolicyError: Si no quedan candidatas
    """
    if units_num < 1:
        raise ValueError(f"units_num empieza en 1, se recibió {units_num}")

    if uses_complete_rule(units_num):
        return int(rng.integers(N_ACTIONS))

    band = band or ContactBand()
    excluded = ActionEffectClass.IC if cr >= band.cr_ideal else ActionEffectClass.DC
    candidates = sorted(set(range(N_ACTIONS)) - class_subset(classes, excluded))
    if not candidates:
        raise BehaviorPolicyError(f"Sin acciones candidatas tras excluir {excluded.value}")
    return int(candidates[rng.integers(len(candidates))])


def generate_dataset(
    env: SurfaceEnv,
    n: int,
    classes: ActionClasses,
    rng: np.random.Generator,
    band: Optional[ContactBand] = None,
) -> Dataset:
    """
    Genera exactamente `n` unidades ⟨s, a, r, s′⟩ con la política de comportamiento.

    La recompensa se calcula sobre el ContactRate de s′. El entorno se
    reinicia tras out_of_contact_limit pasos seguidos sin contacto y al
    completar episode_length unidades.

    Raises:
        DatasetGenerationError: Si el entorno falla; lleva el dataset parcial
    """
    band = band or ContactBand()
    if n < 0:
        raise ValueError(f"n debe ser >= 0, se recibió {n}")
    if env.background is None:
        raise DatasetGenerationError("El entorno no tiene fondo capturado", 0)

    cfg = env.config
    records = np.zeros(n, dtype=RECORD_DTYPE)

    def finish(count: int) -> Dataset:
        return Dataset(
            records=records[:count],
            seed=cfg.seed,
            config_hash=cfg.config_hash(),
            background=env.background.copy(),
            tau=env.tau,
            band=band,
            classes=dict(classes),
        )

    if n == 0:
        return finish(0)

    logger.info(f"Generando {n} unidades (semilla {cfg.seed})")
    state = env.reset()
    cr = env.contact_rate_of(state.image)
    idle = episode_units = resets = 0
    report_every = max(n // 10, 1)

    for units_num in range(1, n + 1):
        action = select_behavior_action(units_num, cr, classes, rng, band)
        try:
            next_state, record = env.step(action)
        except SimulationError as e:
            raise DatasetGenerationError(f"Fallo del entorno en la unidad {units_num}: {e}", units_num - 1,
                                         finish(units_num - 1)) from e

        records[units_num - 1] = (
            state.image,
            state.joints.as_array(),
            action,
            reward(record.contact_rate, band),
            next_state.image,
            next_state.joints.as_array(),
        )
        state, cr = next_state, record.contact_rate
        idle = idle + 1 if cr == 0 else 0
        episode_units += 1

        if idle >= cfg.out_of_contact_limit or (cfg.episode_length and episode_units >= cfg.episode_length):
            try:
                state = env.reset()
            except SimulationError as e:
                raise DatasetGenerationError(f"Fallo al reiniciar tras la unidad {units_num}: {e}", units_num,
                                             finish(units_num)) from e
            cr = env.contact_rate_of(state.image)
            idle = episode_units = 0
            resets += 1

        if units_num % report_every == 0:
            logger.info(f"   {units_num}/{n} unidades ({100 * units_num // n}%)")

    logger.info(f"Generación completa: {n} unidades, {resets} reinicios")
    return finish(n)


def _generate_shard(args: tuple) -> Dataset:
    env_cfg, background, tau, n, classes, band = args
    env = SurfaceEnv(env_cfg, tau)
    env.background = background
    return generate_dataset(env, n, classes, policy_rng(env_cfg.seed), band)


def shard_seeds(seed: int, shards: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(shards)]


def generate_shards(
    env_config: EnvConfig,
    n: int,
    shards: int,
    classes: ActionClasses,
    background: np.ndarray,
    tau: int,
    band: Optional[ContactBand] = None,
    workers: Optional[int] = None,
) -> Dataset:
    """
    Genera `n` unidades repartidas en `shards` entornos independientes.

    Cada shard usa su propia semilla (derivada de env_config.seed) y el mismo
    fondo, y se ejecuta en un proceso aparte. El resultado se concatena en
    orden de shard.
    """
    band = band or ContactBand()
    seeds = shard_seeds(env_config.seed, shards)
    sizes = [n // shards + (1 if i < n % shards else 0) for i in range(shards)]
    jobs = [
        (env_config.model_copy(update={"seed": s}), background, tau, size, classes, band)
        for s, size in zip(seeds, sizes)
    ]

    logger.info(f"Generando {n} unidades en {shards} shards (semillas {seeds})")
    with ProcessPoolExecutor(max_workers=workers or shards) as pool:
        parts = list(pool.map(_generate_shard, jobs))

    return merge_datasets(parts, env_config.seed, env_config.config_hash())
