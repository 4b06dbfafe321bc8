"""
Evaluación: precisión de acciones buenas, curvas de aprendizaje, distribución
de acciones del dataset y rollouts autónomos sobre superficies en movimiento.
"""

from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger

from app.dataset import Dataset
from app.qnet import QNetwork, greedy_action
from app.rl_core import ActionClasses, State, good_actions
from app.schemas import N_ACTIONS, ContactBand, EnvConfig, PrecisionReport, RolloutReport
from app.sim_world import ACTION_TABLE, SurfaceEnv, make_env
from app.tactile_image import image_contact_rate, save_pgm
from app.trainer import CheckpointRecord


PREDICT_CHUNK = 256
DEFAULT_WARMUP = 50
HIGH_CR_EDGES = (100.0, 300.0, 1000.0)
CURVE_COLUMNS = [
    "step", "checkpoint_id", "precision", "n_states",
    "low_states", "low_precision", "band_states", "band_precision", "high_states", "high_precision",
]

Policy = Callable[[State, float], int]


class EvaluationError(Exception):
    """Entradas insuficientes para evaluar (dataset vacío, sin fondo, sin checkpoints)."""
    pass


def state_contact_rates(d: Dataset) -> np.ndarray:
    """ContactRate de la imagen s de cada unidad, con el fondo y umbral del dataset."""
    if d.background is None:
        raise EvaluationError("El dataset no tiene fondo asociado; no se puede calcular el ContactRate")
    return np.array([image_contact_rate(img, d.background, d.tau) for img in d.records["s_image"]])


def predict_actions(net: QNetwork, d: Dataset) -> np.ndarray:
    """argmax de la red para cada estado s del dataset (empates → menor ActionId)."""
    actions = np.empty(len(d), dtype=np.int64)
    for start in range(0, len(d), PREDICT_CHUNK):
        chunk = d.records[start:start + PREDICT_CHUNK]
        q = net.q_values_batch(chunk["s_image"], chunk["s_joints"])
        actions[start:start + len(chunk)] = q.argmax(axis=1)
    return actions


def score_actions(
    actions: Sequence[int],
    crs: Sequence[float],
    classes: ActionClasses,
    band: ContactBand,
    checkpoint_id: int = 0,
    step: int = 0,
) -> PrecisionReport:
    """Arma el PrecisionReport de un conjunto de acciones predichas."""
    if len(actions) == 0:
        raise EvaluationError("El conjunto de prueba está vacío")

    hits = np.array([a in good_actions(cr, band, classes) for a, cr in zip(actions, crs)])
    crs = np.asarray(crs, dtype=np.float64)
    regimes = {
        "low": crs < band.cr_min,
        "band": (crs >= band.cr_min) & (crs <= band.cr_max),
        "high": crs > band.cr_max,
    }

    fields = {}
    for name, mask in regimes.items():
        count = int(mask.sum())
        fields[f"{name}_states"] = count
        fields[f"{name}_precision"] = float(hits[mask].mean()) if count else None

    return PrecisionReport(
        checkpoint_id=checkpoint_id,
        step=step,
        precision=float(hits.mean()),
        n_states=len(hits),
        **fields,
    )


def precision(
    net: QNetwork,
    test: Dataset,
    classes: ActionClasses,
    band: Optional[ContactBand] = None,
    checkpoint_id: int = 0,
    step: int = 0,
) -> PrecisionReport:
    """
    Proporción de estados de prueba cuya acción argmax es buena.

    El régimen de cada estado se decide con el ContactRate de s (estado previo
    a la acción).
    """
    band = band or test.band
    if len(test) == 0:
        raise EvaluationError("El conjunto de prueba está vacío")
    return score_actions(predict_actions(net, test), state_contact_rates(test), classes, band, checkpoint_id, step)


def random_baseline_precision(test: Dataset, classes: ActionClasses, band: Optional[ContactBand] = None) -> float:
    """Precisión esperada de un argmax uniforme: media de |acciones buenas| / 9."""
    band = band or test.band
    if len(test) == 0:
        raise EvaluationError("El conjunto de prueba está vacío")
    sizes = [len(good_actions(cr, band, classes)) for cr in state_contact_rates(test)]
    return float(np.mean(sizes)) / N_ACTIONS


def _checkpoint_precision(args: tuple) -> PrecisionReport:
    record, test, classes, band = args
    return precision(record.load(), test, classes, band, record.checkpoint_id, record.step)


def learning_curve(
    checkpoints: Sequence[CheckpointRecord],
    test: Dataset,
    classes: ActionClasses,
    band: Optional[ContactBand] = None,
    workers: int = 1,
) -> pd.DataFrame:
    """
    Precisión de cada checkpoint, en orden de paso.

    Con workers > 1 los checkpoints se evalúan en procesos separados; cada
    proceso carga su propia copia de la red.

    Returns:
        DataFrame con columnas step, checkpoint_id, precision, n_states y
        el desglose por régimen
    """
    if not checkpoints:
        raise EvaluationError("No hay checkpoints que evaluar")

    band = band or test.band
    ordered = sorted(checkpoints, key=lambda c: c.step)
    jobs = [(c, test, classes, band) for c in ordered]

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_checkpoint_precision, jobs))
    else:
        reports = []
        for job in jobs:
            reports.append(_checkpoint_precision(job))
            logger.debug(f"   checkpoint {job[0].checkpoint_id} (paso {job[0].step}): {reports[-1].precision:.3f}")

    return precision_frame(reports)[CURVE_COLUMNS]


def action_distribution(d: Dataset) -> pd.DataFrame:
    """
    Histograma de 9 bins de las acciones del dataset.

    Returns:
        DataFrame con columnas action, count, frequency (suma 1)

    Raises:
        EvaluationError: Si el dataset está vacío
    """
    if len(d) == 0:
        raise EvaluationError("No se puede calcular la distribución de un dataset vacío")
    counts = np.bincount(d.actions.astype(np.int64), minlength=N_ACTIONS)
    return pd.DataFrame({"action": np.arange(N_ACTIONS), "count": counts, "frequency": counts / counts.sum()})


def contact_rate_histogram(crs: Sequence[float], band: Optional[ContactBand] = None) -> pd.DataFrame:
    """
    Histograma de ContactRate con la banda como bin cerrado [cr_min, cr_max].

    Bins: sin contacto (0), bajo la banda, la banda, y tramos altos separados
    en HIGH_CR_EDGES; el último bin incluye 1000.

    Returns:
        DataFrame con columnas bin (etiqueta del intervalo) y count
    """
    band = band or ContactBand()
    crs = np.asarray(crs, dtype=np.float64)

    bins = [
        ("0", crs == 0),
        (f"(0, {band.cr_min:g})", (crs > 0) & (crs < band.cr_min)),
        (f"[{band.cr_min:g}, {band.cr_max:g}]", (crs >= band.cr_min) & (crs <= band.cr_max)),
    ]
    edges = [band.cr_max] + [e for e in HIGH_CR_EDGES if e > band.cr_max]
    for lo, hi in zip(edges, edges[1:]):
        first, last = lo == band.cr_max, hi == HIGH_CR_EDGES[-1]
        above = crs > lo if first else crs >= lo
        below = crs <= hi if last else crs < hi
        label = ("(" if first else "[") + f"{lo:g}, {hi:g}" + ("]" if last else ")")
        bins.append((label, above & below))

    return pd.DataFrame({"bin": [label for label, _ in bins], "count": [int(mask.sum()) for _, mask in bins]})


def oracle_action(cr: float, band: ContactBand, classes: ActionClasses) -> int:
    """
    Acción buena para el ContactRate dado.

    Entre las acciones buenas se prefieren las que no mueven la articulación 4.
    """
    candidates = good_actions(cr, band, classes)
    return min(candidates, key=lambda a: (abs(ACTION_TABLE[a][1]), a))


def greedy_policy(net: QNetwork) -> Policy:
    return lambda state, cr: greedy_action(net, state)


def oracle_policy(classes: ActionClasses, band: ContactBand) -> Policy:
    return lambda state, cr: oracle_action(cr, band, classes)


def rollout(
    policy: QNetwork | Policy,
    env: SurfaceEnv,
    steps: int,
    drift: float,
    warmup: int = DEFAULT_WARMUP,
    band: Optional[ContactBand] = None,
    frame_dir: Optional[str | Path] = None,
    frame_every: int = 0,
) -> RolloutReport:
    """
    Seguimiento autónomo de una superficie que se desplaza `drift` m por paso.

    El brazo arranca en la pose de mitad de banda. En cada paso la política
    elige una acción sobre el último estado observado, la superficie avanza y
    se ejecuta la acción. La pérdida de contacto se registra, no aborta.

    Args:
        policy: Red (se usa su argmax) o función (estado, cr) → acción
        env: Entorno con fondo capturado
        steps: Pasos del rollout (> warmup)
        drift: Desplazamiento lateral de la superficie por paso (m)
        warmup: Pasos excluidos de la fracción en banda
        band: Banda de contacto
        frame_dir: Carpeta para volcar cuadros PGM (opcional)
        frame_every: Cada cuántos pasos se vuelca un cuadro (0 = nunca)

    Returns:
        RolloutReport con la traza de ContactRate y acciones
    """
    band = band or ContactBand()
    if steps <= warmup:
        raise EvaluationError(f"El rollout necesita más pasos ({steps}) que el calentamiento ({warmup})")
    if env.background is None:
        env.capture_background()

    act = greedy_policy(policy) if isinstance(policy, QNetwork) else policy
    env.joints = env.find_band_pose(band.cr_ideal)
    state = env.observe()
    cr = env.contact_rate_of(state.image)

    trace: list[float] = []
    actions: list[int] = []
    for t in range(steps):
        action = act(state, cr)
        env.shift_surface(drift)
        state, record = env.step(action)
        cr = record.contact_rate
        trace.append(cr)
        actions.append(action)

        if frame_dir is not None and frame_every > 0 and t % frame_every == 0:
            save_pgm(state.image, Path(frame_dir) / f"frame_{t:05d}.pgm")

    measured = np.array(trace[warmup:])
    in_band = (measured >= band.cr_min) & (measured <= band.cr_max)
    report = RolloutReport(
        steps=steps,
        warmup=warmup,
        drift=drift,
        in_band_fraction=float(in_band.mean()),
        lost_contact=int(np.count_nonzero(measured == 0)),
        contact_trace=trace,
        actions=actions,
    )
    logger.info(
        f"Rollout ({steps} pasos, deriva {drift:g} m/paso): en banda {report.in_band_fraction:.3f}, "
        f"sin contacto {report.lost_contact}"
    )
    return report


def drift_sweep(
    policy: QNetwork | Policy,
    env_config: EnvConfig,
    drifts: Sequence[float],
    steps: int,
    warmup: int = DEFAULT_WARMUP,
    band: Optional[ContactBand] = None,
    tau: int = 20,
) -> tuple[list[RolloutReport], bool]:
    """
    Un rollout por cada deriva (entornos nuevos con la misma semilla).

    Returns:
        Tupla (reportes en orden creciente de deriva, True si la fracción en
        banda no crece al aumentar la deriva)
    """
    ordered = sorted(drifts)
    reports = [rollout(policy, make_env(env_config, tau), steps, d, warmup, band) for d in ordered]
    fractions = [r.in_band_fraction for r in reports]
    monotone = all(b <= a for a, b in zip(fractions, fractions[1:]))
    if not monotone:
        logger.warning(f"La fracción en banda no es monótona en la deriva: {fractions}")
    return reports, monotone


def rollout_trace_frame(report: RolloutReport, band: Optional[ContactBand] = None) -> pd.DataFrame:
    """Traza por paso: step, action, contact_rate, in_band."""
    band = band or ContactBand()
    crs = np.asarray(report.contact_trace, dtype=np.float64)
    return pd.DataFrame({
        "step": np.arange(1, len(crs) + 1),
        "action": report.actions,
        "contact_rate": crs,
        "in_band": (crs >= band.cr_min) & (crs <= band.cr_max),
    })


def rollout_summary_frame(reports: Sequence[RolloutReport]) -> pd.DataFrame:
    return pd.DataFrame([r.model_dump(exclude={"contact_trace", "actions"}) for r in reports])


def precision_frame(reports: Sequence[PrecisionReport]) -> pd.DataFrame:
    return pd.DataFrame([r.model_dump() for r in reports])
