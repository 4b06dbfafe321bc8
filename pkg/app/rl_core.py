"""
Formalización del problema de RL: estado, espacio de 9 acciones, recompensa,
clasificación del efecto de las acciones (IC / DC / UC) y predicado de
acciones buenas.
"""

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Protocol

import numpy as np
from loguru import logger

from app.schemas import N_ACTIONS, ContactBand
from app.tactile_image import TACTILE_SHAPE, InputShapeError

if TYPE_CHECKING:
    from app.sim_world import JointConfig


NULL_ACTION = 4
REWARD_IN_BAND = 10.0
DEFAULT_CLASS_EPSILON = 5.0


class ClassificationError(Exception):
    """La clasificación de acciones no pudo completarse o es inválida."""
    pass


class ActionEffectClass(str, Enum):
    IC = "IC"  # aumenta el ContactRate
    DC = "DC"  # lo disminuye
    UC = "UC"  # sin cambio apreciable


ActionClasses = dict[int, ActionEffectClass]


@dataclass(frozen=True)
class State:
    """Imagen táctil 64x48 más la configuración articular (θ3, θ4, vel3, vel4)."""

    image: np.ndarray
    joints: "JointConfig"

    def __post_init__(self):
        if self.image.shape != TACTILE_SHAPE:
            raise InputShapeError(f"State.image: se esperaba forma {TACTILE_SHAPE}, se recibió {self.image.shape}")


class ProbeEnv(Protocol):
    def find_band_pose(self, target_cr: float): ...

    def contact_rate_at(self, joints, noise_seed: Optional[int] = None) -> float: ...

    def probe_action(self, joints, action: int) -> float: ...


def reward(cr: float, band: Optional[ContactBand] = None) -> float:
    """
    Recompensa escalón: 10 dentro de la banda cerrada [cr_min, cr_max], 0 fuera.

    Example:
        >>> reward(30.0)
        10.0
        >>> reward(19.999)
        0.0
    """
    band = band or ContactBand()
    return REWARD_IN_BAND if band.cr_min <= cr <= band.cr_max else 0.0


def validate_classes(classes: ActionClasses) -> None:
    """
    Verifica que el mapa sea una partición total de las 9 acciones.

    Raises:
        ClassificationError: Si faltan acciones o la nula no es UC
    """
    missing = sorted(set(range(N_ACTIONS)) - set(classes))
    if missing:
        raise ClassificationError(f"Clasificación incompleta, faltan las acciones {missing}")
    extra = sorted(set(classes) - set(range(N_ACTIONS)))
    if extra:
        raise ClassificationError(f"ActionId fuera de rango en la clasificación: {extra}")
    if classes[NULL_ACTION] is not ActionEffectClass.UC:
        raise ClassificationError("La acción nula debe pertenecer a UC")


def class_subset(classes: ActionClasses, tag: ActionEffectClass) -> frozenset[int]:
    return frozenset(a for a, c in classes.items() if c is tag)


def classify_actions(
    env: ProbeEnv, epsilon: float = DEFAULT_CLASS_EPSILON, band: Optional[ContactBand] = None
) -> ActionClasses:
    """
    Clasifica las 9 acciones por su efecto medido sobre el ContactRate.

    Desde una pose de referencia a mitad de banda se ejecuta cada acción y se
    mide ΔCR con el ruido fijo de la sonda: |Δ| ≤ ε → UC, Δ > ε → IC,
    Δ < -ε → DC. La acción nula es siempre UC.

    Args:
        env: Entorno con capacidad de sonda
        epsilon: Tolerancia ε_class en unidades de ContactRate
        band: Banda de contacto (define la pose de referencia)

    Returns:
        Mapa ActionId → ActionEffectClass

    Raises:
        ClassificationError: Si la pose de referencia no está en contacto
    """
    from app.sim_world import SimulationError

    band = band or ContactBand()
    try:
        reference = env.find_band_pose(band.cr_ideal)
    except SimulationError as e:
        raise ClassificationError(f"No se encontró pose de referencia: {e}") from e

    ref_cr = env.contact_rate_at(reference)
    if ref_cr <= 0:
        raise ClassificationError("La pose de referencia no está en contacto (ContactRate = 0)")

    classes: ActionClasses = {}
    for action in range(N_ACTIONS):
        if action == NULL_ACTION:
            classes[action] = ActionEffectClass.UC
            continue
        change = env.probe_action(reference, action) - ref_cr
        if change > epsilon:
            classes[action] = ActionEffectClass.IC
        elif change < -epsilon:
            classes[action] = ActionEffectClass.DC
        else:
            classes[action] = ActionEffectClass.UC
        logger.debug(f"Acción {action}: ΔCR = {change:+.2f} → {classes[action].value}")

    validate_classes(classes)
    logger.info(
        f"Clasificación de acciones (CR ref {ref_cr:.2f}): "
        + ", ".join(f"{tag.value}={sorted(class_subset(classes, tag))}" for tag in ActionEffectClass)
    )
    return classes


def good_actions(cr: float, band: ContactBand, classes: ActionClasses) -> frozenset[int]:
    """
    Acciones buenas para un estado según su ContactRate.

    cr < cr_min → IC; cr > cr_max → DC; dentro de la banda → UC.
    """
    if cr < band.cr_min:
        return class_subset(classes, ActionEffectClass.IC)
    if cr > band.cr_max:
        return class_subset(classes, ActionEffectClass.DC)
    return class_subset(classes, ActionEffectClass.UC)


def export_class_table(classes: ActionClasses, path: str | Path) -> Path:
    """Exporta la clasificación como tabla de 9 líneas `actionId,clase`."""
    validate_classes(classes)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{a},{classes[a].value}\n" for a in range(N_ACTIONS)), encoding="utf-8")
    return path


def load_class_table(path: str | Path) -> ActionClasses:
    """Lee una tabla exportada por export_class_table."""
    classes: ActionClasses = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            action, tag = line.split(",")
            classes[int(action)] = ActionEffectClass(tag.strip())
        except ValueError as e:
            raise ClassificationError(f"{path}:{lineno}: línea inválida '{line}'") from e
    validate_classes(classes)
    return classes


def classes_to_dict(classes: ActionClasses) -> dict[str, str]:
    return {str(a): c.value for a, c in sorted(classes.items())}


def classes_from_dict(data: dict) -> ActionClasses:
    classes = {int(a): ActionEffectClass(c) for a, c in data.items()}
    validate_classes(classes)
    return classes
