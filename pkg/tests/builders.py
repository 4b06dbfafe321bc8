"""
Constructores de datos de prueba: configuraciones de entorno, redes pequeñas,
datasets sintéticos y un entorno de sonda falso para la clasificación.
"""

import math
from types import SimpleNamespace

import numpy as np

from app.dataset import RECORD_DTYPE, Dataset
from app.rl_core import ActionEffectClass
from app.schemas import ContactBand, ConvSpec, EnvConfig, NetworkArch
from app.sim_world import JointConfig
from app.tactile_image import TACTILE_SHAPE


BACKGROUND_LEVEL = 90
CONTACT_LEVEL = 200

# Clasificación esperada con la tabla de acciones canónica y el sensor hacia abajo
CANONICAL_CLASSES = {
    a: ActionEffectClass.IC if a < 3 else ActionEffectClass.DC if a > 5 else ActionEffectClass.UC
    for a in range(9)
}


def flat_env_config(**overrides) -> EnvConfig:
    """Superficie plana horizontal, sin desplazamientos aleatorios al reiniciar."""
    values = {"seed": 3, "surface_kind": "flat", "surface_slope": 0.0, "reset_surface_span": 0.0}
    values.update(overrides)
    return EnvConfig(**values)


def sine_env_config(**overrides) -> EnvConfig:
    values = {"seed": 5, "surface_kind": "sinusoidal"}
    values.update(overrides)
    return EnvConfig(**values)


def micro_arch() -> NetworkArch:
    """Red mínima: imagen 2x2, una convolución 1x1, anchos 1 y escalas unitarias."""
    return NetworkArch(
        variant="custom",
        image_shape=(2, 2),
        convs=[ConvSpec(filters=1, kernel=1)],
        joint_width=1,
        hidden_width=1,
        joint_scale=1.0,
        velocity_scale=1.0,
    )


def tiny_arch() -> NetworkArch:
    """Red pequeña sobre imágenes 64x48, para entrenar rápido en las pruebas."""
    return NetworkArch(
        variant="custom",
        convs=[ConvSpec(filters=2, kernel=4, pool=True)],
        joint_width=4,
        hidden_width=8,
    )


def micro_state(pixels, joints=(0.0, 0.0, 0.0, 0.0)) -> SimpleNamespace:
    """Estado con imagen 2x2 para la red mínima (State exige 64x48)."""
    return SimpleNamespace(image=np.asarray(pixels, dtype=np.uint8), joints=JointConfig(*joints))


def contact_image(k: int, level: int = CONTACT_LEVEL) -> np.ndarray:
    """Imagen con los primeros k píxeles en contacto sobre el fondo constante."""
    img = np.full(TACTILE_SHAPE, BACKGROUND_LEVEL, dtype=np.uint8)
    img.reshape(-1)[:k] = level
    return img


def pixels_for_rate(cr: float) -> int:
    """Menor número de píxeles cuyo ContactRate alcanza `cr`."""
    return math.ceil(cr * 3072 / 1000)


def synthetic_dataset(n: int, seed: int = 0, k_values=None, actions=None, band: ContactBand = None) -> Dataset:
    """
    Dataset sintético con fondo constante.

    Args:
        n: Número de unidades
        seed: Semilla para articulaciones y acciones
        k_values: Píxeles en contacto de cada s (por defecto, aleatorios)
        actions: Acciones de cada unidad (por defecto, aleatorias)
        band: Banda para la recompensa
    """
    band = band or ContactBand()
    rng = np.random.default_rng(seed)
    records = np.zeros(n, dtype=RECORD_DTYPE)
    ks = list(k_values) if k_values is not None else rng.integers(0, 300, size=n).tolist()
    acts = list(actions) if actions is not None else rng.integers(0, 9, size=n).tolist()

    for i in range(n):
        k_next = int(rng.integers(0, 300))
        cr_next = 1000 * k_next / 3072
        records[i] = (
            contact_image(ks[i]),
            rng.uniform(-1, 1, size=4),
            acts[i],
            10.0 if band.cr_min <= cr_next <= band.cr_max else 0.0,
            contact_image(k_next),
            rng.uniform(-1, 1, size=4),
        )

    return Dataset(
        records=records,
        seed=seed,
        config_hash=bytes(range(32)),
        background=np.full(TACTILE_SHAPE, BACKGROUND_LEVEL, dtype=np.uint8),
        band=band,
        classes=dict(CANONICAL_CLASSES),
    )


class FakeProbeEnv:
    """Entorno de sonda con cambios de ContactRate fijos por acción."""

    def __init__(self, changes: dict[int, float], reference_cr: float = 30.0):
        self.changes = changes
        self.reference_cr = reference_cr

    def find_band_pose(self, target_cr: float):
        return "ref"

    def contact_rate_at(self, joints, noise_seed=None) -> float:
        return self.reference_cr

    def probe_action(self, joints, action: int) -> float:
        return self.reference_cr + self.changes.get(action, 0.0)
