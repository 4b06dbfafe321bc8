"""
Schemas de validación Pydantic para la configuración y los reportes.

Este módulo define los modelos que validan los archivos key=value de
experimentos (entorno simulado, entrenamiento, evaluación), la arquitectura
de la red SFDQN y los reportes que produce la evaluación.
"""

import hashlib
import json
import math
from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator


N_ACTIONS = 9


class ArmGeometry(BaseModel):
    """
    Geometría del brazo planar de 2 eslabones.

    Attributes:
        link1: Longitud del primer eslabón (m)
        link2: Longitud del segundo eslabón (m)
        base_x: Posición lateral de la base (m)
        base_z: Altura de la base (m)
    """

    link1: float = Field(0.2, gt=0, description="L1 en metros")
    link2: float = Field(0.2, gt=0, description="L2 en metros")
    base_x: float = 0.0
    base_z: float = 0.2

    model_config = {"frozen": True}


class SurfaceSpec(BaseModel):
    """
    Superficie paramétrica sobre el eje lateral.

    Attributes:
        kind: flat (plana inclinada), sinusoidal o piecewise (tabla lineal)
        slope: Pendiente de la superficie plana
        height: Altura constante sumada a cualquier tipo de superficie (m)
        amplitude: Amplitud de la sinusoide (m)
        wavelength: Longitud de onda de la sinusoide (m)
        table: Puntos (x, h) ordenados por x para la superficie por tramos
        lateral_offset: Desplazamiento lateral acumulado (deriva en rollouts)
    """

    kind: Literal["flat", "sinusoidal", "piecewise"] = "sinusoidal"
    slope: float = 0.0
    height: float = 0.0
    amplitude: float = 0.005
    wavelength: float = Field(0.3, gt=0)
    table: list[tuple[float, float]] = Field(default_factory=list)
    lateral_offset: float = 0.0

    @field_validator("table", mode="before")
    @classmethod
    def parse_table(cls, v):
        """Acepta la tabla como JSON (viene así de los archivos key=value)."""
        if isinstance(v, str):
            v = json.loads(v) if v.strip() else []
        return v

    @field_validator("table")
    @classmethod
    def validate_table(cls, v: list[tuple[float, float]]) -> list[tuple[float, float]]:
        xs = [x for x, _ in v]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("La tabla de la superficie debe estar ordenada por x (estrictamente creciente)")
        return v

    @model_validator(mode="after")
    def validate_piecewise(self) -> "SurfaceSpec":
        if self.kind == "piecewise" and len(self.table) < 2:
            raise ValueError("Una superficie piecewise necesita al menos 2 puntos en la tabla")
        return self


class SensorModel(BaseModel):
    """Parámetros del sensor táctil sintético (parche + membrana en domo)."""

    patch_size: float = Field(0.02, gt=0, description="Ancho S del parche (m)")
    dome_depth: float = Field(0.002, gt=0, description="Retroceso de la membrana en las esquinas (m)")
    gain: float = Field(7.5e5, gt=0, description="Intensidad por metro de penetración")
    depth_saturation: float = Field(2e-4, gt=0, description="Penetración que satura la intensidad (m)")
    noise_sigma: float = Field(5.0, ge=0)
    background_level: float = Field(90.0, ge=0, le=255)
    edge_falloff: float = Field(0.0, ge=0, lt=1, description="Pérdida de sensibilidad hacia el borde")


class ContactBand(BaseModel):
    """
    Rango deseado de ContactRate.

    Attributes:
        cr_min: Límite inferior (cerrado)
        cr_max: Límite superior (cerrado)
    """

    cr_min: float = 20.0
    cr_max: float = 40.0

    @model_validator(mode="after")
    def validate_order(self) -> "ContactBand":
        if not self.cr_min < self.cr_max:
            raise ValueError(f"cr_min ({self.cr_min}) debe ser menor que cr_max ({self.cr_max})")
        return self

    @property
    def cr_ideal(self) -> float:
        """Valor mediano del rango (cr_ideal del algoritmo de generación)."""
        return (self.cr_min + self.cr_max) / 2

    model_config = {"frozen": True}


class EnvConfig(BaseModel):
    """
    Configuración plana del entorno simulado (archivo key=value).

    Agrupa geometría, superficie, sensor, ruido, semilla y delta de acción.
    Los métodos geometry(), surface() y sensor() construyen los modelos
    específicos a partir de los campos planos.
    """

    seed: int = Field(7, ge=0)

    # Brazo
    link1: float = Field(0.2, gt=0)
    link2: float = Field(0.2, gt=0)
    base_x: float = 0.0
    base_z: float = 0.2
    joint_limit: float = Field(2.0, gt=0)
    home_theta3: float = 0.0
    home_theta4: float = -math.pi / 2
    delta: float = Field(2.5e-4, gt=0, description="Desplazamiento angular de una acción (rad)")

    # Superficie
    surface_kind: Literal["flat", "sinusoidal", "piecewise"] = "sinusoidal"
    surface_slope: float = 0.0
    surface_height: float = 0.0
    surface_amplitude: float = 0.005
    surface_wavelength: float = Field(0.3, gt=0)
    surface_table: list[tuple[float, float]] = Field(default_factory=list)
    surface_offset: float = 0.0

    # Sensor
    patch_size: float = Field(0.02, gt=0)
    dome_depth: float = Field(0.002, gt=0)
    gain: float = Field(7.5e5, gt=0)
    depth_saturation: float = Field(2e-4, gt=0)
    noise_sigma: float = Field(5.0, ge=0)
    background_level: float = Field(90.0, ge=0, le=255)
    edge_falloff: float = Field(0.0, ge=0, lt=1)

    # Reinicios y búsqueda de poses
    reset_depth_min: float = -3e-4
    reset_depth_max: float = 3e-4
    reset_surface_span: float = Field(0.3, ge=0)
    episode_length: int = Field(400, ge=0, description="Unidades por episodio (0 = sin límite)")
    out_of_contact_limit: int = Field(50, gt=0)
    retract_height: float = Field(0.02, gt=0)
    pose_search_span: float = Field(0.3, gt=0)

    @field_validator("surface_table", mode="before")
    @classmethod
    def parse_table(cls, v):
        if isinstance(v, str):
            v = json.loads(v) if v.strip() else []
        return v

    @model_validator(mode="after")
    def validate_ranges(self) -> "EnvConfig":
        if self.reset_depth_min > self.reset_depth_max:
            raise ValueError("reset_depth_min no puede ser mayor que reset_depth_max")
        if abs(self.home_theta3) > self.joint_limit or abs(self.home_theta4) > self.joint_limit:
            raise ValueError("La pose inicial está fuera de los límites articulares")
        return self

    def geometry(self) -> ArmGeometry:
        return ArmGeometry(link1=self.link1, link2=self.link2, base_x=self.base_x, base_z=self.base_z)

    def surface(self) -> SurfaceSpec:
        return SurfaceSpec(
            kind=self.surface_kind,
            slope=self.surface_slope,
            height=self.surface_height,
            amplitude=self.surface_amplitude,
            wavelength=self.surface_wavelength,
            table=self.surface_table,
            lateral_offset=self.surface_offset,
        )

    def sensor(self) -> SensorModel:
        return SensorModel(
            patch_size=self.patch_size,
            dome_depth=self.dome_depth,
            gain=self.gain,
            depth_saturation=self.depth_saturation,
            noise_sigma=self.noise_sigma,
            background_level=self.background_level,
            edge_falloff=self.edge_falloff,
        )

    def config_hash(self) -> bytes:
        """SHA-256 (32 bytes) del volcado JSON canónico de la configuración."""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).digest()


class TrainConfig(BaseModel):
    """
    Hiperparámetros del Q-learning offline.

    Attributes:
        train_steps: M, número de pasos de entrenamiento
        units_per_step: T, unidades muestreadas por paso
        sync_interval: C, intervalo de sincronización de la red objetivo
        checkpoint_interval: E, intervalo de registro de pesos
        gamma: Factor de descuento
        lr: Tasa de aprendizaje del SGD
        seed: Semilla de inicialización y muestreo
    """

    train_steps: int = Field(20000, ge=0)
    units_per_step: int = Field(10, gt=0)
    sync_interval: int = Field(500, gt=0)
    checkpoint_interval: int = Field(100, gt=0)
    gamma: float = Field(0.9, ge=0, lt=1)
    lr: float = Field(1e-4, ge=0)
    seed: int = Field(7, ge=0)

    @model_validator(mode="after")
    def validate_intervals(self) -> "TrainConfig":
        if self.train_steps > 0:
            if self.sync_interval > self.train_steps:
                raise ValueError("sync_interval (C) no puede superar train_steps (M)")
            if self.checkpoint_interval > self.train_steps:
                raise ValueError("checkpoint_interval (E) no puede superar train_steps (M)")
        return self


class ExperimentConfig(BaseModel):
    """Parámetros del experimento que no pertenecen al entorno ni al entrenamiento."""

    arch: Literal["shallow", "deep"] = "shallow"
    n_units: int = Field(12000, ge=0)
    shards: int = Field(1, gt=0)
    train_fraction: float = Field(0.9, gt=0, lt=1)
    split_seed: int = Field(0, ge=0)
    cr_min: float = 20.0
    cr_max: float = 40.0
    tau: int = Field(20, ge=0, le=255)
    class_epsilon: float = Field(5.0, ge=0)
    output_dir: str = "runs"
    warmup: int = Field(50, ge=0)
    rollout_steps: int = Field(500, gt=0)
    drift: float = Field(5e-5, ge=0)
    frame_every: int = Field(0, ge=0)

    def band(self) -> ContactBand:
        return ContactBand(cr_min=self.cr_min, cr_max=self.cr_max)


class ConvSpec(BaseModel):
    """Una capa convolucional: filtros, kernel cuadrado y max-pool 2x2 opcional."""

    filters: int = Field(..., gt=0)
    kernel: int = Field(..., gt=0)
    pool: bool = False


class NetworkArch(BaseModel):
    """
    Arquitectura de la red SFDQN.

    La rama de imagen aplica las convoluciones (ReLU tras cada una, max-pool
    donde se indique); la rama articular es una capa densa. Ambas se
    concatenan y pasan por 2 capas densas hasta las 9 salidas.
    """

    variant: Literal["shallow", "deep", "custom"] = "shallow"
    image_shape: tuple[int, int] = (48, 64)
    convs: list[ConvSpec]
    joint_inputs: int = Field(4, gt=0)
    joint_width: int = Field(32, gt=0)
    hidden_width: int = Field(128, gt=0)
    n_actions: int = N_ACTIONS
    joint_scale: float = Field(2.0, gt=0, description="Normalización de posiciones (límite articular)")
    velocity_scale: float = Field(2.5e-4, gt=0, description="Normalización de velocidades (delta máximo)")

    @field_validator("n_actions")
    @classmethod
    def validate_actions(cls, v: int) -> int:
        if v != N_ACTIONS:
            raise ValueError(f"La red debe tener exactamente {N_ACTIONS} salidas")
        return v

    @model_validator(mode="after")
    def validate_feature_maps(self) -> "NetworkArch":
        self.feature_map_sizes()
        return self

    def feature_map_sizes(self) -> list[tuple[int, int, int]]:
        """
        Calcula el tamaño (canales, alto, ancho) tras cada capa convolucional.

        Stride 1, sin padding; el max-pool 2x2 descarta la última fila/columna impar.

        Raises:
            ValueError: Si algún mapa queda vacío
        """
        h, w = self.image_shape
        channels = 1
        sizes = []
        for i, conv in enumerate(self.convs, 1):
            h, w = h - conv.kernel + 1, w - conv.kernel + 1
            if conv.pool:
                h, w = h // 2, w // 2
            channels = conv.filters
            if h <= 0 or w <= 0:
                raise ValueError(f"El mapa de características de conv{i} queda vacío ({h}x{w})")
            sizes.append((channels, h, w))
        return sizes

    @property
    def flat_features(self) -> int:
        if not self.convs:
            return self.image_shape[0] * self.image_shape[1]
        c, h, w = self.feature_map_sizes()[-1]
        return c * h * w

    @classmethod
    def shallow(cls, joint_scale: float = 2.0, velocity_scale: float = 2.5e-4) -> "NetworkArch":
        """8 filtros 4x4 (+pool) y 16 filtros 3x3."""
        return cls(
            variant="shallow",
            convs=[ConvSpec(filters=8, kernel=4, pool=True), ConvSpec(filters=16, kernel=3)],
            joint_scale=joint_scale,
            velocity_scale=velocity_scale,
        )

    @classmethod
    def deep(cls, joint_scale: float = 2.0, velocity_scale: float = 2.5e-4) -> "NetworkArch":
        """10 convoluciones: cinco 4x4 (8 filtros) y cinco 3x3 (16 filtros); pool tras la segunda."""
        convs = [ConvSpec(filters=8, kernel=4, pool=(i == 1)) for i in range(5)]
        convs += [ConvSpec(filters=16, kernel=3) for _ in range(5)]
        return cls(variant="deep", convs=convs, joint_scale=joint_scale, velocity_scale=velocity_scale)

    @classmethod
    def for_variant(cls, variant: str, joint_scale: float = 2.0, velocity_scale: float = 2.5e-4) -> "NetworkArch":
        if variant == "shallow":
            return cls.shallow(joint_scale, velocity_scale)
        if variant == "deep":
            return cls.deep(joint_scale, velocity_scale)
        raise ValueError(f"Variante de arquitectura desconocida: {variant}")


class PrecisionReport(BaseModel):
    """
    Precisión de acciones "buenas" de un checkpoint sobre el conjunto de prueba.

    Las columnas por banda (low / band / high) permiten interpretar el
    resultado con cualquier mezcla de estados en el conjunto de prueba.
    """

    checkpoint_id: int = 0
    step: int = 0
    precision: float = Field(..., ge=0, le=1)
    n_states: int = Field(..., gt=0)
    low_states: int = 0
    low_precision: Optional[float] = None
    band_states: int = 0
    band_precision: Optional[float] = None
    high_states: int = 0
    high_precision: Optional[float] = None


class RolloutReport(BaseModel):
    """Resultado de un rollout autónomo sobre una superficie en movimiento."""

    steps: int
    warmup: int
    drift: float
    in_band_fraction: float = Field(..., ge=0, le=1)
    lost_contact: int = 0
    contact_trace: list[float] = Field(default_factory=list)
    actions: list[int] = Field(default_factory=list)
