"""
Mundo simulado: brazo planar de 2 articulaciones con sensor táctil.

Sustituye al brazo real y al sensor GelSight por un modelo determinista:
cinemática directa de 2 eslabones, superficies paramétricas, ejecución de
las 9 acciones y renderizado de cuadros táctiles sintéticos cuya área de
contacto crece monótonamente con la penetración.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from loguru import logger
from scipy.optimize import brentq

from app import tactile_image
from app.rl_core import State
from app.schemas import ArmGeometry, EnvConfig, SensorModel, SurfaceSpec


# ActionId i → (d3, d4) = (i div 3 - 1, i mod 3 - 1)
ACTION_TABLE: tuple[tuple[int, int], ...] = tuple((i // 3 - 1, i % 3 - 1) for i in range(9))
NULL_ACTION = 4

CHANNEL_TINT = np.array([2.0, 0.0, -2.0])


class SimulationError(Exception):
    """Fallo del entorno simulado (pose imposible, fondo no capturado...)."""
    pass


@dataclass(frozen=True, slots=True)
class JointConfig:
    """Posiciones (rad) y velocidades (rad/paso) de las articulaciones 3 y 4."""

    theta3: float
    theta4: float
    vel3: float = 0.0
    vel4: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.theta3, self.theta4, self.vel3, self.vel4], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "JointConfig":
        t3, t4, v3, v4 = (float(v) for v in values)
        return cls(t3, t4, v3, v4)


@dataclass(frozen=True, slots=True)
class SensorPose:
    """Posición de la punta (x lateral, z altura) y orientación de la cara del sensor."""

    x: float
    z: float
    orientation: float


@dataclass(frozen=True, slots=True)
class StepRecord:
    action: int
    clamped3: bool
    clamped4: bool
    contact_rate: float
    reset: bool = False


def forward_kinematics(joints: JointConfig, geom: ArmGeometry) -> SensorPose:
    """
    Cinemática directa de la cadena planar de 2 eslabones.

    tip = base + L1·dir(θ3) + L2·dir(θ3+θ4); orientación = θ3+θ4.

    Example:
        >>> forward_kinematics(JointConfig(0.0, 0.0), ArmGeometry(base_z=0.0))
        SensorPose(x=0.4, z=0.0, orientation=0.0)
    """
    phi = joints.theta3 + joints.theta4
    x = geom.base_x + geom.link1 * math.cos(joints.theta3) + geom.link2 * math.cos(phi)
    z = geom.base_z + geom.link1 * math.sin(joints.theta3) + geom.link2 * math.sin(phi)
    return SensorPose(x=x, z=z, orientation=phi)


def apply_action(
    joints: JointConfig, action: int, delta: float, joint_limit: float = 2.0
) -> tuple[JointConfig, tuple[bool, bool]]:
    """
    Ejecuta una acción discreta sobre las articulaciones.

    Las posiciones se recortan a [-joint_limit, joint_limit]; las velocidades
    quedan iguales a los deltas comandados.

    Args:
        joints: Configuración actual
        action: ActionId en [0, 8]
        delta: Desplazamiento angular de una acción (rad)
        joint_limit: Límite simétrico de las articulaciones

    Returns:
        Tupla (nueva configuración, (recorte θ3, recorte θ4))
    """
    if not 0 <= action < len(ACTION_TABLE):
        raise ValueError(f"ActionId fuera de rango: {action}")
    if delta <= 0:
        raise ValueError(f"delta debe ser positivo, se recibió {delta}")

    d3, d4 = ACTION_TABLE[action]
    raw3 = joints.theta3 + d3 * delta
    raw4 = joints.theta4 + d4 * delta
    t3 = min(max(raw3, -joint_limit), joint_limit)
    t4 = min(max(raw4, -joint_limit), joint_limit)

    moved = JointConfig(t3, t4, d3 * delta, d4 * delta)
    return moved, (t3 != raw3, t4 != raw4)


def surface_height(surface: SurfaceSpec, x):
    """
    Altura de la superficie en la posición lateral x (escalar o arreglo).

    flat: slope·x + height; sinusoidal: A·sin(2πx/λ) + height;
    piecewise: interpolación lineal sobre la tabla (constante fuera de ella).
    """
    xs = np.asarray(x, dtype=np.float64) - surface.lateral_offset

    if surface.kind == "flat":
        h = surface.slope * xs
    elif surface.kind == "sinusoidal":
        h = surface.amplitude * np.sin(2 * np.pi * xs / surface.wavelength)
    else:
        table = np.asarray(surface.table, dtype=np.float64)
        h = np.interp(xs, table[:, 0], table[:, 1])

    h = h + surface.height
    return float(h) if np.ndim(h) == 0 else h


@lru_cache(maxsize=8)
def _face_grid(patch_size: float) -> tuple[np.ndarray, np.ndarray]:
    """Coordenada u (640,) a lo largo de la cara y radio normalizado ρ (480, 640)."""
    rows, cols = tactile_image.RAW_SHAPE[:2]
    height = patch_size * rows / cols

    u = ((np.arange(cols) + 0.5) / cols - 0.5) * patch_size
    v = ((np.arange(rows) + 0.5) / rows - 0.5) * height

    un = 2 * u / patch_size
    vn = 2 * v / height
    rho = np.sqrt((un[None, :] ** 2 + vn[:, None] ** 2) / 2)
    return u, rho


def penetration_map(pose: SensorPose, surface: SurfaceSpec, sensor: SensorModel) -> np.ndarray:
    """
    Penetración (m) de la superficie en cada píxel crudo de la membrana.

    La membrana es un domo: cada punto retrocede dome_depth·ρ desde el plano
    del parche, de modo que el área de contacto crece con la profundidad.
    """
    u, rho = _face_grid(sensor.patch_size)
    nx, nz = math.cos(pose.orientation), math.sin(pose.orientation)
    tx, tz = -nz, nx

    recess = sensor.dome_depth * rho
    mx = pose.x + u[None, :] * tx - recess * nx
    mz = pose.z + u[None, :] * tz - recess * nz
    return surface_height(surface, mx) - mz


def render_tactile(
    pose: SensorPose, surface: SurfaceSpec, noise_seed: int, sensor: Optional[SensorModel] = None
) -> np.ndarray:
    """
    Renderiza un cuadro táctil crudo 640x480x3.

    intensidad = fondo + ganancia·clip(penetración, 0, saturación) + ruido gaussiano.
    Sin penetración el cuadro queda en el nivel de fondo (más ruido).

    Args:
        pose: Pose del sensor
        surface: Superficie
        noise_seed: Semilla del ruido de este cuadro
        sensor: Modelo del sensor (por defecto, el de SensorModel())

    Returns:
        Arreglo uint8 de forma (480, 640, 3)
    """
    sensor = sensor or SensorModel()
    _, rho = _face_grid(sensor.patch_size)

    pen = np.clip(penetration_map(pose, surface, sensor), 0.0, sensor.depth_saturation)
    sensitivity = 1.0 - sensor.edge_falloff * rho ** 2
    signal = sensor.background_level + sensor.gain * sensitivity * pen

    frame = signal[:, :, None] + CHANNEL_TINT[None, None, :]
    if sensor.noise_sigma > 0:
        rng = np.random.default_rng(noise_seed)
        frame = frame + rng.normal(0.0, sensor.noise_sigma, size=frame.shape)

    return np.clip(np.rint(frame), 0, 255).astype(np.uint8)


class SurfaceEnv:
    """
    Entorno de seguimiento de superficies con un solo actor.

    Attributes:
        config: Configuración plana del entorno
        geometry: Geometría del brazo
        surface: Superficie actual (la deriva de los rollouts la desplaza)
        sensor: Modelo del sensor
        joints: Configuración articular actual
        background: Fondo sin contacto (None hasta capture_background)
    """

    def __init__(self, config: EnvConfig, tau: int = tactile_image.DEFAULT_TAU):
        self.config = config
        self.geometry = config.geometry()
        self.surface = config.surface()
        self.sensor = config.sensor()
        self.tau = tau
        self.delta = config.delta

        noise_seq, reset_seq, probe_seq = np.random.SeedSequence(config.seed).spawn(3)
        self._noise_rng = np.random.default_rng(noise_seq)
        self._reset_rng = np.random.default_rng(reset_seq)
        self.probe_seed = int(probe_seq.generate_state(1)[0])

        self.joints = JointConfig(config.home_theta3, config.home_theta4)
        self.background: Optional[np.ndarray] = None

    @property
    def pose(self) -> SensorPose:
        return forward_kinematics(self.joints, self.geometry)

    def _next_noise_seed(self) -> int:
        return int(self._noise_rng.integers(0, 2 ** 62))

    def _frame(self, joints: JointConfig, noise_seed: int) -> np.ndarray:
        pose = forward_kinematics(joints, self.geometry)
        return tactile_image.preprocess(render_tactile(pose, self.surface, noise_seed, self.sensor))

    def _require_background(self) -> np.ndarray:
        if self.background is None:
            raise SimulationError("El fondo no ha sido capturado; llame a capture_background() primero")
        return self.background

    def contact_rate_of(self, image: np.ndarray) -> float:
        return tactile_image.image_contact_rate(image, self._require_background(), self.tau)

    def contact_rate_at(self, joints: JointConfig, noise_seed: Optional[int] = None) -> float:
        """ContactRate del cuadro que se observaría en una configuración dada (sin mover el brazo)."""
        seed = self.probe_seed if noise_seed is None else noise_seed
        return self.contact_rate_of(self._frame(joints, seed))

    def read_noncontact_frame(self) -> tuple[np.ndarray, bool]:
        joints = self.pose_for_depth(-self.config.retract_height)
        pose = forward_kinematics(joints, self.geometry)
        in_contact = bool(penetration_map(pose, self.surface, self.sensor).max() > 0)
        return render_tactile(pose, self.surface, self._next_noise_seed(), self.sensor), in_contact

    def capture_background(self) -> np.ndarray:
        self.background = tactile_image.capture_background(self)
        return self.background

    def pose_for_depth(self, depth: float, theta4: Optional[float] = None) -> JointConfig:
        """
        Resuelve θ3 para que el centro del parche penetre `depth` metros.

        Profundidades negativas dejan el sensor separado de la superficie.

        Raises:
            SimulationError: Si no hay solución dentro del rango de búsqueda
        """
        t4 = self.config.home_theta4 if theta4 is None else theta4
        limit = self.config.joint_limit
        lo = max(self.config.home_theta3 - self.config.pose_search_span, -limit)
        hi = min(self.config.home_theta3 + self.config.pose_search_span, limit)

        def excess(t3: float) -> float:
            pose = forward_kinematics(JointConfig(t3, t4), self.geometry)
            return surface_height(self.surface, pose.x) - pose.z - depth

        try:
            t3 = brentq(excess, lo, hi, xtol=1e-12)
        except ValueError:
            raise SimulationError(f"No existe pose con profundidad {depth:.6f} m en θ3 ∈ [{lo:.3f}, {hi:.3f}]")
        return JointConfig(float(t3), t4)

    def find_band_pose(self, target_cr: float) -> JointConfig:
        """
        Busca la pose cuyo ContactRate cruza `target_cr` (sonda con ruido fijo).

        Raises:
            SimulationError: Si el objetivo no es alcanzable
        """
        if not 0 < target_cr < 1000:
            raise ValueError(f"target_cr debe estar en (0, 1000), se recibió {target_cr}")

        def gap(depth: float) -> float:
            return self.contact_rate_at(self.pose_for_depth(depth)) - target_cr

        deepest = self.sensor.dome_depth + 2 * self.sensor.depth_saturation
        try:
            depth = brentq(gap, 0.0, deepest, xtol=1e-8)
        except ValueError:
            raise SimulationError(f"ContactRate {target_cr} no alcanzable entre 0 y {deepest} m")

        joints = self.pose_for_depth(float(depth))
        logger.debug(f"Pose de banda para CR={target_cr}: profundidad {depth * 1e6:.1f} µm")
        return joints

    def probe_action(self, joints: JointConfig, action: int) -> float:
        """ContactRate tras ejecutar `action` desde `joints`, con el ruido fijo de la sonda."""
        moved, _ = apply_action(joints, action, self.delta, self.config.joint_limit)
        return self.contact_rate_at(moved)

    def observe(self) -> State:
        """Renderiza el estado actual sin mover el brazo."""
        return State(image=self._frame(self.joints, self._next_noise_seed()), joints=self.joints)

    def step(self, action: int) -> tuple[State, StepRecord]:
        """
        Ejecuta una acción, renderiza el cuadro y arma el siguiente estado.

        Returns:
            Tupla (siguiente estado, registro del paso con recortes y ContactRate)
        """
        background = self._require_background()
        self.joints, (c3, c4) = apply_action(self.joints, action, self.delta, self.config.joint_limit)
        if c3 or c4:
            logger.debug(f"Acción {action} recortada en los límites articulares ({c3}, {c4})")

        state = self.observe()
        cr = tactile_image.image_contact_rate(state.image, background, self.tau)
        return state, StepRecord(action=action, clamped3=c3, clamped4=c4, contact_rate=cr)

    def shift_surface(self, dx: float) -> None:
        """Desplaza la superficie lateralmente (deriva de los rollouts)."""
        self.surface = self.surface.model_copy(update={"lateral_offset": self.surface.lateral_offset + dx})

    def reset(self, depth: Optional[float] = None) -> State:
        """
        Lleva el brazo a una pose sembrada cerca del contacto.

        La superficie se desplaza a una fase aleatoria dentro de reset_surface_span
        para variar las pendientes vistas por el sensor.
        """
        cfg = self.config
        if cfg.reset_surface_span > 0:
            shift = float(self._reset_rng.uniform(0.0, cfg.reset_surface_span))
            self.surface = self.surface.model_copy(update={"lateral_offset": cfg.surface_offset + shift})
        if depth is None:
            depth = float(self._reset_rng.uniform(cfg.reset_depth_min, cfg.reset_depth_max))

        self.joints = self.pose_for_depth(depth)
        logger.debug(f"Reinicio del entorno: profundidad {depth * 1e6:.1f} µm")
        return self.observe()


def make_env(config: EnvConfig, tau: int = tactile_image.DEFAULT_TAU) -> SurfaceEnv:
    """Crea el entorno y captura el fondo sin contacto."""
    env = SurfaceEnv(config, tau)
    env.capture_background()
    return env
