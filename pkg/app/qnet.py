"""
Red SFDQN: construcción, forward, paso de SGD, red objetivo, checkpoints y
verificación de gradientes.

Entrada de dos ramas: la imagen táctil (÷255) pasa por las convoluciones y
las articulaciones normalizadas por una capa densa; ambas se concatenan y
dos capas densas producen los 9 Q-values.
"""

import hashlib
import struct
from pathlib import Path
from typing import Optional

import numpy as np
from loguru import logger

from app.layers import Conv2D, Dense, Flatten, Layer, MaxPool2D, ReLU
from app.rl_core import State
from app.schemas import NetworkArch


CHECKPOINT_MAGIC = b"SFDQN-CK\0"
CHECKPOINT_VERSION = 1
GRAD_NORM_LIMIT = 1e6

_PREFIX = struct.Struct("<9sHI")
_COUNTERS = struct.Struct("<QII")


class NumericFaultError(Exception):
    """Valor no finito o gradiente explosivo."""

    def __init__(self, message: str, layer: Optional[str] = None):
        super().__init__(message)
        self.layer = layer


class CheckpointError(Exception):
    """Checkpoint corrupto, truncado o con otra arquitectura."""
    pass


class QNetwork:
    """
    Red de valores de acción.

    Attributes:
        arch: Arquitectura
        image_layers: Convoluciones (+ReLU, +pool) y Flatten
        joint_layers: Densa + ReLU de la rama articular
        head_layers: Densa oculta + ReLU y densa de salida (lineal)
    """

    def __init__(self, arch: NetworkArch):
        self.arch = arch
        self.image_layers: list[Layer] = []
        channels = 1
        for i, conv in enumerate(arch.convs, 1):
            self.image_layers.append(Conv2D(channels, conv.filters, conv.kernel, name=f"conv{i}", input_grad=i > 1))
            self.image_layers.append(ReLU(name=f"conv{i}.relu"))
            if conv.pool:
                self.image_layers.append(MaxPool2D(name=f"conv{i}.pool"))
            channels = conv.filters
        self.image_layers.append(Flatten())

        self.joint_layers: list[Layer] = [
            Dense(arch.joint_inputs, arch.joint_width, name="joint"),
            ReLU(name="joint.relu"),
        ]
        self.head_layers: list[Layer] = [
            Dense(arch.flat_features + arch.joint_width, arch.hidden_width, name="hidden"),
            ReLU(name="hidden.relu"),
            Dense(arch.hidden_width, arch.n_actions, name="head"),
        ]

    def parametric_layers(self) -> list[Layer]:
        """Capas con parámetros, en orden de declaración."""
        return [l for l in self.image_layers + self.joint_layers + self.head_layers if l.params]

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{l.name}.{key}", l.params[key]) for l in self.parametric_layers() for key in ("W", "b")]

    def gradients(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{l.name}.{key}", l.grads[key]) for l in self.parametric_layers() for key in ("W", "b")]

    @property
    def n_parameters(self) -> int:
        return sum(p.size for _, p in self.parameters())

    def normalize_joints(self, joints: np.ndarray) -> np.ndarray:
        scale = np.array([self.arch.joint_scale] * 2 + [self.arch.velocity_scale] * 2)
        return np.asarray(joints, dtype=np.float64) / scale

    def q_values_batch(self, images: np.ndarray, joints: np.ndarray) -> np.ndarray:
        """
        Forward de un lote.

        Args:
            images: uint8 (B, H, W)
            joints: float (B, 4) en unidades físicas

        Returns:
            Q-values (B, 9)

        Raises:
            NumericFaultError: Si alguna capa produce valores no finitos
        """
        x = np.asarray(images, dtype=np.float64)[:, None, :, :] / 255.0
        for layer in self.image_layers:
            x = _checked(layer, layer.forward(x))

        j = self.normalize_joints(joints)
        for layer in self.joint_layers:
            j = _checked(layer, layer.forward(j))

        h = np.concatenate([x, j], axis=1)
        for layer in self.head_layers:
            h = _checked(layer, layer.forward(h))
        return h

    def _backward(self, dq: np.ndarray) -> None:
        grad = dq
        for layer in reversed(self.head_layers):
            grad = layer.backward(grad)

        flat = self.arch.flat_features
        g_image, g_joint = grad[:, :flat], grad[:, flat:]
        for layer in reversed(self.joint_layers):
            g_joint = layer.backward(g_joint)
        for layer in reversed(self.image_layers):
            g_image = layer.backward(g_image)
            if g_image is None:
                break

    def loss_and_gradients(self, s: State, a: int, y: float) -> tuple[float, float]:
        """
        Calcula L = (y − Q(s,a))² y deja ∇L en las capas, sin actualizar.

        Solo la salida `a` recibe gradiente.

        Returns:
            Tupla (pérdida, norma del gradiente)
        """
        if not np.isfinite(y):
            raise NumericFaultError(f"Objetivo no finito: {y}")

        q = self.q_values_batch(s.image[None], s.joints.as_array()[None])
        error = float(q[0, a]) - y
        dq = np.zeros_like(q)
        dq[0, a] = 2.0 * error
        self._backward(dq)

        norm_sq = 0.0
        for name, g in self.gradients():
            if not np.all(np.isfinite(g)):
                raise NumericFaultError(f"Gradiente no finito en {name}", layer=name.rsplit(".", 1)[0])
            norm_sq += float(np.sum(g * g))
        return error * error, float(np.sqrt(norm_sq))


def _checked(layer: Layer, out: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise NumericFaultError(f"Valor no finito en la capa {layer.name}", layer=layer.name)
    return out


def build(arch: NetworkArch, seed: int = 0) -> QNetwork:
    """
    Construye la red con pesos He uniformes y sesgos en cero.

    La inicialización sigue el orden de declaración de los parámetros, así
    que la misma semilla produce tensores idénticos.
    """
    net = QNetwork(arch)
    rng = np.random.default_rng(seed)
    for layer in net.parametric_layers():
        layer.init(rng)
    logger.debug(f"Red {arch.variant} construida: {net.n_parameters} parámetros (semilla {seed})")
    return net


def forward(net: QNetwork, s: State) -> np.ndarray:
    """Q-values (9,) de un estado."""
    return net.q_values_batch(s.image[None], s.joints.as_array()[None])[0]


def greedy_action(net: QNetwork, s: State) -> int:
    """argmax de los Q-values; los empates se resuelven por el menor ActionId."""
    return int(np.argmax(forward(net, s)))


def backward_step(net: QNetwork, s: State, a: int, y: float, lr: float) -> float:
    """
    Un paso de SGD sobre L = (y − Q(s,a;θ))².

    Args:
        net: Red a actualizar
        s: Estado
        a: Acción tomada (única salida que recibe gradiente)
        y: Objetivo
        lr: Tasa de aprendizaje

    Returns:
        Pérdida antes de la actualización

    Raises:
        NumericFaultError: Valores no finitos o norma del gradiente > 1e6
    """
    loss, norm = net.loss_and_gradients(s, a, y)
    if norm > GRAD_NORM_LIMIT:
        raise NumericFaultError(f"Gradiente explosivo: norma {norm:.3e}")

    if lr:
        for layer in net.parametric_layers():
            for key, param in layer.params.items():
                param -= lr * layer.grads[key]
    return loss


def _check_same_arch(a: QNetwork, b: QNetwork) -> None:
    if a.arch != b.arch:
        raise CheckpointError(f"Arquitecturas distintas: {a.arch.variant} vs {b.arch.variant}")


def sync_target(source: QNetwork, target: QNetwork) -> None:
    """Copia los parámetros de `source` en `target` (bit a bit)."""
    _check_same_arch(source, target)
    for (_, src), (_, dst) in zip(source.parameters(), target.parameters()):
        np.copyto(dst, src)


def clone(net: QNetwork) -> QNetwork:
    twin = QNetwork(net.arch)
    sync_target(net, twin)
    return twin


def checkpoint_bytes(net: QNetwork, step: int = 0, checkpoint_id: int = 0) -> bytes:
    """Serializa la red en el formato de checkpoint."""
    arch_json = net.arch.model_dump_json().encode("utf-8")
    params = net.parameters()

    body = bytearray(_PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(arch_json)))
    body += arch_json
    body += _COUNTERS.pack(step, checkpoint_id, len(params))
    for _, tensor in params:
        body += np.ascontiguousarray(tensor, dtype="<f8").tobytes()
    body += hashlib.sha256(body).digest()
    return bytes(body)


def save_checkpoint(net: QNetwork, path: str | Path, step: int = 0, checkpoint_id: int = 0) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(net, step, checkpoint_id))
    return path


def _parse_header(data: bytes, source: str) -> tuple[NetworkArch, int, int, int, int]:
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"Checkpoint truncado: {source}")
    magic, version, arch_len = _PREFIX.unpack_from(data, 0)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"Magic inválido en {source}: {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"Versión de checkpoint no soportada: {version}")

    offset = _PREFIX.size + arch_len
    if len(data) < offset + _COUNTERS.size:
        raise CheckpointError(f"Checkpoint truncado: {source}")
    try:
        arch = NetworkArch.model_validate_json(data[_PREFIX.size:offset])
    except ValueError as e:
        raise CheckpointError(f"Descriptor de arquitectura inválido en {source}: {e}") from e

    step, checkpoint_id, n_tensors = _COUNTERS.unpack_from(data, offset)
    return arch, step, checkpoint_id, n_tensors, offset + _COUNTERS.size


def load_checkpoint_bytes(data: bytes, source: str = "<memoria>") -> QNetwork:
    """
    Reconstruye una red desde los bytes de un checkpoint.

    Raises:
        CheckpointError: Magic/versión inválidos, truncado o hash que no coincide
    """
    arch, _, _, n_tensors, offset = _parse_header(data, source)
    if len(data) < offset + 32:
        raise CheckpointError(f"Checkpoint truncado: {source}")
    if hashlib.sha256(data[:-32]).digest() != data[-32:]:
        raise CheckpointError(f"Hash de integridad no coincide: {source} está corrupto")

    net = QNetwork(arch)
    params = net.parameters()
    if n_tensors != len(params):
        raise CheckpointError(f"Se esperaban {len(params)} tensores, el archivo declara {n_tensors}")

    expected = offset + sum(p.size for _, p in params) * 8 + 32
    if len(data) != expected:
        raise CheckpointError(f"Tamaño inesperado: {len(data)} bytes, se esperaban {expected}")

    for _, tensor in params:
        count = tensor.size
        tensor[...] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(tensor.shape)
        offset += count * 8
    return net


def load_checkpoint(path: str | Path) -> QNetwork:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint no encontrado: {path}")
    return load_checkpoint_bytes(path.read_bytes(), str(path))


def checkpoint_info(path: str | Path) -> dict:
    """Lee arquitectura, paso e id de un checkpoint sin cargar los pesos."""
    data = Path(path).read_bytes()
    arch, step, checkpoint_id, n_tensors, _ = _parse_header(data, str(path))
    return {"arch": arch, "step": step, "checkpoint_id": checkpoint_id, "n_tensors": n_tensors}


def gradient_check_report(
    net: QNetwork, s: State, a: int, y: float, n_samples: int = 100, h: float = 1e-6, seed: int = 0
) -> dict[str, float]:
    """
    Error relativo máximo por tensor entre ∇L analítico y diferencias centradas.

    error = |analítico − numérico| / max(|analítico|, |numérico|, 1e-4)

    La red queda con sus parámetros originales.
    """
    net.loss_and_gradients(s, a, y)
    analytic = {name: g.copy() for name, g in net.gradients()}
    rng = np.random.default_rng(seed)

    def loss() -> float:
        return (y - float(forward(net, s)[a])) ** 2

    report: dict[str, float] = {}
    for name, param in net.parameters():
        flat = param.reshape(-1)
        picks = rng.choice(flat.size, size=min(n_samples, flat.size), replace=False)
        worst = 0.0
        for idx in picks:
            original = flat[idx]
            flat[idx] = original + h
            plus = loss()
            flat[idx] = original - h
            minus = loss()
            flat[idx] = original

            numeric = (plus - minus) / (2 * h)
            exact = analytic[name].reshape(-1)[idx]
            worst = max(worst, abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-4))
        report[name] = worst
    return report


def gradient_check(
    net: QNetwork, s: State, a: int, y: float, n_samples: int = 100, h: float = 1e-6, seed: int = 0
) -> float:
    """Error relativo máximo sobre una muestra de parámetros de cada tensor."""
    report = gradient_check_report(net, s, a, y, n_samples, h, seed)
    worst = max(report, key=report.get)
    logger.debug(f"Verificación de gradientes: peor tensor {worst} ({report[worst]:.2e})")
    return report[worst]
