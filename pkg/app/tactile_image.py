"""
Procesamiento de imágenes táctiles y cálculo de ContactRate.

Pipeline: imagen cruda a color (640x480x3) → escala de grises y reducción
a 64x48 → resta del fondo sin contacto → filtro de umbral → ContactRate
(por mil de píxeles distintos de cero).
"""

from pathlib import Path
from typing import Protocol

import cv2
import numpy as np
from loguru import logger


RAW_SHAPE = (480, 640, 3)
TACTILE_SHAPE = (48, 64)
TACTILE_PIXELS = TACTILE_SHAPE[0] * TACTILE_SHAPE[1]
BLOCK = 10
DEFAULT_TAU = 20


class InputShapeError(Exception):
    """La imagen no tiene las dimensiones esperadas."""
    pass


class BackgroundCaptureError(Exception):
    """Se detectó contacto mientras se capturaba el fondo."""
    pass


class NonContactSource(Protocol):
    """Cualquier fuente capaz de entregar un cuadro con el sensor retirado."""

    def read_noncontact_frame(self) -> tuple[np.ndarray, bool]:
        ...


def _check_shape(img: np.ndarray, expected: tuple, name: str) -> None:
    if img.shape != expected:
        raise InputShapeError(f"{name}: se esperaba forma {expected}, se recibió {img.shape}")


def preprocess(raw: np.ndarray) -> np.ndarray:
    """
    Convierte una imagen cruda 640x480 a color en una imagen táctil 64x48.

    Escala de grises = promedio sin pesos de los 3 canales (redondeado);
    reducción = media de bloques 10x10 sin solapamiento, redondeo half-up.
    Toda la aritmética es entera, así que el resultado es exacto.

    Args:
        raw: Arreglo uint8 de forma (480, 640, 3)

    Returns:
        Arreglo uint8 de forma (48, 64)

    Raises:
        InputShapeError: Si la imagen no es 640x480x3
    """
    _check_shape(raw, RAW_SHAPE, "RawImage")

    channel_sum = raw.astype(np.int64).sum(axis=2)
    # x/3 nunca cae en .5, el redondeo al más cercano es (x + 1) // 3
    gray = (channel_sum + 1) // 3

    h, w = TACTILE_SHAPE
    block_sum = gray.reshape(h, BLOCK, w, BLOCK).sum(axis=(1, 3))
    half = BLOCK * BLOCK // 2
    return ((block_sum + half) // (BLOCK * BLOCK)).astype(np.uint8)


def subtract_and_threshold(img: np.ndarray, background: np.ndarray, tau: int = DEFAULT_TAU) -> np.ndarray:
    """
    Resta el fondo y aplica el filtro de umbral.

    Args:
        img: Imagen táctil 64x48
        background: Fondo sin contacto 64x48
        tau: Umbral en [0, 255]; el píxel es contacto si |img - fondo| > tau

    Returns:
        Máscara booleana 64x48
    """
    _check_shape(img, TACTILE_SHAPE, "TactileImage")
    _check_shape(background, TACTILE_SHAPE, "Background")
    if not 0 <= tau <= 255:
        raise ValueError(f"tau debe estar en [0, 255], se recibió {tau}")

    diff = np.abs(img.astype(np.int16) - background.astype(np.int16))
    return diff > tau


def contact_rate(mask: np.ndarray) -> float:
    """
    ContactRate = 1000 * (píxeles en contacto) / (píxeles totales).

    Example:
        >>> contact_rate(np.ones((48, 64), dtype=bool))
        1000.0
    """
    _check_shape(mask, TACTILE_SHAPE, "BinaryContactMask")
    return 1000.0 * int(np.count_nonzero(mask)) / TACTILE_PIXELS


def image_contact_rate(img: np.ndarray, background: np.ndarray, tau: int = DEFAULT_TAU) -> float:
    """Atajo del pipeline completo sobre una imagen ya preprocesada."""
    return contact_rate(subtract_and_threshold(img, background, tau))


def capture_background(env: NonContactSource) -> np.ndarray:
    """
    Captura el fondo sin contacto que se usará durante toda la sesión.

    Args:
        env: Entorno que entrega un cuadro con el sensor retirado

    Returns:
        Imagen táctil 64x48 del fondo

    Raises:
        BackgroundCaptureError: Si el sensor estaba en contacto
    """
    raw, in_contact = env.read_noncontact_frame()
    if in_contact:
        raise BackgroundCaptureError("El sensor está en contacto con la superficie; no se puede capturar el fondo")

    background = preprocess(raw)
    logger.info(f"Fondo capturado (nivel medio {background.mean():.1f})")
    return background


def save_pgm(img: np.ndarray, path: str | Path) -> Path:
    """
    Exporta una imagen táctil como PGM binario (P5, maxval 255).

    Una máscara booleana se exporta con valores {0, 255}.
    """
    if img.dtype == bool:
        _check_shape(img, TACTILE_SHAPE, "BinaryContactMask")
        img = img.astype(np.uint8) * 255
    else:
        _check_shape(img, TACTILE_SHAPE, "TactileImage")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), img.astype(np.uint8), [cv2.IMWRITE_PXM_BINARY, 1]):
        raise OSError(f"No se pudo escribir el PGM: {path}")
    return path


def load_pgm(path: str | Path) -> np.ndarray:
    """
    Importa una imagen táctil desde un PGM 64x48.

    Raises:
        FileNotFoundError: Si el archivo no existe o no es legible
        InputShapeError: Si las dimensiones no son 64x48
    """
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FileNotFoundError(f"No se pudo leer el PGM: {path}")
    _check_shape(img, TACTILE_SHAPE, f"PGM {path}")
    return img.astype(np.uint8)
