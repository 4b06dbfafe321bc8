"""
Capas de la red con propagación hacia atrás manual (numpy, float64).

Todas las capas trabajan con un eje de lote al frente: (B, C, H, W) para los
mapas de características y (B, N) para las densas. forward() guarda lo
necesario para que backward() devuelva el gradiente respecto a la entrada y
deje los gradientes de los parámetros en `grads`.
"""

import math
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    """Capa base: sin parámetros."""

    name: str = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> Optional[np.ndarray]:
        raise NotImplementedError


def he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    """Inicialización He uniforme: U(-√(6/fan_in), √(6/fan_in))."""
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Conv2D(Layer):
    """
    Convolución 2D, stride 1, sin padding.

    Args:
        in_channels: Canales de entrada
        filters: Número de filtros
        kernel: Tamaño del kernel cuadrado
        input_grad: Si False, backward() no calcula el gradiente de la entrada
    """

    def __init__(self, in_channels: int, filters: int, kernel: int, name: str = "conv", input_grad: bool = True):
        super().__init__()
        self.name = name
        self.kernel = kernel
        self.fan_in = in_channels * kernel * kernel
        self.input_grad = input_grad
        self.params = {
            "W": np.zeros((filters, in_channels, kernel, kernel)),
            "b": np.zeros(filters),
        }
        self._windows: Optional[np.ndarray] = None

    def init(self, rng: np.random.Generator) -> None:
        self.params["W"][...] = he_uniform(rng, self.params["W"].shape, self.fan_in)
        self.params["b"][...] = 0.0

    def forward(self, x: np.ndarray) -> np.ndarray:
        k = self.kernel
        # (B, C, Ho, Wo, k, k)
        self._windows = sliding_window_view(x, (k, k), axis=(2, 3))
        out = np.tensordot(self._windows, self.params["W"], axes=([1, 4, 5], [1, 2, 3]))
        return out.transpose(0, 3, 1, 2) + self.params["b"][None, :, None, None]

    def backward(self, dout: np.ndarray) -> Optional[np.ndarray]:
        k = self.kernel
        self.grads["W"] = np.tensordot(dout, self._windows, axes=([0, 2, 3], [0, 2, 3]))
        self.grads["b"] = dout.sum(axis=(0, 2, 3))
        if not self.input_grad:
            return None

        padded = np.pad(dout, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
        windows = sliding_window_view(padded, (k, k), axis=(2, 3))
        rotated = self.params["W"][:, :, ::-1, ::-1]
        dx = np.tensordot(windows, rotated, axes=([1, 4, 5], [0, 2, 3]))
        return dx.transpose(0, 3, 1, 2)


class MaxPool2D(Layer):
    """Max-pool 2x2 con stride 2; la última fila/columna impar se descarta."""

    def __init__(self, name: str = "pool"):
        super().__init__()
        self.name = name
        self._shape: Optional[tuple] = None
        self._argmax: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, c, h, w = x.shape
        hh, wh = h // 2, w // 2
        self._shape = x.shape
        blocks = x[:, :, : 2 * hh, : 2 * wh].reshape(b, c, hh, 2, wh, 2).transpose(0, 1, 2, 4, 3, 5)
        blocks = blocks.reshape(b, c, hh, wh, 4)
        self._argmax = blocks.argmax(axis=-1)
        return np.take_along_axis(blocks, self._argmax[..., None], axis=-1)[..., 0]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        b, c, h, w = self._shape
        hh, wh = h // 2, w // 2
        routed = np.zeros((b, c, hh, wh, 4))
        np.put_along_axis(routed, self._argmax[..., None], dout[..., None], axis=-1)
        routed = routed.reshape(b, c, hh, wh, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * hh, 2 * wh)

        dx = np.zeros(self._shape)
        dx[:, :, : 2 * hh, : 2 * wh] = routed
        return dx


class ReLU(Layer):
    def __init__(self, name: str = "relu"):
        super().__init__()
        self.name = name
        self._mask: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return np.where(self._mask, dout, 0.0)


class Flatten(Layer):
    def __init__(self, name: str = "flatten"):
        super().__init__()
        self.name = name
        self._shape: Optional[tuple] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout.reshape(self._shape)


class Dense(Layer):
    """Capa totalmente conectada: y = x·Wᵀ + b, con W de forma (salidas, entradas)."""

    def __init__(self, in_features: int, out_features: int, name: str = "dense"):
        super().__init__()
        self.name = name
        self.fan_in = in_features
        self.params = {"W": np.zeros((out_features, in_features)), "b": np.zeros(out_features)}
        self._x: Optional[np.ndarray] = None

    def init(self, rng: np.random.Generator) -> None:
        self.params["W"][...] = he_uniform(rng, self.params["W"].shape, self.fan_in)
        self.params["b"][...] = 0.0

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        self.grads["W"] = dout.T @ self._x
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"]
