"""
params.py - Stockage des paramètres entraînables, initialisation Xavier et
pas d'optimisation (Adam par défaut, SGD en option).
"""

from __future__ import annotations

import logging
import math
from typing import Iterator, Mapping

import numpy as np

from egopose import rng
from egopose.errors import DimensionError, GradientError
from egopose.tensor import Tensor, default_dtype

logger = logging.getLogger("egopose.params")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def _fans(shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 1:
        return shape[0], shape[0]
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    return shape[1] * receptive, shape[0] * receptive


def xavier_init(shape, seed: int | np.random.Generator, dtype=None) -> Tensor:
    """Uniforme sur [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]."""
    shape = tuple(int(s) for s in shape)
    fan_in, fan_out = _fans(shape)
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    gen = seed if isinstance(seed, np.random.Generator) else rng.stream(int(seed), "xavier")
    values = gen.uniform(-bound, bound, size=shape)
    return Tensor(values, requires_grad=True, dtype=dtype)


class ParamStore(Mapping[str, Tensor]):
    """
    Nom -> Tensor entraînable, plus les moments d'Adam par paramètre et des
    buffers non entraînables (statistiques glissantes de batchnorm).
    """

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}
        self.state: dict[str, dict[str, np.ndarray]] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.steps = 0

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise KeyError(f"paramètre déjà déclaré: {name}")
        tensor.requires_grad = True
        tensor.name = name
        self._params[name] = tensor
        return tensor

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.buffers:
            raise KeyError(f"buffer déjà déclaré: {name}")
        self.buffers[name] = np.array(value, dtype=default_dtype())
        return self.buffers[name]

    def assign(self, name: str, value: np.ndarray) -> None:
        """Remplace les valeurs d'un paramètre existant (forme inchangée)."""
        p = self._params[name]
        value = np.asarray(value)
        if value.shape != p.shape:
            raise DimensionError(f"{name}: forme {value.shape} au lieu de {p.shape}")
        arr = value.astype(p.dtype, copy=True)
        arr.setflags(write=False)
        p.data = arr

    def assign_buffer(self, name: str, value: np.ndarray) -> None:
        buf = self.buffers[name]
        if np.shape(value) != buf.shape:
            raise DimensionError(f"buffer {name}: forme {np.shape(value)} au lieu de {buf.shape}")
        buf[...] = value

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self._params.values())


def optimizer_step(
    params: ParamStore,
    lr: float,
    kind: str = "adam",
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> ParamStore:
    """
    Met à jour chaque paramètre à partir de son gradient puis efface les
    gradients. Un paramètre sans gradient est une erreur.
    """
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise GradientError(f"gradients manquants pour: {', '.join(missing[:5])}")
    if kind not in {"adam", "sgd"}:
        raise ValueError(f"optimiseur inconnu: {kind}")

    params.steps += 1
    for name, p in params.items():
        g = p.grad.astype(p.dtype, copy=False)
        if kind == "sgd":
            update = lr * g
        else:
            st = params.state.setdefault(name, {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": np.zeros(())})
            st["t"] = st["t"] + 1
            t = float(st["t"])
            st["m"] = beta1 * st["m"] + (1.0 - beta1) * g
            st["v"] = beta2 * st["v"] + (1.0 - beta2) * g * g
            m_hat = st["m"] / (1.0 - beta1 ** t)
            v_hat = st["v"] / (1.0 - beta2 ** t)
            update = lr * m_hat / (np.sqrt(v_hat) + eps)
        new = (p.data - update).astype(p.dtype, copy=False)
        new.setflags(write=False)
        p.data = new
        p.grad = None
    return params
