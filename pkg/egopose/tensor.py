"""
tensor.py - Mini-bibliothèque de tenseurs denses avec différentiation
automatique en mode inverse (reverse-mode).

Principe:
- Un Tensor est une valeur immuable (tableau numpy en lecture seule).
- Les opérations exécutées à l'intérieur d'un `with Tape() as tape:` sont
  enregistrées dans l'ordre (entrées, sortie, règle backward).
- backward(tape, loss) parcourt la bande à l'envers et dépose dL/dfeuille
  dans `.grad` de chaque feuille requires_grad.
- Hors bande, aucune opération n'est enregistrée (inférence).

Float32 par défaut ; `precision(np.float64)` bascule en 64 bits pour les
vérifications de gradient par différences finies.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from egopose.errors import DimensionError, GradientError, NumericError


# ============================================================
# PRÉCISION
# ============================================================
_DEFAULT_DTYPE = [np.dtype(np.float32)]


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE[-1]


@contextmanager
def precision(dtype) -> Iterator[None]:
    """Change temporairement le dtype par défaut (float32 / float64)."""
    _DEFAULT_DTYPE.append(np.dtype(dtype))
    try:
        yield
    finally:
        _DEFAULT_DTYPE.pop()


# ============================================================
# TENSOR
# ============================================================
_IDS = itertools.count()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype or default_dtype(), copy=True)
        arr.setflags(write=False)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.id = next(_IDS)
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        arr.setflags(write=False)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.id = next(_IDS)
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() sur un tenseur de forme {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" '{self.name}'" if self.name else ""
        return f"<Tensor{label} shape={self.shape} dtype={self.dtype} grad={'yes' if self.requires_grad else 'no'}>"

    # opérateurs
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ============================================================
# TAPE
# ============================================================
@dataclass
class TapeEntry:
    op: str
    inputs: tuple[Tensor, ...]
    output: int
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Liste ordonnée des opérations enregistrées."""

    entries: list[TapeEntry] = field(default_factory=list)
    produced: set[int] = field(default_factory=set)
    consumed: bool = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.pop()

    def leaves(self) -> list[Tensor]:
        seen: dict[int, Tensor] = {}
        for entry in self.entries:
            for t in entry.inputs:
                if t.requires_grad and t.id not in self.produced:
                    seen.setdefault(t.id, t)
        return list(seen.values())


_TAPES: list[Tape] = []


def _active_tape() -> Optional[Tape]:
    return _TAPES[-1] if _TAPES else None


def _check_finite(op: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op}: valeur non finie (NaN/Inf) en sortie")


def _record(op: str, inputs: tuple[Tensor, ...], out: np.ndarray, backward) -> Tensor:
    _check_finite(op, out)
    tape = _active_tape()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor._wrap(np.ascontiguousarray(out), requires_grad=tracked)
    if tracked:
        tape.entries.append(TapeEntry(op=op, inputs=inputs, output=result.id, backward=backward))
        tape.produced.add(result.id)
    return result


def backward(tape: Tape, loss: Tensor, params=None) -> None:
    """
    Propage dL/d(.) depuis `loss` (scalaire) jusqu'aux feuilles.

    Les paramètres de `params` (ParamStore) qui ne sont pas reliés à la
    perte reçoivent un gradient nul.
    """
    if tape.consumed:
        raise GradientError("backward déjà appelé sur cette bande (créer une nouvelle Tape)")
    if loss.size != 1:
        raise GradientError(f"la perte doit être scalaire, forme reçue {loss.shape}")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    leaf_grads: dict[int, np.ndarray] = {}
    for entry in reversed(tape.entries):
        g = grads.pop(entry.output, None)
        if g is None:
            continue
        for t, gi in zip(entry.inputs, entry.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            target = grads if t.id in tape.produced else leaf_grads
            target[t.id] = gi if t.id not in target else target[t.id] + gi

    for leaf in tape.leaves():
        g = leaf_grads.get(leaf.id)
        if g is None:
            g = np.zeros_like(leaf.data)
        g = g.astype(leaf.dtype, copy=False).reshape(leaf.shape)
        leaf.grad = g if leaf.grad is None else leaf.grad + g

    if params is not None:
        for p in params.values():
            if p.requires_grad and p.grad is None:
                p.grad = np.zeros_like(p.data)


# ============================================================
# OPÉRATIONS ÉLÉMENTAIRES
# ============================================================
def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record("add", (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record("sub", (a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record("mul", (a, b), a.data * b.data,
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _record("div", (a, b), out,
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


def square(a: Tensor) -> Tensor:
    return _record("square", (a,), a.data * a.data, lambda g: (2.0 * a.data * g,))


def maximum(a: Tensor, floor: float) -> Tensor:
    """max(a, floor) élément par élément ; gradient 1 là où a >= floor."""
    return _record("maximum", (a,), np.maximum(a.data, floor),
                   lambda g: (g * (a.data >= floor),))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul attend des tenseurs >= 2D, reçu {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: dimensions internes {a.shape} @ {b.shape}")

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record("matmul", (a, b), np.matmul(a.data, b.data), bw)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return _record("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    inverse = np.argsort(axes)
    return _record("transpose", (a,), np.transpose(a.data, axes),
                   lambda g: (np.transpose(g, inverse),))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record("sum", (a,), np.asarray(out), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def norm(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """
    Norme euclidienne exacte ; le gradient vaut x/||x|| et 0 quand ||x|| = 0
    (sous-gradient), ce qui garde la perte exacte au point de prédiction parfaite.
    """
    n = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True))

    def bw(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, a.data / safe, 0.0) * gk,)

    out = n if keepdims else np.squeeze(n, axis=axis)
    return _record("norm", (a,), out, bw)


def normalize(a: Tensor, axis: int = -1, eps: float = 1e-8) -> Tensor:
    return div(a, maximum(norm(a, axis=axis, keepdims=True), eps))


# ============================================================
# COUCHES
# ============================================================
def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    """max(x, slope*x) ; dérivée prise égale à 1 en x = 0."""
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"pente leaky_relu hors [0,1): {slope}")
    positive = x.data >= 0
    out = np.where(positive, x.data, slope * x.data)
    return _record("leaky_relu", (x,), out, lambda g: (np.where(positive, g, slope * g),))


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """out = W.x + b pour x de forme (n,) ou (N, n)."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"dense: entrée {x.shape} incompatible avec poids {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"dense: biais {bias.shape} pour {weight.shape[0]} sorties")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gx = g @ weight.data
        if x.ndim == 1:
            gw = np.outer(g, x.data)
            gb = g
        else:
            gw = g.T @ x.data
            gb = g.sum(axis=0)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _record("dense", inputs, out, bw)


def _promote_4d(x: Tensor, op: str) -> Tensor:
    if x.ndim == 3:
        return reshape(x, (1, *x.shape))
    if x.ndim != 4:
        raise DimensionError(f"{op}: entrée C×H×W ou N×C×H×W attendue, reçu {x.shape}")
    return x


def _windows(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, : stride * (ho - 1) + 1: stride, : stride * (wo - 1) + 1: stride]


def _scatter(cols: np.ndarray, shape: tuple[int, int, int, int], stride: int) -> np.ndarray:
    """cols: (N, h, w, C, k, k) -> accumulation dans un tableau (N, C, H, W)."""
    _, h, w, _, k, _ = cols.shape
    out = np.zeros(shape, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i: i + stride * (h - 1) + 1: stride, j: j + stride * (w - 1) + 1: stride] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """
    Convolution 2D (corrélation) sans padding implicite.
    x: (N, C_in, H, W) ; weight: (C_out, C_in, k, k) ; bias: (C_out,)
    sortie: (N, C_out, floor((H + 2p - k)/s) + 1, ...)
    """
    x = _promote_4d(x, "conv2d")
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise DimensionError(f"conv2d: poids C_out×C_in×k×k attendu, reçu {weight.shape}")
    if stride < 1 or pad < 0:
        raise DimensionError(f"conv2d: stride={stride}, pad={pad} invalides")
    n, c, h, w = x.shape
    c_out, c_in, k, _ = weight.shape
    if c != c_in:
        raise DimensionError(f"conv2d: {c} canaux en entrée, le poids en attend {c_in}")
    if h + 2 * pad < k or w + 2 * pad < k:
        raise DimensionError(f"conv2d: entrée {h}×{w} (pad {pad}) plus petite que le noyau {k}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv2d: biais {bias.shape} pour {c_out} canaux")

    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = _windows(xp, k, stride, ho, wo)
    out = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        cols = np.tensordot(g, weight.data, axes=([1], [0]))
        gxp = _scatter(cols, xp.shape, stride)
        gx = gxp[:, :, pad: pad + h, pad: pad + w]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _record("conv2d", inputs, out, bw)


def deconv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """
    Convolution transposée (adjointe de conv2d pour le même poids).
    x: (N, C_in, H, W) ; weight: (C_in, C_out, k, k) ; bias: (C_out,)
    sortie: (N, C_out, (H - 1)s - 2p + k, ...)
    """
    x = _promote_4d(x, "deconv2d")
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise DimensionError(f"deconv2d: poids C_in×C_out×k×k attendu, reçu {weight.shape}")
    if stride < 1 or pad < 0:
        raise DimensionError(f"deconv2d: stride={stride}, pad={pad} invalides")
    n, c, h, w = x.shape
    c_in, c_out, k, _ = weight.shape
    if c != c_in:
        raise DimensionError(f"deconv2d: {c} canaux en entrée, le poids en attend {c_in}")
    hf, wf = (h - 1) * stride + k, (w - 1) * stride + k
    if hf - 2 * pad < 1 or wf - 2 * pad < 1:
        raise DimensionError(f"deconv2d: padding {pad} trop grand pour une sortie {hf}×{wf}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"deconv2d: biais {bias.shape} pour {c_out} canaux")

    cols = np.tensordot(x.data, weight.data, axes=([1], [0]))
    full = _scatter(cols, (n, c_out, hf, wf), stride)
    out = full[:, :, pad: hf - pad, pad: wf - pad]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gfull = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else g
        win = _windows(gfull, k, stride, h, w)
        gx = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        gw = np.tensordot(x.data, win, axes=([0, 2, 3], [0, 2, 3]))
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _record("deconv2d", inputs, out, bw)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """
    Normalisation par canal (axe 1) pour une entrée B×C×...

    En mode entraînement, les statistiques du batch sont utilisées et les
    statistiques glissantes (`running_mean`, `running_var`, modifiées sur
    place) sont mises à jour avec `momentum`. En évaluation, seules les
    statistiques glissantes servent.
    """
    if x.ndim < 2 or x.shape[1] != gamma.shape[0]:
        raise DimensionError(f"batchnorm: entrée {x.shape} pour {gamma.shape[0]} canaux")
    axes = tuple(i for i in range(x.ndim) if i != 1)
    bshape = [1] * x.ndim
    bshape[1] = x.shape[1]
    gam = gamma.data.reshape(bshape)

    if training:
        if x.shape[0] < 2:
            raise DimensionError("batchnorm: un batch d'au moins 2 éléments est requis en entraînement")
        m = x.data.size // x.shape[1]
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv_std
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * var.reshape(-1) * (m / max(m - 1, 1))

        def bw(g):
            dxhat = g * gam
            gx = inv_std / m * (
                m * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:
        inv_std = 1.0 / np.sqrt(running_var.reshape(bshape) + eps)
        xhat = (x.data - running_mean.reshape(bshape)) * inv_std

        def bw(g):
            return g * gam * inv_std, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    out = gam * xhat + beta.data.reshape(bshape)
    return _record("batchnorm", (x, gamma, beta), out.astype(x.dtype, copy=False), bw)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Moyenne des carrés des différences (symétrique)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mse: formes différentes {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    return _record("mse", (a, b), np.asarray(np.mean(diff * diff)),
                   lambda g: (2.0 * diff * g / n, -2.0 * diff * g / n))


# ============================================================
# VÉRIFICATION DES GRADIENTS
# ============================================================
def numerical_gradient(fn: Callable[[], Tensor], target: Tensor, step: float = 1e-5) -> np.ndarray:
    """Différences finies centrées de fn() par rapport à `target` (modifié puis restauré)."""
    base = target.data.copy()
    grad = np.zeros_like(base, dtype=np.float64)
    flat = base.reshape(-1)
    for i in range(flat.size):
        for sign in (1.0, -1.0):
            shifted = flat.copy()
            shifted[i] += sign * step
            arr = shifted.reshape(base.shape)
            arr.setflags(write=False)
            target.data = arr
            value = fn().item()
            grad.reshape(-1)[i] += sign * value / (2.0 * step)
    base.setflags(write=False)
    target.data = base
    return grad


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-5) -> float:
    """
    Compare gradients analytiques et différences finies ; renvoie l'erreur
    relative maximale ||a - n|| / (||a|| + ||n||) sur les entrées.
    """
    for t in inputs:
        t.grad = None
    with Tape() as tape:
        loss = fn()
    backward(tape, loss)
    worst = 0.0
    for t in inputs:
        analytic = np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64)
        numeric = numerical_gradient(fn, t, step)
        denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
        if denom > 0:
            worst = max(worst, float(np.linalg.norm(analytic - numeric) / denom))
    return worst
