"""
network.py - Détecteur 2D (image -> heatmaps) et auto-encodeur multi-branches
(heatmaps -> pose 3D, rotations locales, reconstruction des heatmaps).

Tous les calculs passent par egopose.tensor ; les paramètres vivent dans un
ParamStore par réseau. Chaque paramètre est initialisé (Xavier) depuis son
propre flux aléatoire : activer ou non une branche ne change pas les poids
des autres.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from egopose import rng
from egopose.errors import ConfigError, DimensionError
from egopose.kinematics import Skeleton, extract_rotations
from egopose.params import ParamStore, xavier_init
from egopose.tensor import (
    Tensor,
    batchnorm,
    conv2d,
    deconv2d,
    default_dtype,
    dense,
    leaky_relu,
    matmul,
    maximum,
    mse,
    mul,
    norm,
    normalize,
    reshape,
    square,
    sub,
    tmean,
    tsum,
)

logger = logging.getLogger("egopose.network")

NUM_HEATMAPS = 15
NUM_JOINTS = 16
HM_SIZES = (8, 16, 24, 36, 48)
Z_SIZES = (10, 20, 50, 70, 100, 500)


# ============================================================
# CONFIGURATIONS
# ============================================================
@dataclass(frozen=True)
class BranchConfig:
    pose: bool = True
    rot: bool = True
    hm: bool = True

    MODES = ("p3d", "p3d+rot", "p3d+hm", "p3d+hm+rot")

    def __post_init__(self) -> None:
        if not self.pose:
            raise ConfigError("la branche pose est toujours active")

    @property
    def name(self) -> str:
        return "p3d" + ("+hm" if self.hm else "") + ("+rot" if self.rot else "")

    @classmethod
    def from_mode(cls, mode: str) -> "BranchConfig":
        if mode not in cls.MODES:
            raise ConfigError(f"mode de branches inconnu: {mode} (attendu {cls.MODES})")
        parts = set(mode.split("+"))
        return cls(pose=True, rot="rot" in parts, hm="hm" in parts)


@dataclass(frozen=True)
class LossWeights:
    pose: float = 1e-1
    rot: float = 1e-1
    hm: float = 1e-3
    theta: float = -1e-2
    limb: float = 0.5

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> "LossWeights":
        try:
            return cls(**{k: float(v) for k, v in (data or {}).items()})
        except TypeError as e:
            raise ConfigError(f"loss.weights: {e}") from e


@dataclass(frozen=True)
class LifterConfig:
    in_channels: int = NUM_HEATMAPS
    in_size: int = 47
    z_size: int = 50
    hm_size: int = 48
    num_joints: int = NUM_JOINTS
    encoder_channels: tuple[int, ...] = (32, 64, 128, 256)
    pose_hidden: tuple[int, ...] = (512, 256)
    rot_hidden: tuple[int, ...] = (512, 256)
    hm_hidden: tuple[int, ...] = (512,)
    hm_channels: tuple[int, ...] = (64, 32, 32)
    slope: float = 0.2
    branches: BranchConfig = field(default_factory=BranchConfig)

    @classmethod
    def from_config(cls, net: Mapping[str, Any], in_size: int = 47) -> "LifterConfig":
        return cls(
            in_size=in_size,
            z_size=int(net["z_size"]),
            hm_size=int(net["hm_size"]),
            encoder_channels=tuple(int(c) for c in net["encoder_channels"]),
            pose_hidden=tuple(int(c) for c in net["pose_hidden"]),
            rot_hidden=tuple(int(c) for c in net["rot_hidden"]),
            hm_hidden=tuple(int(c) for c in net["hm_hidden"]),
            hm_channels=tuple(int(c) for c in net["hm_channels"]),
            slope=float(net["leaky_slope"]),
            branches=BranchConfig(**{k: bool(v) for k, v in net["branches"].items()}),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "in_channels": self.in_channels, "in_size": self.in_size, "z_size": self.z_size,
            "hm_size": self.hm_size, "num_joints": self.num_joints,
            "encoder_channels": list(self.encoder_channels), "pose_hidden": list(self.pose_hidden),
            "rot_hidden": list(self.rot_hidden), "hm_hidden": list(self.hm_hidden),
            "hm_channels": list(self.hm_channels), "slope": self.slope,
            "branches": {"pose": self.branches.pose, "rot": self.branches.rot, "hm": self.branches.hm},
        }


@dataclass(frozen=True)
class DetectorConfig:
    channels: tuple[int, ...] = (16, 32, 64, 64, 96, 96)
    head_channels: int = 32
    image_size: int = 368
    out_size: int = 47
    slope: float = 0.2

    @classmethod
    def from_config(cls, net: Mapping[str, Any], image_size: int = 368) -> "DetectorConfig":
        return cls(
            channels=tuple(int(c) for c in net["detector_channels"]),
            head_channels=int(net["detector_head_channels"]),
            image_size=image_size,
            slope=float(net["leaky_slope"]),
        )

    def to_dict(self) -> dict[str, Any]:
        return {"channels": list(self.channels), "head_channels": self.head_channels,
                "image_size": self.image_size, "out_size": self.out_size, "slope": self.slope}


# ============================================================
# OUTILS
# ============================================================
def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def deconv_plan(hm_size: int) -> tuple[int, int]:
    """(taille de base, nombre de déconvolutions k4 s2 p1) : n maximal tel que 2^n divise hm_size."""
    for n in (3, 2, 1):
        if hm_size % (2 ** n) == 0:
            return hm_size // (2 ** n), n
    return hm_size, 0


def _param(store: ParamStore, seed: int, prefix: str, name: str, shape: Sequence[int]) -> Tensor:
    return store.add(name, xavier_init(shape, rng.stream(seed, prefix, name), dtype=default_dtype()))


def _bias(store: ParamStore, name: str, size: int) -> Tensor:
    return store.add(name, Tensor(np.zeros(size), requires_grad=True))


def _dense_stack(store: ParamStore, seed: int, prefix: str, name: str, dims: Sequence[int]) -> list[str]:
    layers = []
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        layer = f"{name}{i}"
        _param(store, seed, prefix, f"{layer}.w", (d_out, d_in))
        _bias(store, f"{layer}.b", d_out)
        layers.append(layer)
    return layers


def _run_dense(params: ParamStore, layers: Sequence[str], x: Tensor, slope: float, activate_last: bool = False) -> Tensor:
    for i, layer in enumerate(layers):
        x = dense(x, params[f"{layer}.w"], params[f"{layer}.b"])
        if activate_last or i < len(layers) - 1:
            x = leaky_relu(x, slope)
    return x


# ============================================================
# AUTO-ENCODEUR MULTI-BRANCHES
# ============================================================
@dataclass
class LifterOutput:
    pose: Tensor                 # (N, J, 3)
    z: Tensor                    # (N, z_size)
    rot: Tensor | None = None    # (N, J, 4), lignes unitaires
    hm: Tensor | None = None     # (N, 15, s, s)


class LiftingNet:
    """Encodeur conv (k4 s2 p1) -> ẑ -> branches pose / rotations / heatmaps."""

    PREFIX = "lifter"

    def __init__(self, cfg: LifterConfig | None = None, seed: int = 0) -> None:
        self.cfg = cfg or LifterConfig()
        self.seed = seed
        self.params = ParamStore()
        c = self.cfg
        if c.hm_size not in HM_SIZES and c.hm_size != c.in_size:
            logger.warning(f"hm_size={c.hm_size} hors de la grille {HM_SIZES}")

        size, c_in = c.in_size, c.in_channels
        for i, c_out in enumerate(c.encoder_channels):
            _param(self.params, seed, self.PREFIX, f"enc{i}.w", (c_out, c_in, 4, 4))
            _bias(self.params, f"enc{i}.b", c_out)
            size, c_in = _conv_out(size, 4, 2, 1), c_out
            if size < 1:
                raise ConfigError(f"encodeur trop profond pour une entrée {c.in_size}×{c.in_size}")
        self.flat_size = c_in * size * size
        _param(self.params, seed, self.PREFIX, "z.w", (c.z_size, self.flat_size))
        _bias(self.params, "z.b", c.z_size)

        self.pose_layers = _dense_stack(self.params, seed, self.PREFIX, "pose", (c.z_size, *c.pose_hidden, c.num_joints * 3))
        self.rot_layers: list[str] = []
        if c.branches.rot:
            self.rot_layers = _dense_stack(self.params, seed, self.PREFIX, "rot", (c.z_size, *c.rot_hidden, c.num_joints * 4))
        self.hm_layers: list[str] = []
        self.hm_deconvs: list[str] = []
        self.hm_base, n_deconv = deconv_plan(c.hm_size)
        chans = [*c.hm_channels[:n_deconv], NUM_HEATMAPS] if n_deconv else [NUM_HEATMAPS]
        if n_deconv and len(c.hm_channels) < n_deconv:
            raise ConfigError(f"network.hm_channels: {n_deconv} canaux requis pour hm_size={c.hm_size}")
        self.hm_base_channels = chans[0]
        if c.branches.hm:
            self.hm_layers = _dense_stack(
                self.params, seed, self.PREFIX, "hm", (c.z_size, *c.hm_hidden, chans[0] * self.hm_base ** 2)
            )
            for i, (a, b) in enumerate(zip(chans[:-1], chans[1:])):
                _param(self.params, seed, self.PREFIX, f"hmdec{i}.w", (a, b, 4, 4))
                _bias(self.params, f"hmdec{i}.b", b)
                self.hm_deconvs.append(f"hmdec{i}")

    def encode(self, hm: Tensor) -> Tensor:
        c = self.cfg
        if hm.ndim != 4 or hm.shape[1:] != (c.in_channels, c.in_size, c.in_size):
            raise DimensionError(
                f"lifter: entrée N×{c.in_channels}×{c.in_size}×{c.in_size} attendue, reçu {hm.shape}"
            )
        x = hm
        for i in range(len(c.encoder_channels)):
            x = leaky_relu(conv2d(x, self.params[f"enc{i}.w"], self.params[f"enc{i}.b"], stride=2, pad=1), c.slope)
        x = reshape(x, (x.shape[0], self.flat_size))
        return dense(x, self.params["z.w"], self.params["z.b"])

    def decode_hm(self, z: Tensor) -> Tensor:
        c = self.cfg
        n = z.shape[0]
        if not self.hm_deconvs:
            x = _run_dense(self.params, self.hm_layers, z, c.slope)
            return reshape(x, (n, NUM_HEATMAPS, c.hm_size, c.hm_size))
        x = _run_dense(self.params, self.hm_layers, z, c.slope, activate_last=True)
        x = reshape(x, (n, self.hm_base_channels, self.hm_base, self.hm_base))
        for i, name in enumerate(self.hm_deconvs):
            x = deconv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"], stride=2, pad=1)
            if i < len(self.hm_deconvs) - 1:
                x = leaky_relu(x, c.slope)
        return x

    def forward(self, hm: Tensor, with_rot: bool = True, with_hm: bool = True) -> LifterOutput:
        c = self.cfg
        z = self.encode(hm)
        n = z.shape[0]
        pose = reshape(_run_dense(self.params, self.pose_layers, z, c.slope), (n, c.num_joints, 3))
        out = LifterOutput(pose=pose, z=z)
        if c.branches.rot and with_rot:
            raw = reshape(_run_dense(self.params, self.rot_layers, z, c.slope), (n, c.num_joints, 4))
            out.rot = normalize(raw, axis=-1)
        if c.branches.hm and with_hm:
            out.hm = self.decode_hm(z)
        return out


def lifting_forward(net: LiftingNet, hm, with_rot: bool = True, with_hm: bool = True) -> LifterOutput:
    """hm : (15, S, S) ou (N, 15, S, S), tableau ou Tensor."""
    x = hm if isinstance(hm, Tensor) else Tensor(hm)
    if x.ndim == 3:
        x = reshape(x, (1, *x.shape))
    return net.forward(x, with_rot=with_rot, with_hm=with_hm)


# ============================================================
# DÉTECTEUR 2D
# ============================================================
class Detector2D:
    """Blocs conv + batchnorm + leaky ReLU puis tête à deux déconvolutions -> 15×47×47."""

    PREFIX = "detector"

    def __init__(self, cfg: DetectorConfig | None = None, seed: int = 0) -> None:
        self.cfg = cfg or DetectorConfig()
        self.seed = seed
        self.params = ParamStore()
        self.image_mean = np.zeros(3)
        self.image_std = np.ones(3)
        c = self.cfg
        if len(c.channels) < 3:
            raise ConfigError("network.detector_channels: au moins 3 blocs requis")
        self.blocks: list[tuple[str, int, int, int]] = []
        size, c_in = c.image_size, 3
        n_down = len(c.channels) - 2
        for i, c_out in enumerate(c.channels):
            k, stride, pad = (4, 2, 1) if i < n_down else (3, 1, 1)
            name = f"block{i}"
            _param(self.params, seed, self.PREFIX, f"{name}.w", (c_out, c_in, k, k))
            _bias(self.params, f"{name}.b", c_out)
            self.params.add(f"{name}.gamma", Tensor(np.ones(c_out), requires_grad=True))
            _bias(self.params, f"{name}.beta", c_out)
            self.params.add_buffer(f"{name}.mean", np.zeros(c_out))
            self.params.add_buffer(f"{name}.var", np.ones(c_out))
            self.blocks.append((name, k, stride, pad))
            size, c_in = _conv_out(size, k, stride, pad), c_out
        head_size = (size - 1) * 2 + 3
        if head_size != c.out_size:
            raise ConfigError(f"détecteur: sortie {head_size}×{head_size} au lieu de {c.out_size}×{c.out_size}")
        _param(self.params, seed, self.PREFIX, "head0.w", (c_in, c.head_channels, 3, 3))
        _bias(self.params, "head0.b", c.head_channels)
        _param(self.params, seed, self.PREFIX, "head1.w", (c.head_channels, NUM_HEATMAPS, 3, 3))
        _bias(self.params, "head1.b", NUM_HEATMAPS)

    def set_normalization(self, mean: np.ndarray, std: np.ndarray) -> None:
        self.image_mean = np.asarray(mean, dtype=np.float64).reshape(3)
        self.image_std = np.maximum(np.asarray(std, dtype=np.float64).reshape(3), 1e-6)

    def normalize_images(self, images: np.ndarray) -> np.ndarray:
        """(N, H, W, 3) uint8 -> (N, 3, H, W) centré-réduit par canal."""
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        out = (images - self.image_mean) / self.image_std
        return out.transpose(0, 3, 1, 2).astype(default_dtype())

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        c = self.cfg
        if x.ndim != 4 or x.shape[1:] != (3, c.image_size, c.image_size):
            raise DimensionError(f"détecteur: entrée N×3×{c.image_size}×{c.image_size} attendue, reçu {x.shape}")
        for name, _, stride, pad in self.blocks:
            x = conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"], stride=stride, pad=pad)
            x = batchnorm(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"],
                          self.params.buffers[f"{name}.mean"], self.params.buffers[f"{name}.var"], training)
            x = leaky_relu(x, c.slope)
        x = leaky_relu(deconv2d(x, self.params["head0.w"], self.params["head0.b"], stride=2, pad=0), c.slope)
        return deconv2d(x, self.params["head1.w"], self.params["head1.b"], stride=1, pad=1)


def detector_forward(det: Detector2D, image, training: bool = False) -> Tensor:
    """image : (3, H, W) ou (N, 3, H, W) déjà normalisée -> (N, 15, 47, 47)."""
    x = image if isinstance(image, Tensor) else Tensor(image)
    if x.ndim == 3:
        x = reshape(x, (1, *x.shape))
    return det.forward(x, training=training)


def loss_2d(pred: Tensor, target) -> Tensor:
    """L_2D : erreur quadratique moyenne entre heatmaps prédites et vérité terrain."""
    return mse(pred, target if isinstance(target, Tensor) else Tensor(target, dtype=pred.dtype))


# ============================================================
# PERTE DE L'AUTO-ENCODEUR
# ============================================================
@dataclass
class LossTargets:
    pose: np.ndarray      # (N, J, 3) ; zéros pour les enregistrements 2D seuls
    rot: np.ndarray       # (N, J, 4)
    hm: np.ndarray        # (N, 15, s, s) déjà rééchantillonnées à hm_size
    has_3d: np.ndarray    # (N,) bool


def _aligned_rotation_target(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """q et -q sont la même rotation : on retient le signe le plus proche de la prédiction."""
    sign = np.sign(np.sum(pred * target, axis=-1, keepdims=True))
    return np.where(sign == 0, 1.0, sign) * target


def loss_ae(
    out: LifterOutput,
    targets: LossTargets,
    weights: LossWeights,
    skel: Skeleton,
    rotation_target: str = "predicted",
    cosine_eps: float = 1e-8,
) -> Tensor:
    """
    Moyenne sur le batch de
      m·[λp(‖P−P̂‖² + λθ·Σ_l cos(P_l, P̂_l) + λL·Σ_l ‖P_l − P̂_l‖) + λr‖R̂ − r(P̂)‖²] + λhm‖ĤM − H̃M‖²
    avec m = has_3d (0 pour un enregistrement 2D seul). r(P̂) est extrait
    hors bande de la pose prédite ; rotation_target="ground_truth" compare
    plutôt aux rotations stockées de l'enregistrement.
    """
    dtype = out.pose.dtype
    n = out.pose.shape[0]
    if targets.pose.shape != out.pose.shape:
        raise DimensionError(f"loss_ae: cible pose {targets.pose.shape} pour une sortie {out.pose.shape}")
    mask = Tensor(np.asarray(targets.has_3d, dtype=np.float64).reshape(n), dtype=dtype)
    p_true = np.asarray(targets.pose, dtype=np.float64)

    pose_err = tsum(square(sub(out.pose, Tensor(p_true, dtype=dtype))), axis=(1, 2))
    limb_mat = Tensor(skel.limb_matrix(), dtype=dtype)
    limbs_true = skel.limb_matrix() @ p_true                                # (N, L, 3)
    limbs_pred = matmul(limb_mat, out.pose)                                 # (N, L, 3)
    true_norm = np.maximum(np.linalg.norm(limbs_true, axis=-1), cosine_eps)  # (N, L)
    dots = tsum(mul(limbs_pred, Tensor(limbs_true, dtype=dtype)), axis=-1)
    denom = mul(maximum(norm(limbs_pred, axis=-1), cosine_eps), Tensor(true_norm, dtype=dtype))
    theta = tsum(dots / denom, axis=-1)
    limb_err = tsum(norm(sub(limbs_pred, Tensor(limbs_true, dtype=dtype)), axis=-1), axis=-1)
    per_sample = mul(add_terms(pose_err, mul(theta, weights.theta), mul(limb_err, weights.limb)), weights.pose)

    if out.rot is not None:
        if rotation_target == "predicted":
            pred_pose = out.pose.numpy().astype(np.float64)
            r_target = np.stack([
                extract_rotations(pred_pose[i], skel) if targets.has_3d[i] else np.asarray(targets.rot[i])
                for i in range(n)
            ])
        else:
            r_target = np.asarray(targets.rot, dtype=np.float64)
        r_target = _aligned_rotation_target(out.rot.numpy().astype(np.float64), r_target)
        rot_err = tsum(square(sub(out.rot, Tensor(r_target, dtype=dtype))), axis=(1, 2))
        per_sample = add_terms(per_sample, mul(rot_err, weights.rot))

    per_sample = mul(per_sample, mask)
    if out.hm is not None:
        if targets.hm.shape != out.hm.shape:
            raise DimensionError(f"loss_ae: cible heatmaps {targets.hm.shape} pour une sortie {out.hm.shape}")
        hm_err = tsum(square(sub(out.hm, Tensor(targets.hm, dtype=dtype))), axis=(1, 2, 3))
        per_sample = add_terms(per_sample, mul(hm_err, weights.hm))
    return tmean(per_sample)


def add_terms(*terms: Tensor) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total
