"""
camera.py - Caméra fisheye équidistante (r = f·θ) orientée vers le bas,
montée sur le casque, avec perturbation aléatoire du montage.

project/unproject travaillent dans le repère caméra ; le passage
casque -> caméra (montage) est porté par headset_to_camera.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from egopose import rng
from egopose.errors import CameraError
from egopose.kinematics import IDENTITY, quat_conj, quat_from_axis_angle, quat_mul, quat_normalize, quat_rotate

IMAGE_SIZE = 368


@dataclass(frozen=True, eq=False)
class FisheyeCamera:
    focal: float = IMAGE_SIZE / math.pi
    principal_point: tuple[float, float] = (IMAGE_SIZE / 2.0, IMAGE_SIZE / 2.0)
    image_size: tuple[int, int] = (IMAGE_SIZE, IMAGE_SIZE)
    fov: float = math.pi
    mount_rotation: np.ndarray = field(default_factory=lambda: IDENTITY.copy())
    mount_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        if not self.focal > 0:
            raise CameraError(f"focale invalide: {self.focal}")
        if not 0 < self.fov <= 2 * math.pi:
            raise CameraError(f"champ de vision hors (0, 2π]: {self.fov}")
        w, h = self.image_size
        cx, cy = self.principal_point
        if not (0 <= cx < w and 0 <= cy < h):
            raise CameraError(f"point principal {self.principal_point} hors de l'image {self.image_size}")
        rot = quat_normalize(np.asarray(self.mount_rotation, dtype=np.float64))
        trans = np.asarray(self.mount_translation, dtype=np.float64).reshape(3)
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "mount_rotation", rot)
        object.__setattr__(self, "mount_translation", trans)
        object.__setattr__(self, "principal_point", (float(cx), float(cy)))
        object.__setattr__(self, "image_size", (int(w), int(h)))

    @property
    def max_radius(self) -> float:
        return self.focal * self.fov / 2.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "focal": float(self.focal),
            "principal_point": list(self.principal_point),
            "image_size": list(self.image_size),
            "fov": float(self.fov),
            "mount_rotation": [float(x) for x in self.mount_rotation],
            "mount_translation": [float(x) for x in self.mount_translation],
        }

    def same_as(self, other: "FisheyeCamera") -> bool:
        return self.to_dict() == other.to_dict()


def camera_from_dict(data: dict[str, Any]) -> FisheyeCamera:
    """
    Construit la caméra depuis la section `camera` de la configuration.
    focal / principal_point nuls => rayon f·fov/2 égal à la demi-largeur, centre de l'image.
    La sous-section `jitter` est ignorée (paramètres de génération).
    """
    data = {k: v for k, v in data.items() if k != "jitter"}
    if "fov_deg" in data:
        data["fov"] = math.radians(data.pop("fov_deg"))
    if "image_size" in data:
        data["image_size"] = tuple(data["image_size"])
    w, h = data.get("image_size", (IMAGE_SIZE, IMAGE_SIZE))
    if data.get("principal_point") is None:
        data["principal_point"] = (w / 2.0, h / 2.0)
    else:
        data["principal_point"] = tuple(data["principal_point"])
    if data.get("focal") is None:
        data["focal"] = w / data.get("fov", math.pi)
    try:
        return FisheyeCamera(**data)
    except TypeError as e:
        raise CameraError(f"paramètres caméra invalides: {e}") from e


def headset_to_camera(cam: FisheyeCamera, points: np.ndarray) -> np.ndarray:
    """Repère casque -> repère caméra : R_mount⁻¹ · (p - t_mount)."""
    points = np.asarray(points, dtype=np.float64)
    return quat_rotate(quat_conj(cam.mount_rotation), points - cam.mount_translation)


def project(cam: FisheyeCamera, point: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Projection équidistante d'un ou plusieurs points (..., 3) du repère caméra.
    Retourne (pixels (..., 2), visible (...)) ; visible = θ <= fov/2 et pixel dans l'image.
    """
    p = np.asarray(point, dtype=np.float64)
    radial = np.hypot(p[..., 0], p[..., 1])
    if np.any((radial == 0) & (p[..., 2] == 0)):
        raise CameraError("projection d'un point situé au centre de la caméra")
    theta = np.arctan2(radial, p[..., 2])
    r = cam.focal * theta
    safe = np.where(radial > 0, radial, 1.0)
    cos_phi = np.where(radial > 0, p[..., 0] / safe, 1.0)
    sin_phi = np.where(radial > 0, p[..., 1] / safe, 0.0)
    cx, cy = cam.principal_point
    uv = np.stack([cx + r * cos_phi, cy + r * sin_phi], axis=-1)
    w, h = cam.image_size
    inside = (uv[..., 0] >= 0) & (uv[..., 0] < w) & (uv[..., 1] >= 0) & (uv[..., 1] < h)
    visible = (theta <= cam.fov / 2.0) & inside
    return uv, visible


def unproject(cam: FisheyeCamera, pixel: np.ndarray) -> np.ndarray:
    """Direction unitaire (..., 3) du rayon passant par `pixel` ; inverse de project à l'échelle près."""
    px = np.asarray(pixel, dtype=np.float64)
    cx, cy = cam.principal_point
    dx = px[..., 0] - cx
    dy = px[..., 1] - cy
    r = np.hypot(dx, dy)
    if np.any(r > cam.max_radius * (1.0 + 1e-12)):
        raise CameraError(f"rayon {float(np.max(r)):.3f}px au-delà du rayon valide {cam.max_radius:.3f}px")
    theta = r / cam.focal
    phi = np.arctan2(dy, dx)
    return np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1)


def jitter_mount(cam: FisheyeCamera, seed: int | np.random.Generator, trans_sigma: float, rot_sigma: float) -> FisheyeCamera:
    """Petit déplacement aléatoire du montage (translation gaussienne + petite rotation)."""
    if trans_sigma < 0 or rot_sigma < 0:
        raise CameraError(f"écarts-types négatifs: {trans_sigma}, {rot_sigma}")
    gen = seed if isinstance(seed, np.random.Generator) else rng.stream(int(seed), "mount")
    dt = gen.normal(0.0, 1.0, size=3) * trans_sigma
    rotvec = gen.normal(0.0, 1.0, size=3) * rot_sigma
    angle = float(np.linalg.norm(rotvec))
    rotation = cam.mount_rotation
    if angle > 0:
        rotation = quat_mul(quat_from_axis_angle(rotvec, angle), rotation)
    if trans_sigma == 0 and angle == 0:
        return cam
    return replace(cam, mount_rotation=rotation, mount_translation=cam.mount_translation + dt)
