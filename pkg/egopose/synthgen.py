"""
synthgen.py - Générateur procédural de données égocentriques.

Pour chaque personnage (taille tirée au hasard, squelette mis à l'échelle)
et chaque clip : poses clés aléatoires dans les limites articulaires de
l'action, interpolation sphérique, passage dans le repère d'une caméra
fisheye dont le montage est légèrement perturbé, projection 2D et rendu
"bonhomme bâton" 368×368×3.

Sorties : un fichier EGODATA1 par split + manifest.json + quality.json.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import cv2
import numpy as np

from egopose import rng
from egopose.camera import FisheyeCamera, camera_from_dict, headset_to_camera, jitter_mount, project
from egopose.dataset import ACTIONS, SPLITS, SampleRecord, frames_per_action, validate_records, write_records
from egopose.errors import ConfigError, DatasetError
from egopose.heatmaps import HM_SIZE, heatmap_to_image, image_to_heatmap
from egopose.kinematics import (
    IDENTITY,
    LOWER_BODY,
    Skeleton,
    extract_rotations,
    forward_kinematics,
    quat_canonical,
    quat_from_axis_angle,
    slerp,
)
from egopose.reports import write_json

logger = logging.getLogger("egopose.synthgen")


# ============================================================
# LIMITES ARTICULAIRES
# ============================================================
@dataclass(frozen=True)
class JointLimit:
    """Rotation de balancement (swing) : angle dans [min_deg, max_deg], axe charnière optionnel."""

    max_deg: float
    min_deg: float = 0.0
    hinge: tuple[float, float, float] | None = None

    def scaled(self, factor: float) -> "JointLimit":
        return JointLimit(self.max_deg * factor, self.min_deg * factor, self.hinge)


def parse_limits(data: Mapping[str, Any], skel: Skeleton) -> dict[str, JointLimit]:
    limits: dict[str, JointLimit] = {}
    for name, entry in (data or {}).items():
        if name not in skel.joint_names:
            raise ConfigError(f"generation.limits.{name}: articulation inconnue")
        unknown = set(entry) - {"max_deg", "min_deg", "hinge"}
        if unknown:
            raise ConfigError(f"generation.limits.{name}.{sorted(unknown)[0]}: clé inconnue")
        hinge = entry.get("hinge")
        limit = JointLimit(
            max_deg=float(entry.get("max_deg", 0.0)),
            min_deg=float(entry.get("min_deg", 0.0)),
            hinge=None if hinge is None else tuple(float(x) for x in hinge),
        )
        if limit.min_deg > limit.max_deg:
            raise ConfigError(f"generation.limits.{name}: min_deg > max_deg")
        limits[name] = limit
    return limits


def action_limits(limits: Mapping[str, JointLimit], profile: Mapping[str, float]) -> dict[str, JointLimit]:
    """Applique le profil d'une action (facteurs 'upper' / 'lower') aux limites."""
    upper = float(profile.get("upper", 1.0))
    lower = float(profile.get("lower", 1.0))
    return {name: lim.scaled(lower if name in LOWER_BODY else upper) for name, lim in limits.items()}


def _unit_perpendicular(gen: np.random.Generator, direction: np.ndarray) -> np.ndarray:
    d = direction / np.linalg.norm(direction)
    while True:
        v = gen.normal(size=3)
        v = v - np.dot(v, d) * d
        n = np.linalg.norm(v)
        if n > 1e-6:
            return v / n


def sample_pose(seed: int | np.random.Generator, limits: Mapping[str, JointLimit], skel: Skeleton) -> np.ndarray:
    """
    Rotations locales (J, 4) tirées indépendamment par articulation, sans twist :
    - articulation à un enfant : axe perpendiculaire à l'os enfant (ou axe
      charnière orthogonalisé), angle uniforme dans [min, max] ;
    - racine / plusieurs enfants : axe uniforme sur la sphère ;
    - feuille ou articulation sans limite : identité.
    """
    gen = seed if isinstance(seed, np.random.Generator) else rng.stream(int(seed), "pose")
    rot = np.tile(IDENTITY, (skel.num_joints, 1))
    for j, name in enumerate(skel.joint_names):
        kids = skel.children(j)
        lim = limits.get(name)
        if lim is None or not kids:
            continue
        if len(kids) == 1:
            bone = skel.rest_offset[kids[0]]
            if lim.hinge is not None:
                axis = np.asarray(lim.hinge, dtype=np.float64)
                axis = axis - np.dot(axis, bone) / np.dot(bone, bone) * bone
                if np.linalg.norm(axis) < 1e-9:
                    raise ConfigError(f"generation.limits.{name}.hinge: axe parallèle à l'os")
            else:
                axis = _unit_perpendicular(gen, bone)
        else:
            axis = gen.normal(size=3)
        angle = math.radians(gen.uniform(lim.min_deg, lim.max_deg)) if lim.max_deg > lim.min_deg else math.radians(lim.min_deg)
        if angle != 0.0:
            rot[j] = quat_canonical(quat_from_axis_angle(axis, angle))
    return rot


# ============================================================
# CLIPS
# ============================================================
@dataclass
class MotionClip:
    rotations: np.ndarray        # (F, J, 4)
    root_positions: np.ndarray   # (F, 3)
    action: str = "Gaming"
    fps: int = 30

    def __post_init__(self) -> None:
        if self.rotations.ndim != 3 or self.rotations.shape[0] < 1:
            raise DatasetError(f"clip vide ou mal formé: {self.rotations.shape}")
        if self.root_positions.shape != (self.rotations.shape[0], 3):
            raise DatasetError(
                f"{self.root_positions.shape[0]} positions racine pour {self.rotations.shape[0]} frames"
            )

    def __len__(self) -> int:
        return self.rotations.shape[0]


def interpolate_clip(
    keyframes: Sequence[np.ndarray],
    steps_between: int,
    root_positions: Sequence[np.ndarray] | None = None,
    action: str = "Gaming",
    fps: int = 30,
) -> MotionClip:
    """Slerp par articulation entre poses clés ; longueur (K-1)(steps+1)+1, extrémités recopiées."""
    if len(keyframes) < 2:
        raise DatasetError(f"au moins 2 poses clés requises, reçu {len(keyframes)}")
    if steps_between < 0:
        raise DatasetError(f"steps_between négatif: {steps_between}")
    keys = [np.asarray(k, dtype=np.float64) for k in keyframes]
    roots = [np.zeros(3) for _ in keys] if root_positions is None else [np.asarray(r, dtype=np.float64) for r in root_positions]
    frames, positions = [], []
    for a, b, ra, rb in zip(keys[:-1], keys[1:], roots[:-1], roots[1:]):
        frames.append(a.copy())
        positions.append(ra.copy())
        for s in range(1, steps_between + 1):
            t = s / (steps_between + 1)
            frames.append(quat_canonical(slerp(a, b, t)))
            positions.append((1.0 - t) * ra + t * rb)
    frames.append(keys[-1].copy())
    positions.append(roots[-1].copy())
    return MotionClip(np.stack(frames), np.stack(positions), action=action, fps=fps)


# ============================================================
# RENDU "BONHOMME BÂTON"
# ============================================================
@dataclass(frozen=True)
class StickStyle:
    thickness: int = 3
    left_color: tuple[int, int, int] = (40, 220, 40)
    right_color: tuple[int, int, int] = (220, 40, 40)
    center_color: tuple[int, int, int] = (230, 230, 230)
    background: tuple[int, int, int] = (20, 20, 20)
    noise_std: float = 0.0
    noise_seed: int = 0
    image_size: int = 368

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> "StickStyle":
        data = dict(data or {})
        for key in ("left_color", "right_color", "center_color", "background"):
            if key in data:
                data[key] = tuple(int(c) for c in data[key])
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"generation.style: {e}") from e

    def to_dict(self) -> dict[str, Any]:
        return {
            "thickness": self.thickness, "left_color": list(self.left_color),
            "right_color": list(self.right_color), "center_color": list(self.center_color),
            "background": list(self.background), "noise_std": self.noise_std,
            "noise_seed": self.noise_seed, "image_size": self.image_size,
        }


_SUBPIXEL_SHIFT = 4


def _limb_color(name: str, style: StickStyle) -> tuple[int, int, int]:
    if name.startswith("Left"):
        return style.left_color
    if name.startswith("Right"):
        return style.right_color
    return style.center_color


def draw_stick_figure(
    pixels: np.ndarray,
    visible: np.ndarray,
    joint_ids: Sequence[int],
    skel: Skeleton,
    style: StickStyle,
) -> np.ndarray:
    """
    pixels/visible : une entrée par articulation de `joint_ids`.
    Un membre est tracé si ses deux extrémités sont dans `joint_ids` et visibles.
    """
    size = style.image_size
    image = np.empty((size, size, 3), dtype=np.uint8)
    image[...] = np.asarray(style.background, dtype=np.uint8)
    if style.noise_std > 0:
        noise = rng.stream(style.noise_seed, "background").normal(0.0, style.noise_std, size=image.shape)
        image = np.clip(image.astype(np.float64) + noise, 0, 255).astype(np.uint8)
    slot = {j: i for i, j in enumerate(joint_ids)}
    scale = 1 << _SUBPIXEL_SHIFT
    for j in joint_ids:
        p = skel.parent[j]
        if p < 0 or p not in slot or not (visible[slot[j]] and visible[slot[p]]):
            continue
        a = tuple(int(round(float(c) * scale)) for c in pixels[slot[p]])
        b = tuple(int(round(float(c) * scale)) for c in pixels[slot[j]])
        cv2.line(image, a, b, _limb_color(skel.joint_names[j], style), style.thickness,
                 lineType=cv2.LINE_AA, shift=_SUBPIXEL_SHIFT)
    return image


def rasterize(pose3d: np.ndarray, cam: FisheyeCamera, style: StickStyle, skel: Skeleton) -> np.ndarray:
    """Image 368×368×3 uint8 d'une pose exprimée dans le repère caméra."""
    uv, visible = project(cam, pose3d)
    joint_ids = skel.heatmap_joints
    return draw_stick_figure(uv[list(joint_ids)], visible[list(joint_ids)], joint_ids, skel, style)


def draw_record(record: SampleRecord, skel: Skeleton, style: StickStyle, hm_size: int = HM_SIZE) -> np.ndarray:
    """Image d'un enregistrement reconstruite depuis ses joints 2D (indépendant de has_3d)."""
    if record.image is not None:
        return record.image
    pixels = heatmap_to_image(record.joints2d, style.image_size, hm_size)
    return draw_stick_figure(pixels, record.visible, skel.heatmap_joints, skel, style)


# ============================================================
# GÉNÉRATION DU JEU DE DONNÉES
# ============================================================
@dataclass(frozen=True)
class ClipTask:
    split: str
    clip_id: int
    character_id: int
    action: str
    first_frame: int
    num_frames: int


@dataclass
class GenerationContext:
    seed: int
    skeleton: Skeleton
    camera: FisheyeCamera
    limits: dict[str, JointLimit]
    profiles: dict[str, dict[str, float]]
    style: StickStyle
    gen: dict[str, Any]
    jitter: dict[str, float]
    heights: dict[int, float] = field(default_factory=dict)


def clip_length(gen_cfg: Mapping[str, Any]) -> int:
    return (int(gen_cfg["keyframes_per_clip"]) - 1) * (int(gen_cfg["steps_between"]) + 1) + 1


def plan_clips(gen_cfg: Mapping[str, Any]) -> dict[str, list[ClipTask]]:
    """Découpe chaque split en clips ; personnages disjoints entre splits."""
    length = clip_length(gen_cfg)
    plan: dict[str, list[ClipTask]] = {}
    next_character = 0
    for split in SPLITS:
        frames = int(gen_cfg["frames"][split])
        n_chars = max(int(gen_cfg["characters"][split]), 1)
        characters = list(range(next_character, next_character + n_chars))
        next_character += n_chars
        frame_cursor = {c: 0 for c in characters}
        tasks, done, clip_id = [], 0, 0
        while done < frames:
            n = min(length, frames - done)
            character = characters[(clip_id // len(ACTIONS)) % n_chars]
            tasks.append(ClipTask(split, clip_id, character, ACTIONS[clip_id % len(ACTIONS)], frame_cursor[character], n))
            frame_cursor[character] += n
            done += n
            clip_id += 1
        plan[split] = tasks
    return plan


def character_height(seed: int, character_id: int, height_range: Sequence[float]) -> float:
    lo, hi = float(height_range[0]), float(height_range[1])
    return float(rng.stream(seed, "height", character_id).uniform(lo, hi))


def generate_clip(task: ClipTask, ctx: GenerationContext) -> list[SampleRecord]:
    gen_cfg = ctx.gen
    gen = rng.stream(ctx.seed, "clip", task.split, task.clip_id)
    height = ctx.heights[task.character_id]
    skel = ctx.skeleton.scaled(height / float(gen_cfg["reference_height"]))
    limits = action_limits(ctx.limits, ctx.profiles.get(task.action, {}))
    cam = jitter_mount(ctx.camera, gen, ctx.jitter["trans_sigma"], ctx.jitter["rot_sigma"])

    root = np.asarray(gen_cfg["root_position"], dtype=np.float64)
    root_sigma = float(gen_cfg["root_sigma"])
    n_keys = int(gen_cfg["keyframes_per_clip"])
    keys = [sample_pose(gen, limits, skel) for _ in range(n_keys)]
    roots = [root + gen.normal(0.0, 1.0, size=3) * root_sigma for _ in range(n_keys)]
    clip = interpolate_clip(keys, int(gen_cfg["steps_between"]), roots, task.action, int(gen_cfg["fps"]))

    hm_ids = list(skel.heatmap_joints)
    image_size = ctx.camera.image_size[0]
    records = []
    for f in range(task.num_frames):
        body = forward_kinematics(clip.rotations[f], skel, clip.root_positions[f])
        pose3d = headset_to_camera(cam, body)
        uv, visible = project(cam, pose3d)
        joints2d = image_to_heatmap(uv[hm_ids], image_size, int(gen_cfg["hm_size"]))
        record = SampleRecord(
            character_id=task.character_id,
            frame_id=task.first_frame + f,
            clip_id=task.clip_id,
            action=task.action,
            has_3d=True,
            height=height,
            joints2d=joints2d,
            visible=visible[hm_ids],
            pose3d=pose3d,
            rotations=extract_rotations(pose3d, skel),
        )
        check_record(record, skel, cam, image_size, int(gen_cfg["hm_size"]))
        if gen_cfg["store_images"]:
            record.image = draw_record(record, skel, ctx.style, int(gen_cfg["hm_size"]))
        records.append(record)
    return records


def check_record(record: SampleRecord, skel: Skeleton, cam: FisheyeCamera, image_size: int, hm_size: int) -> None:
    """Cohérence FK(rotations) = pose3d (1e-6 m) et project(pose3d) = joints2d (1e-3 px)."""
    if not record.has_3d:
        return
    fk = forward_kinematics(record.rotations, skel, record.pose3d[skel.root])
    fk_err = float(np.max(np.abs(fk - record.pose3d)))
    if fk_err > 1e-6:
        raise DatasetError(f"frame {record.key}: FK(rotations) s'écarte de pose3d de {fk_err:.2e} m")
    uv, _ = project(cam, record.pose3d[list(skel.heatmap_joints)])
    px_err = float(np.max(np.abs(uv - heatmap_to_image(record.joints2d, image_size, hm_size))))
    if px_err > 1e-3:
        raise DatasetError(f"frame {record.key}: projection incohérente de {px_err:.2e} px")


def _apply_2d_only(records: list[SampleRecord], fraction: float, seed: int) -> list[SampleRecord]:
    n_mask = int(np.floor(fraction * len(records)))
    if n_mask == 0:
        return records
    chosen = set(rng.stream(seed, "two_d_only").permutation(len(records))[:n_mask].tolist())
    return [r.as_2d_only() if i in chosen else r for i, r in enumerate(records)]


def _config_digest(data: Any) -> str:
    canonical = json.dumps(data, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def generate_dataset(config: Mapping[str, Any], seed: int, out_dir: str | Path, skeleton: Skeleton) -> dict[str, Any]:
    """
    Écrit train/test/val au format EGODATA1, manifest.json et quality.json
    dans `out_dir`. (config, seed) détermine entièrement les octets produits.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gen_cfg = dict(config["generation"])
    gen_cfg["hm_size"] = int(config["heatmaps"]["size"])
    gen_cfg["reference_height"] = float(config["skeleton"]["reference_height"])
    camera = camera_from_dict(config["camera"])
    jitter_cfg = config["camera"].get("jitter", {})
    ctx = GenerationContext(
        seed=seed,
        skeleton=skeleton,
        camera=camera,
        limits=parse_limits(gen_cfg["limits"], skeleton),
        profiles={a: dict(p) for a, p in (gen_cfg.get("actions") or {}).items()},
        style=StickStyle.from_dict(gen_cfg.get("style")),
        gen=gen_cfg,
        jitter={
            "trans_sigma": float(jitter_cfg.get("trans_sigma", 0.0)),
            "rot_sigma": math.radians(float(jitter_cfg.get("rot_sigma_deg", 0.0))),
        },
    )
    unknown_actions = set(ctx.profiles) - set(ACTIONS)
    if unknown_actions:
        raise ConfigError(f"generation.actions.{sorted(unknown_actions)[0]}: action inconnue")

    plan = plan_clips(gen_cfg)
    for tasks in plan.values():
        for t in tasks:
            ctx.heights.setdefault(t.character_id, character_height(seed, t.character_id, gen_cfg["height_range"]))

    hm_names = [skeleton.joint_names[j] for j in skeleton.heatmap_joints]
    manifest: dict[str, Any] = {
        "format": "EGODATA1",
        "seed": seed,
        "config_hash": _config_digest(config),
        "generation": gen_cfg,
        "camera": camera.to_dict(),
        "jitter": jitter_cfg,
        "heatmaps": dict(config["heatmaps"]),
        "skeleton": {"path": str(config["skeleton"]["path"]), **skeleton.to_dict()},
        "style": ctx.style.to_dict(),
        "actions": list(ACTIONS),
        "splits": {},
    }
    quality: dict[str, Any] = {}
    workers = max(int(gen_cfg.get("workers", 1)), 1)
    for split in SPLITS:
        tasks = plan[split]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda t: generate_clip(t, ctx), tasks))
        records = sorted((r for chunk in chunks for r in chunk), key=lambda r: r.key)
        if split == "train":
            records = _apply_2d_only(records, float(gen_cfg["two_d_only_fraction"]), seed)
        filename = f"{split}.egodata"
        write_records(out_dir / filename, records, skeleton.num_joints)
        manifest["splits"][split] = {
            "file": filename,
            "records": len(records),
            "clips": len(tasks),
            "has_3d": sum(r.has_3d for r in records),
            "characters": sorted({t.character_id for t in tasks}),
            "heights": {str(c): ctx.heights[c] for c in sorted({t.character_id for t in tasks})},
            "frames_per_action": frames_per_action(records),
        }
        quality[split] = validate_records(records, hm_names)
        for anomaly in quality[split]["anomalies"]:
            logger.warning(f"[{split}] {anomaly}")
        logger.info(f"Split {split}: {len(records)} frames, {len(tasks)} clips -> {out_dir / filename}")

    write_json(out_dir / "manifest.json", manifest)
    write_json(out_dir / "quality.json", quality)
    return manifest
