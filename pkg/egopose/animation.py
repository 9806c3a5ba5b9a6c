"""
animation.py - Export des rotations locales pour l'animation de personnage.

Deux formats :
  - fichier de mouvement JSON (quaternions (w, x, y, z) + positions racine) ;
  - BVH : hiérarchie avec les offsets du squelette, angles d'Euler ZXY en
    degrés (canaux Zrotation Xrotation Yrotation), position sur la racine.
Les deux se relisent (read_motion / read_bvh) pour vérifier l'aller-retour.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from egopose.dataset import SampleRecord
from egopose.errors import DatasetError
from egopose.kinematics import Skeleton, quat_canonical, quat_normalize, skeleton_from_dict
from egopose.reports import write_json
from egopose.synthgen import MotionClip

logger = logging.getLogger("egopose.animation")

MOTION_FORMAT = "egopose-motion/1"
EULER_ORDER = "ZXY"
ROT_CHANNELS = ("Zrotation", "Xrotation", "Yrotation")
POS_CHANNELS = ("Xposition", "Yposition", "Zposition")


def clip_from_records(records: list[SampleRecord], skel: Skeleton, rotations: np.ndarray | None = None,
                      root_positions: np.ndarray | None = None, fps: int = 30) -> MotionClip:
    """Clip à partir d'enregistrements consécutifs (vérité terrain par défaut)."""
    if not records:
        raise DatasetError("clip vide")
    if rotations is None:
        if not all(r.has_3d for r in records):
            raise DatasetError("rotations vérité terrain absentes (enregistrements 2D seuls)")
        rotations = np.stack([r.rotations for r in records])
        root_positions = np.stack([r.pose3d[skel.root] for r in records]) if root_positions is None else root_positions
    if root_positions is None:
        raise DatasetError("positions racine requises avec des rotations prédites")
    rotations = quat_canonical(quat_normalize(np.asarray(rotations, dtype=np.float64)))
    return MotionClip(rotations, np.asarray(root_positions, dtype=np.float64), records[0].action, fps)


# ============================================================
# FICHIER DE MOUVEMENT (JSON)
# ============================================================
def write_motion(path: str | Path, clip: MotionClip, skel: Skeleton, source: str = "predicted") -> Path:
    payload = {
        "format": MOTION_FORMAT,
        "source": source,
        "action": clip.action,
        "fps": clip.fps,
        "num_frames": len(clip),
        "skeleton": skel.to_dict(),
        "root_positions": clip.root_positions,
        "rotations": clip.rotations,
    }
    path = write_json(path, payload)
    logger.info(f"  → {path} ({len(clip)} frames)")
    return path


def read_motion(path: str | Path) -> tuple[MotionClip, Skeleton]:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"fichier de mouvement introuvable: {path}")
    with path.open("r", encoding="utf-8") as f:
        data = json.load(f)
    if data.get("format") != MOTION_FORMAT:
        raise DatasetError(f"{path}: format {data.get('format')!r} au lieu de {MOTION_FORMAT!r}")
    skel = skeleton_from_dict(data["skeleton"])
    clip = MotionClip(
        np.asarray(data["rotations"], dtype=np.float64),
        np.asarray(data["root_positions"], dtype=np.float64),
        data["action"],
        int(data["fps"]),
    )
    return clip, skel


# ============================================================
# BVH
# ============================================================
def _bvh_name(name: str) -> str:
    return name.replace(" ", "_")


def _fmt(values) -> str:
    return " ".join(f"{float(v):.9f}" for v in values)


def write_bvh(path: str | Path, clip: MotionClip, skel: Skeleton) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["HIERARCHY"]
    order: list[int] = []

    def write_joint(j: int, depth: int) -> None:
        pad = "\t" * depth
        kind = "ROOT" if skel.parent[j] < 0 else "JOINT"
        channels = (*POS_CHANNELS, *ROT_CHANNELS) if kind == "ROOT" else ROT_CHANNELS
        lines.append(f"{pad}{kind} {_bvh_name(skel.joint_names[j])}")
        lines.append(f"{pad}{{")
        lines.append(f"{pad}\tOFFSET {_fmt(skel.rest_offset[j])}")
        lines.append(f"{pad}\tCHANNELS {len(channels)} {' '.join(channels)}")
        order.append(j)
        kids = skel.children(j)
        for c in kids:
            write_joint(c, depth + 1)
        if not kids:
            lines.append(f"{pad}\tEnd Site")
            lines.append(f"{pad}\t{{")
            lines.append(f"{pad}\t\tOFFSET {_fmt((0.0, 0.0, 0.0))}")
            lines.append(f"{pad}\t}}")
        lines.append(f"{pad}}}")

    write_joint(skel.root, 0)
    # (w, x, y, z) -> (x, y, z, w) pour scipy
    quats = clip.rotations[:, order][..., [1, 2, 3, 0]].reshape(-1, 4)
    euler = Rotation.from_quat(quats).as_euler(EULER_ORDER, degrees=True).reshape(len(clip), len(order), 3)
    lines.append("MOTION")
    lines.append(f"Frames: {len(clip)}")
    lines.append(f"Frame Time: {1.0 / clip.fps:.9f}")
    for f in range(len(clip)):
        lines.append(_fmt(np.concatenate([clip.root_positions[f], euler[f].reshape(-1)])))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"  → {path} ({len(clip)} frames, {len(order)} articulations)")
    return path


def read_bvh(path: str | Path, action: str = "Gaming") -> tuple[MotionClip, Skeleton]:
    """Relit un BVH écrit par write_bvh (hiérarchie + Euler ZXY en degrés)."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"fichier BVH introuvable: {path}")
    tokens = path.read_text(encoding="utf-8").split()
    names: list[str] = []
    parents: list[int] = []
    offsets: list[list[float]] = []
    stack: list[int] = []
    i = 0
    try:
        if tokens[i] != "HIERARCHY":
            raise DatasetError(f"{path}: en-tête HIERARCHY absent")
        i += 1
        end_site = False
        while tokens[i] != "MOTION":
            tok = tokens[i]
            if tok in ("ROOT", "JOINT"):
                names.append(tokens[i + 1].replace("_", " "))
                parents.append(stack[-1] if stack else -1)
                i += 2
            elif tok == "End":
                end_site = True
                i += 2
            elif tok == "{":
                if not end_site:
                    stack.append(len(names) - 1)
                i += 1
            elif tok == "}":
                if end_site:
                    end_site = False
                else:
                    stack.pop()
                i += 1
            elif tok == "OFFSET":
                if not end_site:
                    offsets.append([float(x) for x in tokens[i + 1:i + 4]])
                i += 4
            elif tok == "CHANNELS":
                i += 2 + int(tokens[i + 1])
            else:
                raise DatasetError(f"{path}: jeton inattendu {tok!r}")
        n_frames = int(tokens[i + 2])
        frame_time = float(tokens[i + 5])
        values = np.array(tokens[i + 6:], dtype=np.float64)
    except (IndexError, ValueError) as e:
        raise DatasetError(f"{path}: BVH illisible ({e})") from e

    j = len(names)
    width = 3 + 3 * j
    if values.size != n_frames * width:
        raise DatasetError(f"{path}: {values.size} valeurs pour {n_frames} frames × {width} canaux")
    values = values.reshape(n_frames, width)
    euler = values[:, 3:].reshape(-1, 3)
    quats = Rotation.from_euler(EULER_ORDER, euler, degrees=True).as_quat()[:, [3, 0, 1, 2]]
    skel = Skeleton(tuple(names), tuple(parents), np.array(offsets))
    clip = MotionClip(
        quat_canonical(quats.reshape(n_frames, j, 4)),
        values[:, :3].copy(),
        action,
        int(round(1.0 / frame_time)),
    )
    return clip, skel
