"""
dataset.py - Enregistrements d'entraînement / évaluation et format EGODATA1.

Disposition d'un fichier de split (little-endian):
  b"EGODATA1" | u64 nombre d'enregistrements | u32 nombre d'articulations J
  puis, pour chaque enregistrement:
    en-tête fixe (RECORD_HEADER) : ids, action, has_3d, visibilité, taille, 2D
    bloc 3D (pose3d J×3 + rotations J×4, float64) si has_3d
    u32 longueur image + octets bruts H×W×3 (longueur 0 si image absente)

Le manifeste (manifest.json) et le rapport qualité (quality.json) sont écrits
à côté des fichiers de split.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import pandas as pd

from egopose import rng
from egopose.errors import DatasetError

logger = logging.getLogger("egopose.dataset")

MAGIC = b"EGODATA1"
SPLITS = ("train", "test", "val")
ACTIONS = (
    "Gaming", "Gesticulating", "Greeting", "Lower Stretching", "Patting",
    "Reacting", "Talking", "Upper Stretching", "Walking",
)
IMAGE_SHAPE = (368, 368, 3)


# ============================================================
# ENREGISTREMENT
# ============================================================
@dataclass(eq=False)
class SampleRecord:
    character_id: int
    frame_id: int
    clip_id: int
    action: str
    has_3d: bool
    height: float
    joints2d: np.ndarray              # (J-1, 2) coordonnées heatmap
    visible: np.ndarray               # (J-1,) bool
    pose3d: np.ndarray | None = None  # (J, 3) mètres, repère caméra
    rotations: np.ndarray | None = None  # (J, 4) quaternions locaux
    image: np.ndarray | None = None   # (368, 368, 3) uint8

    def __post_init__(self) -> None:
        if self.action not in ACTIONS:
            raise DatasetError(f"action inconnue: {self.action!r}")
        if not self.has_3d and (self.pose3d is not None or self.rotations is not None):
            raise DatasetError(
                f"enregistrement 2D seul ({self.character_id}, {self.frame_id}) avec une charge 3D"
            )
        if self.has_3d and (self.pose3d is None or self.rotations is None):
            raise DatasetError(f"enregistrement 3D ({self.character_id}, {self.frame_id}) sans pose3d/rotations")
        if self.pose3d is not None and not (np.all(np.isfinite(self.pose3d)) and np.all(np.abs(self.pose3d) < 10.0)):
            raise DatasetError(f"pose3d hors bornes pour ({self.character_id}, {self.frame_id})")

    @property
    def key(self) -> tuple[int, int]:
        return self.character_id, self.frame_id

    def as_2d_only(self) -> "SampleRecord":
        return replace(self, has_3d=False, pose3d=None, rotations=None)


def same_record(a: SampleRecord, b: SampleRecord) -> bool:
    """Égalité champ par champ, bit à bit pour les tableaux."""
    scalars = ("character_id", "frame_id", "clip_id", "action", "has_3d", "height")
    if any(getattr(a, f) != getattr(b, f) for f in scalars):
        return False
    for f in ("joints2d", "visible", "pose3d", "rotations", "image"):
        x, y = getattr(a, f), getattr(b, f)
        if (x is None) != (y is None):
            return False
        if x is not None and (x.shape != y.shape or x.tobytes() != y.tobytes()):
            return False
    return True


# ============================================================
# CODEC EGODATA1
# ============================================================
def record_dtypes(num_joints: int) -> tuple[np.dtype, np.dtype]:
    hm_joints = num_joints - 1
    header = np.dtype([
        ("character_id", "<i4"),
        ("frame_id", "<i4"),
        ("clip_id", "<i4"),
        ("action", "u1"),
        ("has_3d", "u1"),
        ("visible", "u1", (hm_joints,)),
        ("height", "<f8"),
        ("joints2d", "<f8", (hm_joints, 2)),
    ])
    payload = np.dtype([
        ("pose3d", "<f8", (num_joints, 3)),
        ("rotations", "<f8", (num_joints, 4)),
    ])
    return header, payload


def write_records(path: str | Path, records: Sequence[SampleRecord], num_joints: int = 16) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header_dt, payload_dt = record_dtypes(num_joints)
    with path.open("wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<QI", len(records), num_joints))
        for rec in records:
            head = np.zeros((), dtype=header_dt)
            head["character_id"] = rec.character_id
            head["frame_id"] = rec.frame_id
            head["clip_id"] = rec.clip_id
            head["action"] = ACTIONS.index(rec.action)
            head["has_3d"] = int(rec.has_3d)
            head["visible"] = np.asarray(rec.visible, dtype=np.uint8)
            head["height"] = rec.height
            head["joints2d"] = rec.joints2d
            f.write(head.tobytes())
            if rec.has_3d:
                body = np.zeros((), dtype=payload_dt)
                body["pose3d"] = rec.pose3d
                body["rotations"] = rec.rotations
                f.write(body.tobytes())
            if rec.image is None:
                f.write(struct.pack("<I", 0))
            else:
                raw = np.ascontiguousarray(rec.image, dtype=np.uint8).tobytes()
                f.write(struct.pack("<I", len(raw)))
                f.write(raw)
    return path


def read_records(path: str | Path) -> list[SampleRecord]:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"fichier de données introuvable: {path}")
    payload = path.read_bytes()
    if payload[:8] != MAGIC:
        raise DatasetError(f"{path}: en-tête {payload[:8]!r} au lieu de {MAGIC!r}")
    count, num_joints = struct.unpack_from("<QI", payload, 8)
    header_dt, payload_dt = record_dtypes(num_joints)
    offset = 8 + struct.calcsize("<QI")
    records: list[SampleRecord] = []
    try:
        for _ in range(count):
            head = np.frombuffer(payload, dtype=header_dt, count=1, offset=offset)[0]
            offset += header_dt.itemsize
            pose3d = rotations = None
            if head["has_3d"]:
                body = np.frombuffer(payload, dtype=payload_dt, count=1, offset=offset)[0]
                offset += payload_dt.itemsize
                pose3d = np.array(body["pose3d"])
                rotations = np.array(body["rotations"])
            (img_len,) = struct.unpack_from("<I", payload, offset)
            offset += 4
            image = None
            if img_len:
                image = np.frombuffer(payload, dtype=np.uint8, count=img_len, offset=offset).reshape(IMAGE_SHAPE).copy()
                offset += img_len
            records.append(SampleRecord(
                character_id=int(head["character_id"]),
                frame_id=int(head["frame_id"]),
                clip_id=int(head["clip_id"]),
                action=ACTIONS[int(head["action"])],
                has_3d=bool(head["has_3d"]),
                height=float(head["height"]),
                joints2d=np.array(head["joints2d"]),
                visible=np.array(head["visible"], dtype=bool),
                pose3d=pose3d,
                rotations=rotations,
                image=image,
            ))
    except (ValueError, struct.error, IndexError) as e:
        raise DatasetError(f"{path}: fichier tronqué ou corrompu ({e})") from e
    if offset != len(payload):
        raise DatasetError(f"{path}: {len(payload) - offset} octets inattendus en fin de fichier")
    return records


# ============================================================
# MANIFESTE & QUALITÉ
# ============================================================
def frames_per_action(records: Iterable[SampleRecord]) -> dict[str, int]:
    counts = {a: 0 for a in ACTIONS}
    for rec in records:
        counts[rec.action] += 1
    return counts


def validate_records(records: Sequence[SampleRecord], joint_names: Sequence[str]) -> dict[str, Any]:
    """Indicateurs qualité d'un split : volumes, visibilité par articulation, anomalies."""
    total = len(records)
    if total == 0:
        return {"total_records": 0, "records_per_action": {}, "visibility_rates": {},
                "has_3d_rate": None, "characters": [], "anomalies": ["split vide"]}

    df = pd.DataFrame({
        "character_id": [r.character_id for r in records],
        "frame_id": [r.frame_id for r in records],
        "action": [r.action for r in records],
        "has_3d": [r.has_3d for r in records],
    })
    visible = np.stack([r.visible for r in records])
    metrics: dict[str, Any] = {
        "total_records": total,
        "records_per_action": df["action"].value_counts().sort_index().to_dict(),
        "characters": sorted(int(c) for c in df["character_id"].unique()),
        "has_3d_rate": round(float(df["has_3d"].mean()) * 100, 2),
        "visibility_rates": {
            name: round(float(rate) * 100, 2) for name, rate in zip(joint_names, visible.mean(axis=0))
        },
        "duplicates": int(df.duplicated(subset=["character_id", "frame_id"]).sum()),
    }
    anomalies = []
    for name, rate in metrics["visibility_rates"].items():
        if rate < 50.0:
            anomalies.append(f"{name}: visible sur {rate}% des frames seulement")
    for action in ACTIONS:
        if action not in metrics["records_per_action"]:
            anomalies.append(f"aucune frame pour l'action {action}")
    if metrics["duplicates"]:
        anomalies.append(f"{metrics['duplicates']} clés (character_id, frame_id) dupliquées")
    metrics["anomalies"] = anomalies
    return metrics


def load_manifest(dataset_dir: str | Path) -> dict[str, Any]:
    path = Path(dataset_dir) / "manifest.json"
    if not path.exists():
        raise DatasetError(f"manifeste introuvable: {path}")
    with path.open("r", encoding="utf-8") as f:
        return json.load(f)


def load_split(dataset_dir: str | Path, split: str) -> list[SampleRecord]:
    if split not in SPLITS:
        raise DatasetError(f"split inconnu: {split} (attendu {SPLITS})")
    manifest = load_manifest(dataset_dir)
    info = manifest["splits"].get(split)
    if info is None:
        raise DatasetError(f"split {split} absent du manifeste de {dataset_dir}")
    records = read_records(Path(dataset_dir) / info["file"])
    if len(records) != info["records"]:
        raise DatasetError(f"{split}: {len(records)} enregistrements sur disque, {info['records']} annoncés")
    logger.info(f"Split {split}: {len(records)} enregistrements chargés depuis {dataset_dir}")
    return records


# ============================================================
# SUPERVISION MIXTE
# ============================================================
def mask_3d(records: Sequence[SampleRecord], fraction: float, seed: int) -> tuple[list[SampleRecord], list[int]]:
    """
    Convertit une fraction (arrondie à l'inférieur) des enregistrements 3D en
    enregistrements 2D seuls. Retourne (nouvelle liste, indices masqués).
    """
    if not 0.0 <= fraction <= 1.0:
        raise DatasetError(f"fraction 2D seule hors [0, 1]: {fraction}")
    candidates = [i for i, r in enumerate(records) if r.has_3d]
    n_mask = int(np.floor(fraction * len(candidates)))
    order = rng.stream(seed, "mask_3d").permutation(len(candidates))
    masked = sorted(candidates[i] for i in order[:n_mask])
    chosen = set(masked)
    out = [r.as_2d_only() if i in chosen else r for i, r in enumerate(records)]
    return out, masked
