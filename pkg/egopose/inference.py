"""
inference.py - Inférence du lifter (et du détecteur 2D) sur des heatmaps,
des images ou des enregistrements de split, par paquets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from egopose import rng
from egopose.dataset import SampleRecord
from egopose.errors import CheckpointError, DatasetError
from egopose.heatmaps import decode, render_batch
from egopose.kinematics import Skeleton, forward_kinematics
from egopose.network import NUM_HEATMAPS, Detector2D, LiftingNet, detector_forward
from egopose.synthgen import StickStyle, draw_record
from egopose.tensor import Tensor


@dataclass
class InferenceResult:
    pose: np.ndarray                  # (N, J, 3)
    confidence: np.ndarray            # (N, 15)
    visible: np.ndarray               # (N, 15)
    rot: np.ndarray | None = None     # (N, J, 4)
    fk_pose: np.ndarray | None = None  # FK(rot) depuis la racine prédite
    hm: np.ndarray | None = None


def detect_heatmaps(
    detector: Detector2D,
    images: np.ndarray,
    noise_sigma: float = 0.0,
    noise: np.random.Generator | None = None,
) -> np.ndarray:
    """Images uint8 (N,H,W,3) -> heatmaps (N,15,47,47) ; bruit blanc ajouté après normalisation."""
    x = detector.normalize_images(images)
    if noise_sigma > 0:
        if noise is None:
            raise ValueError("detect_heatmaps: générateur requis pour un bruit non nul")
        x = (x + noise.normal(0.0, noise_sigma, size=x.shape)).astype(x.dtype)
    return detector_forward(detector, x).numpy()


def infer(
    lifter: LiftingNet,
    skel: Skeleton,
    heatmaps: np.ndarray | None = None,
    images: np.ndarray | None = None,
    detector: Detector2D | None = None,
    with_hm: bool = False,
    with_rot: bool = True,
    threshold: float = 0.05,
    sigma: float = 2.0,
    chunk: int = 64,
) -> InferenceResult:
    """
    Encodeur + branches demandées seulement ; la branche heatmaps n'est
    exécutée que si with_hm. Entrée : heatmaps (N,15,S,S) ou images uint8
    (N,H,W,3) passées au détecteur.
    """
    if lifter is None:
        raise CheckpointError("inférence impossible: aucun lifter chargé")
    if heatmaps is None:
        if images is None or detector is None:
            raise ValueError("infer: heatmaps, ou images + détecteur, requis")
        heatmaps = np.concatenate([detect_heatmaps(detector, images[i:i + chunk]) for i in range(0, len(images), chunk)])
    heatmaps = np.asarray(heatmaps)
    poses, rots, hms = [], [], []
    for i in range(0, len(heatmaps), chunk):
        out = lifter.forward(Tensor(heatmaps[i:i + chunk]), with_rot=with_rot, with_hm=with_hm)
        poses.append(out.pose.numpy().astype(np.float64))
        if out.rot is not None:
            rots.append(out.rot.numpy().astype(np.float64))
        if out.hm is not None:
            hms.append(out.hm.numpy())
    decoded = [decode(h, threshold=threshold, sigma=sigma) for h in heatmaps]
    result = InferenceResult(
        pose=np.concatenate(poses) if poses else np.zeros((0, skel.num_joints, 3)),
        confidence=np.stack([d[1] for d in decoded]) if decoded else np.zeros((0, NUM_HEATMAPS)),
        visible=np.stack([d[2] for d in decoded]) if decoded else np.zeros((0, NUM_HEATMAPS), dtype=bool),
    )
    if rots:
        result.rot = np.concatenate(rots)
        result.fk_pose = forward_kinematics(result.rot, skel, result.pose[:, skel.root])
    if hms:
        result.hm = np.concatenate(hms)
    return result


def predict_records(
    lifter: LiftingNet,
    records: Sequence[SampleRecord],
    skel: Skeleton,
    source: str = "heatmaps",
    detector: Detector2D | None = None,
    style: StickStyle | None = None,
    sigma: float = 2.0,
    hm_size: int = 47,
    threshold: float = 0.05,
    with_hm: bool = False,
    noise_sigma: float = 0.0,
    noise_seed: int = 0,
    chunk: int = 64,
) -> InferenceResult:
    """
    Inférence sur des enregistrements, par paquets de `chunk` :
    - source "heatmaps" : heatmaps vérité terrain rendues depuis les joints 2D ;
    - source "images" : images (stockées ou redessinées) -> détecteur -> lifter.
    Le bruit (source "images" seulement) suit rng.stream(noise_seed, "image_noise", σ, paquet).
    """
    if source not in ("heatmaps", "images"):
        raise ValueError(f"source d'inférence inconnue: {source}")
    if source == "images" and (detector is None or style is None):
        raise CheckpointError("source 'images': détecteur entraîné et style de rendu requis")
    parts: list[InferenceResult] = []
    for k, i in enumerate(range(0, len(records), chunk)):
        batch = records[i:i + chunk]
        if source == "heatmaps":
            hm = render_batch(np.stack([r.joints2d for r in batch]), np.stack([r.visible for r in batch]), sigma, hm_size)
        else:
            images = np.stack([draw_record(r, skel, style, hm_size) for r in batch])
            noise = rng.stream(noise_seed, "image_noise", f"{noise_sigma:.6g}", k) if noise_sigma > 0 else None
            hm = detect_heatmaps(detector, images, noise_sigma, noise)
        parts.append(infer(lifter, skel, heatmaps=hm, with_hm=with_hm, threshold=threshold, sigma=sigma, chunk=chunk))
    if not parts:
        raise DatasetError("predict_records: aucun enregistrement")
    return InferenceResult(
        pose=np.concatenate([p.pose for p in parts]),
        confidence=np.concatenate([p.confidence for p in parts]),
        visible=np.concatenate([p.visible for p in parts]),
        rot=np.concatenate([p.rot for p in parts]) if parts[0].rot is not None else None,
        fk_pose=np.concatenate([p.fk_pose for p in parts]) if parts[0].fk_pose is not None else None,
        hm=np.concatenate([p.hm for p in parts]) if parts[0].hm is not None else None,
    )
