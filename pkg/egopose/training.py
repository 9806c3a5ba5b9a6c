"""
training.py - Pas d'entraînement (détecteur, lifter, bout-en-bout), boucle
d'époques avec journal CSV et checkpoint de meilleure validation.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd

from egopose.checkpoint import read_checkpoint, save_checkpoint
from egopose.dataset import SampleRecord
from egopose.errors import CheckpointError, DatasetError, NumericError
from egopose.heatmaps import HM_SIZE, resample
from egopose.kinematics import Skeleton
from egopose.loader import Batch, BatchLoader, assemble_batch
from egopose.network import (
    BranchConfig,
    Detector2D,
    DetectorConfig,
    LifterConfig,
    LiftingNet,
    LossTargets,
    LossWeights,
    detector_forward,
    loss_2d,
    loss_ae,
)
from egopose.params import ParamStore, optimizer_step
from egopose.reports import write_table
from egopose.synthgen import StickStyle, draw_record
from egopose.tensor import Tape, Tensor, backward

logger = logging.getLogger("egopose.training")

STAGES = ("detector", "lifter", "end2end")


# ============================================================
# ENTRAÎNEUR
# ============================================================
@dataclass
class Trainer:
    stage: str
    skel: Skeleton
    weights: LossWeights = field(default_factory=LossWeights)
    lifter: LiftingNet | None = None
    detector: Detector2D | None = None
    lr: float = 1e-3
    optimizer: str = "adam"
    rotation_target: str = "predicted"
    cosine_eps: float = 1e-8
    sigma: float = 2.0
    style: StickStyle | None = None

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ValueError(f"étape inconnue: {self.stage} (attendu {STAGES})")
        if self.stage in ("lifter", "end2end") and self.lifter is None:
            raise ValueError(f"l'étape {self.stage} requiert un lifter")
        if self.stage in ("detector", "end2end") and self.detector is None:
            raise ValueError(f"l'étape {self.stage} requiert un détecteur")

    def trainable(self) -> dict[str, ParamStore]:
        stores = {}
        if self.stage in ("detector", "end2end"):
            stores[Detector2D.PREFIX] = self.detector.params
        if self.stage in ("lifter", "end2end"):
            stores[LiftingNet.PREFIX] = self.lifter.params
        return stores

    def stores(self) -> dict[str, ParamStore]:
        stores = {}
        if self.detector is not None:
            stores[Detector2D.PREFIX] = self.detector.params
        if self.lifter is not None:
            stores[LiftingNet.PREFIX] = self.lifter.params
        return stores

    @property
    def needs_images(self) -> bool:
        return self.stage in ("detector", "end2end")


def _targets(trainer: Trainer, batch: Batch) -> LossTargets:
    hm_size = trainer.lifter.cfg.hm_size
    return LossTargets(pose=batch.pose, rot=batch.rot, hm=resample(batch.heatmaps, hm_size), has_3d=batch.has_3d)


def batch_loss(trainer: Trainer, batch: Batch, training: bool) -> Tensor:
    if trainer.stage == "lifter":
        out = trainer.lifter.forward(Tensor(batch.heatmaps))
        return loss_ae(out, _targets(trainer, batch), trainer.weights, trainer.skel,
                       trainer.rotation_target, trainer.cosine_eps)
    if batch.images is None:
        raise DatasetError(f"l'étape {trainer.stage} requiert des images dans le batch")
    images = trainer.detector.normalize_images(batch.images)
    pred = detector_forward(trainer.detector, images, training=training)
    l2d = loss_2d(pred, batch.heatmaps)
    if trainer.stage == "detector":
        return l2d
    out = trainer.lifter.forward(pred)
    lae = loss_ae(out, _targets(trainer, batch), trainer.weights, trainer.skel,
                  trainer.rotation_target, trainer.cosine_eps)
    return l2d + lae


def train_step(trainer: Trainer, batch: Batch | Sequence[SampleRecord]) -> float:
    """Un pas forward/backward/optimiseur ; renvoie la perte du batch avant le pas."""
    if len(batch) == 0:
        raise DatasetError("train_step: batch vide")
    if not isinstance(batch, Batch):
        style = trainer.style if trainer.needs_images else None
        if trainer.needs_images and style is None:
            raise DatasetError(f"l'étape {trainer.stage} requiert un style de rendu des images")
        batch = assemble_batch(batch, trainer.skel, trainer.sigma, HM_SIZE, style)
    stores = trainer.trainable()
    for store in stores.values():
        store.zero_grad()
    with Tape() as tape:
        try:
            loss = batch_loss(trainer, batch, training=True)
        except NumericError as e:
            keys = [r.key for r in batch.records[:4]]
            raise NumericError(
                f"perte non finie à l'étape {trainer.stage} (pas {_steps(trainer)}, premiers enregistrements {keys}): {e}"
            ) from e
    value = loss.item()
    if not math.isfinite(value):
        raise NumericError(f"perte non finie ({value}) à l'étape {trainer.stage}")
    backward(tape, loss, params={f"{p}/{n}": t for p, s in stores.items() for n, t in s.items()})
    for store in stores.values():
        optimizer_step(store, trainer.lr, kind=trainer.optimizer)
    return value


def _steps(trainer: Trainer) -> int:
    return max((s.steps for s in trainer.trainable().values()), default=0)


def evaluate_loss(trainer: Trainer, loader: BatchLoader, epoch: int = 0) -> float:
    """Perte moyenne (pondérée par la taille des batches) en mode évaluation."""
    total, count = 0.0, 0
    for batch in loader.iterate(epoch):
        total += batch_loss(trainer, batch, training=False).item() * len(batch)
        count += len(batch)
    return total / count if count else float("nan")


# ============================================================
# CHECKPOINTS
# ============================================================
def save_models(path: str | Path, trainer: Trainer, metadata: Mapping[str, Any]) -> Path:
    meta = dict(metadata)
    meta["stage"] = trainer.stage
    if trainer.lifter is not None:
        meta["lifter"] = trainer.lifter.cfg.to_dict()
    if trainer.detector is not None:
        meta["detector"] = trainer.detector.cfg.to_dict()
        meta["image_mean"] = [float(x) for x in trainer.detector.image_mean]
        meta["image_std"] = [float(x) for x in trainer.detector.image_std]
    return save_checkpoint(path, trainer.stores(), meta)


def lifter_config_from_dict(data: Mapping[str, Any]) -> LifterConfig:
    d = dict(data)
    for key in ("encoder_channels", "pose_hidden", "rot_hidden", "hm_hidden", "hm_channels"):
        d[key] = tuple(d[key])
    d["branches"] = BranchConfig(**d["branches"])
    return LifterConfig(**d)


def detector_config_from_dict(data: Mapping[str, Any]) -> DetectorConfig:
    d = dict(data)
    d["channels"] = tuple(d["channels"])
    return DetectorConfig(**d)


@dataclass
class LoadedModels:
    lifter: LiftingNet | None
    detector: Detector2D | None
    metadata: dict[str, Any]


def load_models(path: str | Path, with_optimizer: bool = True) -> LoadedModels:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint introuvable: {path}")
    ckpt = read_checkpoint(path)
    meta = ckpt.metadata
    seed = int(meta.get("seed", 0))
    lifter = detector = None
    if "lifter" in meta:
        lifter = LiftingNet(lifter_config_from_dict(meta["lifter"]), seed=seed)
        ckpt.load_into(LiftingNet.PREFIX, lifter.params, with_optimizer)
    if "detector" in meta:
        detector = Detector2D(detector_config_from_dict(meta["detector"]), seed=seed)
        ckpt.load_into(Detector2D.PREFIX, detector.params, with_optimizer)
        detector.set_normalization(meta["image_mean"], meta["image_std"])
    logger.info(f"Checkpoint chargé: {path} (étape {meta.get('stage')}, époque {meta.get('epoch')})")
    return LoadedModels(lifter, detector, meta)


def image_statistics(records: Sequence[SampleRecord], skel: Skeleton, style: StickStyle, hm_size: int, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Moyenne / écart-type par canal sur les `count` premiers enregistrements."""
    sample = records[: max(count, 1)]
    if not sample:
        return np.zeros(3), np.ones(3)
    pixels = np.stack([draw_record(r, skel, style, hm_size) for r in sample]).reshape(-1, 3).astype(np.float64)
    return pixels.mean(axis=0), pixels.std(axis=0)


# ============================================================
# BOUCLE D'ENTRAÎNEMENT
# ============================================================
@dataclass
class FitResult:
    history: pd.DataFrame
    best_path: Path
    best_val: float
    last_path: Path


def fit(
    trainer: Trainer,
    train_loader: BatchLoader,
    val_loader: BatchLoader,
    epochs: int,
    out_dir: str | Path,
    metadata: Mapping[str, Any],
    start_epoch: int = 0,
) -> FitResult:
    """
    Époque 0 = évaluation initiale (checkpoint de l'initialisation) ; chaque
    époque suivante journalise train/val dans losses.csv et remplace
    best.ckpt si la perte de validation s'améliore.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path, last_path = out_dir / "best.ckpt", out_dir / "last.ckpt"

    val = evaluate_loss(trainer, val_loader)
    rows = [{"epoch": start_epoch, "train_loss": float("nan"), "val_loss": val}]
    best_val = val
    logger.info(f"Époque {start_epoch}: val_loss initiale = {val:.6f}")
    save_models(best_path, trainer, {**metadata, "epoch": start_epoch, "val_loss": val})

    for epoch in range(start_epoch + 1, start_epoch + epochs + 1):
        t0 = time.time()
        losses = [train_step(trainer, batch) for batch in train_loader.iterate(epoch)]
        train_loss = float(np.mean(losses)) if losses else float("nan")
        val = evaluate_loss(trainer, val_loader)
        rows.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val})
        logger.info(f"Époque {epoch}: train_loss={train_loss:.6f} val_loss={val:.6f} ({time.time() - t0:.1f}s)")
        if val < best_val:
            best_val = val
            save_models(best_path, trainer, {**metadata, "epoch": epoch, "val_loss": val})

    save_models(last_path, trainer, {**metadata, "epoch": start_epoch + epochs, "val_loss": rows[-1]["val_loss"]})
    history = pd.DataFrame(rows, columns=["epoch", "train_loss", "val_loss"])
    write_table(out_dir / "losses.csv", history, float_format="%.8f")
    return FitResult(history, best_path, best_val, last_path)
