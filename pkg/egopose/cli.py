"""
cli.py - Point d'entrée unique : generate | train | eval | ablate | animate | noise-sweep.

Exemples :
  python -m egopose generate --out runs/toy --seed 7
  python -m egopose train --out runs/toy --set training.epochs=5
  python -m egopose eval --out runs/toy --set eval.root_relative=true

Codes de sortie : 0 succès, 1 erreur d'exécution / E-S, 2 erreur de configuration.
Variables d'environnement (lues après .env) :
  EGOPOSE_CONFIG, EGOPOSE_OUT, EGOPOSE_SEED, EGOPOSE_LOG_LEVEL
"""

from __future__ import annotations

import argparse
import copy
import logging
import os
import shutil
import sys
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from egopose.animation import clip_from_records, write_bvh, write_motion
from egopose.config import (
    PROJECT_DIR,
    checkpoint_path,
    config_hash,
    dataset_dir,
    out_dir,
    project_path,
    resolve_config,
    write_resolved,
)
from egopose.dataset import SampleRecord, load_manifest, load_split, mask_3d
from egopose.errors import ConfigError, DatasetError, EgoPoseError, EvaluationError
from egopose.evalkit import (
    evaluate_poses,
    ground_truth,
    mean_pose_baseline,
    mpjpe,
    noise_sweep,
    pa_mpjpe,
    rotation_trace,
    write_report,
)
from egopose.inference import predict_records
from egopose.kinematics import Skeleton, load_skeleton
from egopose.loader import BatchLoader
from egopose.network import BranchConfig, Detector2D, DetectorConfig, LifterConfig, LiftingNet, LossWeights
from egopose.reports import write_json, write_table
from egopose.synthgen import StickStyle, generate_dataset
from egopose.training import FitResult, Trainer, fit, image_statistics, load_models

logger = logging.getLogger("egopose.cli")

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s - %(message)s"


def banner(title: str) -> None:
    logger.info("=" * 80)
    logger.info(title)
    logger.info("=" * 80)


# ============================================================
# CONTEXTE COMMUN
# ============================================================
def skeleton_for(config: Mapping[str, Any]) -> Skeleton:
    return load_skeleton(project_path(config["skeleton"]["path"]))


def style_for(manifest: Mapping[str, Any]) -> StickStyle:
    return StickStyle.from_dict(manifest.get("style"))


def build_lifter(config: Mapping[str, Any], seed: int) -> LiftingNet:
    return LiftingNet(LifterConfig.from_config(config["network"], in_size=int(config["heatmaps"]["size"])), seed=seed)


def build_detector(config: Mapping[str, Any], seed: int) -> Detector2D:
    cfg = DetectorConfig.from_config(config["network"], image_size=int(config["camera"]["image_size"][0]))
    return Detector2D(cfg, seed=seed)


def training_records(config: Mapping[str, Any], records: list[SampleRecord]) -> list[SampleRecord]:
    """Supervision mixte : une fraction passe en 2D seul, ou est retirée si drop_masked."""
    t = config["training"]
    fraction = float(t["two_d_only_fraction"])
    if fraction <= 0:
        return records
    masked_records, masked = mask_3d(records, fraction, int(config["seed"]))
    if t["drop_masked"]:
        dropped = set(masked)
        kept = [r for i, r in enumerate(records) if i not in dropped]
        logger.info(f"  → {len(dropped)} enregistrements retirés, {len(kept)} conservés (3D seul)")
        return kept
    logger.info(f"  → {len(masked)} enregistrements passés en 2D seul sur {len(records)}")
    return masked_records


def train_models(
    config: Mapping[str, Any],
    train: list[SampleRecord],
    val: list[SampleRecord],
    skel: Skeleton,
    style: StickStyle,
    target: Path,
) -> FitResult:
    t = config["training"]
    seed = int(config["seed"])
    stage = t["stage"]
    hm_size = int(config["heatmaps"]["size"])
    lifter = detector = None
    start_epoch = 0

    if t.get("resume"):
        loaded = load_models(project_path(t["resume"]))
        lifter, detector = loaded.lifter, loaded.detector
        start_epoch = int(loaded.metadata.get("epoch", 0))
        logger.info(f"Reprise depuis {t['resume']} (époque {start_epoch})")
    else:
        if stage in ("detector", "end2end"):
            if t.get("detector_checkpoint"):
                loaded = load_models(project_path(t["detector_checkpoint"]), with_optimizer=False)
                detector, lifter = loaded.detector, loaded.lifter
            if detector is None:
                detector = build_detector(config, seed)
                mean, std = image_statistics(train, skel, style, hm_size, int(t["norm_samples"]))
                detector.set_normalization(mean, std)
        if stage in ("lifter", "end2end") and lifter is None:
            if t.get("lifter_checkpoint"):
                lifter = load_models(project_path(t["lifter_checkpoint"]), with_optimizer=False).lifter
            if lifter is None:
                lifter = build_lifter(config, seed)

    trainer = Trainer(
        stage=stage,
        skel=skel,
        weights=LossWeights.from_dict(config["loss"]["weights"]),
        lifter=lifter,
        detector=detector,
        lr=float(t["lr"]),
        optimizer=t["optimizer"],
        rotation_target=config["loss"]["rotation_target"],
        cosine_eps=float(config["loss"]["cosine_eps"]),
        sigma=float(config["heatmaps"]["sigma"]),
        style=style,
    )
    loader_style = style if trainer.needs_images else None
    max_batches = t.get("max_batches")
    common = dict(
        skel=skel, batch_size=int(t["batch_size"]), sigma=trainer.sigma, hm_size=hm_size,
        style=loader_style, seed=seed, workers=int(t["workers"]), prefetch=int(t["prefetch"]),
        max_batches=int(max_batches) if max_batches else None,
    )
    train_loader = BatchLoader(train, shuffle=True, min_batch=2 if detector is not None and stage != "lifter" else 1, **common)
    val_loader = BatchLoader(val, shuffle=False, **common)
    if len(train_loader) == 0:
        raise DatasetError("aucun batch d'entraînement (split train vide ou trop petit)")

    logger.info(f"Étape {stage} | lr={trainer.lr} | batch={t['batch_size']} | époques={t['epochs']} | "
                f"{len(train)} train / {len(val)} val")
    metadata = {"config_hash": config_hash(config), "seed": seed}
    return fit(trainer, train_loader, val_loader, int(t["epochs"]), target, metadata, start_epoch)


# ============================================================
# COMMANDES
# ============================================================
def cmd_generate(config: Mapping[str, Any]) -> int:
    target = dataset_dir(config)
    banner(f"GENERATE - jeu de données synthétique -> {target}")
    logger.info(f"Seed: {config['seed']} | config: {config_hash(config)[:12]}")
    partial = target.with_name(target.name + ".partial")
    shutil.rmtree(partial, ignore_errors=True)
    try:
        generate_dataset(config, int(config["seed"]), partial, skeleton_for(config))
        write_resolved(config, partial)
    except BaseException:
        shutil.rmtree(partial, ignore_errors=True)
        raise
    if target.exists():
        shutil.rmtree(target)
    partial.rename(target)
    logger.info(f"OK : {target}")
    return 0


def cmd_train(config: Mapping[str, Any]) -> int:
    ds = dataset_dir(config)
    target = out_dir(config) / "train"
    banner(f"TRAIN - étape {config['training']['stage']}")
    manifest = load_manifest(ds)
    skel = skeleton_for(config)
    train = training_records(config, load_split(ds, "train"))
    val = load_split(ds, "val")
    write_resolved(config, target)
    result = train_models(config, train, val, skel, style_for(manifest), target)
    logger.info(f"OK : meilleur checkpoint {result.best_path} (val_loss={result.best_val:.6f})")
    return 0


def _pipeline(config: Mapping[str, Any]):
    models = load_models(checkpoint_path(config))
    return models, models.metadata.get("config_hash")


def cmd_eval(config: Mapping[str, Any]) -> int:
    e = config["eval"]
    ds = dataset_dir(config)
    target = out_dir(config) / "eval"
    banner(f"EVAL - split {e['split']} ({'oracle' if e['oracle'] else e['input']})")
    manifest = load_manifest(ds)
    skel = skeleton_for(config)
    records = load_split(ds, e["split"])
    echo: dict[str, Any] = {
        "split": e["split"], "input": e["input"], "root_relative": e["root_relative"],
        "oracle": e["oracle"], "run_config_hash": config_hash(config),
    }
    fk_pose = None
    extra: dict[str, float] = {}
    if e["oracle"]:
        pred = ground_truth(records)
        echo.update({"checkpoint": None, "checkpoint_config_hash": None})
    else:
        models, ckpt_hash = _pipeline(config)
        echo.update({"checkpoint": str(checkpoint_path(config)), "checkpoint_config_hash": ckpt_hash})
        result = predict_records(
            models.lifter, records, skel, source=e["input"], detector=models.detector,
            style=style_for(manifest), sigma=float(config["heatmaps"]["sigma"]),
            hm_size=int(config["heatmaps"]["size"]), threshold=float(config["heatmaps"]["threshold"]),
            with_hm=bool(e["with_hm"]),
        )
        pred, fk_pose = result.pose, result.fk_pose
        extra["mean_confidence"] = float(result.confidence.mean())
        extra["visible_rate"] = float(result.visible.mean())
    baseline = None
    try:
        baseline = mean_pose_baseline(load_split(ds, "train"))
    except (DatasetError, EvaluationError) as exc:
        logger.warning(f"pose moyenne indisponible: {exc}")
    report = evaluate_poses(records, pred, skel, bool(e["root_relative"]), echo, fk_pose, baseline)
    report.diagnostics.update(extra)
    write_resolved(config, target)
    write_report(report, target)
    logger.info(f"OK : {target}")
    return 0


def cmd_noise_sweep(config: Mapping[str, Any]) -> int:
    e = config["eval"]
    ds = dataset_dir(config)
    target = out_dir(config) / "noise_sweep"
    banner(f"NOISE SWEEP - σ {list(e['noise_sigmas'])} × graines {list(e['noise_seeds'])}")
    manifest = load_manifest(ds)
    skel = skeleton_for(config)
    records = load_split(ds, e["split"])
    models, _ = _pipeline(config)
    table = noise_sweep(
        models.lifter, models.detector, records, skel, style_for(manifest),
        e["noise_sigmas"], [int(s) for s in e["noise_seeds"]],
        sigma_hm=float(config["heatmaps"]["sigma"]), root_relative=bool(e["root_relative"]),
    )
    write_resolved(config, target)
    write_table(target / "noise_sweep.csv", table)
    logger.info(f"OK : {target / 'noise_sweep.csv'}")
    return 0


def ablation_variants(config: Mapping[str, Any]) -> list[tuple[str, dict[str, Any]]]:
    """(étiquette, surcharges de configuration) pour le mode d'ablation demandé."""
    a = config["ablate"]
    mode = a["mode"]
    if mode == "branches":
        return [
            (name, {"network": {"branches": {"pose": True, "rot": b.rot, "hm": b.hm}}})
            for name, b in ((m, BranchConfig.from_mode(m)) for m in BranchConfig.MODES)
        ]
    if mode == "z_size":
        return [(f"z={int(z)}", {"network": {"z_size": int(z)}}) for z in a["z_grid"]]
    if mode == "hm_size":
        return [(f"hm={int(s)}", {"network": {"hm_size": int(s), "branches": {"hm": True}}}) for s in a["hm_grid"]]
    fraction = float(a["mask_fraction"])
    pct = int(round(100 * (1 - fraction)))
    return [
        ("3d=100%", {"training": {"two_d_only_fraction": 0.0, "drop_masked": False}}),
        (f"3d={pct}%+2d", {"training": {"two_d_only_fraction": fraction, "drop_masked": False}}),
        (f"3d={pct}%", {"training": {"two_d_only_fraction": fraction, "drop_masked": True}}),
    ]


def _deep_update(base: dict[str, Any], patch: Mapping[str, Any]) -> dict[str, Any]:
    for key, value in patch.items():
        if isinstance(value, Mapping):
            base[key] = _deep_update(base.get(key, {}), value)
        else:
            base[key] = value
    return base


def cmd_ablate(config: Mapping[str, Any]) -> int:
    a = config["ablate"]
    ds = dataset_dir(config)
    target = out_dir(config) / "ablate"
    banner(f"ABLATE - mode {a['mode']} | graines {list(a['seeds'])}")
    manifest = load_manifest(ds)
    skel = skeleton_for(config)
    style = style_for(manifest)
    train_all = load_split(ds, "train")
    val = load_split(ds, "val")
    test = load_split(ds, config["eval"]["split"])
    gt = ground_truth(test)
    write_resolved(config, target)

    rows = []
    for tag, patch in ablation_variants(config):
        row: dict[str, Any] = {"mode": a["mode"], "variant": tag}
        errors, pa_errors = [], []
        for seed in a["seeds"]:
            variant = _deep_update(copy.deepcopy(dict(config)), patch)
            variant["seed"] = int(seed)
            variant["training"]["stage"] = "lifter"
            variant["training"]["resume"] = None
            logger.info(f"--- {tag} | graine {seed}")
            run_dir = target / tag.replace("%", "pct").replace("+", "_").replace("=", "_") / f"seed_{seed}"
            result = train_models(variant, training_records(variant, train_all), val, skel, style, run_dir)
            models = load_models(result.best_path)
            pred = predict_records(
                models.lifter, test, skel, sigma=float(config["heatmaps"]["sigma"]),
                hm_size=int(config["heatmaps"]["size"]),
            ).pose
            err = mpjpe(gt, pred, bool(config["eval"]["root_relative"]), skel.root)
            row[f"seed_{seed}"] = err
            errors.append(err)
            pa_errors.append(pa_mpjpe(gt, pred))
        row["mean_mpjpe_mm"] = float(np.mean(errors))
        row["std_mpjpe_mm"] = float(np.std(errors))
        row["mean_pa_mpjpe_mm"] = float(np.mean(pa_errors))
        rows.append(row)
        logger.info(f"  {tag}: {row['mean_mpjpe_mm']:.2f} ± {row['std_mpjpe_mm']:.2f} mm")

    path = write_table(target / f"ablation_{a['mode']}.csv", pd.DataFrame(rows))
    logger.info(f"OK : {path}")
    return 0


def cmd_animate(config: Mapping[str, Any]) -> int:
    a = config["animate"]
    ds = dataset_dir(config)
    target = out_dir(config) / "animate"
    banner(f"ANIMATE - split {a['split']}, clip {a['clip']} ({a['source']})")
    manifest = load_manifest(ds)
    base = skeleton_for(config)
    records = sorted((r for r in load_split(ds, a["split"]) if r.clip_id == int(a["clip"])), key=lambda r: r.frame_id)
    if not records:
        raise DatasetError(f"clip {a['clip']} absent du split {a['split']}")
    skel = base.scaled(records[0].height / float(config["skeleton"]["reference_height"]))
    fps = int(manifest["generation"]["fps"])
    gt_clip = clip_from_records(records, skel, fps=fps)

    if a["source"] == "ground_truth":
        clip = gt_clip
    else:
        models, _ = _pipeline(config)
        result = predict_records(
            models.lifter, records, base, sigma=float(config["heatmaps"]["sigma"]),
            hm_size=int(config["heatmaps"]["size"]),
        )
        if result.rot is None:
            raise EgoPoseError("le lifter chargé n'a pas de branche rotations")
        clip = clip_from_records(records, skel, rotations=result.rot, root_positions=result.pose[:, base.root], fps=fps)

    write_resolved(config, target)
    write_motion(target / "motion.json", clip, skel, source=a["source"])
    write_bvh(target / "motion.bvh", clip, skel)
    stats = {}
    for name in config["eval"]["trace_joints"]:
        table, stats[name] = rotation_trace(gt_clip.rotations, clip.rotations, skel.index(name))
        write_table(target / f"trace_{name.replace(' ', '_')}.csv", table)
    write_json(target / "traces.json", stats)
    logger.info(f"OK : {target} ({len(clip)} frames)")
    return 0


COMMANDS: dict[str, Callable[[Mapping[str, Any]], int]] = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "animate": cmd_animate,
    "noise-sweep": cmd_noise_sweep,
}


# ============================================================
# MAIN
# ============================================================
def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", dest="config_path", default=os.getenv("EGOPOSE_CONFIG"))
    common.add_argument("--seed", dest="seed", type=int, default=None)
    common.add_argument("--out", dest="out", default=None)
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="CLE=VALEUR")
    common.add_argument("--log-level", dest="log_level", default=os.getenv("EGOPOSE_LOG_LEVEL", "INFO"))

    parser = argparse.ArgumentParser(prog="egopose", description="Pipeline de pose 3D égocentrique (échelle bureau).")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser.parse_args(argv)


def setup_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.INFO), format=LOG_FORMAT)


def main(argv: Sequence[str] | None = None) -> int:
    load_dotenv(PROJECT_DIR / ".env")
    args = parse_args(argv)
    setup_logging(args.log_level)
    try:
        config = resolve_config(args.config_path, args.seed, args.out, args.overrides)
        return COMMANDS[args.command](config)
    except ConfigError as e:
        logger.error(f"Configuration invalide: {e}")
        return 2
    except (EgoPoseError, OSError) as e:
        logger.error(f"ÉCHEC {args.command}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
