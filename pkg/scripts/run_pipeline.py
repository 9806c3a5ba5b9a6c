#!/usr/bin/env python3
"""
run_pipeline.py - Enchaîne les étapes egopose dans un même dossier de sortie.

Chaîne :
  1. generate       (jeu synthétique train/test/val)
  2. train detector (images -> heatmaps)
  3. train lifter   (heatmaps -> pose 3D, rotations, heatmaps)
  4. eval           (heatmaps vérité terrain puis images via le détecteur)
  5. noise-sweep    (robustesse au bruit image)
  6. animate        (mouvement JSON + BVH d'un clip de test)

Chaque étape est un sous-processus `python -m egopose ...` ; un code de
retour non nul arrête la chaîne avec ce même code.

Variables d'environnement :
  EGOPOSE_OUT        - Dossier de sortie (défaut: runs/pipeline)
  EGOPOSE_CONFIG     - Fichier de configuration optionnel
  EGOPOSE_SEED       - Graine (défaut: celle de la configuration)
"""

import logging
import os
import subprocess
import sys
from pathlib import Path

from dotenv import load_dotenv

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s [%(levelname)s] %(name)s - %(message)s",
)
logger = logging.getLogger("run_pipeline")

PROJECT_DIR = Path(__file__).resolve().parent.parent


def run_step(name: str, cmd: list[str]) -> None:
    """Exécute une commande et quitte avec son code si elle échoue."""
    logger.info("=" * 60)
    logger.info(f"ÉTAPE : {name}")
    logger.info(f"CMD   : {' '.join(cmd)}")
    logger.info("=" * 60)

    result = subprocess.run(cmd, cwd=str(PROJECT_DIR))

    if result.returncode != 0:
        logger.error(f"ÉCHEC : {name} (code {result.returncode})")
        sys.exit(result.returncode)

    logger.info(f"OK : {name}")


def egopose(command: str, out: str, *overrides: str) -> list[str]:
    cmd = [sys.executable, "-m", "egopose", command, "--out", out]
    if os.getenv("EGOPOSE_CONFIG"):
        cmd += ["--config", os.environ["EGOPOSE_CONFIG"]]
    for item in overrides:
        cmd += ["--set", item]
    return cmd


def main():
    load_dotenv(PROJECT_DIR / ".env")
    out = os.getenv("EGOPOSE_OUT", "runs/pipeline")
    detector_ckpt = f"{out}/detector/best.ckpt"

    run_step("Génération du jeu synthétique", egopose("generate", out))
    run_step(
        "Entraînement du détecteur 2D",
        egopose("train", f"{out}/detector_run", f"paths.dataset={out}/dataset", "training.stage=detector"),
    )
    # le détecteur vit dans son propre dossier ; le lifter dans <out>/train
    Path(detector_ckpt).parent.mkdir(parents=True, exist_ok=True)
    Path(f"{out}/detector_run/train/best.ckpt").replace(detector_ckpt)
    run_step("Entraînement du lifter", egopose("train", out, "training.stage=lifter"))
    run_step(
        "Assemblage détecteur + lifter",
        egopose("train", f"{out}/pipeline_run", f"paths.dataset={out}/dataset", "training.stage=end2end",
                f"training.detector_checkpoint={detector_ckpt}",
                f"training.lifter_checkpoint={out}/train/best.ckpt", "training.epochs=0"),
    )
    pipeline_ckpt = f"{out}/pipeline_run/train/best.ckpt"
    run_step("Évaluation (heatmaps vérité terrain)", egopose("eval", out))
    run_step(
        "Évaluation (images -> détecteur -> lifter)",
        egopose("eval", f"{out}/images", f"paths.dataset={out}/dataset", f"paths.checkpoint={pipeline_ckpt}",
                "eval.input=images"),
    )
    run_step(
        "Balayage de bruit image",
        egopose("noise-sweep", out, f"paths.checkpoint={pipeline_ckpt}"),
    )
    run_step("Export d'animation", egopose("animate", out))

    logger.info("=" * 60)
    logger.info(f"Pipeline terminé, résultats : {out}")
    logger.info("=" * 60)


if __name__ == "__main__":
    main()
