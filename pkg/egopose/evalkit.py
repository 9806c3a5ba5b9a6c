"""
evalkit.py - Protocoles d'évaluation : MPJPE, MPJPE après alignement de
Procrustes, tables par articulation / par action / haut-bas du corps,
balayage de bruit image et traces temporelles d'angles.

Les poses sont en mètres (repère caméra) ; toutes les erreurs sont
rapportées en millimètres.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from egopose.dataset import ACTIONS, SampleRecord
from egopose.errors import DimensionError, EvaluationError
from egopose.inference import predict_records
from egopose.kinematics import LOWER_BODY, UPPER_BODY, Skeleton, quat_angle, quat_conj, quat_mul
from egopose.network import Detector2D, LiftingNet
from egopose.reports import write_json, write_table
from egopose.synthgen import StickStyle

logger = logging.getLogger("egopose.evalkit")

MM = 1000.0
EULER_ORDER = "ZXY"


# ============================================================
# MÉTRIQUES
# ============================================================
def _as_frames(gt, pred) -> tuple[np.ndarray, np.ndarray]:
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if gt.ndim == 2:
        gt = gt[None]
    if pred.ndim == 2:
        pred = pred[None]
    if gt.shape != pred.shape or gt.ndim != 3 or gt.shape[-1] != 3:
        raise DimensionError(f"poses incompatibles: vérité {gt.shape} / prédiction {pred.shape}")
    return gt, pred


def joint_errors(gt, pred, root_relative: bool = False, root: int = 0) -> np.ndarray:
    """Erreurs euclidiennes (F, J) en millimètres."""
    gt, pred = _as_frames(gt, pred)
    if root_relative:
        gt = gt - gt[:, root:root + 1]
        pred = pred - pred[:, root:root + 1]
    return np.linalg.norm(gt - pred, axis=-1) * MM


def mpjpe(gt, pred, root_relative: bool = False, root: int = 0) -> float:
    """E = (1/N_f)(1/N_j) Σ_f Σ_j ‖P_j − P̂_j‖ en mm."""
    return float(np.mean(joint_errors(gt, pred, root_relative, root)))


def _check_spread(points: np.ndarray, label: str) -> None:
    centered = points - points.mean(axis=1, keepdims=True)
    sv = np.linalg.svd(centered, compute_uv=False)
    scale = np.maximum(sv[:, 0], 1e-300)
    bad = np.nonzero((sv[:, 0] < 1e-12) | (sv[:, 1] < 1e-9 * scale))[0]
    if bad.size:
        raise EvaluationError(f"{label}: articulations colinéaires ou confondues (frame {int(bad[0])})")


def procrustes_align(gt, pred) -> np.ndarray:
    """
    Aligne pred sur gt frame par frame (rotation propre + échelle uniforme +
    translation, moindres carrés). Les réflexions sont exclues (det = +1).
    """
    gt, pred = _as_frames(gt, pred)
    if gt.shape[1] < 3:
        raise EvaluationError(f"au moins 3 articulations requises, reçu {gt.shape[1]}")
    _check_spread(gt, "vérité terrain")
    _check_spread(pred, "prédiction")
    mu_g = gt.mean(axis=1, keepdims=True)
    mu_p = pred.mean(axis=1, keepdims=True)
    g, p = gt - mu_g, pred - mu_p
    h = np.einsum("fji,fjk->fik", p, g)
    u, s, vt = np.linalg.svd(h)
    v = np.swapaxes(vt, 1, 2)
    d = np.sign(np.linalg.det(v @ np.swapaxes(u, 1, 2)))
    d = np.where(d == 0, 1.0, d)
    corr = np.ones_like(s)
    corr[:, -1] = d
    rot = v @ (corr[:, :, None] * np.swapaxes(u, 1, 2))
    scale = np.sum(s * corr, axis=1) / np.sum(p * p, axis=(1, 2))
    return scale[:, None, None] * np.einsum("fik,fjk->fji", rot, p) + mu_g


def pa_mpjpe(gt, pred) -> float:
    gt, pred = _as_frames(gt, pred)
    return mpjpe(gt, procrustes_align(gt, pred))


# ============================================================
# TABLES
# ============================================================
def per_joint_report(gt, pred, joint_names: Sequence[str], root_relative: bool = False) -> pd.Series:
    errors = joint_errors(gt, pred, root_relative)
    if errors.shape[1] != len(joint_names):
        raise DimensionError(f"{errors.shape[1]} articulations pour {len(joint_names)} noms")
    return pd.Series(errors.mean(axis=0), index=list(joint_names), name="mpjpe_mm")


def action_breakdown(actions: Sequence[str], errors: np.ndarray) -> dict[str, float]:
    """
    MPJPE par action à partir des erreurs (F, J). Les actions sans frame sont
    absentes du résultat ; "All" est recalculé sur toutes les frames.
    """
    errors = np.asarray(errors, dtype=np.float64)
    if len(actions) != errors.shape[0]:
        raise DimensionError(f"{len(actions)} étiquettes pour {errors.shape[0]} frames")
    unknown = sorted(set(actions) - set(ACTIONS))
    if unknown:
        raise EvaluationError(f"action inconnue: {unknown[0]!r}")
    df = pd.DataFrame({"action": list(actions), "error": errors.mean(axis=1)})
    table = {a: float(v) for a, v in df.groupby("action", sort=False)["error"].mean().items()}
    out = {a: table[a] for a in ACTIONS if a in table}
    out["All"] = float(errors.mean())
    return out


def per_action_report(records: Sequence[SampleRecord], pred, root_relative: bool = False, root: int = 0) -> dict[str, float]:
    return action_breakdown([r.action for r in records], joint_errors(ground_truth(records), pred, root_relative, root))


def body_part_report(errors: np.ndarray, skel: Skeleton) -> dict[str, float]:
    upper = [skel.index(n) for n in UPPER_BODY if n in skel.joint_names]
    lower = [skel.index(n) for n in LOWER_BODY if n in skel.joint_names]
    return {"upper_body": float(errors[:, upper].mean()), "lower_body": float(errors[:, lower].mean())}


def mean_pose_baseline(records: Sequence[SampleRecord]) -> np.ndarray:
    """Pose moyenne (J, 3) des enregistrements 3D ; prédicteur de référence."""
    poses = [r.pose3d for r in records if r.has_3d]
    if not poses:
        raise EvaluationError("pose moyenne: aucun enregistrement 3D")
    return np.mean(np.stack(poses), axis=0)


def ground_truth(records: Sequence[SampleRecord]) -> np.ndarray:
    missing = [r.key for r in records if not r.has_3d]
    if missing:
        raise EvaluationError(f"{len(missing)} enregistrements sans 3D (premier: {missing[0]})")
    return np.stack([r.pose3d for r in records])


# ============================================================
# RAPPORT
# ============================================================
@dataclass
class EvalReport:
    overall_mpjpe: float
    pa_mpjpe: float
    per_joint: dict[str, float]
    per_action: dict[str, float]
    body_parts: dict[str, float]
    n_frames: int
    config: dict[str, Any] = field(default_factory=dict)
    diagnostics: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "overall_mpjpe_mm": self.overall_mpjpe,
            "pa_mpjpe_mm": self.pa_mpjpe,
            "per_joint_mm": self.per_joint,
            "per_action_mm": self.per_action,
            "body_parts_mm": self.body_parts,
            "n_frames": self.n_frames,
            "config": self.config,
            "diagnostics": self.diagnostics,
        }

    def action_table(self) -> pd.DataFrame:
        """Une ligne : une colonne par action présente puis "All"."""
        return pd.DataFrame([self.per_action])

    def joint_table(self) -> pd.DataFrame:
        return pd.DataFrame({"joint": list(self.per_joint), "mpjpe_mm": list(self.per_joint.values())})


def evaluate_poses(
    records: Sequence[SampleRecord],
    pred: np.ndarray,
    skel: Skeleton,
    root_relative: bool = False,
    config: Mapping[str, Any] | None = None,
    fk_pose: np.ndarray | None = None,
    baseline: np.ndarray | None = None,
) -> EvalReport:
    gt = ground_truth(records)
    errors = joint_errors(gt, pred, root_relative, skel.root)
    report = EvalReport(
        overall_mpjpe=float(errors.mean()),
        pa_mpjpe=pa_mpjpe(gt, pred),
        per_joint={n: float(v) for n, v in zip(skel.joint_names, errors.mean(axis=0))},
        per_action=action_breakdown([r.action for r in records], errors),
        body_parts=body_part_report(errors, skel),
        n_frames=len(records),
        config=dict(config or {}),
    )
    if fk_pose is not None:
        report.diagnostics["fk_vs_pose_mpjpe_mm"] = mpjpe(pred, fk_pose)
    if baseline is not None:
        report.diagnostics["mean_pose_baseline_mm"] = mpjpe(gt, np.broadcast_to(baseline, gt.shape), root_relative, skel.root)
    return report


def write_report(report: EvalReport, out_dir: str | Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    paths = {
        "report": write_json(out_dir / "eval_report.json", report.to_dict()),
        "per_action": write_table(out_dir / "per_action.csv", report.action_table()),
        "per_joint": write_table(out_dir / "per_joint.csv", report.joint_table()),
    }
    logger.info(f"  → MPJPE {report.overall_mpjpe:.2f} mm, PA-MPJPE {report.pa_mpjpe:.2f} mm ({report.n_frames} frames)")
    return paths


# ============================================================
# BRUIT IMAGE
# ============================================================
def sweep_table(
    predict,
    gt: np.ndarray,
    sigmas: Sequence[float],
    seeds: Sequence[int],
    root_relative: bool = False,
    root: int = 0,
) -> pd.DataFrame:
    """
    predict(sigma, seed) -> poses (F, J, 3). σ=0 n'ajoute aucun bruit et
    n'est évalué qu'une fois. Colonnes : sigma, seed_<s>..., mean_mpjpe_mm,
    std_mpjpe_mm (écart-type population sur les graines).
    """
    sigmas = [float(s) for s in sigmas]
    if not sigmas or sigmas[0] != 0.0 or sigmas != sorted(sigmas):
        raise EvaluationError(f"sigmas: liste croissante commençant par 0 attendue, reçu {sigmas}")
    if not seeds:
        raise EvaluationError("noise_sweep: au moins une graine requise")
    rows = []
    for sigma in sigmas:
        if sigma == 0.0:
            base = mpjpe(gt, predict(0.0, seeds[0]), root_relative, root)
            values = [base] * len(seeds)
        else:
            values = [mpjpe(gt, predict(sigma, s), root_relative, root) for s in seeds]
        row: dict[str, float] = {"sigma": sigma}
        row.update({f"seed_{s}": v for s, v in zip(seeds, values)})
        row["mean_mpjpe_mm"] = float(np.mean(values))
        row["std_mpjpe_mm"] = float(np.std(values))
        rows.append(row)
        logger.info(f"  σ={sigma:g}: {row['mean_mpjpe_mm']:.2f} ± {row['std_mpjpe_mm']:.2f} mm")
    return pd.DataFrame(rows)


def noise_sweep(
    lifter: LiftingNet | None,
    detector: Detector2D | None,
    records: Sequence[SampleRecord],
    skel: Skeleton,
    style: StickStyle,
    sigmas: Sequence[float],
    seeds: Sequence[int],
    sigma_hm: float = 2.0,
    root_relative: bool = False,
    chunk: int = 64,
) -> pd.DataFrame:
    """Détecteur + lifter sur images bruitées ; la ligne σ=0 reproduit l'évaluation sur images."""
    if lifter is None or detector is None:
        raise EvaluationError("balayage de bruit: pipeline détecteur + lifter entraîné requis")
    gt = ground_truth(records)

    def predict(sigma: float, seed: int) -> np.ndarray:
        return predict_records(
            lifter, records, skel, source="images", detector=detector, style=style, sigma=sigma_hm,
            noise_sigma=sigma, noise_seed=seed, chunk=chunk,
        ).pose

    return sweep_table(predict, gt, sigmas, seeds, root_relative, skel.root)


# ============================================================
# TRACES TEMPORELLES
# ============================================================
def _angles_deg(rot: np.ndarray, component: str) -> np.ndarray:
    if component == "geodesic":
        return np.degrees(quat_angle(rot))
    axis = EULER_ORDER.lower().index(component)
    # (w, x, y, z) -> (x, y, z, w) pour scipy
    euler = Rotation.from_quat(rot[:, [1, 2, 3, 0]]).as_euler(EULER_ORDER, degrees=True)
    return euler[:, axis]


def jitter(series: np.ndarray) -> float:
    """Moyenne des valeurs absolues de la différence seconde."""
    series = np.asarray(series, dtype=np.float64)
    if series.shape[0] < 3:
        return 0.0
    return float(np.mean(np.abs(series[2:] - 2.0 * series[1:-1] + series[:-2])))


def rotation_trace(
    gt_rot: np.ndarray,
    pred_rot: np.ndarray,
    joint: int,
    component: str = "geodesic",
) -> tuple[pd.DataFrame, dict[str, float]]:
    """
    gt_rot / pred_rot : (F, J, 4). Renvoie la série par frame (angle vérité,
    angle prédit, erreur géodésique) et les statistiques de lissé.
    component : "geodesic" (distance à l'identité) ou "z" / "x" / "y" (Euler ZXY).
    """
    gt_rot = np.asarray(gt_rot, dtype=np.float64)
    pred_rot = np.asarray(pred_rot, dtype=np.float64)
    if gt_rot.shape != pred_rot.shape:
        raise DimensionError(f"traces de longueurs différentes: {gt_rot.shape} / {pred_rot.shape}")
    if component not in ("geodesic", "z", "x", "y"):
        raise EvaluationError(f"composante d'angle inconnue: {component}")
    g, p = gt_rot[:, joint], pred_rot[:, joint]
    table = pd.DataFrame({
        "frame": np.arange(len(g)),
        "gt_deg": _angles_deg(g, component),
        "pred_deg": _angles_deg(p, component),
        "error_deg": np.degrees(quat_angle(quat_mul(quat_conj(g), p))),
    })
    stats = {
        "mean_error_deg": float(table["error_deg"].mean()) if len(table) else 0.0,
        "jitter_gt_deg": jitter(table["gt_deg"].to_numpy()),
        "jitter_pred_deg": jitter(table["pred_deg"].to_numpy()),
    }
    return table, stats
