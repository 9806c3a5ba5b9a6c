"""
Tests des métriques et rapports d'évaluation : MPJPE (oracle en double
boucle), alignement de Procrustes, tables par action, balayage de bruit,
traces d'angles.

Execute : pytest tests/test_evalkit.py -v
"""

import json
import math

import numpy as np
import pandas as pd
import pytest
from scipy.spatial.transform import Rotation

from conftest import random_poses
from egopose.dataset import ACTIONS
from egopose.errors import DimensionError, EvaluationError
from egopose.evalkit import (
    action_breakdown,
    body_part_report,
    evaluate_poses,
    ground_truth,
    jitter,
    mean_pose_baseline,
    mpjpe,
    pa_mpjpe,
    per_action_report,
    per_joint_report,
    procrustes_align,
    rotation_trace,
    sweep_table,
    write_report,
)
from egopose.kinematics import quat_from_axis_angle
from test_dataset import make_records


def loop_mpjpe(gt, pred):
    """Oracle : double boucle explicite frames × articulations."""
    total, count = 0.0, 0
    for f in range(gt.shape[0]):
        for j in range(gt.shape[1]):
            total += math.sqrt(sum((gt[f, j, k] - pred[f, j, k]) ** 2 for k in range(3)))
            count += 1
    return 1000.0 * total / count


@pytest.fixture
def poses(skel):
    gt, _ = random_poses(skel, seed=0, count=20)
    pred = gt + np.random.default_rng(1).normal(0.0, 0.02, size=gt.shape)
    return gt, pred


class TestMPJPE:
    def test_oracle_double_boucle(self, poses):
        gt, pred = poses
        assert mpjpe(gt, pred) == pytest.approx(loop_mpjpe(gt, pred), abs=1e-12 * 1000)

    def test_identite_nulle(self, poses):
        gt, _ = poses
        assert mpjpe(gt, gt) == 0.0

    def test_translation_relative_a_la_racine(self, poses):
        gt, _ = poses
        shifted = gt + np.array([0.1, -0.2, 0.3])
        assert mpjpe(gt, shifted) == pytest.approx(np.linalg.norm([0.1, -0.2, 0.3]) * 1000)
        assert mpjpe(gt, shifted, root_relative=True) == pytest.approx(0.0, abs=1e-9)

    def test_une_seule_frame(self, poses):
        gt, pred = poses
        assert mpjpe(gt[0], pred[0]) == pytest.approx(loop_mpjpe(gt[:1], pred[:1]))

    def test_formes_incompatibles(self, poses):
        gt, _ = poses
        with pytest.raises(DimensionError):
            mpjpe(gt, gt[:, :15])

    def test_par_articulation(self, poses, skel):
        gt, pred = poses
        table = per_joint_report(gt, pred, skel.joint_names)
        assert list(table.index) == list(skel.joint_names)
        assert table.mean() == pytest.approx(mpjpe(gt, pred))


class TestProcrustes:
    def test_invariance_par_similitude(self, poses):
        gt, _ = poses
        rot = Rotation.from_rotvec([0.3, -1.1, 0.4]).as_matrix()
        moved = 1.7 * np.einsum("ij,fkj->fki", rot, gt) + np.array([0.5, 0.2, -0.4])
        assert pa_mpjpe(gt, moved) == pytest.approx(0.0, abs=1e-6)
        np.testing.assert_allclose(procrustes_align(gt, moved), gt, atol=1e-9)

    def test_majore_par_mpjpe(self, poses):
        gt, pred = poses
        assert pa_mpjpe(gt, pred) <= mpjpe(gt, pred) + 1e-9

    def test_reflexion_exclue(self, poses):
        gt, _ = poses
        mirrored = gt * np.array([-1.0, 1.0, 1.0])
        assert pa_mpjpe(gt, mirrored) > 1.0

    def test_prediction_degeneree(self, poses):
        gt, _ = poses
        with pytest.raises(EvaluationError):
            pa_mpjpe(gt, np.zeros_like(gt))


class TestTables:
    def test_all_sur_toutes_les_frames(self):
        errors = np.array([[1.0, 3.0], [5.0, 7.0], [10.0, 10.0]])
        table = action_breakdown(["Gaming", "Gaming", "Walking"], errors)
        assert table == {"Gaming": 4.0, "Walking": 10.0, "All": pytest.approx(6.0)}

    def test_ordre_canonique(self):
        table = action_breakdown(["Walking", "Gaming"], np.ones((2, 3)))
        assert list(table) == ["Gaming", "Walking", "All"]

    def test_action_inconnue(self):
        with pytest.raises(EvaluationError):
            action_breakdown(["Dancing"], np.ones((1, 3)))

    def test_etiquettes_incoherentes(self):
        with pytest.raises(DimensionError):
            action_breakdown(["Gaming"], np.ones((2, 3)))

    def test_haut_et_bas_du_corps(self, skel):
        errors = np.zeros((2, skel.num_joints))
        errors[:, skel.index("Left Knee")] = 8.0
        parts = body_part_report(errors, skel)
        assert parts["upper_body"] == 0.0
        assert parts["lower_body"] > 0.0

    def test_par_action_depuis_les_enregistrements(self, skel):
        records = make_records(skel, 9)
        pred = ground_truth(records) + 0.01
        table = per_action_report(records, pred)
        assert set(table) == {*ACTIONS, "All"}
        assert table["All"] == pytest.approx(math.sqrt(3) * 10.0)


class TestReferences:
    def test_pose_moyenne(self, skel):
        records = make_records(skel, 4)
        records[1] = records[1].as_2d_only()
        mean = mean_pose_baseline(records)
        kept = [records[i].pose3d for i in (0, 2, 3)]
        np.testing.assert_allclose(mean, np.mean(kept, axis=0))

    def test_pose_moyenne_sans_3d(self, skel):
        with pytest.raises(EvaluationError):
            mean_pose_baseline([r.as_2d_only() for r in make_records(skel, 2)])

    def test_verite_terrain_incomplete(self, skel):
        records = make_records(skel, 2)
        records[0] = records[0].as_2d_only()
        with pytest.raises(EvaluationError):
            ground_truth(records)


class TestRapport:
    def test_oracle_tout_a_zero(self, skel, tmp_path):
        records = make_records(skel, 6)
        report = evaluate_poses(records, ground_truth(records), skel, config={"oracle": True})
        assert report.overall_mpjpe == 0.0
        assert report.pa_mpjpe == pytest.approx(0.0, abs=1e-9)
        assert all(v == 0.0 for v in report.per_action.values())
        paths = write_report(report, tmp_path)
        payload = json.loads(paths["report"].read_text(encoding="utf-8"))
        assert payload["n_frames"] == 6 and payload["config"] == {"oracle": True}
        assert list(pd.read_csv(paths["per_joint"])["joint"]) == list(skel.joint_names)

    def test_diagnostics(self, skel):
        records = make_records(skel, 4)
        gt = ground_truth(records)
        report = evaluate_poses(records, gt, skel, fk_pose=gt + 0.001, baseline=gt.mean(axis=0))
        assert report.diagnostics["fk_vs_pose_mpjpe_mm"] == pytest.approx(math.sqrt(3))
        assert report.diagnostics["mean_pose_baseline_mm"] > 0.0


class TestBalayage:
    def test_sigma_nul_evalue_une_fois(self, poses):
        gt, pred = poses
        calls = []

        def predict(sigma, seed):
            calls.append((sigma, seed))
            return pred + sigma * np.random.default_rng(seed).normal(0.0, 0.01, size=pred.shape)

        table = sweep_table(predict, gt, [0.0, 1.0], [0, 1, 2])
        assert calls == [(0.0, 0), (1.0, 0), (1.0, 1), (1.0, 2)]
        assert list(table.columns) == ["sigma", "seed_0", "seed_1", "seed_2", "mean_mpjpe_mm", "std_mpjpe_mm"]
        first = table.iloc[0]
        assert first["mean_mpjpe_mm"] == pytest.approx(mpjpe(gt, pred))
        assert first["std_mpjpe_mm"] == 0.0
        second = table.iloc[1]
        values = [second[f"seed_{s}"] for s in (0, 1, 2)]
        assert second["std_mpjpe_mm"] == pytest.approx(np.std(values))

    @pytest.mark.parametrize("sigmas", [[0.5, 1.0], [0.0, 1.0, 0.5], []])
    def test_sigmas_invalides(self, poses, sigmas):
        gt, pred = poses
        with pytest.raises(EvaluationError):
            sweep_table(lambda s, k: pred, gt, sigmas, [0])

    def test_sans_graine(self, poses):
        gt, pred = poses
        with pytest.raises(EvaluationError):
            sweep_table(lambda s, k: pred, gt, [0.0], [])


class TestTraces:
    def test_gigue(self):
        assert jitter(np.arange(10.0)) == 0.0
        assert jitter(np.array([0.0, 1.0, 0.0, 1.0])) == pytest.approx(2.0)
        assert jitter(np.array([1.0, 2.0])) == 0.0

    def test_trace_geodesique(self, skel):
        angles = np.linspace(0.0, 1.0, 12)
        gt = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (12, skel.num_joints, 1))
        joint = skel.index("Left Elbow")
        gt[:, joint] = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), angles)
        pred = gt.copy()
        pred[:, joint] = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), angles + 0.1)
        table, stats = rotation_trace(gt, pred, joint)
        assert list(table.columns) == ["frame", "gt_deg", "pred_deg", "error_deg"]
        np.testing.assert_allclose(table["gt_deg"], np.degrees(angles), atol=1e-9)
        assert stats["mean_error_deg"] == pytest.approx(np.degrees(0.1))
        assert stats["jitter_gt_deg"] == pytest.approx(0.0, abs=1e-9)

    def test_composante_euler(self, skel):
        gt = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (3, skel.num_joints, 1))
        gt[:, 0] = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), 0.5)
        table, _ = rotation_trace(gt, gt, 0, component="z")
        np.testing.assert_allclose(table["gt_deg"], np.degrees(0.5))

    def test_composante_inconnue(self, skel):
        gt = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (3, skel.num_joints, 1))
        with pytest.raises(EvaluationError):
            rotation_trace(gt, gt, 0, component="w")
