"""
Tests des enregistrements, du codec EGODATA1 et de la supervision mixte.
"""

import numpy as np
import pytest

from conftest import random_poses
from egopose.dataset import (
    ACTIONS,
    MAGIC,
    SampleRecord,
    load_split,
    mask_3d,
    read_records,
    same_record,
    validate_records,
    write_records,
)
from egopose.errors import DatasetError
from egopose.kinematics import extract_rotations


def make_records(skel, count=6, seed=0, with_image=False):
    poses, _ = random_poses(skel, seed, count)
    gen = np.random.default_rng(seed)
    records = []
    for i, pose in enumerate(poses):
        records.append(SampleRecord(
            character_id=i % 2,
            frame_id=i,
            clip_id=i // 3,
            action=ACTIONS[i % len(ACTIONS)],
            has_3d=True,
            height=1.70,
            joints2d=gen.uniform(0, 47, size=(15, 2)),
            visible=gen.uniform(size=15) > 0.2,
            pose3d=pose,
            rotations=extract_rotations(pose, skel),
            image=gen.integers(0, 256, size=(368, 368, 3), dtype=np.uint8) if with_image else None,
        ))
    return records


class TestEnregistrement:
    def test_action_inconnue(self, skel):
        rec = make_records(skel, 1)[0]
        with pytest.raises(DatasetError):
            SampleRecord(0, 0, 0, "Dancing", True, 1.7, rec.joints2d, rec.visible, rec.pose3d, rec.rotations)

    def test_2d_seul_sans_charge_3d(self, skel):
        rec = make_records(skel, 1)[0]
        with pytest.raises(DatasetError):
            SampleRecord(0, 0, 0, "Gaming", False, 1.7, rec.joints2d, rec.visible, rec.pose3d, None)

    def test_3d_incomplet(self, skel):
        rec = make_records(skel, 1)[0]
        with pytest.raises(DatasetError):
            SampleRecord(0, 0, 0, "Gaming", True, 1.7, rec.joints2d, rec.visible, rec.pose3d, None)

    def test_pose_hors_bornes(self, skel):
        rec = make_records(skel, 1)[0]
        with pytest.raises(DatasetError):
            SampleRecord(0, 0, 0, "Gaming", True, 1.7, rec.joints2d, rec.visible, rec.pose3d + 20.0, rec.rotations)

    def test_conversion_2d_seul(self, skel):
        rec = make_records(skel, 1)[0].as_2d_only()
        assert not rec.has_3d
        assert rec.pose3d is None and rec.rotations is None


class TestCodec:
    def test_aller_retour_bit_a_bit(self, skel, tmp_path):
        records = make_records(skel, 6)
        records[2] = records[2].as_2d_only()
        back = read_records(write_records(tmp_path / "s.egodata", records))
        assert len(back) == len(records)
        assert all(same_record(a, b) for a, b in zip(records, back))

    def test_avec_images(self, skel, tmp_path):
        records = make_records(skel, 2, with_image=True)
        back = read_records(write_records(tmp_path / "i.egodata", records))
        assert all(same_record(a, b) for a, b in zip(records, back))

    def test_octets_deterministes(self, skel, tmp_path):
        a = write_records(tmp_path / "a.egodata", make_records(skel, 4))
        b = write_records(tmp_path / "b.egodata", make_records(skel, 4))
        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes()[:8] == MAGIC

    def test_fichier_tronque(self, skel, tmp_path):
        path = write_records(tmp_path / "t.egodata", make_records(skel, 3))
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(DatasetError):
            read_records(path)

    def test_octets_en_trop(self, skel, tmp_path):
        path = write_records(tmp_path / "x.egodata", make_records(skel, 3))
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(DatasetError):
            read_records(path)

    def test_mauvais_en_tete(self, tmp_path):
        path = tmp_path / "bad.egodata"
        path.write_bytes(b"EGODATA0" + bytes(12))
        with pytest.raises(DatasetError):
            read_records(path)

    def test_split_inconnu(self, tmp_path):
        with pytest.raises(DatasetError):
            load_split(tmp_path, "holdout")

    def test_manifeste_absent(self, tmp_path):
        with pytest.raises(DatasetError):
            load_split(tmp_path, "train")


class TestSupervisionMixte:
    def test_fraction_arrondie_inferieure(self, skel):
        records = make_records(skel, 7)
        masked, idx = mask_3d(records, 0.5, seed=1)
        assert len(idx) == 3
        assert sum(not r.has_3d for r in masked) == 3
        assert all(masked[i].joints2d is records[i].joints2d for i in idx)

    def test_deterministe(self, skel):
        records = make_records(skel, 10)
        assert mask_3d(records, 0.3, seed=4)[1] == mask_3d(records, 0.3, seed=4)[1]

    def test_fraction_invalide(self, skel):
        with pytest.raises(DatasetError):
            mask_3d(make_records(skel, 2), 1.5, seed=0)

    def test_deja_2d_seul_ignore(self, skel):
        records = [r.as_2d_only() for r in make_records(skel, 4)]
        masked, idx = mask_3d(records, 1.0, seed=0)
        assert idx == []


class TestQualite:
    def test_indicateurs(self, skel):
        records = make_records(skel, 9)
        names = [skel.joint_names[j] for j in skel.heatmap_joints]
        metrics = validate_records(records, names)
        assert metrics["total_records"] == 9
        assert metrics["has_3d_rate"] == 100.0
        assert set(metrics["visibility_rates"]) == set(names)
        assert metrics["duplicates"] == 0

    def test_split_vide(self):
        assert validate_records([], [])["anomalies"] == ["split vide"]

    def test_action_absente_signalee(self, skel):
        records = make_records(skel, 2)
        names = [skel.joint_names[j] for j in skel.heatmap_joints]
        anomalies = validate_records(records, names)["anomalies"]
        assert any("Walking" in a for a in anomalies)
