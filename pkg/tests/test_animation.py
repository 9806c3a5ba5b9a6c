"""
Tests de l'export animation : fichier de mouvement JSON et BVH (Euler ZXY).
"""

import numpy as np
import pytest

from conftest import random_rotations
from egopose.animation import clip_from_records, read_bvh, read_motion, write_bvh, write_motion
from egopose.errors import DatasetError
from egopose.kinematics import forward_kinematics
from egopose.synthgen import MotionClip
from test_dataset import make_records


@pytest.fixture
def clip(skel):
    rot = random_rotations(skel, seed=2, count=8)
    roots = np.random.default_rng(3).normal(0.0, 0.05, size=(8, 3))
    return MotionClip(rot, roots, action="Talking", fps=30)


def fk(clip, skel):
    return forward_kinematics(clip.rotations, skel, clip.root_positions)


class TestMouvement:
    def test_aller_retour(self, clip, skel, tmp_path):
        back, back_skel = read_motion(write_motion(tmp_path / "m.json", clip, skel))
        assert back.action == "Talking" and back.fps == 30
        assert back_skel.joint_names == skel.joint_names
        np.testing.assert_allclose(fk(back, back_skel), fk(clip, skel), atol=1e-9)

    def test_format_inconnu(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text('{"format": "other/1"}', encoding="utf-8")
        with pytest.raises(DatasetError):
            read_motion(path)

    def test_fichier_absent(self, tmp_path):
        with pytest.raises(DatasetError):
            read_motion(tmp_path / "absent.json")


class TestBVH:
    def test_aller_retour_fk(self, clip, skel, tmp_path):
        back, back_skel = read_bvh(write_bvh(tmp_path / "m.bvh", clip, skel), action="Talking")
        assert len(back) == len(clip)
        assert back.fps == 30
        assert back_skel.joint_names == skel.joint_names
        assert back_skel.parent == skel.parent
        np.testing.assert_allclose(np.linalg.norm(back.rotations, axis=-1), 1.0, atol=1e-9)
        assert np.max(np.abs(fk(back, back_skel) - fk(clip, skel))) < 1e-4

    def test_entete(self, clip, skel, tmp_path):
        text = write_bvh(tmp_path / "m.bvh", clip, skel).read_text(encoding="utf-8")
        assert text.startswith("HIERARCHY\nROOT Neck\n")
        assert "JOINT Left_Elbow" in text
        assert "CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation" in text
        assert "Frames: 8" in text

    def test_valeurs_manquantes(self, clip, skel, tmp_path):
        path = write_bvh(tmp_path / "m.bvh", clip, skel)
        path.write_text(path.read_text(encoding="utf-8").rsplit("\n", 2)[0] + "\n", encoding="utf-8")
        with pytest.raises(DatasetError):
            read_bvh(path)

    def test_jeton_inattendu(self, tmp_path):
        path = tmp_path / "bad.bvh"
        path.write_text("HIERARCHY\nBONE Neck\nMOTION\n", encoding="utf-8")
        with pytest.raises(DatasetError):
            read_bvh(path)


class TestClip:
    def test_depuis_la_verite_terrain(self, skel):
        records = make_records(skel, 3)
        clip = clip_from_records(records, skel)
        assert len(clip) == 3
        np.testing.assert_allclose(clip.root_positions, [r.pose3d[skel.root] for r in records])

    def test_rotations_predites_sans_racine(self, skel):
        records = make_records(skel, 2)
        with pytest.raises(DatasetError):
            clip_from_records(records, skel, rotations=np.tile([1.0, 0, 0, 0], (2, 16, 1)))

    def test_2d_seul_sans_verite(self, skel):
        records = [r.as_2d_only() for r in make_records(skel, 2)]
        with pytest.raises(DatasetError):
            clip_from_records(records, skel)
