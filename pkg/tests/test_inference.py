"""
Tests de l'inférence : lifter sur heatmaps vérité terrain ou sur images
passées au détecteur, bruit d'entrée reproductible, découpage en paquets.

Execute : pytest tests/test_inference.py -v
"""

import numpy as np
import pytest

from egopose.config import dataset_dir
from egopose.dataset import SPLITS, load_split
from egopose.errors import CheckpointError
from egopose.heatmaps import render_batch
from egopose.inference import detect_heatmaps, infer, predict_records
from egopose.network import Detector2D, DetectorConfig, LifterConfig, LiftingNet
from egopose.synthgen import StickStyle, generate_dataset

TINY_DETECTOR = DetectorConfig(channels=(4, 4, 4, 4, 4, 4), head_channels=4)


@pytest.fixture
def data(tiny_config, skel):
    ds = dataset_dir(tiny_config)
    manifest = generate_dataset(tiny_config, 3, ds, skel)
    return {split: load_split(ds, split) for split in SPLITS}, StickStyle.from_dict(manifest["style"])


def new_lifter(config, seed=0):
    return LiftingNet(LifterConfig.from_config(config["network"]), seed=seed)


class TestInfer:
    def test_heatmaps_directes(self, tiny_config, skel, data):
        test = data[0]["test"][:4]
        hm = render_batch(np.stack([r.joints2d for r in test]), np.stack([r.visible for r in test]))
        lifter = new_lifter(tiny_config)
        direct = infer(lifter, skel, heatmaps=hm)
        np.testing.assert_array_equal(direct.pose, predict_records(lifter, test, skel).pose)
        np.testing.assert_array_equal(direct.visible, np.stack([r.visible for r in test]))

    def test_sans_branche_rotation(self, tiny_config, skel):
        result = infer(new_lifter(tiny_config), skel, heatmaps=np.zeros((2, 15, 47, 47)), with_rot=False)
        assert result.rot is None and result.fk_pose is None
        assert not result.visible.any()

    def test_lifter_absent(self, skel):
        with pytest.raises(CheckpointError):
            infer(None, skel, heatmaps=np.zeros((1, 15, 47, 47)))

    def test_entree_absente(self, tiny_config, skel):
        with pytest.raises(ValueError):
            infer(new_lifter(tiny_config), skel)

    def test_bruit_sans_generateur(self):
        images = np.zeros((1, 368, 368, 3), dtype=np.uint8)
        with pytest.raises(ValueError):
            detect_heatmaps(Detector2D(TINY_DETECTOR), images, noise_sigma=0.1)


class TestPredictRecords:
    def test_sorties_depuis_heatmaps(self, tiny_config, skel, data):
        test = data[0]["test"]
        result = predict_records(new_lifter(tiny_config), test, skel)
        assert result.pose.shape == (len(test), 16, 3)
        assert result.confidence.shape == result.visible.shape == (len(test), 15)
        np.testing.assert_allclose(np.linalg.norm(result.rot, axis=-1), 1.0, atol=1e-5)
        assert result.fk_pose.shape == result.pose.shape
        np.testing.assert_allclose(result.fk_pose[:, skel.root], result.pose[:, skel.root])
        assert result.hm is None

    def test_branche_heatmaps_sur_demande(self, tiny_config, skel, data):
        result = predict_records(new_lifter(tiny_config), data[0]["test"][:3], skel, with_hm=True)
        assert result.hm.shape == (3, 15, 16, 16)

    def test_independant_du_decoupage(self, tiny_config, skel, data):
        lifter = new_lifter(tiny_config)
        a = predict_records(lifter, data[0]["test"], skel, chunk=5)
        b = predict_records(lifter, data[0]["test"], skel)
        np.testing.assert_allclose(a.pose, b.pose, atol=1e-5)

    def test_images_sans_detecteur(self, tiny_config, skel, data):
        with pytest.raises(CheckpointError):
            predict_records(new_lifter(tiny_config), data[0]["test"], skel, source="images")

    def test_source_inconnue(self, tiny_config, skel, data):
        with pytest.raises(ValueError):
            predict_records(new_lifter(tiny_config), data[0]["test"], skel, source="video")

    def test_bruit_reproductible(self, tiny_config, skel, data):
        records, style = data
        lifter, det = new_lifter(tiny_config), Detector2D(TINY_DETECTOR)
        test = records["test"][:3]

        def run(sigma, seed):
            return predict_records(lifter, test, skel, source="images", detector=det, style=style,
                                   noise_sigma=sigma, noise_seed=seed).pose

        clean = run(0.0, 0)
        np.testing.assert_array_equal(clean, run(0.0, 5))
        np.testing.assert_array_equal(run(0.5, 1), run(0.5, 1))
        assert not np.array_equal(run(0.5, 1), clean)

