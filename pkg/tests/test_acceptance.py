"""
Tests de régression sur le jeu synthétique par défaut (5000 frames
d'entraînement) : niveau atteint par le lifter face à la pose moyenne et
sens des ablations (branches, supervision mixte), moyennés sur 3 graines.

Longs : exclus par défaut.
Execute : pytest tests/test_acceptance.py -v -m slow
"""

import json

import pandas as pd
import pytest

from egopose.cli import main

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def default_run(tmp_path_factory):
    """Jeu de données par défaut généré une seule fois pour le module."""
    out = tmp_path_factory.mktemp("acceptance") / "run"
    args = ["--seed", "3", "--out", str(out)]
    with pytest.MonkeyPatch.context() as mp:
        for name in ("EGOPOSE_CONFIG", "EGOPOSE_OUT", "EGOPOSE_SEED", "EGOPOSE_LOG_LEVEL"):
            mp.delenv(name, raising=False)
        assert main(["generate", *args]) == 0
    return out, args


def ablation_means(out, args, mode, *extra):
    assert main(["ablate", *args, "--set", f"ablate.mode={mode}", "--set", "ablate.seeds=[0, 1, 2]", *extra]) == 0
    table = pd.read_csv(out / "ablate" / f"ablation_{mode}.csv")
    assert len(table.filter(like="seed_").columns) == 3
    return dict(zip(table["variant"], table["mean_mpjpe_mm"]))


class TestRegressionJouet:
    def test_lifter_sous_la_moitie_de_la_pose_moyenne(self, default_run):
        out, args = default_run
        full = ["--set", "training.epochs=30", "--set", "network.branches={pose: true, rot: true, hm: true}"]
        assert main(["train", *args, *full]) == 0
        assert main(["eval", *args]) == 0
        report = json.loads((out / "eval" / "eval_report.json").read_text(encoding="utf-8"))
        baseline = report["diagnostics"]["mean_pose_baseline_mm"]
        assert report["overall_mpjpe_mm"] < 0.5 * baseline


class TestAblations:
    def test_branches_auxiliaires_ne_degradent_pas(self, default_run):
        out, args = default_run
        means = ablation_means(out, args, "branches")
        assert set(means) == {"p3d", "p3d+rot", "p3d+hm", "p3d+hm+rot"}
        assert means["p3d+hm+rot"] <= means["p3d"]
        assert means["p3d+hm"] <= means["p3d"]

    def test_echantillons_2d_seuls_aident(self, default_run):
        out, args = default_run
        means = ablation_means(out, args, "mixed", "--set", "ablate.mask_fraction=0.5")
        assert means["3d=50%+2d"] <= means["3d=50%"]
