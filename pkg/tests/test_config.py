"""
Tests de la résolution de configuration et de l'écriture des rapports.
"""

import json
import math

import numpy as np
import pandas as pd
import pytest

from egopose.config import (
    checkpoint_path,
    config_hash,
    dataset_dir,
    merge,
    parse_override,
    resolve_config,
    write_resolved,
)
from egopose.errors import ConfigError
from egopose.reports import sanitize_for_json, write_json, write_table


class TestResolution:
    def test_valeurs_par_defaut(self):
        config = resolve_config(None)
        assert config["heatmaps"]["size"] == 47
        assert config["loss"]["weights"]["theta"] == -0.01
        assert config["training"]["optimizer"] == "adam"

    def test_priorites(self, tmp_path, monkeypatch):
        path = tmp_path / "run.yaml"
        path.write_text("seed: 1\ntraining:\n  lr: 0.5\n  epochs: 3\n", encoding="utf-8")
        monkeypatch.setenv("EGOPOSE_SEED", "2")
        config = resolve_config(path, seed=None, overrides=["training.lr=0.25"])
        assert config["seed"] == 2
        assert config["training"]["lr"] == 0.25
        assert config["training"]["epochs"] == 3
        assert resolve_config(path, seed=9)["seed"] == 9

    def test_cle_inconnue_chemin_pointe(self):
        with pytest.raises(ConfigError, match="training.learning_rate"):
            resolve_config(None, overrides=["training.learning_rate=0.1"])

    def test_section_remplacee_par_scalaire(self):
        with pytest.raises(ConfigError):
            merge({"training": {"lr": 1.0}}, {"training": 3})

    def test_limites_libres(self):
        config = resolve_config(None, overrides=["generation.limits={Neck: {max_deg: 5}}"])
        assert config["generation"]["limits"]["Neck"] == {"max_deg": 5}
        assert "Left Arm" in config["generation"]["limits"]

    def test_surcharge_illisible(self):
        with pytest.raises(ConfigError):
            parse_override("training.lr")

    def test_surcharge_typee(self):
        assert parse_override("eval.noise_sigmas=[0, 0.5]") == {"eval": {"noise_sigmas": [0, 0.5]}}
        assert parse_override("training.resume=") == {"training": {"resume": None}}

    @pytest.mark.parametrize("item", [
        "training.stage=warmup",
        "training.optimizer=rmsprop",
        "eval.input=video",
        "ablate.mode=depth",
        "network.branches.pose=false",
        "eval.noise_sigmas=[0.5, 1.0]",
        "seed=-1",
    ])
    def test_valeurs_refusees(self, item):
        with pytest.raises(ConfigError):
            resolve_config(None, overrides=[item])

    def test_fichier_introuvable(self, tmp_path):
        with pytest.raises(ConfigError):
            resolve_config(tmp_path / "absent.yaml")

    def test_yaml_invalide(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("training: [1, 2\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            resolve_config(path)

    def test_graine_env_non_entiere(self, monkeypatch):
        monkeypatch.setenv("EGOPOSE_SEED", "sept")
        with pytest.raises(ConfigError):
            resolve_config(None)


class TestChemins:
    def test_derives_de_out(self, tmp_path):
        config = resolve_config(None, out=tmp_path / "run")
        assert dataset_dir(config) == tmp_path / "run" / "dataset"
        assert checkpoint_path(config) == tmp_path / "run" / "train" / "best.ckpt"

    def test_explicites(self, tmp_path):
        config = resolve_config(None, overrides=[f"paths.dataset={tmp_path / 'ds'}"])
        assert dataset_dir(config) == tmp_path / "ds"

    def test_empreinte_stable(self, tmp_path):
        a, b = resolve_config(None, seed=4), resolve_config(None, seed=4)
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash(resolve_config(None, seed=5))
        path = write_resolved(a, tmp_path)
        assert json.loads(path.read_text(encoding="utf-8"))["seed"] == 4


class TestRapports:
    def test_nettoyage_json(self):
        payload = {"a": np.float32(1.5), "b": float("nan"), "c": np.arange(3), 4: np.bool_(True)}
        assert sanitize_for_json(payload) == {"a": 1.5, "b": None, "c": [0, 1, 2], "4": True}

    def test_cles_triees(self, tmp_path):
        path = write_json(tmp_path / "r.json", {"z": 1, "a": math.inf})
        text = path.read_text(encoding="utf-8")
        assert text.index('"a"') < text.index('"z"')
        assert json.loads(text) == {"a": None, "z": 1}

    def test_table_format_fixe(self, tmp_path):
        path = write_table(tmp_path / "t.csv", pd.DataFrame({"sigma": [0.0], "mpjpe": [1.0 / 3.0]}))
        assert path.read_text(encoding="utf-8") == "sigma,mpjpe\n0.000000,0.333333\n"
