"""
Tests de bout en bout de la ligne de commande (jeu de données jouet).

Execute : pytest tests/test_cli.py -v
          pytest tests/test_cli.py -v -m slow   (détecteur + balayage de bruit)
"""

import importlib.util
import json
from pathlib import Path
from types import SimpleNamespace

import pandas as pd
import pytest

from egopose.cli import ablation_variants, main, parse_args
from egopose.config import resolve_config
from egopose.network import BranchConfig


def run(command, args, *extra):
    return main([command, *args, *extra])


def read_json(path):
    return json.loads(path.read_text(encoding="utf-8"))


@pytest.fixture
def generated(tiny_args, tmp_path):
    assert run("generate", tiny_args) == 0
    return tmp_path / "run"


@pytest.fixture
def trained(generated, tiny_args):
    assert run("train", tiny_args) == 0
    return generated


class TestArguments:
    def test_options_communes(self):
        args = parse_args(["eval", "--seed", "4", "--set", "a.b=1", "--set", "c=2", "--out", "x"])
        assert args.command == "eval"
        assert args.seed == 4 and args.out == "x"
        assert args.overrides == ["a.b=1", "c=2"]

    def test_commande_inconnue(self):
        with pytest.raises(SystemExit):
            parse_args(["deploy"])


class TestGenerate:
    def test_jeu_de_donnees_complet(self, generated):
        ds = generated / "dataset"
        for name in ("train.egodata", "test.egodata", "val.egodata", "manifest.json", "quality.json",
                     "resolved_config.json"):
            assert (ds / name).exists()
        assert not (generated / "dataset.partial").exists()
        assert read_json(ds / "manifest.json")["seed"] == 3

    def test_deterministe(self, tiny_args, tmp_path):
        assert run("generate", tiny_args, "--out", str(tmp_path / "a")) == 0
        assert run("generate", tiny_args, "--out", str(tmp_path / "b")) == 0
        for name in ("train.egodata", "test.egodata", "val.egodata", "manifest.json"):
            assert (tmp_path / "a" / "dataset" / name).read_bytes() == (tmp_path / "b" / "dataset" / name).read_bytes()

    def test_configuration_malformee(self, tiny_args, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("generation:\n  frames: {train: 10\n", encoding="utf-8")
        assert run("generate", tiny_args, "--config", str(bad)) == 2
        assert not (tmp_path / "run" / "dataset").exists()
        assert not (tmp_path / "run" / "dataset.partial").exists()

    def test_cle_inconnue(self, tiny_args, tmp_path):
        assert run("generate", tiny_args, "--set", "generation.colour=red") == 2
        assert not (tmp_path / "run" / "dataset").exists()

    def test_limite_invalide_sans_dossier_partiel(self, tiny_args, tmp_path):
        assert run("generate", tiny_args, "--set", "generation.limits={Tail: {max_deg: 5}}") == 2
        assert not (tmp_path / "run" / "dataset.partial").exists()


class TestTrainEval:
    def test_jeu_de_donnees_absent(self, tiny_args):
        assert run("train", tiny_args) == 1

    def test_checkpoint_absent(self, generated, tiny_args):
        assert run("eval", tiny_args) == 1

    def test_oracle_a_zero(self, generated, tiny_args):
        assert run("eval", tiny_args, "--set", "eval.oracle=true") == 0
        report = read_json(generated / "eval" / "eval_report.json")
        assert report["overall_mpjpe_mm"] == 0.0
        assert all(v == 0.0 for v in report["per_action_mm"].values())
        assert report["config"]["checkpoint"] is None
        assert report["diagnostics"]["mean_pose_baseline_mm"] > 0.0

    def test_entrainement_puis_evaluation(self, trained, tiny_args):
        train_dir = trained / "train"
        assert (train_dir / "best.ckpt").exists() and (train_dir / "last.ckpt").exists()
        losses = pd.read_csv(train_dir / "losses.csv")
        assert list(losses["epoch"]) == [0, 1]

        assert run("eval", tiny_args) == 0
        report = read_json(trained / "eval" / "eval_report.json")
        assert report["n_frames"] == 12
        assert report["pa_mpjpe_mm"] <= report["overall_mpjpe_mm"] + 1e-9
        assert report["config"]["checkpoint_config_hash"]
        assert 0.0 <= report["diagnostics"]["visible_rate"] <= 1.0
        per_action = pd.read_csv(trained / "eval" / "per_action.csv")
        assert per_action.columns[-1] == "All"

    def test_reprise(self, trained, tiny_args):
        best = trained / "train" / "best.ckpt"
        assert run("train", tiny_args, "--set", f"training.resume={best}", "--set", "training.epochs=1") == 0
        losses = pd.read_csv(trained / "train" / "losses.csv")
        assert losses["epoch"].iloc[0] >= 0
        assert len(losses) == 2

    def test_balayage_sans_detecteur(self, trained, tiny_args):
        assert run("noise-sweep", tiny_args) == 1

    def test_supervision_mixte(self, generated, tiny_args):
        assert run("train", tiny_args, "--set", "training.two_d_only_fraction=0.5") == 0
        assert (generated / "train" / "best.ckpt").exists()


class TestAnimate:
    def test_verite_terrain(self, generated, tiny_args):
        assert run("animate", tiny_args, "--set", "animate.source=ground_truth") == 0
        out = generated / "animate"
        for name in ("motion.json", "motion.bvh", "traces.json", "trace_Left_Elbow.csv"):
            assert (out / name).exists()
        traces = read_json(out / "traces.json")
        assert traces["Left Knee"]["mean_error_deg"] == pytest.approx(0.0, abs=1e-6)

    def test_rotations_predites(self, trained, tiny_args):
        assert run("animate", tiny_args) == 0
        motion = read_json(trained / "animate" / "motion.json")
        assert motion["source"] == "predicted"
        assert motion["num_frames"] == 6

    def test_clip_absent(self, generated, tiny_args):
        assert run("animate", tiny_args, "--set", "animate.source=ground_truth", "--set", "animate.clip=99") == 1


class TestAblate:
    def test_variantes(self):
        config = resolve_config(None)
        assert [tag for tag, _ in ablation_variants(config)] == list(BranchConfig.MODES)
        config["ablate"]["mode"] = "mixed"
        assert [tag for tag, _ in ablation_variants(config)] == ["3d=100%", "3d=50%+2d", "3d=50%"]
        config["ablate"]["mode"] = "hm_size"
        assert [tag for tag, _ in ablation_variants(config)] == ["hm=8", "hm=16", "hm=24", "hm=36", "hm=48"]

    def test_taille_latente(self, generated, tiny_args):
        assert run("ablate", tiny_args, "--set", "ablate.mode=z_size", "--set", "ablate.z_grid=[4, 8]") == 0
        table = pd.read_csv(generated / "ablate" / "ablation_z_size.csv")
        assert list(table["variant"]) == ["z=4", "z=8"]
        assert list(table.columns) == ["mode", "variant", "seed_0", "mean_mpjpe_mm", "std_mpjpe_mm", "mean_pa_mpjpe_mm"]
        assert (table["std_mpjpe_mm"] == 0.0).all()

    @pytest.mark.slow
    def test_branches(self, generated, tiny_args):
        assert run("ablate", tiny_args) == 0
        table = pd.read_csv(generated / "ablate" / "ablation_branches.csv")
        assert list(table["variant"]) == list(BranchConfig.MODES)


@pytest.mark.slow
class TestPipelineImages:
    def test_balayage_sigma_nul_egal_eval_images(self, generated, tiny_args):
        assert run("train", tiny_args, "--set", "training.stage=end2end") == 0
        assert run("eval", tiny_args, "--set", "eval.input=images") == 0
        report = read_json(generated / "eval" / "eval_report.json")
        assert run("noise-sweep", tiny_args) == 0
        table = pd.read_csv(generated / "noise_sweep" / "noise_sweep.csv")
        assert list(table["sigma"]) == [0.0, 0.5]
        assert table["mean_mpjpe_mm"].iloc[0] == pytest.approx(report["overall_mpjpe_mm"], abs=1e-5)
        assert table["std_mpjpe_mm"].iloc[0] == 0.0

class TestScriptPipeline:
    @pytest.fixture
    def script(self):
        path = Path(__file__).resolve().parent.parent / "scripts" / "run_pipeline.py"
        found = importlib.util.spec_from_file_location("run_pipeline", path)
        module = importlib.util.module_from_spec(found)
        found.loader.exec_module(module)
        return module

    def test_commande_egopose(self, script, monkeypatch):
        monkeypatch.setenv("EGOPOSE_CONFIG", "config/desk.yaml")
        cmd = script.egopose("train", "runs/x", "training.stage=lifter")
        assert cmd[1:] == ["-m", "egopose", "train", "--out", "runs/x", "--config", "config/desk.yaml",
                           "--set", "training.stage=lifter"]

    def test_etape_en_echec(self, script, monkeypatch):
        monkeypatch.setattr(script.subprocess, "run", lambda cmd, cwd: SimpleNamespace(returncode=3))
        with pytest.raises(SystemExit) as exc:
            script.run_step("échec", ["false"])
        assert exc.value.code == 3
