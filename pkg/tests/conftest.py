import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from egopose.config import resolve_config  # noqa: E402
from egopose.kinematics import default_skeleton, forward_kinematics  # noqa: E402
from egopose.synthgen import sample_pose, parse_limits  # noqa: E402

# Réglages "jouet" : quelques dizaines de frames, réseaux minuscules.
TINY_OVERRIDES = [
    "generation.frames={train: 24, test: 12, val: 12}",
    "generation.characters={train: 1, test: 1, val: 1}",
    "generation.keyframes_per_clip=2",
    "generation.steps_between=4",
    "generation.workers=1",
    "network.z_size=8",
    "network.hm_size=16",
    "network.encoder_channels=[4, 8]",
    "network.pose_hidden=[16]",
    "network.rot_hidden=[16]",
    "network.hm_hidden=[16]",
    "network.hm_channels=[4, 4, 4]",
    "network.detector_channels=[4, 4, 4, 4, 4, 4]",
    "network.detector_head_channels=4",
    "training.epochs=1",
    "training.batch_size=8",
    "training.workers=0",
    "training.norm_samples=4",
    "eval.noise_sigmas=[0.0, 0.5]",
    "eval.noise_seeds=[0, 1]",
    "ablate.seeds=[0]",
]


@pytest.fixture(autouse=True)
def _isolate_env(monkeypatch):
    for name in ("EGOPOSE_CONFIG", "EGOPOSE_OUT", "EGOPOSE_SEED", "EGOPOSE_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def skel():
    return default_skeleton()


@pytest.fixture
def tiny_config(tmp_path):
    return resolve_config(None, seed=3, out=tmp_path / "run", overrides=TINY_OVERRIDES)


@pytest.fixture
def tiny_args(tmp_path):
    """Arguments CLI équivalents à tiny_config."""
    args = ["--seed", "3", "--out", str(tmp_path / "run")]
    for item in TINY_OVERRIDES:
        args += ["--set", item]
    return args


def random_rotations(skel, seed: int, count: int):
    """Rotations locales tirées dans les limites par défaut (twist nul)."""
    cfg = resolve_config(None)
    limits = parse_limits(cfg["generation"]["limits"], skel)
    gen = np.random.default_rng(seed)
    return np.stack([sample_pose(gen, limits, skel) for _ in range(count)])


def random_poses(skel, seed: int, count: int):
    rot = random_rotations(skel, seed, count)
    root = np.random.default_rng(seed + 1).normal(0.0, 0.05, size=(count, 3)) + np.array([0.0, -0.1, 0.2])
    return forward_kinematics(rot, skel, root), rot
