"""
config.py - Chargement et résolution de la configuration d'exécution.

Priorité (de la plus faible à la plus forte) :
  config/default.yaml < fichier --config < variables EGOPOSE_* < options CLI < --set
Toute clé inconnue est refusée avec son chemin pointé (ex: training.lr).
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Iterable, Mapping

import yaml

from egopose.errors import ConfigError

logger = logging.getLogger("egopose.config")

PROJECT_DIR = Path(__file__).resolve().parent.parent
DEFAULT_CONFIG_PATH = PROJECT_DIR / "config" / "default.yaml"

# sous-arbres dont les clés sont libres (noms d'articulations / d'actions)
FREE_FORM = {"generation.limits", "generation.actions"}


def load_yaml(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"fichier de configuration introuvable: {path}")
    try:
        with path.open("r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: YAML invalide ({e})") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: un dictionnaire est attendu à la racine")
    return data


def load_defaults() -> dict[str, Any]:
    return load_yaml(DEFAULT_CONFIG_PATH)


def merge(base: dict[str, Any], override: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    """Fusion récursive de `override` dans une copie de `base` ; clé inconnue => ConfigError."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        dotted = f"{prefix}{key}"
        if prefix.rstrip(".") in FREE_FORM:
            out[key] = copy.deepcopy(value)
            continue
        if key not in out:
            raise ConfigError(f"clé de configuration inconnue: {dotted}")
        current = out[key]
        if isinstance(current, dict):
            if not isinstance(value, Mapping):
                raise ConfigError(f"{dotted}: une section est attendue, reçu {value!r}")
            out[key] = merge(current, value, dotted + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(item: str) -> dict[str, Any]:
    """'training.lr=0.01' -> {'training': {'lr': 0.01}} (valeur lue comme scalaire YAML)."""
    if "=" not in item:
        raise ConfigError(f"surcharge illisible (attendu cle.pointee=valeur): {item!r}")
    dotted, raw = item.split("=", 1)
    keys = [k for k in dotted.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"surcharge sans clé: {item!r}")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as e:
        raise ConfigError(f"valeur illisible pour {dotted}: {e}") from e
    tree: dict[str, Any] = {keys[-1]: value}
    for key in reversed(keys[:-1]):
        tree = {key: tree}
    return tree


def env_overrides() -> dict[str, Any]:
    """EGOPOSE_SEED / EGOPOSE_OUT (lus après load_dotenv)."""
    out: dict[str, Any] = {}
    seed = os.getenv("EGOPOSE_SEED")
    if seed:
        try:
            out["seed"] = int(seed)
        except ValueError as e:
            raise ConfigError(f"EGOPOSE_SEED doit être un entier, reçu {seed!r}") from e
    if os.getenv("EGOPOSE_OUT"):
        out["paths"] = {"out": os.getenv("EGOPOSE_OUT")}
    return out


def validate(config: Mapping[str, Any]) -> None:
    if not isinstance(config.get("seed"), int) or config["seed"] < 0:
        raise ConfigError(f"seed: entier positif attendu, reçu {config.get('seed')!r}")
    training = config["training"]
    if training["stage"] not in {"detector", "lifter", "end2end"}:
        raise ConfigError(f"training.stage inconnu: {training['stage']}")
    if training["optimizer"] not in {"adam", "sgd"}:
        raise ConfigError(f"training.optimizer inconnu: {training['optimizer']}")
    if int(training["batch_size"]) < 1 or int(training["epochs"]) < 0:
        raise ConfigError("training.batch_size >= 1 et training.epochs >= 0 requis")
    if config["loss"]["rotation_target"] not in {"ground_truth", "predicted"}:
        raise ConfigError(f"loss.rotation_target inconnu: {config['loss']['rotation_target']}")
    if config["eval"]["input"] not in {"heatmaps", "images"}:
        raise ConfigError(f"eval.input inconnu: {config['eval']['input']}")
    if config["animate"]["source"] not in {"predicted", "ground_truth"}:
        raise ConfigError(f"animate.source inconnu: {config['animate']['source']}")
    if config["ablate"]["mode"] not in {"branches", "z_size", "hm_size", "mixed"}:
        raise ConfigError(f"ablate.mode inconnu: {config['ablate']['mode']}")
    if not config["network"]["branches"].get("pose", False):
        raise ConfigError("network.branches.pose: la branche pose est toujours active")
    sigmas = list(config["eval"]["noise_sigmas"])
    if not sigmas or sigmas[0] != 0 or sigmas != sorted(sigmas):
        raise ConfigError("eval.noise_sigmas: liste croissante commençant par 0 attendue")
    for split, n in config["generation"]["frames"].items():
        if int(n) < 0:
            raise ConfigError(f"generation.frames.{split}: nombre négatif")


def resolve_config(
    config_path: str | Path | None = None,
    seed: int | None = None,
    out: str | Path | None = None,
    overrides: Iterable[str] = (),
) -> dict[str, Any]:
    config = load_defaults()
    if config_path:
        config = merge(config, load_yaml(config_path))
    config = merge(config, env_overrides())
    if seed is not None:
        config["seed"] = int(seed)
    if out is not None:
        config["paths"]["out"] = str(out)
    for item in overrides:
        config = merge(config, parse_override(item))
    validate(config)
    return config


def canonical_json(config: Mapping[str, Any]) -> str:
    return json.dumps(config, sort_keys=True, ensure_ascii=False, default=str)


def config_hash(config: Mapping[str, Any]) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def write_resolved(config: Mapping[str, Any], out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "resolved_config.json"
    with path.open("w", encoding="utf-8") as f:
        json.dump(config, f, indent=2, sort_keys=True, ensure_ascii=False, default=str)
        f.write("\n")
    return path


def project_path(value: str | Path) -> Path:
    """Chemin relatif résolu depuis le dossier courant, sinon depuis la racine du projet."""
    path = Path(value).expanduser()
    if path.is_absolute() or path.exists():
        return path
    candidate = PROJECT_DIR / path
    return candidate if candidate.exists() else path


def out_dir(config: Mapping[str, Any]) -> Path:
    return Path(config["paths"]["out"]).expanduser()


def dataset_dir(config: Mapping[str, Any]) -> Path:
    return Path(config["paths"]["dataset"]) if config["paths"].get("dataset") else out_dir(config) / "dataset"


def checkpoint_path(config: Mapping[str, Any]) -> Path:
    if config["paths"].get("checkpoint"):
        return Path(config["paths"]["checkpoint"])
    return out_dir(config) / "train" / "best.ckpt"
