"""
errors.py - Hiérarchie d'exceptions du pipeline egopose.

Le CLI traduit ces exceptions en codes de sortie :
  - ConfigError            -> 2
  - autre EgoPoseError     -> 1
  - OSError                -> 1
"""

from __future__ import annotations


class EgoPoseError(Exception):
    """Racine de toutes les erreurs métier du projet."""


class DimensionError(EgoPoseError, ValueError):
    """Formes de tenseurs / tableaux incompatibles."""


class NumericError(EgoPoseError, ArithmeticError):
    """Valeur NaN ou Inf produite par une opération."""


class GradientError(EgoPoseError):
    """Mauvais usage de la bande (tape) ou gradients manquants."""


class KinematicsError(EgoPoseError, ValueError):
    pass


class CameraError(EgoPoseError, ValueError):
    pass


class ConfigError(EgoPoseError, ValueError):
    """Configuration invalide : fichier mal formé, clé inconnue, override illisible."""


class DatasetError(EgoPoseError):
    pass


class CheckpointError(EgoPoseError):
    pass


class EvaluationError(EgoPoseError, ValueError):
    """Évaluation impossible : ensemble dégénéré, action inconnue, pipeline non entraîné."""
