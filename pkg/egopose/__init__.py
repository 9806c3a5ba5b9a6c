"""egopose - pose 3D égocentrique à l'échelle d'un bureau (données synthétiques, lifter, évaluation)."""

__version__ = "0.1.0"
