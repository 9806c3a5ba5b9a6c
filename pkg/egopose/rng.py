"""
rng.py - Flux aléatoires dérivés d'une graine unique.

Chaque consommateur demande son propre flux via des labels stables
(ex: stream(seed, "clip", character_id, clip_idx)). Le générateur sous-jacent
est Philox (compteur), la clé est dérivée de la graine + hash des labels :
deux modules ne partagent jamais d'état implicite.
"""

from __future__ import annotations

import hashlib
from typing import Union

import numpy as np

Label = Union[str, int]


def _label_words(labels: tuple[Label, ...]) -> list[int]:
    digest = hashlib.sha256("/".join(str(x) for x in labels).encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def stream(seed: int, *labels: Label) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"graine négative: {seed}")
    entropy = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF, *_label_words(labels)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
