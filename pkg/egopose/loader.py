"""
loader.py - Assemblage des mini-batches (heatmaps rendues, images, cibles 3D).

Les batches sont construits par un pool de threads avec une file bornée
(`prefetch` batches d'avance) ; l'ordre de sortie est celui des indices,
donc identique quel que soit le nombre de workers.
"""

from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from egopose import rng
from egopose.dataset import SampleRecord
from egopose.errors import DatasetError
from egopose.heatmaps import render
from egopose.kinematics import IDENTITY, Skeleton
from egopose.synthgen import StickStyle, draw_record


@dataclass
class Batch:
    records: list[SampleRecord]
    heatmaps: np.ndarray            # (N, 15, S, S) float32
    pose: np.ndarray                # (N, J, 3) ; zéros si has_3d=False
    rot: np.ndarray                 # (N, J, 4) ; identité si has_3d=False
    has_3d: np.ndarray              # (N,) bool
    images: np.ndarray | None = None  # (N, H, W, 3) uint8

    def __len__(self) -> int:
        return len(self.records)


def assemble_batch(
    records: Sequence[SampleRecord],
    skel: Skeleton,
    sigma: float,
    hm_size: int,
    style: StickStyle | None = None,
) -> Batch:
    if not records:
        raise DatasetError("batch vide")
    n, j = len(records), skel.num_joints
    heatmaps = np.stack([render(r.joints2d, r.visible, sigma, hm_size) for r in records])
    pose = np.zeros((n, j, 3))
    rot = np.tile(IDENTITY, (n, j, 1))
    has_3d = np.array([r.has_3d for r in records], dtype=bool)
    for i, r in enumerate(records):
        if r.has_3d:
            pose[i] = r.pose3d
            rot[i] = r.rotations
    images = None
    if style is not None:
        images = np.stack([draw_record(r, skel, style, hm_size) for r in records])
    return Batch(list(records), heatmaps, pose, rot, has_3d, images)


class BatchLoader:
    def __init__(
        self,
        records: Sequence[SampleRecord],
        skel: Skeleton,
        batch_size: int,
        sigma: float,
        hm_size: int,
        style: StickStyle | None = None,
        shuffle: bool = False,
        seed: int = 0,
        workers: int = 0,
        prefetch: int = 4,
        min_batch: int = 1,
        max_batches: int | None = None,
    ) -> None:
        if batch_size < 1:
            raise DatasetError(f"batch_size invalide: {batch_size}")
        self.records = list(records)
        self.skel = skel
        self.batch_size = batch_size
        self.sigma = sigma
        self.hm_size = hm_size
        self.style = style
        self.shuffle = shuffle
        self.seed = seed
        self.workers = workers
        self.prefetch = max(prefetch, 1)
        self.min_batch = min_batch
        self.max_batches = max_batches
        self.epoch = 0

    def chunks(self, epoch: int) -> list[list[int]]:
        n = len(self.records)
        order = rng.stream(self.seed, "shuffle", epoch).permutation(n) if self.shuffle else np.arange(n)
        chunks = [order[i:i + self.batch_size].tolist() for i in range(0, n, self.batch_size)]
        chunks = [c for c in chunks if len(c) >= self.min_batch]
        return chunks[: self.max_batches] if self.max_batches else chunks

    def __len__(self) -> int:
        return len(self.chunks(0))

    def _assemble(self, idx: list[int]) -> Batch:
        return assemble_batch([self.records[i] for i in idx], self.skel, self.sigma, self.hm_size, self.style)

    def iterate(self, epoch: int) -> Iterator[Batch]:
        chunks = iter(self.chunks(epoch))
        if self.workers <= 0:
            for idx in chunks:
                yield self._assemble(idx)
            return
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            pending = deque(pool.submit(self._assemble, idx) for _, idx in zip(range(self.prefetch), chunks))
            while pending:
                batch = pending.popleft().result()
                nxt = next(chunks, None)
                if nxt is not None:
                    pending.append(pool.submit(self._assemble, nxt))
                yield batch

    def __iter__(self) -> Iterator[Batch]:
        batches = self.iterate(self.epoch)
        self.epoch += 1
        return batches
