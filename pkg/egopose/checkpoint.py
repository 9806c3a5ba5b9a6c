"""
checkpoint.py - Format de checkpoint EGOCKPT1.

Disposition du fichier (little-endian):
  b"EGOCKPT1" | u64 longueur du manifeste | manifeste JSON (utf-8) | blob

Le manifeste liste {name, kind, shape, dtype, byte_offset, byte_length}
(offsets relatifs au début du blob) plus un bloc `metadata` libre.
Aller-retour bit à bit exact : les tableaux sont écrits tels quels.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from egopose.errors import CheckpointError
from egopose.params import ParamStore

logger = logging.getLogger("egopose.checkpoint")

MAGIC = b"EGOCKPT1"
KINDS = ("param", "buffer", "adam_m", "adam_v", "adam_t")


@dataclass
class Checkpoint:
    metadata: dict[str, Any] = field(default_factory=dict)
    arrays: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)

    def prefixes(self) -> set[str]:
        return {name.split("/", 1)[0] for _, name in self.arrays}

    def load_into(self, prefix: str, store: ParamStore, with_optimizer: bool = True) -> None:
        """Recopie les tableaux `prefix/...` dans `store` (formes vérifiées)."""
        found = False
        for (kind, full), arr in self.arrays.items():
            if not full.startswith(prefix + "/"):
                continue
            name = full[len(prefix) + 1:]
            found = True
            if kind == "param":
                if name not in store:
                    raise CheckpointError(f"paramètre inattendu dans le checkpoint: {full}")
                store.assign(name, arr)
            elif kind == "buffer":
                if name not in store.buffers:
                    raise CheckpointError(f"buffer inattendu dans le checkpoint: {full}")
                store.assign_buffer(name, arr)
            elif with_optimizer:
                st = store.state.setdefault(name, {})
                st[kind.split("_", 1)[1]] = arr.copy()
        if not found:
            raise CheckpointError(f"aucun tenseur '{prefix}/...' dans le checkpoint")
        missing = [n for n in store if ("param", f"{prefix}/{n}") not in self.arrays]
        if missing:
            raise CheckpointError(f"paramètres absents du checkpoint: {', '.join(missing[:5])}")
        store.steps = int(self.metadata.get("steps", {}).get(prefix, 0))


def _collect(stores: Mapping[str, ParamStore]) -> list[tuple[str, str, np.ndarray]]:
    items: list[tuple[str, str, np.ndarray]] = []
    for prefix in sorted(stores):
        store = stores[prefix]
        for name in store:
            items.append(("param", f"{prefix}/{name}", store[name].data))
        for name in sorted(store.buffers):
            items.append(("buffer", f"{prefix}/{name}", store.buffers[name]))
        for name in sorted(store.state):
            for key in ("m", "v", "t"):
                if key in store.state[name]:
                    items.append((f"adam_{key}", f"{prefix}/{name}", np.asarray(store.state[name][key])))
    return items


def save_checkpoint(path: str | Path, stores: Mapping[str, ParamStore], metadata: dict[str, Any] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(metadata or {})
    meta["steps"] = {prefix: stores[prefix].steps for prefix in sorted(stores)}

    entries = []
    chunks = []
    offset = 0
    for kind, name, arr in _collect(stores):
        le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        raw = le.tobytes()
        entries.append({
            "name": name,
            "kind": kind,
            "shape": list(arr.shape),
            "dtype": le.dtype.str,
            "byte_offset": offset,
            "byte_length": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)

    manifest = json.dumps({"format": MAGIC.decode(), "metadata": meta, "tensors": entries},
                          sort_keys=True, ensure_ascii=False).encode("utf-8")
    with path.open("wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        for raw in chunks:
            f.write(raw)
    logger.info(f"Checkpoint écrit: {path} ({len(entries)} tenseurs, {offset} octets)")
    return path


def read_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint introuvable: {path}")
    payload = path.read_bytes()
    if payload[:8] != MAGIC:
        raise CheckpointError(f"{path}: en-tête {payload[:8]!r} au lieu de {MAGIC!r}")
    (length,) = struct.unpack("<Q", payload[8:16])
    try:
        manifest = json.loads(payload[16:16 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: manifeste illisible ({e})") from e
    blob = memoryview(payload)[16 + length:]

    ckpt = Checkpoint(metadata=manifest.get("metadata", {}))
    for entry in manifest["tensors"]:
        if entry["kind"] not in KINDS:
            raise CheckpointError(f"{path}: type de tenseur inconnu {entry['kind']}")
        start, size = entry["byte_offset"], entry["byte_length"]
        if start + size > len(blob):
            raise CheckpointError(f"{path}: {entry['name']} dépasse la fin du fichier")
        arr = np.frombuffer(blob[start:start + size], dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
        ckpt.arrays[(entry["kind"], entry["name"])] = arr
    return ckpt
