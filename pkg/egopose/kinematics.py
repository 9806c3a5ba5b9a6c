"""
kinematics.py - Squelette 16 articulations, algèbre des quaternions,
cinématique directe (FK) et extraction des rotations locales r(P).

Conventions:
- quaternions stockés en tableaux numpy (..., 4) dans l'ordre (w, x, y, z),
  forme canonique w >= 0 ;
- repère caméra droitier, axe optique +Z orienté vers le corps ;
- position[j] = position[parent(j)] + GlobalRot(parent(j)) · rest_offset[j].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from egopose.errors import ConfigError, KinematicsError

logger = logging.getLogger("egopose.kinematics")

PROJECT_DIR = Path(__file__).resolve().parent.parent
DEFAULT_SKELETON_PATH = PROJECT_DIR / "config" / "skeleton.yaml"

HEAD = "Head"
IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

UPPER_BODY = ("Neck", "Head", "Left Arm", "Left Elbow", "Left Hand", "Right Arm", "Right Elbow", "Right Hand")
LOWER_BODY = ("Left Leg", "Left Knee", "Left Foot", "Left Toe", "Right Leg", "Right Knee", "Right Foot", "Right Toe")


# ============================================================
# QUATERNIONS
# ============================================================
def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise KinematicsError("quaternion de norme nulle")
    return q / n


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Choisit le représentant w >= 0 (si w = 0 : première composante non nulle > 0)."""
    q = np.array(q, dtype=np.float64)
    lead = q[..., 0]
    for axis in (1, 2, 3):
        lead = np.where(lead == 0, q[..., axis], lead)
    return np.where((lead < 0)[..., None], -q, q)


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Produit de Hamilton a ⊗ b, renormalisé."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    out = np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)
    return quat_normalize(out)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Applique la rotation q au(x) vecteur(s) v."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_from_axis_angle(axis: np.ndarray, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise KinematicsError("axe de rotation nul")
    half = 0.5 * np.asarray(angle, dtype=np.float64)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis / n], axis=-1)


def quat_angle(q: np.ndarray) -> np.ndarray:
    """Angle de rotation (distance géodésique à l'identité), en radians dans [0, π]."""
    q = np.asarray(q, dtype=np.float64)
    return 2.0 * np.arctan2(np.linalg.norm(q[..., 1:], axis=-1), np.abs(q[..., 0]))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.moveaxis(quat_normalize(q), -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
    ], axis=-2)


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Conversion matrice de rotation 3×3 -> quaternion canonique (méthode de Shepperd)."""
    m = np.asarray(m, dtype=np.float64)
    trace = np.trace(m)
    if trace > 0:
        s = 2.0 * np.sqrt(trace + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_canonical(quat_normalize(np.array(q)))


def _perpendicular(u: np.ndarray) -> np.ndarray:
    # axe de base de plus petite composante (premier indice en cas d'égalité)
    k = int(np.argmin(np.abs(u)))
    e = np.zeros(3)
    e[k] = 1.0
    axis = np.cross(u, e)
    return axis / np.linalg.norm(axis)


def quat_from_two_vectors(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotation minimale envoyant la direction de u sur celle de v."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise KinematicsError("quat_from_two_vectors: vecteur de longueur nulle")
    u, v = u / nu, v / nv
    w = 1.0 + float(np.dot(u, v))
    if w < 1e-12:
        axis = _perpendicular(u)
        return quat_canonical(np.array([0.0, *axis]))
    q = np.array([w, *np.cross(u, v)])
    return quat_canonical(q / np.linalg.norm(q))


def slerp(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    """Interpolation sphérique par le plus court chemin ; slerp(a,b,0)=a, slerp(a,b,1)=b."""
    a = quat_normalize(a)
    b = quat_normalize(b)
    dot = np.sum(a * b, axis=-1, keepdims=True)
    b = np.where(dot < 0, -b, b)
    dot = np.abs(dot)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    sin_theta = np.sin(theta)
    small = sin_theta < 1e-9
    safe = np.where(small, 1.0, sin_theta)
    wa = np.where(small, 1.0 - t, np.sin((1.0 - t) * theta) / safe)
    wb = np.where(small, t, np.sin(t * theta) / safe)
    return quat_normalize(wa * a + wb * b)


def kabsch(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Rotation R (det = +1) minimisant sum ||R·source_i - target_i||²."""
    h = np.asarray(source, dtype=np.float64).T @ np.asarray(target, dtype=np.float64)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    return vt.T @ np.diag([1.0, 1.0, d]) @ u.T


# ============================================================
# SQUELETTE
# ============================================================
@dataclass(frozen=True, eq=False)
class Skeleton:
    joint_names: tuple[str, ...]
    parent: tuple[int, ...]
    rest_offset: np.ndarray
    heatmap_joints: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        n = len(self.joint_names)
        offsets = np.asarray(self.rest_offset, dtype=np.float64)
        if offsets.shape != (n, 3) or len(self.parent) != n:
            raise KinematicsError(f"squelette incohérent: {n} noms, {len(self.parent)} parents, offsets {offsets.shape}")
        roots = [j for j, p in enumerate(self.parent) if p < 0 or p == j]
        if len(roots) != 1:
            raise KinematicsError(f"le squelette doit avoir exactement une racine, trouvé {len(roots)}")
        for j, p in enumerate(self.parent):
            if j != roots[0] and not 0 <= p < j:
                raise KinematicsError(
                    f"parent de '{self.joint_names[j]}' invalide ({p}): les parents doivent précéder leurs enfants"
                )
            if j != roots[0] and np.linalg.norm(offsets[j]) <= 0:
                raise KinematicsError(f"offset de repos nul pour '{self.joint_names[j]}'")
        hm = self.heatmap_joints or tuple(j for j, name in enumerate(self.joint_names) if name != HEAD)
        excluded = set(range(n)) - set(hm)
        if len(hm) != n - 1 or [self.joint_names[j] for j in excluded] != [HEAD]:
            raise KinematicsError("heatmap_joints doit exclure exactement l'articulation Head")
        offsets.setflags(write=False)
        object.__setattr__(self, "rest_offset", offsets)
        object.__setattr__(self, "parent", tuple(-1 if j == roots[0] else p for j, p in enumerate(self.parent)))
        object.__setattr__(self, "heatmap_joints", tuple(hm))

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    @property
    def root(self) -> int:
        return self.parent.index(-1)

    @property
    def limb_joints(self) -> tuple[int, ...]:
        """Articulations non racines, dans l'ordre des indices (une par membre)."""
        return tuple(j for j in range(self.num_joints) if self.parent[j] >= 0)

    def index(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise KinematicsError(f"articulation inconnue: {name}") from None

    def children(self, j: int) -> tuple[int, ...]:
        return tuple(c for c, p in enumerate(self.parent) if p == j)

    def scaled(self, factor: float) -> "Skeleton":
        if factor <= 0:
            raise KinematicsError(f"facteur d'échelle invalide: {factor}")
        return Skeleton(self.joint_names, self.parent, self.rest_offset * factor, self.heatmap_joints)

    def limb_matrix(self) -> np.ndarray:
        """Matrice (L, J) : ligne l = +1 sur l'enfant, -1 sur le parent du membre l."""
        limbs = self.limb_joints
        m = np.zeros((len(limbs), self.num_joints))
        for row, j in enumerate(limbs):
            m[row, j] = 1.0
            m[row, self.parent[j]] = -1.0
        return m

    def rest_pose(self, root_pos: Sequence[float] = (0.0, 0.0, 0.0)) -> np.ndarray:
        return forward_kinematics(np.tile(IDENTITY, (self.num_joints, 1)), self, np.asarray(root_pos, dtype=np.float64))

    def to_dict(self) -> dict:
        return {
            "joints": [
                {"name": name, "parent": (self.joint_names[p] if p >= 0 else None),
                 "offset": [float(x) for x in self.rest_offset[j]]}
                for j, (name, p) in enumerate(zip(self.joint_names, self.parent))
            ]
        }


def skeleton_from_dict(data: dict) -> Skeleton:
    try:
        joints = data["joints"]
        names = tuple(str(j["name"]) for j in joints)
        parents = tuple(-1 if j.get("parent") is None else names.index(j["parent"]) for j in joints)
        offsets = np.array([j["offset"] for j in joints], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"définition de squelette invalide: {e}") from e
    return Skeleton(names, parents, offsets)


def load_skeleton(path: str | Path | None = None) -> Skeleton:
    path = Path(path) if path else DEFAULT_SKELETON_PATH
    if not path.exists():
        raise ConfigError(f"fichier squelette introuvable: {path}")
    with path.open("r", encoding="utf-8") as f:
        data = yaml.safe_load(f)
    return skeleton_from_dict(data or {})


def default_skeleton() -> Skeleton:
    return load_skeleton(DEFAULT_SKELETON_PATH)


# ============================================================
# CINÉMATIQUE
# ============================================================
def forward_kinematics(rot: np.ndarray, skel: Skeleton, root_pos) -> np.ndarray:
    """
    rot: (..., J, 4) rotations locales ; root_pos: (..., 3).
    Retourne les positions (..., J, 3).
    """
    rot = np.asarray(rot, dtype=np.float64)
    root_pos = np.asarray(root_pos, dtype=np.float64)
    if rot.shape[-2:] != (skel.num_joints, 4):
        raise KinematicsError(f"rotations de forme {rot.shape} pour {skel.num_joints} articulations")
    lead = rot.shape[:-2]
    glob = np.zeros(rot.shape)
    pos = np.zeros(lead + (skel.num_joints, 3))
    for j, p in enumerate(skel.parent):
        if p < 0:
            glob[..., j, :] = quat_normalize(rot[..., j, :])
            pos[..., j, :] = root_pos
        else:
            glob[..., j, :] = quat_mul(glob[..., p, :], rot[..., j, :])
            pos[..., j, :] = pos[..., p, :] + quat_rotate(glob[..., p, :], skel.rest_offset[j])
    return pos


def limb_vectors(pose: np.ndarray, skel: Skeleton) -> np.ndarray:
    """Vecteurs parent -> enfant pour chaque articulation non racine, ordre des indices."""
    pose = np.asarray(pose, dtype=np.float64)
    limbs = np.array(skel.limb_joints)
    parents = np.array([skel.parent[j] for j in limbs])
    return pose[..., limbs, :] - pose[..., parents, :]


def extract_rotations(pose: np.ndarray, skel: Skeleton) -> np.ndarray:
    """
    r(P) : rotations locales (J, 4) reproduisant P par FK.

    - articulation à un seul enfant : swing minimal alignant l'offset de
      repos de l'enfant sur l'os observé (twist nul) ;
    - racine / articulation à plusieurs enfants : rotation complète par
      Kabsch sur les offsets des enfants ;
    - feuille : identité (non observable).
    """
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (skel.num_joints, 3):
        raise KinematicsError(f"pose de forme {pose.shape}, attendu ({skel.num_joints}, 3)")
    bones = limb_vectors(pose, skel)
    for j, bone in zip(skel.limb_joints, bones):
        if not np.linalg.norm(bone) > 0:
            raise KinematicsError(f"os de longueur nulle vers '{skel.joint_names[j]}'")

    rot = np.tile(IDENTITY, (skel.num_joints, 1))
    glob = np.tile(IDENTITY, (skel.num_joints, 1))
    for j, p in enumerate(skel.parent):
        parent_glob = IDENTITY if p < 0 else glob[p]
        kids = skel.children(j)
        if len(kids) == 1:
            c = kids[0]
            local_dir = quat_rotate(quat_conj(parent_glob), pose[c] - pose[j])
            local = quat_from_two_vectors(skel.rest_offset[c], local_dir)
        elif kids:
            source = skel.rest_offset[list(kids)]
            target = pose[list(kids)] - pose[j]
            g = quat_from_matrix(kabsch(source, target))
            local = quat_mul(quat_conj(parent_glob), g)
        else:
            local = IDENTITY
        rot[j] = quat_canonical(local)
        glob[j] = quat_mul(parent_glob, rot[j])
    return rot
