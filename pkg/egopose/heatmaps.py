"""
heatmaps.py - Heatmaps gaussiennes des 15 articulations visibles.

Convention de coordonnées : la cellule (ligne i, colonne j) a son centre au
point (u=j, v=i) ; les coordonnées heatmap sont les pixels image multipliés
par hm_size / image_size (47/368 par défaut).
"""

from __future__ import annotations

import numpy as np

from egopose.errors import DimensionError

HM_SIZE = 47
DEFAULT_SIGMA = 2.0
VISIBILITY_THRESHOLD = 0.05
WINDOW = 5
RESAMPLE_SIZES = (8, 16, 24, 36, 48)

# largeur effective (en cellules) de la gaussienne après accentuation dans decode()
_SHARP_SIGMA = 0.8
_LOG_FLOOR = 1e-12


def image_to_heatmap(uv: np.ndarray, image_size: int, hm_size: int = HM_SIZE) -> np.ndarray:
    return np.asarray(uv, dtype=np.float64) * (hm_size / image_size)


def heatmap_to_image(uv: np.ndarray, image_size: int, hm_size: int = HM_SIZE) -> np.ndarray:
    return np.asarray(uv, dtype=np.float64) * (image_size / hm_size)


# ============================================================
# RENDU
# ============================================================
def render(joints: np.ndarray, visible: np.ndarray, sigma: float = DEFAULT_SIGMA, size: int = HM_SIZE) -> np.ndarray:
    """
    joints: (J, 2) en coordonnées heatmap ; visible: (J,) booléens.
    Retourne (J, size, size) float32, pic ramené à 1, canal nul si invisible.
    """
    if not sigma > 0:
        raise ValueError(f"sigma doit être > 0, reçu {sigma}")
    joints = np.asarray(joints, dtype=np.float64).reshape(-1, 2)
    visible = np.asarray(visible, dtype=bool).reshape(-1)
    if visible.shape[0] != joints.shape[0]:
        raise DimensionError(f"{joints.shape[0]} articulations pour {visible.shape[0]} drapeaux de visibilité")
    grid = np.arange(size, dtype=np.float64)
    gx = np.exp(-((grid[None, :] - joints[:, :1]) ** 2) / (2.0 * sigma * sigma))
    gy = np.exp(-((grid[None, :] - joints[:, 1:]) ** 2) / (2.0 * sigma * sigma))
    peak = gx.max(axis=1) * gy.max(axis=1)
    scale = np.where(visible & (peak > 0), 1.0 / np.where(peak > 0, peak, 1.0), 0.0)
    hm = gy[:, :, None] * gx[:, None, :] * scale[:, None, None]
    return np.clip(hm, 0.0, 1.0).astype(np.float32)


def render_batch(joints: np.ndarray, visible: np.ndarray, sigma: float = DEFAULT_SIGMA, size: int = HM_SIZE) -> np.ndarray:
    """(N, J, 2) -> (N, J, size, size)."""
    joints = np.asarray(joints, dtype=np.float64)
    if joints.ndim != 3:
        raise DimensionError(f"render_batch: tableau N×J×2 attendu, reçu {joints.shape}")
    out = np.zeros((joints.shape[0], joints.shape[1], size, size), dtype=np.float32)
    for i, (j, v) in enumerate(zip(joints, visible)):
        out[i] = render(j, v, sigma, size)
    return out


# ============================================================
# DÉCODAGE
# ============================================================
def decode(
    hm: np.ndarray,
    threshold: float = VISIBILITY_THRESHOLD,
    sigma: float = DEFAULT_SIGMA,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Retourne (joints (J, 2), confiance (J,), visible (J,)).

    Position : soft-argmax du log de la heatmap dans une fenêtre 5×5 autour
    de l'argmax (température (0.8/σ)², ce qui rend l'estimation quasi exacte
    pour une gaussienne). Argmax ex aequo : plus petit indice linéaire.
    Confiance : valeur du pic ; pic < threshold => invisible.
    """
    hm = np.asarray(hm, dtype=np.float64)
    if hm.ndim != 3:
        raise DimensionError(f"decode: pile J×H×W attendue, reçu {hm.shape}")
    n, h, w = hm.shape
    beta = (sigma / _SHARP_SIGMA) ** 2
    half = WINDOW // 2
    joints = np.zeros((n, 2))
    confidence = np.zeros(n)
    visible = np.zeros(n, dtype=bool)
    for c in range(n):
        flat = int(np.argmax(hm[c]))
        row, col = divmod(flat, w)
        peak = float(hm[c, row, col])
        confidence[c] = max(peak, 0.0)
        joints[c] = (col, row)
        if peak < threshold:
            continue
        visible[c] = True
        r0, r1 = max(row - half, 0), min(row + half + 1, h)
        c0, c1 = max(col - half, 0), min(col + half + 1, w)
        window = np.maximum(hm[c, r0:r1, c0:c1], _LOG_FLOOR) / peak
        weights = np.exp(beta * np.log(window))
        total = weights.sum()
        rows, cols = np.mgrid[r0:r1, c0:c1]
        joints[c] = ((weights * cols).sum() / total, (weights * rows).sum() / total)
    return joints, confidence, visible


# ============================================================
# RÉÉCHANTILLONNAGE
# ============================================================
def _bilinear_matrix(src: int, dst: int) -> np.ndarray:
    """Matrice (dst, src) d'interpolation linéaire, x_src = x_dst · src / dst (bords répliqués)."""
    x = np.clip(np.arange(dst, dtype=np.float64) * (src / dst), 0.0, src - 1)
    lo = np.floor(x).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    frac = x - lo
    m = np.zeros((dst, src))
    m[np.arange(dst), lo] += 1.0 - frac
    m[np.arange(dst), hi] += frac
    return m


def resample(hm: np.ndarray, size: int) -> np.ndarray:
    """Rééchantillonnage bilinéaire (J, H, W) -> (J, size, size) ; size ∈ {8, 16, 24, 36, 48}."""
    hm = np.asarray(hm)
    if hm.ndim not in (3, 4):
        raise DimensionError(f"resample: pile J×H×W ou N×J×H×W attendue, reçu {hm.shape}")
    src_h, src_w = hm.shape[-2:]
    if size == src_h == src_w:
        return hm.astype(np.float32, copy=True)
    if size not in RESAMPLE_SIZES:
        raise DimensionError(f"taille de rééchantillonnage non supportée: {size} (attendu {RESAMPLE_SIZES})")
    ay = _bilinear_matrix(src_h, size)
    ax = _bilinear_matrix(src_w, size)
    out = ay @ hm.astype(np.float64) @ ax.T
    return np.clip(out, 0.0, 1.0).astype(np.float32)
