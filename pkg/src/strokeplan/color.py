"""Stroke colour prediction: Mahalanobis nearest prototype plus a transparency ratio.

Colour images are ``(height, width, 3)`` float arrays in linear RGB.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import canvas as cv
from .stroke import StrokeColor

PATCH_SIZE = 25
COV_REG = 1e-4
TAU = 0.55
RATIO_EPS = 1e-3
LUMA = np.array([0.2126, 0.7152, 0.0722])


class EmptyRegionError(ValueError):
    """No pixels to measure a stroke colour from."""


def srgb_to_linear(v):
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def gray_to_rgb(image: np.ndarray) -> np.ndarray:
    return np.repeat(image[..., None], 3, axis=-1)


@dataclass(frozen=True)
class ColorEntry:
    label: str
    mean: np.ndarray
    cov: np.ndarray
    gray: float

    def mahalanobis2(self, mu) -> float:
        d = np.asarray(mu, dtype=np.float64) - self.mean
        return float(d @ np.linalg.solve(self.cov, d))


@dataclass(frozen=True)
class PatchDatabase:
    entries: tuple[ColorEntry, ...]
    patch_size: int = PATCH_SIZE

    def __len__(self):
        return len(self.entries)

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self.entries]

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "patch_size": self.patch_size,
            "entries": [{"label": e.label, "mean": e.mean.tolist(), "cov": e.cov.tolist(),
                         "gray": e.gray} for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PatchDatabase":
        entries = tuple(ColorEntry(e["label"], np.array(e["mean"], dtype=np.float64),
                                   np.array(e["cov"], dtype=np.float64), float(e["gray"]))
                        for e in d["entries"])
        return cls(entries, int(d.get("patch_size", PATCH_SIZE)))


@dataclass(frozen=True)
class ColorPrediction:
    label: str
    index: int
    C_star: np.ndarray
    transparent: bool
    ratio: float

    def stroke_color(self, db: PatchDatabase) -> StrokeColor:
        """Grayscale paint for the renderer; a transparent stroke's opacity is its ratio."""
        gray = float(np.clip(db.entries[self.index].gray, 0.0, 1.0))
        a = float(np.clip(self.ratio, 0.0, 1.0)) if self.transparent else 1.0
        rgba = (*(float(v) for v in self.C_star), a)
        return StrokeColor(gray, a, rgba)


def build_database(patches, patch_size: int = PATCH_SIZE, reg: float = COV_REG) -> PatchDatabase:
    """Pool all patches of a label into its mean and regularised covariance.

    Labels keep the order of their first appearance.
    """
    groups: dict[str, list[np.ndarray]] = {}
    for label, patch in patches:
        patch = np.asarray(patch, dtype=np.float64)
        if patch.shape != (patch_size, patch_size, 3):
            raise ValueError(f"patch for {label!r} has shape {patch.shape}, "
                             f"expected {(patch_size, patch_size, 3)}")
        groups.setdefault(str(label), []).append(patch.reshape(-1, 3))
    if not groups:
        raise ValueError("no patches given")
    entries = []
    for label, chunks in groups.items():
        pix = np.concatenate(chunks, axis=0)
        if pix.shape[0] == 0:
            raise ValueError(f"label {label!r} has no pixels")
        mean = pix.mean(axis=0)
        cov = np.cov(pix, rowvar=False) if pix.shape[0] > 1 else np.zeros((3, 3))
        cov = 0.5 * (cov + cov.T) + reg * np.eye(3)
        entries.append(ColorEntry(label, mean, cov, float(LUMA @ mean)))
    return PatchDatabase(tuple(entries), patch_size)


def palette_database(grays, noise_sd: float = 0.0, seed: int = 0, patches_per_label: int = 2,
                     patch_size: int = PATCH_SIZE) -> PatchDatabase:
    """Synthetic database of gray paints, one label per value."""
    rng = np.random.default_rng(seed)
    patches = []
    for g in grays:
        for _ in range(patches_per_label):
            p = np.full((patch_size, patch_size, 3), float(g))
            if noise_sd > 0:
                p = np.clip(p + rng.normal(0.0, noise_sd, p.shape), 0.0, 1.0)
            patches.append((f"gray_{float(g):.3f}", p))
    return build_database(patches, patch_size)


def select_region_single(base: np.ndarray, target: np.ndarray, threshold: float = cv.DIFF_THRESHOLD):
    """Difference mask from the max-channel change, with distance-transform weights."""
    if base.shape != target.shape:
        raise cv.CanvasError(f"dimension mismatch: {base.shape} vs {target.shape}")
    diff = np.abs(target - base)
    if diff.ndim == 3:
        diff = diff.max(axis=-1)
    S = diff > threshold
    if not S.any():
        raise EmptyRegionError("no pixel changed beyond the threshold")
    return S, cv.stroke_weights(S)


def select_region_multistep(pred_footprint: np.ndarray, center, radius: float) -> np.ndarray:
    """Predicted footprint intersected with a disk around the stroke centre."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    h, w = pred_footprint.shape
    yy, xx = np.mgrid[:h, :w]
    cx, cy = center
    S = pred_footprint & ((xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius)
    if not S.any():
        raise EmptyRegionError("footprint and disk do not intersect")
    return S


def representative_color(O: np.ndarray, S: np.ndarray, w: np.ndarray) -> np.ndarray:
    if not S.any():
        raise EmptyRegionError("empty region")
    ws = w[S]
    total = float(ws.sum())
    if not total > 0:
        raise EmptyRegionError("region has zero total weight")
    return (ws[:, None] * O[S]).sum(axis=0) / total


def classify_color(mu, db: PatchDatabase) -> tuple[int, np.ndarray]:
    """Index of the nearest prototype in Mahalanobis distance (lowest index on ties)."""
    if len(db) == 0:
        raise ValueError("empty database")
    dists = np.array([e.mahalanobis2(mu) for e in db.entries])
    i = int(np.argmin(dists))
    return i, db.entries[i].mean.copy()


def transparency_test(O, B, S, C_star, tau: float = TAU, eps: float = RATIO_EPS):
    if not S.any():
        raise EmptyRegionError("empty region")
    num = np.median(np.abs(O[S] - B[S]).sum(axis=-1))
    den = np.median(np.abs(np.asarray(C_star)[None, :] - B[S]).sum(axis=-1)) + eps
    ratio = float(num / den)
    return ratio < tau, ratio


def predict_color(O, B, S, w, db: PatchDatabase, tau: float = TAU, eps: float = RATIO_EPS) -> ColorPrediction:
    mu = representative_color(O, S, w)
    i, C = classify_color(mu, db)
    transparent, ratio = transparency_test(O, B, S, C, tau, eps)
    return ColorPrediction(db.entries[i].label, i, C, transparent, ratio)


# --------------------------------------------------------------------------
# on-disk database: PNG patches + manifest, prototypes cached in a sidecar

DB_MANIFEST = "manifest.json"
DB_SIDECAR = "prototypes.json"


def load_patch_png(path) -> np.ndarray:
    with Image.open(Path(path)) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return srgb_to_linear(rgb)


def save_database_dir(path, patches) -> Path:
    """Write ``(label, linear-RGB patch)`` pairs as sRGB PNGs plus a manifest."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    files = {}
    for i, (label, patch) in enumerate(patches):
        lin = np.clip(np.asarray(patch, dtype=np.float64), 0.0, 1.0)
        srgb = np.where(lin <= 0.0031308, 12.92 * lin, 1.055 * lin ** (1 / 2.4) - 0.055)
        name = f"patch_{i:03d}.png"
        Image.fromarray(np.round(srgb * 255).astype(np.uint8)).save(root / name)
        files[name] = str(label)
    (root / DB_MANIFEST).write_text(json.dumps({"patches": files}, indent=2, sort_keys=True) + "\n")
    return root


def load_database_dir(path, use_cache: bool = True) -> PatchDatabase:
    root = Path(path)
    sidecar = root / DB_SIDECAR
    if use_cache and sidecar.is_file():
        return PatchDatabase.from_dict(json.loads(sidecar.read_text()))
    manifest = json.loads((root / DB_MANIFEST).read_text())
    patches = [(label, load_patch_png(root / name)) for name, label in sorted(manifest["patches"].items())]
    db = build_database(patches)
    sidecar.write_text(json.dumps(db.to_dict(), indent=2) + "\n")
    return db
