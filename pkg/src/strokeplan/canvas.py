"""Canvas primitives: grayscale images, masks, weight maps and morphology.

Images are plain ``float64`` arrays of shape ``(height, width)`` holding
intensities in [0, 1]; masks are ``bool`` arrays; weight maps are
non-negative ``float64`` arrays. Pixel ``(x, y)`` lives at ``image[y, x]``.
"""

from __future__ import annotations

import base64
import zlib
from pathlib import Path

import numpy as np
from PIL import Image, PngImagePlugin
from scipy import ndimage

from . import kernels

PATCH_SIDE = 100
DIFF_THRESHOLD = 0.08
DILATION_RADIUS = 3
WEIGHT_FLOOR = 0.05
WEIGHT_DECAY = 0.1

_EIGHT = np.ones((3, 3), dtype=bool)
_EXACT_KEY = "strokeplan:float64"


class CanvasError(ValueError):
    """Raised for malformed or mismatched canvas operands."""


def _check_same_shape(*arrays):
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise CanvasError(f"dimension mismatch: {shape} vs {a.shape}")


def gray_image(data) -> np.ndarray:
    """Validate and copy ``data`` into a 2-D float64 intensity image."""
    img = np.array(data, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise CanvasError(f"expected a non-empty 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise CanvasError("intensities must lie in [0, 1]")
    return img


def blank_canvas(size: int = PATCH_SIDE, value: float = 1.0) -> np.ndarray:
    return np.full((size, size), float(value))


def disk_offsets(radius: float) -> np.ndarray:
    """Integer ``(dy, dx)`` offsets within Euclidean distance ``radius``."""
    r = int(np.floor(radius))
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    keep = dy * dy + dx * dx <= radius * radius
    return np.stack([dy[keep], dx[keep]], axis=1)


def disk_footprint(radius: float) -> np.ndarray:
    r = int(np.floor(radius))
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    return dy * dy + dx * dx <= radius * radius


def weighted_l1(pred: np.ndarray, target: np.ndarray, weights: np.ndarray) -> float:
    """Weighted mean absolute error, normalised by the total weight."""
    _check_same_shape(pred, target, weights)
    total = float(np.sum(weights))
    if not total > 0.0:
        raise CanvasError("total weight must be positive")
    return float(np.sum(weights * np.abs(pred - target)) / total)


def l1(pred: np.ndarray, target: np.ndarray) -> float:
    _check_same_shape(pred, target)
    return float(np.mean(np.abs(pred - target)))


def dilate(mask: np.ndarray, radius: float) -> np.ndarray:
    if radius <= 0 or not mask.any():
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=disk_footprint(radius))


def change_mask(
    before: np.ndarray,
    after: np.ndarray,
    threshold: float = DIFF_THRESHOLD,
    dilation_radius: float = DILATION_RADIUS,
) -> np.ndarray:
    """Pixels whose intensity changed by more than ``threshold``, disk-dilated."""
    _check_same_shape(before, after)
    if dilation_radius < 0:
        raise CanvasError("dilation radius must be non-negative")
    return dilate(np.abs(before - after) > threshold, dilation_radius)


def stroke_weights(
    mask: np.ndarray, decay: float = WEIGHT_DECAY, floor: float = WEIGHT_FLOOR
) -> np.ndarray:
    """Loss weights: 1 on the mask, a clamped linear ramp in distance outside."""
    if mask.ndim != 2 or mask.size == 0:
        raise CanvasError("mask must be a non-empty 2-D array")
    if not 0.0 < floor <= 1.0:
        raise CanvasError("floor must lie in (0, 1]")
    if not mask.any():
        return np.full(mask.shape, float(floor))
    dist = ndimage.distance_transform_edt(~mask)
    return np.maximum(floor, 1.0 - decay * dist)


def label8(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected component labelling."""
    labels, n = ndimage.label(mask, structure=_EIGHT)
    return labels, int(n)


def count_components(mask: np.ndarray) -> int:
    return label8(mask)[1]


def largest_component(mask: np.ndarray) -> np.ndarray:
    labels, n = label8(mask)
    if n <= 1:
        return mask.copy()
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def neighbor_degree(mask: np.ndarray) -> np.ndarray:
    """Number of set 8-neighbours of every pixel."""
    m = mask.astype(np.int64)
    kernel = np.ones((3, 3), dtype=np.int64)
    kernel[1, 1] = 0
    return ndimage.convolve(m, kernel, mode="constant", cval=0)


def _skeleton_neighbors(skel, y, x):
    h, w = skel.shape
    return [(y + dy, x + dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
            if (dy or dx) and 0 <= y + dy < h and 0 <= x + dx < w and skel[y + dy, x + dx]]


def prune_spurs(skel: np.ndarray, edt: np.ndarray) -> np.ndarray:
    """Drop terminal branches that end inside the maximal disk of their junction.

    A branch is walked from its endpoint until a pixel with three or more
    neighbours; if it is no longer than the distance-transform value there it
    is a thinning artefact and removed. Branches that never meet a junction
    are kept, so isolated curves keep their endpoints.
    """
    skel = skel.copy()
    degree = neighbor_degree(skel)
    limit = float(edt.max()) + 1.0
    for y0, x0 in zip(*np.nonzero(skel & (degree == 1))):
        path, prev, cur = [], None, (y0, x0)
        while True:
            nbrs = [p for p in _skeleton_neighbors(skel, *cur) if p != prev and p not in path]
            if len(_skeleton_neighbors(skel, *cur)) >= 3:
                break
            path.append(cur)
            if len(nbrs) != 1 or len(path) > limit:
                path = None
                break
            prev, cur = cur, nbrs[0]
        if path and len(path) <= edt[cur]:
            for y, x in path:
                skel[y, x] = False
    return skel


def drop_corners(padded: np.ndarray) -> np.ndarray:
    """Delete redundant staircase pixels so every skeleton pixel is needed.

    A pixel goes when it has two or more neighbours and its neighbourhood
    stays connected without it. Crowded pixels are tried first, which keeps
    line tips and leaves each endpoint with a single neighbour.
    """
    count, simple = kernels.NB_COUNT, kernels.NB_SIMPLE
    changed = True
    while changed:
        changed = False
        ys, xs = np.nonzero(padded)
        codes = [kernels.neighbor_code(padded, y, x) for y, x in zip(ys, xs)]
        order = np.argsort([-count[c] for c in codes], kind="stable")
        for i in order:
            y, x = ys[i], xs[i]
            c = kernels.neighbor_code(padded, y, x)
            if count[c] >= 2 and simple[c]:
                padded[y, x] = False
                changed = True
    return padded


def skeletonize(mask: np.ndarray) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Topology-preserving thinning to a one-pixel-wide skeleton.

    Returns the skeleton and its endpoints as ``(x, y)`` tuples, i.e. skeleton
    pixels with exactly one 8-neighbour, in row-major order.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise CanvasError("cannot skeletonize an empty mask")
    padded = np.zeros((mask.shape[0] + 2, mask.shape[1] + 2), dtype=np.bool_)
    padded[1:-1, 1:-1] = mask
    edt = ndimage.distance_transform_edt(padded)[1:-1, 1:-1]
    kernels.thin(padded, kernels.NB_COUNT, kernels.NB_TRANSITIONS, kernels.NB_SIMPLE)
    drop_corners(padded)
    padded[1:-1, 1:-1] = prune_spurs(padded[1:-1, 1:-1].copy(), edt)
    # pruning can leave a corner triangle where a spur met the main line
    skeleton = drop_corners(padded)[1:-1, 1:-1].copy()
    degree = neighbor_degree(skeleton)
    ys, xs = np.nonzero(skeleton & (degree == 1))
    return skeleton, [(int(x), int(y)) for y, x in zip(ys, xs)]


def crop_resize(
    image: np.ndarray, center: tuple[float, float], source_side: int, out_side: int = PATCH_SIDE
) -> np.ndarray:
    """Crop a square window around ``center`` and bilinearly resample it.

    The window is shifted (not shrunk) to stay inside the image; sides larger
    than the image are reduced to the smaller image dimension.
    """
    h, w = image.shape
    cx, cy = center
    if not (0 <= cx <= w - 1 and 0 <= cy <= h - 1):
        raise CanvasError(f"center {center} outside image of size {w}x{h}")
    side = int(min(source_side, h, w))
    if side < 1:
        raise CanvasError("source side must be positive")
    x0 = int(np.clip(round(cx - side / 2.0), 0, w - side))
    y0 = int(np.clip(round(cy - side / 2.0), 0, h - side))
    # pixel-centre alignment: output i samples source (i + 0.5) * side / out - 0.5
    coords = (np.arange(out_side) + 0.5) * (side / out_side) - 0.5
    yy, xx = np.meshgrid(y0 + coords, x0 + coords, indexing="ij")
    window = image.astype(np.float64)
    out = ndimage.map_coordinates(window, [yy, xx], order=1, mode="nearest")
    return np.clip(out, 0.0, 1.0)


# --------------------------------------------------------------------------
# PNG input/output


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_gray_png(path, image: np.ndarray, exact: bool = False) -> None:
    """Write an 8-bit grayscale PNG (``round(255 * v)``).

    With ``exact=True`` the float64 data also travels in a compressed text
    chunk, so :func:`load_gray_png` restores it bit-for-bit.
    """
    info = None
    if exact:
        arr = np.ascontiguousarray(image, dtype="<f8")
        payload = base64.b64encode(zlib.compress(arr.tobytes(), 9)).decode("ascii")
        info = PngImagePlugin.PngInfo()
        info.add_text(_EXACT_KEY, f"{arr.shape[0]}x{arr.shape[1]}:{payload}", zip=True)
    Image.fromarray(to_uint8(image)).save(Path(path), pnginfo=info)


def load_gray_png(path) -> np.ndarray:
    with Image.open(Path(path)) as im:
        im.load()
        text = getattr(im, "text", {}) or {}
        if _EXACT_KEY in text:
            dims, payload = text[_EXACT_KEY].split(":", 1)
            h, w = (int(v) for v in dims.split("x"))
            raw = zlib.decompress(base64.b64decode(payload))
            return np.frombuffer(raw, dtype="<f8").reshape(h, w).astype(np.float64)
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def save_mask_png(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(Path(path))


def load_mask_png(path) -> np.ndarray:
    with Image.open(Path(path)) as im:
        return np.asarray(im.convert("L")) > 127
