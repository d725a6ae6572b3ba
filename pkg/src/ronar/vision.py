"""Pixel heuristics: block-matching optical flow and Laplacian clarity.

All kernels are deterministic and model-free. Images are 8-bit grayscale
numpy arrays; RGB input is converted with fixed luma weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from PIL import Image

from .errors import RonarError

DEFAULT_BLOCK_SIZE = 16
DEFAULT_SEARCH_RADIUS = 8
DEFAULT_ADJACENT_WINDOW = 1.0  # seconds around a key event

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class DimensionMismatch(RonarError):
    pass


class ImageTooSmall(RonarError):
    pass


class EmptyFlow(RonarError):
    pass


class NoImageInWindow(RonarError):
    pass


@dataclass(frozen=True)
class FlowField:
    """Per-block displacement vectors at block resolution."""

    width: int  # blocks per row
    height: int  # blocks per column
    block_size: int
    vectors: np.ndarray  # (height, width, 2) int, (dx, dy) in pixels


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Luma conversion with the fixed 0.299/0.587/0.114 weights, half-up."""
    if rgb.ndim == 2:
        return rgb.astype(np.uint8)
    luma = rgb[..., 0] * LUMA_WEIGHTS[0] + rgb[..., 1] * LUMA_WEIGHTS[1] + rgb[..., 2] * LUMA_WEIGHTS[2]
    return np.floor(luma + 0.5).astype(np.uint8)


def load_image(path: str) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.ndim == 3:
        return to_grayscale(arr[..., :3])
    return arr.astype(np.uint8)


@lru_cache(maxsize=None)
def _displacement_order(radius: int) -> tuple[tuple[int, int], ...]:
    # Ties break by smallest displacement magnitude, then row-major order.
    grid = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    order = sorted(range(len(grid)), key=lambda i: (grid[i][0] ** 2 + grid[i][1] ** 2, i))
    return tuple(grid[i] for i in order)


def dense_flow(
    prev: np.ndarray,
    curr: np.ndarray,
    block_size: int = DEFAULT_BLOCK_SIZE,
    search_radius: int = DEFAULT_SEARCH_RADIUS,
) -> FlowField:
    """Exhaustive block-matching flow minimizing sum of absolute differences.

    For each block of `prev`, searches displacements within the radius whose
    window stays inside `curr` and returns the SAD-minimizing (dx, dy).
    """
    if prev.shape != curr.shape:
        raise DimensionMismatch(f"{prev.shape} vs {curr.shape}")
    h, w = prev.shape
    if h < block_size or w < block_size:
        raise ImageTooSmall(f"{w}x{h} below block size {block_size}")

    gh, gw = h // block_size, w // block_size
    prev_f = prev[: gh * block_size, : gw * block_size].astype(np.float64)
    pad = search_radius
    curr_pad = np.full((h + 2 * pad, w + 2 * pad), np.inf, dtype=np.float64)
    curr_pad[pad : pad + h, pad : pad + w] = curr.astype(np.float64)

    best_sad = np.full((gh, gw), np.inf)
    best_vec = np.zeros((gh, gw, 2), dtype=np.int64)
    for dy, dx in _displacement_order(search_radius):
        shifted = curr_pad[pad + dy : pad + dy + gh * block_size, pad + dx : pad + dx + gw * block_size]
        diff = np.abs(prev_f - shifted)
        sad = diff.reshape(gh, block_size, gw, block_size).sum(axis=(1, 3))
        better = sad < best_sad
        best_sad[better] = sad[better]
        best_vec[better] = (dx, dy)
    return FlowField(width=gw, height=gh, block_size=block_size, vectors=best_vec)


def mean_flow_magnitude(flow: FlowField) -> float:
    """Arithmetic mean of per-block Euclidean displacement magnitudes."""
    if flow.vectors.size == 0:
        raise EmptyFlow("flow field has no blocks")
    mags = np.hypot(flow.vectors[..., 0], flow.vectors[..., 1])
    return float(mags.mean())


def clarity_score(image: np.ndarray) -> float:
    """Population variance of the 3x3 Laplacian response over interior pixels.

    The kernel is [[0,1,0],[1,-4,1],[0,1,0]]; border pixels are excluded.
    Integer inputs are promoted so the response is exact.
    """
    h, w = image.shape[:2]
    if h < 3 or w < 3:
        raise ImageTooSmall(f"{w}x{h} below 3x3")
    img = image.astype(np.int64) if np.issubdtype(image.dtype, np.integer) else image.astype(np.float64)
    lap = (
        img[:-2, 1:-1]
        + img[2:, 1:-1]
        + img[1:-1, :-2]
        + img[1:-1, 2:]
        - 4 * img[1:-1, 1:-1]
    )
    return float(np.var(lap.astype(np.float64)))


@lru_cache(maxsize=1024)
def _clarity_of_file(path: str) -> float:
    return clarity_score(load_image(path))


def select_sharpest(frames, center: float, window: float = DEFAULT_ADJACENT_WINDOW):
    """Frame with the highest-clarity image within +-window of `center`.

    Equal scores fall back to the earliest frame (candidates are scanned in
    timestamp order and only a strictly better score replaces the pick).
    """
    best = None
    best_score = -1.0
    for frame in frames:
        if frame.head_image is None:
            continue
        if abs(frame.timestamp - center) > window:
            continue
        score = _clarity_of_file(frame.head_image)
        if score > best_score:
            best, best_score = frame, score
    if best is None:
        raise NoImageInWindow(f"no frame with an image within {window}s of t={center}")
    return best


def compute_flow_magnitudes(
    frames,
    block_size: int = DEFAULT_BLOCK_SIZE,
    search_radius: int = DEFAULT_SEARCH_RADIUS,
) -> None:
    """Fill missing frame flow magnitudes from consecutive head images.

    Frames whose episode already supplied a flow stream are left untouched;
    frame 0 and frames without an image pair stay absent.
    """
    pair_cache: dict[tuple[str, str], float] = {}
    for prev, curr in zip(frames, frames[1:]):
        if curr.flow_magnitude is not None:
            continue
        if prev.head_image is None or curr.head_image is None:
            continue
        key = (prev.head_image, curr.head_image)
        if key not in pair_cache:
            if prev.head_image == curr.head_image:
                pair_cache[key] = 0.0
            else:
                flow = dense_flow(
                    load_image(prev.head_image),
                    load_image(curr.head_image),
                    block_size=block_size,
                    search_radius=search_radius,
                )
                pair_cache[key] = mean_flow_magnitude(flow)
        curr.flow_magnitude = pair_cache[key]
