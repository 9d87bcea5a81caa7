"""Overlapping tile decomposition of large rasters and stitch-back.

Tiles of size T are placed every S pixels per axis; the final tile per
axis is clamped so it ends exactly at the image border, which guarantees
full coverage for any image at least T pixels wide.  Overlapping
predictions are merged by arithmetic mean.  Tile forwards may run on a
thread pool; results are always accumulated in grid order, so the output
raster is bitwise independent of scheduling.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import IntegrityError, ShapeError, UsageError
from .model import UNetModel, forward
from .tensor import Tensor

TILE_SIZE = 256
TILE_STRIDE = 224  # 32 px overlap: one receptive-field margin


@dataclass(frozen=True)
class TileGrid:
    height: int
    width: int
    tile: int
    stride: int
    origins_y: tuple[int, ...]
    origins_x: tuple[int, ...]

    @property
    def tiles(self) -> list[tuple[int, int]]:
        """Row-major (y, x) origins."""
        return [(y, x) for y in self.origins_y for x in self.origins_x]

    def __len__(self):
        return len(self.origins_y) * len(self.origins_x)


def _axis_origins(dim: int, tile: int, stride: int) -> tuple[int, ...]:
    count = -(-(dim - tile) // stride) + 1  # ceil((dim-T)/S) + 1
    return tuple(min(i * stride, dim - tile) for i in range(count))


def plan(height: int, width: int, tile: int = TILE_SIZE,
         stride: int = TILE_STRIDE) -> TileGrid:
    """Deterministic tile grid covering every pixel at least once."""
    if tile > min(height, width):
        raise UsageError(f"tile {tile} larger than image {height}x{width}")
    if not 1 <= stride <= tile:
        raise UsageError(f"stride must be in [1, tile], got {stride}")
    return TileGrid(height, width, tile, stride,
                    _axis_origins(height, tile, stride),
                    _axis_origins(width, tile, stride))


def cut(image: np.ndarray, grid: TileGrid) -> list[np.ndarray]:
    """Extract (C,T,T) tiles (or (T,T) for 2-D rasters) in grid order."""
    t = grid.tile
    return [image[..., y:y + t, x:x + t] for y, x in grid.tiles]


def stitch(grid: TileGrid, tile_maps) -> np.ndarray:
    """Merge per-tile (T,T) rasters into the full map by per-pixel mean.

    ``tile_maps`` is a sequence in grid order; a missing (None) entry is an
    integrity error.  Accumulation runs in f64 and always in grid order.
    """
    tile_maps = list(tile_maps)
    if len(tile_maps) != len(grid):
        raise IntegrityError(f"expected {len(grid)} tiles, got {len(tile_maps)}")
    t = grid.tile
    acc = np.zeros((grid.height, grid.width), dtype=np.float64)
    cnt = np.zeros((grid.height, grid.width), dtype=np.int32)
    for (y, x), m in zip(grid.tiles, tile_maps):
        if m is None:
            raise IntegrityError(f"missing tile at origin ({y}, {x})")
        m = np.asarray(m)
        if m.shape != (t, t):
            raise ShapeError(f"tile at ({y}, {x}) has shape {m.shape}, want ({t}, {t})")
        acc[y:y + t, x:x + t] += m
        cnt[y:y + t, x:x + t] += 1
    return (acc / cnt).astype(np.float32)


def _normalize_image(image) -> np.ndarray:
    img = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float32)
    if img.ndim == 4:
        if img.shape[0] != 1:
            raise ShapeError("tiled inference takes a single image, not a batch")
        img = img[0]
    if img.ndim != 3:
        raise ShapeError(f"image must be (C,H,W), got {img.shape}")
    return img


def infer_tiles(model: UNetModel, image, grid: TileGrid | None = None,
                workers: int | None = None) -> np.ndarray:
    """Per-tile forward + stitch; returns the (H,W) probability raster."""
    img = _normalize_image(image)
    h, w = img.shape[1], img.shape[2]
    if grid is None:
        grid = plan(h, w, tile=min(model.config.input_size))
    if (grid.height, grid.width) != (h, w):
        raise ShapeError(f"grid is {grid.height}x{grid.width}, image is {h}x{w}")
    if (grid.tile, grid.tile) != model.config.input_size:
        raise ShapeError(f"tile size {grid.tile} != model input {model.config.input_size}")

    tiles = cut(img, grid)

    def run(tile: np.ndarray) -> np.ndarray:
        out = forward(model, Tensor(tile[np.newaxis], "f32"))
        return out.data[0, 0]

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            maps = list(pool.map(run, tiles))
    else:
        maps = [run(t) for t in tiles]
    return stitch(grid, maps)


def segment_image(model: UNetModel, image, grid: TileGrid | None = None,
                  threshold: float = 0.5, workers: int | None = None) -> np.ndarray:
    """Binary building mask: stitched probabilities thresholded at >= threshold."""
    prob = infer_tiles(model, image, grid, workers)
    return (prob >= threshold).astype(np.uint8)
