"""Deterministic image, geometry, and fixture factories shared across tests."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from orbitgeo import (
    AoiGeometry,
    GeoPoint,
    MercatorContext,
    RasterImage,
    TileGrid,
    aoi_bbox,
)


def gray_texture(
    seed: int,
    height: int,
    width: int | None = None,
    sigma: float = 3.0,
    mean: float = 128.0,
    spread: float = 40.0,
) -> RasterImage:
    """Smoothed random field with controlled mean and contrast."""
    width = height if width is None else width
    rng = np.random.default_rng(seed)
    field = gaussian_filter(rng.standard_normal((height, width)), sigma)
    field = field / max(float(field.std()), 1e-9) * spread + mean
    return RasterImage(np.clip(field, 0, 255).astype(np.uint8))


def rgb_texture(seed: int, height: int, width: int | None = None, sigma: float = 3.0) -> RasterImage:
    width = height if width is None else width
    rng = np.random.default_rng(seed)
    field = gaussian_filter(rng.standard_normal((height, width, 3)), (sigma, sigma, 0))
    field = field / max(float(field.std()), 1e-9) * 40.0 + 128.0
    return RasterImage(np.clip(field, 0, 255).astype(np.uint8))


def water_rgb(height: int, width: int | None = None) -> RasterImage:
    """Uniform pixels that satisfy the water predicate (blue-dominant, dark)."""
    width = height if width is None else width
    data = np.empty((height, width, 3), dtype=np.uint8)
    data[..., 0] = 30
    data[..., 1] = 60
    data[..., 2] = 120
    return RasterImage(data)


def land_rgb(height: int, width: int | None = None) -> RasterImage:
    """Uniform green-dominant pixels that fail the water predicate."""
    width = height if width is None else width
    data = np.empty((height, width, 3), dtype=np.uint8)
    data[..., 0] = 80
    data[..., 1] = 140
    data[..., 2] = 60
    return RasterImage(data)


def make_geom(
    lat: float = 30.0,
    lon: float = 10.0,
    zoom: float = 9.5,
    tile_size: int = 512,
    width_px: float = 1024,
    height_px: float = 1024,
) -> AoiGeometry:
    return aoi_bbox(GeoPoint(lat, lon), MercatorContext(zoom, tile_size), width_px, height_px)


def plant(aoi: RasterImage, patch: RasterImage, y: int, x: int) -> RasterImage:
    """Copy of the AOI with the patch pasted at (row y, column x)."""
    data = aoi.data.copy()
    data[y : y + patch.height, x : x + patch.width] = patch.data
    return RasterImage(data)


def naive_correlate(
    qv: np.ndarray, av: np.ndarray, normalized: bool, global_reference_mean: bool = False
) -> np.ndarray:
    """Quadruple-loop reference implementation of the correlation surface."""
    q = qv.astype(np.float64)
    a = av.astype(np.float64)
    _, qh, qw = q.shape
    _, ah, aw = a.shape
    qc = q - q.mean(axis=(1, 2), keepdims=True)
    q_energy = float(np.sum(qc * qc))
    if global_reference_mean:
        a = a - a.mean(axis=(1, 2), keepdims=True)
    out = np.zeros((ah - qh + 1, aw - qw + 1), dtype=np.float64)
    for dy in range(out.shape[0]):
        for dx in range(out.shape[1]):
            win = a[:, dy : dy + qh, dx : dx + qw]
            if not normalized:
                out[dy, dx] = float(np.sum(qc * win))
                continue
            wc = win - win.mean(axis=(1, 2), keepdims=True)
            win_var = float(np.sum(wc * wc))
            if win_var <= 1e-12:
                out[dy, dx] = 0.0
            else:
                score = float(np.sum(qc * wc)) / np.sqrt(q_energy * win_var)
                out[dy, dx] = min(1.0, max(-1.0, score))
    return out


def tile_rgb(z: int, x: int, y: int, tile_px: int) -> RasterImage:
    """Solid tile whose color encodes its index, for placement checks."""
    data = np.empty((tile_px, tile_px, 3), dtype=np.uint8)
    data[..., 0] = (10 + 13 * x) % 256
    data[..., 1] = (20 + 17 * y) % 256
    data[..., 2] = (30 + 29 * z) % 256
    return RasterImage(data)


def write_fixture_tiles(root: str | Path, grid: TileGrid) -> None:
    """Materialize the fixture-directory layout for every tile of a grid."""
    for coord in grid.coords():
        path = Path(root) / str(coord.z) / str(coord.x) / f"{coord.y}.png"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(tile_rgb(coord.z, coord.x, coord.y, grid.tile_px).png_bytes())
