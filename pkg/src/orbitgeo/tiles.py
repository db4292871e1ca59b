"""Map imagery acquisition: XYZ tile grids, cached fetching, stitching.

Two acquisition styles are supported. A mosaic enumerates slippy-map tiles
at an integer zoom, fetches them through a cache, and stitches them into
one large raster. A static AOI is a single request to a static-map endpoint
that honors fractional zooms.

The network layer is a plain ``transport(url) -> bytes`` callable so tests
(and offline mode) never touch a socket. The tile cache mirrors the fixture
layout ``{z}/{x}/{y}.png`` under a per-endpoint hash directory, and writes
are atomic (temp file + rename) so concurrent fetchers cannot corrupt it.
"""

from __future__ import annotations

import hashlib
import math
import os
import tempfile
import threading
import time
import urllib.request
from collections.abc import Callable, Iterator
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    InconsistentTileSize,
    MissingTile,
    NetworkError,
    OfflineMiss,
    ZoomOutOfRange,
)
from .geo import AoiGeometry, GeoPoint, MercatorContext, PixelPoint
from .raster import RasterImage, decode_image

import numpy as np

MAX_TILE_ZOOM = 22
RETRY_ATTEMPTS = 3
RETRY_BASE_DELAY_S = 0.5

Transport = Callable[[str], bytes]


@dataclass(frozen=True)
class TileCoord:
    z: int
    x: int
    y: int

    def __post_init__(self) -> None:
        n = 1 << self.z
        if self.z < 0 or not (0 <= self.x < n and 0 <= self.y < n):
            raise ValueError(f"tile ({self.z}/{self.x}/{self.y}) out of range")


@dataclass(frozen=True)
class TileGrid:
    """Axis-aligned block of tiles covering an AOI, plus where the AOI's
    top-left pixel sits inside the stitched mosaic."""

    z: int
    x0: int
    y0: int
    cols: int
    rows: int
    tile_px: int
    aoi_offset_px: tuple[float, float]

    def coords(self) -> Iterator[TileCoord]:
        """Row-major tile enumeration."""
        for r in range(self.rows):
            for c in range(self.cols):
                yield TileCoord(self.z, self.x0 + c, self.y0 + r)

    def __len__(self) -> int:
        return self.cols * self.rows


@dataclass
class ProviderConfig:
    """Where and how to fetch imagery.

    ``endpoint_template`` carries ``{z}/{x}/{y}`` placeholders for tiles or
    ``{lat}/{lon}/{zoom}/{width}/{height}`` for static maps, plus an optional
    ``{api_key}``. Offline mode forbids network use entirely; tiles must come
    from the cache or the fixture directory.
    """

    endpoint_template: str
    api_key: str | None = None
    tile_px: int = 512
    rate_limit: float | None = 4.0
    cache_dir: str | Path | None = None
    offline: bool = False
    fixture_dir: str | Path | None = None

    def __post_init__(self) -> None:
        if self.tile_px not in (256, 512):
            raise ValueError(f"tile_px must be 256 or 512, got {self.tile_px}")
        if self.rate_limit is not None and self.rate_limit <= 0:
            raise ValueError("rate_limit must be positive or None")

    def endpoint_hash(self) -> str:
        return hashlib.sha256(self.endpoint_template.encode("utf-8")).hexdigest()[:12]


class RateLimiter:
    """Spaces request starts at least 1/rate seconds apart. Thread-safe.

    Clock and sleep are injectable so tests measure timing without waiting.
    """

    def __init__(
        self,
        rate: float | None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self._interval = 0.0 if rate is None else 1.0 / rate
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next_at = -math.inf

    def acquire(self) -> None:
        if self._interval == 0.0:
            return
        with self._lock:
            now = self._clock()
            wait = self._next_at - now
            if wait > 0:
                self._sleep(wait)
                now = self._next_at
            self._next_at = max(now, self._next_at) + self._interval


def tiles_for_bbox(aoi: AoiGeometry, z: int, tile_px: int = 512) -> TileGrid:
    """Minimal tile grid at integer zoom ``z`` covering the AOI.

    Works in world-pixel space (scaled between the AOI's zoom and ``z``)
    rather than through geographic corners, which keeps the computation
    exact at world edges. Indices touching the world boundary are clamped
    so float round-off can never step outside [0, 2^z).
    """
    if not float(z).is_integer() or z < 0 or z > MAX_TILE_ZOOM:
        raise ZoomOutOfRange(f"tile zoom must be an integer in [0, {MAX_TILE_ZOOM}]")
    z = int(z)
    n = 1 << z
    # AOI corners in tile units at zoom z: world fraction times 2^z.
    tl = aoi.top_left_world_px
    scale = aoi.context.scale
    x0f = tl.x / scale * n
    y0f = tl.y / scale * n
    x1f = (tl.x + aoi.width_px) / scale * n
    y1f = (tl.y + aoi.height_px) / scale * n
    ix0 = min(max(int(math.floor(x0f)), 0), n - 1)
    iy0 = min(max(int(math.floor(y0f)), 0), n - 1)
    ix1 = min(max(int(math.ceil(x1f)) - 1, ix0), n - 1)
    iy1 = min(max(int(math.ceil(y1f)) - 1, iy0), n - 1)
    return TileGrid(
        z=z,
        x0=ix0,
        y0=iy0,
        cols=ix1 - ix0 + 1,
        rows=iy1 - iy0 + 1,
        tile_px=tile_px,
        aoi_offset_px=((x0f - ix0) * tile_px, (y0f - iy0) * tile_px),
    )


def _default_transport(url: str) -> bytes:
    try:
        with urllib.request.urlopen(url, timeout=30) as resp:
            return resp.read()
    except Exception as exc:
        raise NetworkError(f"request failed: {exc}") from exc


def _fetch_with_retry(
    url: str,
    transport: Transport,
    limiter: RateLimiter,
    sleep: Callable[[float], None],
) -> bytes:
    last: Exception | None = None
    for attempt in range(RETRY_ATTEMPTS):
        limiter.acquire()
        try:
            return transport(url)
        except Exception as exc:
            last = exc
            if attempt < RETRY_ATTEMPTS - 1:
                sleep(RETRY_BASE_DELAY_S * 2**attempt)
    raise NetworkError(f"request failed after {RETRY_ATTEMPTS} attempts: {last}") from last


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def tile_url(cfg: ProviderConfig, coord: TileCoord) -> str:
    return cfg.endpoint_template.format(
        z=coord.z, x=coord.x, y=coord.y, api_key=cfg.api_key or ""
    )


def _cache_path(cfg: ProviderConfig, coord: TileCoord) -> Path | None:
    if cfg.cache_dir is None:
        return None
    return Path(cfg.cache_dir) / cfg.endpoint_hash() / str(coord.z) / str(coord.x) / f"{coord.y}.png"


def _fixture_path(cfg: ProviderConfig, coord: TileCoord) -> Path | None:
    if cfg.fixture_dir is None:
        return None
    return Path(cfg.fixture_dir) / str(coord.z) / str(coord.x) / f"{coord.y}.png"


def fetch_tiles(
    grid: TileGrid,
    cfg: ProviderConfig,
    transport: Transport | None = None,
    jobs: int = 1,
    clock: Callable[[], float] = time.monotonic,
    sleep: Callable[[float], None] = time.sleep,
) -> list[RasterImage]:
    """Fetch every tile of the grid, row-major, cache first.

    Offline mode never invokes the transport: a tile found in neither the
    cache nor the fixture directory raises OfflineMiss naming the tile.
    """
    limiter = RateLimiter(cfg.rate_limit, clock=clock, sleep=sleep)
    net = transport or _default_transport

    def one(coord: TileCoord) -> RasterImage:
        cache = _cache_path(cfg, coord)
        if cache is not None and cache.exists():
            return decode_image(cache.read_bytes())
        fixture = _fixture_path(cfg, coord)
        if fixture is not None and fixture.exists():
            return decode_image(fixture.read_bytes())
        if cfg.offline:
            raise OfflineMiss(
                f"offline and tile {coord.z}/{coord.x}/{coord.y} not cached"
            )
        raw = _fetch_with_retry(tile_url(cfg, coord), net, limiter, sleep)
        img = decode_image(raw)  # validate before caching
        if cache is not None:
            atomic_write_bytes(cache, raw)
        return img

    coords = list(grid.coords())
    if jobs <= 1:
        return [one(c) for c in coords]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, coords))


def stitch(grid: TileGrid, tiles: list[RasterImage], tile_px: int) -> RasterImage:
    """Compose row-major tiles into one mosaic.

    Tile (r, c) lands exactly at rows [r*tile_px, (r+1)*tile_px) and the
    corresponding column band.
    """
    if len(tiles) != len(grid) or any(t is None for t in tiles):
        raise MissingTile(
            f"grid has {len(grid)} tiles, got {sum(t is not None for t in tiles)}"
        )
    for t in tiles:
        if t.width != tile_px or t.height != tile_px:
            raise InconsistentTileSize(
                f"expected {tile_px}x{tile_px}, got {t.width}x{t.height}"
            )
    channels = max(t.channels for t in tiles)
    shape = (grid.rows * tile_px, grid.cols * tile_px)
    if channels == 3:
        shape = shape + (3,)
    out = np.zeros(shape, dtype=np.uint8)
    for i, t in enumerate(tiles):
        r, c = divmod(i, grid.cols)
        data = t.data
        if channels == 3 and t.channels == 1:
            data = np.stack([data] * 3, axis=-1)
        out[r * tile_px : (r + 1) * tile_px, c * tile_px : (c + 1) * tile_px] = data
    return RasterImage(out)


def mosaic_for_aoi(
    aoi: AoiGeometry,
    cfg: ProviderConfig,
    z: int,
    out_width_px: int | None = None,
    out_height_px: int | None = None,
    transport: Transport | None = None,
    jobs: int = 1,
) -> RasterImage:
    """Fetch, stitch, crop to the AOI box, and rescale to the target size.

    Defaults to the AOI's own pixel dimensions when no target is given.
    """
    grid = tiles_for_bbox(aoi, z, tile_px=cfg.tile_px)
    tiles = fetch_tiles(grid, cfg, transport=transport, jobs=jobs)
    mosaic = stitch(grid, tiles, cfg.tile_px)
    # AOI rectangle inside the mosaic, in mosaic pixels.
    ox, oy = grid.aoi_offset_px
    scale_ratio = (2.0**grid.z * cfg.tile_px) / aoi.context.scale
    w = aoi.width_px * scale_ratio
    h = aoi.height_px * scale_ratio
    x0 = int(math.floor(ox))
    y0 = int(math.floor(oy))
    x1 = min(int(math.ceil(ox + w)), mosaic.width)
    y1 = min(int(math.ceil(oy + h)), mosaic.height)
    cropped = mosaic.crop(x0, y0, x1 - x0, y1 - y0)
    tw = out_width_px if out_width_px is not None else int(round(aoi.width_px))
    th = out_height_px if out_height_px is not None else int(round(aoi.height_px))
    if cropped.width == tw and cropped.height == th:
        return cropped
    return cropped.resize(tw, th)


def static_map_url(cfg: ProviderConfig, aoi: AoiGeometry) -> str:
    return cfg.endpoint_template.format(
        lat=aoi.center.lat,
        lon=aoi.center.lon,
        zoom=aoi.context.zoom,
        width=int(round(aoi.width_px)),
        height=int(round(aoi.height_px)),
        api_key=cfg.api_key or "",
    )


def fetch_static_aoi(
    aoi: AoiGeometry,
    cfg: ProviderConfig,
    transport: Transport | None = None,
    clock: Callable[[], float] = time.monotonic,
    sleep: Callable[[float], None] = time.sleep,
) -> RasterImage:
    """One static-map request for the whole AOI (fractional zooms allowed).

    Cached under ``static/{request digest}.png`` next to the tile cache.
    """
    url = static_map_url(cfg, aoi)
    digest = hashlib.sha256(url.encode("utf-8")).hexdigest()[:24]
    cache = (
        Path(cfg.cache_dir) / cfg.endpoint_hash() / "static" / f"{digest}.png"
        if cfg.cache_dir is not None
        else None
    )
    if cache is not None and cache.exists():
        return decode_image(cache.read_bytes())
    if cfg.offline:
        raise OfflineMiss(f"offline and static AOI {digest} not cached")
    limiter = RateLimiter(cfg.rate_limit, clock=clock, sleep=sleep)
    raw = _fetch_with_retry(url, transport or _default_transport, limiter, sleep)
    img = decode_image(raw)
    if cache is not None:
        atomic_write_bytes(cache, raw)
    return img


# Geometry sidecar: a tiny key=value file written next to a fetched AOI so
# later pipeline runs can back-project without refetching.

_SIDECAR_KEYS = (
    "center_lat", "center_lon", "zoom", "tile_size", "width_px", "height_px",
    "top_left_lat", "top_left_lon", "bottom_right_lat", "bottom_right_lon",
    "top_left_world_x", "top_left_world_y",
)


def write_geometry_sidecar(geom: AoiGeometry, path: str | Path) -> None:
    values = {
        "center_lat": geom.center.lat,
        "center_lon": geom.center.lon,
        "zoom": geom.context.zoom,
        "tile_size": geom.context.tile_size,
        "width_px": geom.width_px,
        "height_px": geom.height_px,
        "top_left_lat": geom.top_left_geo.lat,
        "top_left_lon": geom.top_left_geo.lon,
        "bottom_right_lat": geom.bottom_right_geo.lat,
        "bottom_right_lon": geom.bottom_right_geo.lon,
        "top_left_world_x": geom.top_left_world_px.x,
        "top_left_world_y": geom.top_left_world_px.y,
    }
    text = "".join(f"{k}={values[k]!r}\n" for k in _SIDECAR_KEYS)
    atomic_write_bytes(Path(path), text.encode("utf-8"))


def read_geometry_sidecar(path: str | Path) -> AoiGeometry:
    values: dict[str, float] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, _, raw = line.partition("=")
        values[key.strip()] = float(raw)
    missing = [k for k in _SIDECAR_KEYS if k not in values]
    if missing:
        raise ValueError(f"sidecar {path} missing keys: {', '.join(missing)}")
    return AoiGeometry(
        center=GeoPoint(values["center_lat"], values["center_lon"]),
        context=MercatorContext(values["zoom"], int(values["tile_size"])),
        width_px=values["width_px"],
        height_px=values["height_px"],
        top_left_geo=GeoPoint(values["top_left_lat"], values["top_left_lon"]),
        bottom_right_geo=GeoPoint(values["bottom_right_lat"], values["bottom_right_lon"]),
        top_left_world_px=PixelPoint(values["top_left_world_x"], values["top_left_world_y"]),
    )
