"""Web Mercator projection math, AOI geometry, and camera footprint estimation.

World size at zoom ``Z`` with tile size ``T`` is ``S = 2**Z * T`` pixels.
Pixel x grows eastward, pixel y grows southward; (0, 0) is the north-west
corner of the world map. Fractional zooms are valid (static-map rendering
uses them); integer tile indexing lives in :mod:`orbitgeo.tiles`.

All functions are pure and thread-safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .errors import (
    AoiExceedsWorld,
    LatitudeOutOfRange,
    MissingAltitude,
    NegativeArea,
    NonPositiveOptics,
    PixelOutOfWorld,
)

# Latitude band inside which the spherical Mercator projection is defined
# for web maps: atan(sinh(pi)) in degrees.
MERCATOR_LAT_LIMIT = 85.05113

EARTH_RADIUS_KM = 6371.0

DEFAULT_ALTITUDE_KM = 400.0


def _normalize_lon(lon: float) -> float:
    """Wrap a longitude into [-180, 180)."""
    return (lon + 180.0) % 360.0 - 180.0


@dataclass(frozen=True)
class GeoPoint:
    """Geographic coordinates in decimal degrees (WGS84 lat/lon)."""

    lat: float
    lon: float = field(default=0.0)

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError("GeoPoint coordinates must be finite")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        object.__setattr__(self, "lon", _normalize_lon(self.lon))


@dataclass(frozen=True)
class PixelPoint:
    """World pixel coordinates at some zoom; fractional values allowed."""

    x: float
    y: float


@dataclass(frozen=True)
class MercatorContext:
    """Zoom level plus tile size; fixes the world size ``scale``."""

    zoom: float
    tile_size: int = 512

    def __post_init__(self) -> None:
        if self.zoom < 0 or not math.isfinite(self.zoom):
            raise ValueError(f"zoom must be a finite value >= 0, got {self.zoom}")
        if self.tile_size <= 0:
            raise ValueError(f"tile_size must be positive, got {self.tile_size}")

    @property
    def scale(self) -> float:
        """World size in pixels: 2**zoom * tile_size."""
        return 2.0 ** self.zoom * self.tile_size


@dataclass(frozen=True)
class AoiGeometry:
    """An area of interest: a pixel rectangle on the world map plus its
    geographic corners, sufficient to map AOI-local pixels back to lat/lon."""

    center: GeoPoint
    context: MercatorContext
    width_px: float
    height_px: float
    top_left_geo: GeoPoint
    bottom_right_geo: GeoPoint
    top_left_world_px: PixelPoint


@dataclass(frozen=True)
class CameraOptics:
    """Focal length and sensor dimensions, with the platform altitude used
    for ground-footprint estimation."""

    focal_length_mm: float
    sensor_width_mm: float
    sensor_height_mm: float
    altitude_km: float | None = DEFAULT_ALTITUDE_KM

    def __post_init__(self) -> None:
        for name in ("focal_length_mm", "sensor_width_mm", "sensor_height_mm"):
            v = getattr(self, name)
            if v <= 0:
                raise NonPositiveOptics(f"{name} must be positive, got {v}")
        if self.altitude_km is not None and self.altitude_km < 0:
            raise ValueError(f"altitude_km must be >= 0, got {self.altitude_km}")


class AreaCategory(Enum):
    """Ground-footprint buckets; left-closed right-open interior edges."""

    LT_1 = (0.0, 1.0, "<1 km²")
    KM2_1_10 = (1.0, 10.0, "[1,10) km²")
    KM2_10_50 = (10.0, 50.0, "[10,50) km²")
    KM2_50_150 = (50.0, 150.0, "[50,150) km²")
    KM2_150_300 = (150.0, 300.0, "[150,300) km²")
    GE_300 = (300.0, math.inf, "≥300 km²")

    @property
    def lower(self) -> float:
        return self.value[0]

    @property
    def label(self) -> str:
        return self.value[2]


def geo_to_pixel(p: GeoPoint, ctx: MercatorContext) -> PixelPoint:
    """Project a geographic point to world pixel coordinates.

    y uses the Mercator ordinate ``ln(tan(pi/4 + lat/2))`` remapped so
    y=0 is the northern edge of the valid band.

    Raises:
        LatitudeOutOfRange: |lat| beyond the Mercator validity band.
    """
    if abs(p.lat) > MERCATOR_LAT_LIMIT:
        raise LatitudeOutOfRange(
            f"latitude {p.lat} outside +/-{MERCATOR_LAT_LIMIT}"
        )
    s = ctx.scale
    y_merc = math.log(math.tan(math.pi / 4.0 + math.radians(p.lat) / 2.0))
    x = (p.lon + 180.0) / 360.0 * s
    y = (1.0 - y_merc / math.pi) * s / 2.0
    # The accepted band limit is a hair beyond atan(sinh(pi)), so the last
    # microdegree of valid latitude would land a whisker outside [0, S].
    # Clamp so every accepted input yields an in-world pixel.
    return PixelPoint(min(max(x, 0.0), s), min(max(y, 0.0), s))


def pixel_to_geo(p: PixelPoint, ctx: MercatorContext) -> GeoPoint:
    """Inverse projection: world pixel coordinates back to lat/lon.

    Raises:
        PixelOutOfWorld: coordinate outside [0, S].
    """
    s = ctx.scale
    if not (0.0 <= p.x <= s and 0.0 <= p.y <= s):
        raise PixelOutOfWorld(f"pixel ({p.x}, {p.y}) outside [0, {s}]")
    lon = p.x / s * 360.0 - 180.0
    lat = math.degrees(
        2.0 * math.atan(math.exp((1.0 - 2.0 * p.y / s) * math.pi)) - math.pi / 2.0
    )
    return GeoPoint(lat, lon)


def aoi_bbox(
    center: GeoPoint, ctx: MercatorContext, width_px: float, height_px: float
) -> AoiGeometry:
    """Build the AOI rectangle of the given pixel size centered on a point.

    Corners are simple half-size pixel offsets from the projected center,
    converted back through the inverse projection. An AOI whose corners
    would leave the world map (e.g. crossing the antimeridian) is rejected
    rather than wrapped, because wrapped rectangles cannot be back-projected
    consistently.
    """
    if width_px <= 0 or height_px <= 0:
        raise ValueError("AOI width and height must be positive")
    c = geo_to_pixel(center, ctx)
    tl = PixelPoint(c.x - width_px / 2.0, c.y - height_px / 2.0)
    br = PixelPoint(c.x + width_px / 2.0, c.y + height_px / 2.0)
    s = ctx.scale
    for corner in (tl, br):
        if not (0.0 <= corner.x <= s and 0.0 <= corner.y <= s):
            raise AoiExceedsWorld(
                f"AOI corner ({corner.x}, {corner.y}) outside world [0, {s}]"
            )
    return AoiGeometry(
        center=center,
        context=ctx,
        width_px=width_px,
        height_px=height_px,
        top_left_geo=pixel_to_geo(tl, ctx),
        bottom_right_geo=pixel_to_geo(br, ctx),
        top_left_world_px=tl,
    )


def aoi_pixel_to_geo(geom: AoiGeometry, x: float, y: float) -> GeoPoint:
    """Map an AOI-local pixel (x right, y down from the AOI top-left corner)
    to geographic coordinates."""
    world = PixelPoint(
        geom.top_left_world_px.x + x, geom.top_left_world_px.y + y
    )
    return pixel_to_geo(world, geom.context)


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in km on a sphere of radius 6371.0 km."""
    lat1, lat2 = math.radians(a.lat), math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def fov_degrees(optics: CameraOptics, axis: str = "width") -> float:
    """Field of view 2*atan(d / 2f) in degrees for the chosen sensor axis."""
    if axis == "width":
        d = optics.sensor_width_mm
    elif axis == "height":
        d = optics.sensor_height_mm
    else:
        raise ValueError(f"axis must be 'width' or 'height', got {axis!r}")
    return math.degrees(2.0 * math.atan(d / (2.0 * optics.focal_length_mm)))


def footprint_area_km2(optics: CameraOptics) -> float:
    """Nadir flat-ground footprint area.

    Each side is 2*h*tan(FoV/2), which collapses to h*d/f.

    Raises:
        MissingAltitude: optics carry no altitude.
    """
    if optics.altitude_km is None:
        raise MissingAltitude("footprint estimation requires an altitude")
    h = optics.altitude_km
    side_w = 2.0 * h * math.tan(math.radians(fov_degrees(optics, "width")) / 2.0)
    side_h = 2.0 * h * math.tan(math.radians(fov_degrees(optics, "height")) / 2.0)
    return side_w * side_h


def categorize_area(area_km2: float) -> AreaCategory:
    """Bucket a footprint area; total on [0, inf)."""
    if area_km2 < 0:
        raise NegativeArea(f"area must be >= 0, got {area_km2}")
    for cat in AreaCategory:
        if cat.value[0] <= area_km2 < cat.value[1]:
            return cat
    return AreaCategory.GE_300
