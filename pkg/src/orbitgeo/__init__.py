"""Geolocation toolkit for photographs taken from low Earth orbit.

Three pipelines locate a photograph inside a Web-Mercator map area around
the platform's position: dense feature correlation, scale-invariant
keypoint matching over sliding windows, and a vision-language backend.
A benchmark harness scores any of them against ground truth.
"""

from .bench import (
    BenchmarkRecord,
    EvalReport,
    aggregate_by_category,
    emit_plot_data,
    evaluate,
    load_manifest,
    read_results_csv,
    render_rate,
    write_results_csv,
)
from .errors import OrbitgeoError
from .features import (
    CorrelationMatch,
    CorrelationSurface,
    ExtractorSpec,
    FeatureMap,
    cross_correlate,
    extract_features,
    nn_geolocate,
    read_fmap,
    write_fmap,
)
from .geo import (
    AoiGeometry,
    AreaCategory,
    CameraOptics,
    GeoPoint,
    MercatorContext,
    PixelPoint,
    aoi_bbox,
    aoi_pixel_to_geo,
    categorize_area,
    footprint_area_km2,
    fov_degrees,
    geo_to_pixel,
    haversine_km,
    pixel_to_geo,
)
from .metadata import (
    CaptureMetadata,
    SensorSpec,
    dms_to_decimal,
    load_sensor_table,
    lookup_sensor,
    parse_exif,
)
from .raster import RasterImage, decode_image, load_image
from .results import MatchResult
from .sift import (
    SiftKeypoint,
    SiftParams,
    WindowCandidate,
    detect_and_describe,
    match_descriptors,
    sift_geolocate,
    subsample_windows,
    water_fraction,
)
from .tiles import (
    ProviderConfig,
    RateLimiter,
    TileCoord,
    TileGrid,
    fetch_static_aoi,
    fetch_tiles,
    mosaic_for_aoi,
    read_geometry_sidecar,
    stitch,
    tiles_for_bbox,
    write_geometry_sidecar,
)
from .vlm import (
    LiveBackend,
    LocationHypothesis,
    MockBackend,
    ReplayBackend,
    VlmPrompt,
    build_prompt,
    parse_response,
    vlm_geolocate,
)

__version__ = "0.1.0"

__all__ = [
    "AoiGeometry",
    "AreaCategory",
    "BenchmarkRecord",
    "CameraOptics",
    "CaptureMetadata",
    "CorrelationMatch",
    "CorrelationSurface",
    "EvalReport",
    "ExtractorSpec",
    "FeatureMap",
    "GeoPoint",
    "LiveBackend",
    "LocationHypothesis",
    "MatchResult",
    "MercatorContext",
    "MockBackend",
    "OrbitgeoError",
    "PixelPoint",
    "ProviderConfig",
    "RasterImage",
    "RateLimiter",
    "ReplayBackend",
    "SensorSpec",
    "SiftKeypoint",
    "SiftParams",
    "TileCoord",
    "TileGrid",
    "VlmPrompt",
    "WindowCandidate",
    "aggregate_by_category",
    "aoi_bbox",
    "aoi_pixel_to_geo",
    "build_prompt",
    "categorize_area",
    "cross_correlate",
    "decode_image",
    "detect_and_describe",
    "dms_to_decimal",
    "emit_plot_data",
    "evaluate",
    "extract_features",
    "fetch_static_aoi",
    "fetch_tiles",
    "footprint_area_km2",
    "fov_degrees",
    "geo_to_pixel",
    "haversine_km",
    "load_image",
    "load_manifest",
    "load_sensor_table",
    "lookup_sensor",
    "match_descriptors",
    "mosaic_for_aoi",
    "nn_geolocate",
    "parse_exif",
    "parse_response",
    "pixel_to_geo",
    "read_fmap",
    "read_geometry_sidecar",
    "read_results_csv",
    "render_rate",
    "sift_geolocate",
    "stitch",
    "subsample_windows",
    "tiles_for_bbox",
    "vlm_geolocate",
    "water_fraction",
    "write_fmap",
    "write_geometry_sidecar",
    "write_results_csv",
]
