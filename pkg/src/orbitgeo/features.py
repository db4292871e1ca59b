"""Feature maps and zero-mean cross-correlation for template geolocation.

A photograph and a map AOI are reduced to dense feature maps (channels x
height x width, on a fixed pixel stride), the query map is slid over the
reference map, and the correlation peak is projected back to geographic
coordinates. Feature extraction is pluggable: grayscale identity, mean
pooling, or maps exported by an external model and loaded from an FMAP
container.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .errors import (
    BadExtractorSpec,
    FmapFormatError,
    QueryLargerThanReference,
    ZeroVarianceQuery,
)
from .geo import AoiGeometry, GeoPoint, aoi_pixel_to_geo
from .raster import RasterImage

FMAP_MAGIC = b"FMAP1"
LOW_CONFIDENCE_SCORE = 0.3
_VARIANCE_EPS = 1e-12


@dataclass(frozen=True)
class FeatureMap:
    """Dense features on a regular grid over an image.

    ``values`` is (channels, height, width) float32. Cell (i, j) covers the
    pixel block whose top-left corner is ``(origin_x + j*stride_px,
    origin_y + i*stride_px)`` in the source image.
    """

    values: np.ndarray
    stride_px: int
    origin_x: int = 0
    origin_y: int = 0

    def __post_init__(self) -> None:
        v = np.asarray(self.values)
        if v.ndim != 3:
            raise ValueError(f"feature values must be 3-d (c, h, w), got {v.shape}")
        if v.dtype != np.float32:
            v = v.astype(np.float32)
        if int(self.stride_px) < 1:
            raise ValueError(f"stride_px must be >= 1, got {self.stride_px}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "stride_px", int(self.stride_px))
        object.__setattr__(self, "origin_x", int(self.origin_x))
        object.__setattr__(self, "origin_y", int(self.origin_y))

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class ExtractorSpec:
    """How to turn pixels into a FeatureMap.

    Accepted forms: ``identity-gray``, ``mean-pool:<p>`` with integer block
    size p >= 1, and ``external:<path>`` naming an FMAP file.
    """

    mode: str
    pool: int = 0
    path: str = ""

    @classmethod
    def parse(cls, text: str) -> "ExtractorSpec":
        if text == "identity-gray":
            return cls(mode="identity-gray")
        if text.startswith("mean-pool:"):
            arg = text[len("mean-pool:"):]
            try:
                p = int(arg)
            except ValueError:
                raise BadExtractorSpec(f"mean-pool block size must be an integer, got {arg!r}")
            if p < 1:
                raise BadExtractorSpec(f"mean-pool block size must be >= 1, got {p}")
            return cls(mode="mean-pool", pool=p)
        if text.startswith("external:"):
            path = text[len("external:"):]
            if not path:
                raise BadExtractorSpec("external extractor needs a file path")
            return cls(mode="external", path=path)
        raise BadExtractorSpec(f"unknown extractor spec {text!r}")


def extract_features(image: RasterImage | None, spec: ExtractorSpec) -> FeatureMap:
    """Run the extractor. ``external`` ignores pixels and loads its file."""
    if spec.mode == "external":
        return read_fmap(spec.path)
    if image is None:
        raise ValueError("an image is required for pixel-based extractors")
    luma = image.luminance().astype(np.float32)
    if spec.mode == "identity-gray":
        return FeatureMap(values=luma[np.newaxis], stride_px=1)
    if spec.mode == "mean-pool":
        p = spec.pool
        h = image.height // p
        w = image.width // p
        if h < 1 or w < 1:
            raise ValueError(
                f"image {image.width}x{image.height} smaller than pool block {p}"
            )
        # Truncate the remainder, then average p x p blocks.
        pooled = luma[: h * p, : w * p].reshape(h, p, w, p).mean(axis=(1, 3))
        return FeatureMap(values=pooled[np.newaxis].astype(np.float32), stride_px=p)
    raise BadExtractorSpec(f"unknown extractor mode {spec.mode!r}")


def write_fmap(fmap: FeatureMap, path: str | Path) -> None:
    """Serialize a FeatureMap: 5-byte magic, six u32le header fields
    (channels, height, width, stride, origin_x, origin_y), then the values
    as little-endian float32 in channel-major order."""
    if fmap.origin_x < 0 or fmap.origin_y < 0:
        raise FmapFormatError("file container stores unsigned origins")
    header = struct.pack(
        "<6I",
        fmap.channels,
        fmap.height,
        fmap.width,
        fmap.stride_px,
        fmap.origin_x,
        fmap.origin_y,
    )
    body = np.ascontiguousarray(fmap.values, dtype="<f4").tobytes()
    Path(path).write_bytes(FMAP_MAGIC + header + body)


def read_fmap(path: str | Path) -> FeatureMap:
    raw = Path(path).read_bytes()
    if len(raw) < len(FMAP_MAGIC) + 24:
        raise FmapFormatError(f"{path}: truncated header")
    if raw[: len(FMAP_MAGIC)] != FMAP_MAGIC:
        raise FmapFormatError(f"{path}: bad magic {raw[:5]!r}")
    c, h, w, stride, ox, oy = struct.unpack_from("<6I", raw, len(FMAP_MAGIC))
    if c < 1 or h < 1 or w < 1 or stride < 1:
        raise FmapFormatError(f"{path}: invalid dimensions {c}x{h}x{w} stride {stride}")
    expected = len(FMAP_MAGIC) + 24 + 4 * c * h * w
    if len(raw) != expected:
        raise FmapFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4", offset=len(FMAP_MAGIC) + 24).reshape(c, h, w)
    return FeatureMap(values=values.copy(), stride_px=stride, origin_x=ox, origin_y=oy)


@dataclass(frozen=True)
class CorrelationSurface:
    """Scores for every placement of the query over the reference.

    ``values[dy, dx]`` scores the placement whose query cell (0, 0) sits on
    reference cell (dy, dx). Geometry fields allow projecting a placement
    back into reference-image pixels.
    """

    values: np.ndarray
    query_height: int
    query_width: int
    stride_px: int
    origin_x: int
    origin_y: int

    def placement_center_px(self, dy: int, dx: int) -> tuple[float, float]:
        """Reference-image pixel (x, y) under the center of the placed query."""
        x = self.origin_x + (dx + self.query_width / 2.0) * self.stride_px
        y = self.origin_y + (dy + self.query_height / 2.0) * self.stride_px
        return x, y


def cross_correlate(
    query: FeatureMap,
    reference: FeatureMap,
    normalized: bool = True,
    global_reference_mean: bool = False,
) -> CorrelationSurface:
    """Zero-mean cross-correlation of a query map against a reference map.

    Channel c of the query is centered on its own mean and slid over the
    reference; channel scores are summed. With ``normalized`` the score is
    divided by the product of query and window norms, giving values in
    [-1, 1]; windows with no variance score exactly 0.

    ``global_reference_mean`` (raw mode only) centers the reference on its
    global mean instead of each window's local mean. Because the centered
    query sums to zero, any constant shift of the reference cancels from
    the sum, so both conventions agree up to float round-off; keeping both
    code paths makes that equivalence checkable.
    """
    if query.stride_px != reference.stride_px:
        raise ValueError(
            f"stride mismatch: query {query.stride_px}, reference {reference.stride_px}"
        )
    if query.channels != reference.channels:
        raise ValueError(
            f"channel mismatch: query {query.channels}, reference {reference.channels}"
        )
    if query.height > reference.height or query.width > reference.width:
        raise QueryLargerThanReference(
            f"query {query.width}x{query.height} exceeds "
            f"reference {reference.width}x{reference.height}"
        )
    if normalized and global_reference_mean:
        raise ValueError("global_reference_mean applies to raw correlation only")

    q = query.values.astype(np.float64)
    a = reference.values.astype(np.float64)
    qc = q - q.mean(axis=(1, 2), keepdims=True)
    q_energy = float(np.sum(qc * qc))
    if q_energy <= _VARIANCE_EPS:
        raise ZeroVarianceQuery("query features are constant; correlation is undefined")

    if global_reference_mean:
        a = a - a.mean(axis=(1, 2), keepdims=True)

    out_h = reference.height - query.height + 1
    out_w = reference.width - query.width + 1
    numerator = np.zeros((out_h, out_w), dtype=np.float64)
    for ch in range(query.channels):
        # Correlation = convolution with the flipped kernel. The local
        # window mean contributes mean * sum(qc) = 0, so the numerator
        # needs no window statistics.
        numerator += fftconvolve(a[ch], qc[ch, ::-1, ::-1], mode="valid")

    if not normalized:
        surface = numerator
    else:
        n_cells = query.height * query.width
        win_var = np.zeros((out_h, out_w), dtype=np.float64)
        for ch in range(query.channels):
            s1 = _window_sums(a[ch], query.height, query.width)
            s2 = _window_sums(a[ch] * a[ch], query.height, query.width)
            win_var += s2 - s1 * s1 / n_cells
        np.clip(win_var, 0.0, None, out=win_var)
        denom = np.sqrt(q_energy * win_var)
        surface = np.zeros_like(numerator)
        ok = denom > np.sqrt(_VARIANCE_EPS * q_energy)
        surface[ok] = numerator[ok] / denom[ok]
        np.clip(surface, -1.0, 1.0, out=surface)

    return CorrelationSurface(
        values=surface,
        query_height=query.height,
        query_width=query.width,
        stride_px=reference.stride_px,
        origin_x=reference.origin_x,
        origin_y=reference.origin_y,
    )


def _window_sums(arr: np.ndarray, wh: int, ww: int) -> np.ndarray:
    """Sum of every wh x ww window via a padded integral image."""
    ii = np.zeros((arr.shape[0] + 1, arr.shape[1] + 1), dtype=np.float64)
    ii[1:, 1:] = arr.cumsum(axis=0).cumsum(axis=1)
    return ii[wh:, ww:] - ii[:-wh, ww:] - ii[wh:, :-ww] + ii[:-wh, :-ww]


@dataclass(frozen=True)
class CorrelationMatch:
    """Best and runner-up placements of a query inside an AOI."""

    best: GeoPoint
    best_score: float
    best_cell: tuple[int, int]
    runner_up: GeoPoint | None
    runner_up_score: float | None
    low_confidence: bool


def nn_geolocate(
    query_img: RasterImage,
    aoi_img: RasterImage,
    geom: AoiGeometry,
    spec: ExtractorSpec | str = "identity-gray",
    normalized: bool = True,
    reference_features: FeatureMap | None = None,
) -> CorrelationMatch:
    """Slide the photograph's features over the AOI's and read off the top
    two geographic placements.

    Ties break toward the smallest (row, column) placement. The runner-up
    is the best placement at least half a query footprint away from the
    winner (Chebyshev distance in feature cells), so it is a genuinely
    distinct location rather than the peak's shoulder. A normalized best
    score below 0.3 sets ``low_confidence``.
    """
    if isinstance(spec, str):
        spec = ExtractorSpec.parse(spec)
    q = extract_features(query_img, spec)
    a = reference_features if reference_features is not None else extract_features(aoi_img, spec)
    surf = cross_correlate(q, a, normalized=normalized)
    values = surf.values

    flat_best = int(np.argmax(values))  # first occurrence = smallest (dy, dx)
    by, bx = np.unravel_index(flat_best, values.shape)
    best_score = float(values[by, bx])
    px, py = surf.placement_center_px(int(by), int(bx))
    best_geo = aoi_pixel_to_geo(geom, px, py)

    radius = max(1, min(surf.query_height, surf.query_width) // 2)
    masked = values.copy()
    y0 = max(0, by - radius)
    y1 = min(values.shape[0], by + radius + 1)
    x0 = max(0, bx - radius)
    x1 = min(values.shape[1], bx + radius + 1)
    masked[y0:y1, x0:x1] = -np.inf
    runner_geo = None
    runner_score = None
    if np.isfinite(masked).any():
        flat_second = int(np.argmax(masked))
        ry, rx = np.unravel_index(flat_second, masked.shape)
        runner_score = float(values[ry, rx])
        rpx, rpy = surf.placement_center_px(int(ry), int(rx))
        runner_geo = aoi_pixel_to_geo(geom, rpx, rpy)

    low_confidence = bool(normalized and best_score < LOW_CONFIDENCE_SCORE)
    return CorrelationMatch(
        best=best_geo,
        best_score=best_score,
        best_cell=(int(by), int(bx)),
        runner_up=runner_geo,
        runner_up_score=runner_score,
        low_confidence=low_confidence,
    )
