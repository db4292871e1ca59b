"""Typed errors raised across the toolkit.

Every expected failure mode has its own class so callers (and the CLI)
can match on type rather than message text. All inherit from
:class:`OrbitgeoError`.
"""

from __future__ import annotations


class OrbitgeoError(Exception):
    """Base class for all expected toolkit errors."""


# geodesy / projection

class LatitudeOutOfRange(OrbitgeoError):
    """Latitude outside the Web Mercator validity band (|lat| > 85.05113)."""


class PixelOutOfWorld(OrbitgeoError):
    """World pixel coordinate outside [0, S] at the given zoom."""


class AoiExceedsWorld(OrbitgeoError):
    """AOI corner falls outside the world map (antimeridian wrap is rejected)."""


class NonPositiveOptics(OrbitgeoError):
    """Focal length or sensor dimension is zero or negative."""


class MissingAltitude(OrbitgeoError):
    """Footprint estimation requested without an altitude."""


class NegativeArea(OrbitgeoError):
    """Area categorization of a negative area."""


# metadata

class UnsupportedContainer(OrbitgeoError):
    """Input bytes are neither a JPEG nor a TIFF container."""


class MalformedExif(OrbitgeoError):
    """Container recognized but the EXIF structure is invalid or truncated."""


class UnknownCamera(OrbitgeoError):
    """Camera model not present in the sensor specification table."""


# tiles

class ZoomOutOfRange(OrbitgeoError):
    """Tile zoom outside the supported [0, 22] integer range."""


class NetworkError(OrbitgeoError):
    """Tile or map request failed after all retries."""


class OfflineMiss(OrbitgeoError):
    """Offline mode and the requested tile is in neither cache nor fixtures."""


class DecodeError(OrbitgeoError):
    """Fetched bytes could not be decoded as an image."""


class MissingTile(OrbitgeoError):
    """Stitch called with a tile absent from the grid."""


class InconsistentTileSize(OrbitgeoError):
    """Stitch called with tiles of differing dimensions."""


# features / correlation

class BadExtractorSpec(OrbitgeoError):
    """Extractor specification is internally inconsistent."""


class FmapFormatError(OrbitgeoError):
    """FMAP file is malformed (bad magic, truncated payload, ...)."""


class QueryLargerThanReference(OrbitgeoError):
    """Query feature map exceeds the reference map in some dimension."""


class ZeroVarianceQuery(OrbitgeoError):
    """Normalized correlation of a constant query is undefined."""


# sift

class ImageTooSmall(OrbitgeoError):
    """Image below the minimum size for keypoint detection."""


class WindowLargerThanAoi(OrbitgeoError):
    """Sliding window larger than the AOI raster."""


class NoLandWindows(OrbitgeoError):
    """Every window was precluded as predominantly water."""


class NoQueryKeypoints(OrbitgeoError):
    """Query image produced no keypoints at all."""


# vlm

class BackendUnavailable(OrbitgeoError):
    """Live backend could not be reached after retries."""


class ReplayMiss(OrbitgeoError):
    """Replay transcript has no entry for the prompt digest."""


class AuthError(OrbitgeoError):
    """Live backend selected but no credentials are configured."""


class EmptyResponse(OrbitgeoError):
    """Backend returned empty text."""


class NoHypothesis(OrbitgeoError):
    """Response contained neither coordinates nor place names."""


# bench

class ManifestParseError(OrbitgeoError):
    """Manifest row is malformed; message names the row."""


class DuplicateImageId(OrbitgeoError):
    """Two manifest rows share an image_id."""


class UnknownImageId(OrbitgeoError):
    """Result references an image_id absent from the manifest."""


class IoError(OrbitgeoError):
    """File could not be read or written."""


class CsvParseError(OrbitgeoError):
    """Results CSV is malformed; message names the line."""
