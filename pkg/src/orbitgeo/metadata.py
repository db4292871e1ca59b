"""Capture metadata from image headers plus camera sensor lookup.

The EXIF reader walks JPEG APP1 / TIFF IFD structures directly so that
truncated or damaged input always surfaces as a typed error, never as an
uncaught IndexError. Only the tags this toolkit needs are decoded: camera
model, focal length, GPS position/altitude, and the original timestamp.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

from .errors import MalformedExif, UnknownCamera, UnsupportedContainer
from .geo import GeoPoint

_TAG_MODEL = 0x0110
_TAG_EXIF_IFD = 0x8769
_TAG_GPS_IFD = 0x8825
_TAG_FOCAL_LENGTH = 0x920A
_TAG_DATETIME_ORIGINAL = 0x9003
_GPS_LAT_REF = 0x0001
_GPS_LAT = 0x0002
_GPS_LON_REF = 0x0003
_GPS_LON = 0x0004
_GPS_ALT_REF = 0x0005
_GPS_ALT = 0x0006

# TIFF field type -> element size in bytes
_TYPE_SIZES = {1: 1, 2: 1, 3: 2, 4: 4, 5: 8, 6: 1, 7: 1, 8: 2, 9: 4, 10: 8}


@dataclass(frozen=True)
class CaptureMetadata:
    """What the header said about the capture; absent tags stay None."""

    camera_model: str | None = None
    focal_length_mm: float | None = None
    gps: GeoPoint | None = None
    altitude_km: float | None = None
    timestamp: datetime | None = None


@dataclass(frozen=True)
class SensorSpec:
    camera_model: str
    sensor_width_mm: float
    sensor_height_mm: float

    def __post_init__(self) -> None:
        if self.sensor_width_mm <= 0 or self.sensor_height_mm <= 0:
            raise ValueError("sensor dimensions must be positive")


def dms_to_decimal(deg: float, minutes: float, seconds: float, hemisphere: str) -> float:
    """Degrees/minutes/seconds plus hemisphere letter to signed decimal."""
    value = deg + minutes / 60.0 + seconds / 3600.0
    if hemisphere.upper() in ("S", "W"):
        value = -value
    return value


class _TiffReader:
    """Bounds-checked reads inside one TIFF blob."""

    def __init__(self, blob: bytes):
        if len(blob) < 8:
            raise MalformedExif("TIFF header shorter than 8 bytes")
        order = blob[:2]
        if order == b"II":
            self.endian = "<"
        elif order == b"MM":
            self.endian = ">"
        else:
            raise MalformedExif(f"bad TIFF byte-order mark {order!r}")
        if self._u16(blob, 2) != 42:
            raise MalformedExif("bad TIFF magic number")
        self.blob = blob

    def _u16(self, blob: bytes, off: int) -> int:
        return struct.unpack_from(self.endian + "H", blob, off)[0]

    def u16(self, off: int) -> int:
        self._check(off, 2)
        return struct.unpack_from(self.endian + "H", self.blob, off)[0]

    def u32(self, off: int) -> int:
        self._check(off, 4)
        return struct.unpack_from(self.endian + "I", self.blob, off)[0]

    def raw(self, off: int, size: int) -> bytes:
        self._check(off, size)
        return self.blob[off : off + size]

    def _check(self, off: int, size: int) -> None:
        if off < 0 or off + size > len(self.blob):
            raise MalformedExif(
                f"read of {size} bytes at offset {off} beyond TIFF blob "
                f"({len(self.blob)} bytes)"
            )

    def ifd_entries(self, ifd_off: int) -> dict[int, tuple[int, int, bytes]]:
        """Return {tag: (type, count, value_bytes)} for one IFD."""
        n = self.u16(ifd_off)
        entries: dict[int, tuple[int, int, bytes]] = {}
        for i in range(n):
            base = ifd_off + 2 + 12 * i
            tag = self.u16(base)
            ftype = self.u16(base + 2)
            count = self.u32(base + 4)
            size = _TYPE_SIZES.get(ftype, 0) * count
            if size == 0:
                continue  # unknown field type: skip, do not fail
            if size <= 4:
                value = self.raw(base + 8, size)
            else:
                value = self.raw(self.u32(base + 8), size)
            entries[tag] = (ftype, count, value)
        return entries

    def decode_ascii(self, entry: tuple[int, int, bytes]) -> str | None:
        ftype, _count, value = entry
        if ftype != 2:
            return None
        return value.split(b"\x00", 1)[0].decode("ascii", errors="replace").strip()

    def decode_rationals(self, entry: tuple[int, int, bytes]) -> list[float] | None:
        ftype, count, value = entry
        if ftype not in (5, 10):
            return None
        fmt = "II" if ftype == 5 else "ii"
        out: list[float] = []
        for i in range(count):
            num, den = struct.unpack_from(self.endian + fmt, value, 8 * i)
            if den == 0:
                return None  # degenerate rational: treat the tag as absent
            out.append(num / den)
        return out

    def decode_u32_scalar(self, entry: tuple[int, int, bytes]) -> int | None:
        ftype, count, value = entry
        if count != 1:
            return None
        if ftype == 3:
            return struct.unpack_from(self.endian + "H", value)[0]
        if ftype == 4:
            return struct.unpack_from(self.endian + "I", value)[0]
        if ftype == 1:
            return value[0]
        return None


def _exif_blob_from_jpeg(data: bytes) -> bytes | None:
    """Scan JPEG segments for the Exif APP1 payload; None if absent."""
    pos = 2
    while pos + 2 <= len(data):
        if data[pos] != 0xFF:
            raise MalformedExif(f"expected segment marker at byte {pos}")
        marker = data[pos + 1]
        if marker == 0xD9:  # EOI
            return None
        if 0xD0 <= marker <= 0xD7 or marker == 0x01:  # standalone markers
            pos += 2
            continue
        if pos + 4 > len(data):
            break  # a marker with no room left for its length field
        length = struct.unpack_from(">H", data, pos + 2)[0]
        if length < 2 or pos + 2 + length > len(data):
            raise MalformedExif(f"segment at byte {pos} overruns the file")
        if marker == 0xE1 and data[pos + 4 : pos + 10] == b"Exif\x00\x00":
            return data[pos + 10 : pos + 2 + length]
        if marker == 0xDA:  # start of scan: no EXIF before image data
            return None
        pos += 2 + length
    if pos == len(data):
        return None  # clean end of segments, simply no EXIF present
    raise MalformedExif("truncated JPEG segment stream")


def parse_exif(image_bytes: bytes) -> CaptureMetadata:
    """Extract capture metadata from a JPEG or TIFF byte sequence.

    Absent tags yield absent fields. Raises UnsupportedContainer when the
    bytes are neither container, MalformedExif when the structure is broken.
    """
    if len(image_bytes) >= 2 and image_bytes[:2] == b"\xff\xd8":
        blob = _exif_blob_from_jpeg(image_bytes)
        if blob is None:
            return CaptureMetadata()
    elif len(image_bytes) >= 4 and image_bytes[:2] in (b"II", b"MM"):
        blob = image_bytes
    else:
        raise UnsupportedContainer("bytes are neither a JPEG nor a TIFF container")

    reader = _TiffReader(blob)
    ifd0 = reader.ifd_entries(reader.u32(4))

    model = reader.decode_ascii(ifd0[_TAG_MODEL]) if _TAG_MODEL in ifd0 else None

    focal = None
    timestamp = None
    if _TAG_EXIF_IFD in ifd0:
        off = reader.decode_u32_scalar(ifd0[_TAG_EXIF_IFD])
        if off is not None:
            exif_ifd = reader.ifd_entries(off)
            if _TAG_FOCAL_LENGTH in exif_ifd:
                vals = reader.decode_rationals(exif_ifd[_TAG_FOCAL_LENGTH])
                if vals:
                    focal = vals[0]
            if _TAG_DATETIME_ORIGINAL in exif_ifd:
                text = reader.decode_ascii(exif_ifd[_TAG_DATETIME_ORIGINAL])
                timestamp = _parse_exif_datetime(text)

    gps = None
    altitude_km = None
    if _TAG_GPS_IFD in ifd0:
        off = reader.decode_u32_scalar(ifd0[_TAG_GPS_IFD])
        if off is not None:
            gps, altitude_km = _decode_gps(reader, reader.ifd_entries(off))

    return CaptureMetadata(
        camera_model=model,
        focal_length_mm=focal,
        gps=gps,
        altitude_km=altitude_km,
        timestamp=timestamp,
    )


def _parse_exif_datetime(text: str | None) -> datetime | None:
    if not text:
        return None
    try:
        return datetime.strptime(text, "%Y:%m:%d %H:%M:%S").replace(tzinfo=timezone.utc)
    except ValueError:
        return None


def _decode_gps(
    reader: _TiffReader, gps_ifd: dict[int, tuple[int, int, bytes]]
) -> tuple[GeoPoint | None, float | None]:
    point = None
    if _GPS_LAT in gps_ifd and _GPS_LON in gps_ifd:
        lat_parts = reader.decode_rationals(gps_ifd[_GPS_LAT])
        lon_parts = reader.decode_rationals(gps_ifd[_GPS_LON])
        lat_ref = reader.decode_ascii(gps_ifd.get(_GPS_LAT_REF, (2, 1, b"N"))) or "N"
        lon_ref = reader.decode_ascii(gps_ifd.get(_GPS_LON_REF, (2, 1, b"E"))) or "E"
        if lat_parts and lon_parts and len(lat_parts) == 3 and len(lon_parts) == 3:
            lat = dms_to_decimal(*lat_parts, lat_ref)
            lon = dms_to_decimal(*lon_parts, lon_ref)
            try:
                point = GeoPoint(lat, lon)
            except ValueError:
                point = None  # out-of-range coordinates: treat as absent

    altitude_km = None
    if _GPS_ALT in gps_ifd:
        vals = reader.decode_rationals(gps_ifd[_GPS_ALT])
        if vals:
            meters = vals[0]
            ref = reader.decode_u32_scalar(gps_ifd.get(_GPS_ALT_REF, (1, 1, b"\x00")))
            if ref == 1:
                meters = -meters
            altitude_km = meters / 1000.0
    return point, altitude_km


# sensor specification table

_SENSOR_HEADER = ["camera_model", "sensor_width_mm", "sensor_height_mm"]


def _normalize_model(model: str) -> str:
    return " ".join(model.split()).casefold()


def load_sensor_table(path: str | Path | None = None) -> dict[str, SensorSpec]:
    """Load a sensor table keyed by normalized camera model.

    With no path, the table bundled with the package is used.
    """
    if path is None:
        src = resources.files("orbitgeo").joinpath("data/sensors.csv")
        text = src.read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.reader(text.splitlines()))
    if not rows or rows[0] != _SENSOR_HEADER:
        raise ValueError(f"sensor table header must be {','.join(_SENSOR_HEADER)}")
    table: dict[str, SensorSpec] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ValueError(f"sensor table line {lineno}: expected 3 fields")
        key = _normalize_model(row[0])
        if key in table:
            raise ValueError(f"sensor table line {lineno}: duplicate model {row[0]!r}")
        table[key] = SensorSpec(row[0], float(row[1]), float(row[2]))
    return table


def lookup_sensor(camera_model: str, table: dict[str, SensorSpec]) -> SensorSpec:
    """Case-insensitive, whitespace-normalized model lookup."""
    key = _normalize_model(camera_model)
    if key not in table:
        raise UnknownCamera(f"no sensor specification for {camera_model!r}")
    return table[key]
