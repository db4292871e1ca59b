"""Dense 8-bit raster images: grayscale or RGB, numpy-backed."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import DecodeError

# ITU-R 601 luma weights, used everywhere a gray view is needed.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class RasterImage:
    """Row-major uint8 pixels; shape (h, w) for gray or (h, w, 3) for RGB."""

    data: np.ndarray

    def __post_init__(self) -> None:
        d = self.data
        if d.dtype != np.uint8:
            raise ValueError(f"raster dtype must be uint8, got {d.dtype}")
        if d.ndim == 2:
            return
        if d.ndim == 3 and d.shape[2] == 3:
            return
        raise ValueError(f"raster shape must be (h, w) or (h, w, 3), got {d.shape}")

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    def luminance(self) -> np.ndarray:
        """Float64 luma plane; identity (up to dtype) for gray images."""
        if self.data.ndim == 2:
            return self.data.astype(np.float64)
        r, g, b = (self.data[..., i].astype(np.float64) for i in range(3))
        return LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b

    def to_gray(self) -> "RasterImage":
        if self.channels == 1:
            return self
        return RasterImage(np.clip(np.rint(self.luminance()), 0, 255).astype(np.uint8))

    def crop(self, x0: int, y0: int, w: int, h: int) -> "RasterImage":
        if x0 < 0 or y0 < 0 or x0 + w > self.width or y0 + h > self.height:
            raise ValueError("crop rectangle outside image bounds")
        return RasterImage(np.ascontiguousarray(self.data[y0 : y0 + h, x0 : x0 + w]))

    def resize(self, width: int, height: int) -> "RasterImage":
        """Bilinear resample to the given size."""
        img = self._to_pil().resize((width, height), Image.BILINEAR)
        return RasterImage(np.asarray(img, dtype=np.uint8))

    def _to_pil(self) -> Image.Image:
        mode = "L" if self.channels == 1 else "RGB"
        return Image.fromarray(self.data, mode=mode)

    def png_bytes(self) -> bytes:
        buf = io.BytesIO()
        self._to_pil().save(buf, format="PNG")
        return buf.getvalue()

    def save(self, path) -> None:
        self._to_pil().save(path)


def decode_image(raw: bytes) -> RasterImage:
    """Decode PNG/JPEG bytes to an RGB raster.

    Raises:
        DecodeError: bytes are not a decodable image.
    """
    try:
        img = Image.open(io.BytesIO(raw))
        img = img.convert("RGB")
        return RasterImage(np.asarray(img, dtype=np.uint8))
    except DecodeError:
        raise
    except Exception as exc:
        raise DecodeError(f"could not decode image bytes: {exc}") from exc


def load_image(path) -> RasterImage:
    with open(path, "rb") as fh:
        return decode_image(fh.read())
