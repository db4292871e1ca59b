"""Scale-invariant keypoint pipeline over sliding AOI windows.

Detection and description follow the classic recipe: a Gaussian scale
space, difference-of-Gaussians extrema with sub-pixel refinement, contrast
and edge-response rejection, a 36-bin orientation histogram whose secondary
peaks spawn duplicate keypoints, and a 4x4x8 gradient histogram descriptor
finished by normalize, clip at 0.2, renormalize.

The geolocation search crops overlapping windows out of a stitched AOI,
skips predominantly aquatic ones, scores the rest by good-match count
against the photograph, and returns the centers of the two best windows.
Everything is deterministic: ties break toward the lowest window index and
worker count never changes the ranking.
"""

from __future__ import annotations

import math
import threading
import time
from collections.abc import Callable, Iterator
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter, minimum_filter

from .errors import (
    ImageTooSmall,
    NoLandWindows,
    NoQueryKeypoints,
    WindowLargerThanAoi,
)
from .geo import AoiGeometry, CameraOptics, GeoPoint, PixelPoint, aoi_pixel_to_geo, footprint_area_km2
from .raster import RasterImage
from .results import MatchResult

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SiftParams:
    sigma: float = 1.6
    scales_per_octave: int = 3
    contrast_threshold: float = 0.03
    edge_ratio: float = 10.0
    orientation_bins: int = 36
    orientation_peak_ratio: float = 0.8
    descriptor_grid: int = 4
    descriptor_bins: int = 8
    match_ratio: float = 0.75
    max_keypoints: int = 2000
    min_octave_dim: int = 16
    min_image_dim: int = 32
    assumed_blur: float = 0.5


@dataclass(frozen=True)
class SiftKeypoint:
    x: float
    y: float
    scale: float
    orientation: float
    response: float


@dataclass(frozen=True)
class WindowCandidate:
    """One overlapping AOI window: where it sits and how well it matched."""

    window_index: int
    top_left_px: PixelPoint
    size_px: int
    score: float = 0.0
    center_geo: GeoPoint | None = None


def _gaussian_octave(base: np.ndarray, p: SiftParams) -> list[np.ndarray]:
    k = 2.0 ** (1.0 / p.scales_per_octave)
    images = [base]
    for i in range(1, p.scales_per_octave + 3):
        # Incremental blur: going from sigma*k^(i-1) to sigma*k^i.
        sigma_inc = p.sigma * k ** (i - 1) * math.sqrt(k * k - 1.0)
        images.append(gaussian_filter(images[-1], sigma=sigma_inc, mode="nearest"))
    return images


def _refine_extremum(
    dog: np.ndarray, s: int, y: int, x: int, p: SiftParams
) -> tuple[float, float, float, float] | None:
    """Quadratic sub-pixel fit around a candidate extremum.

    Returns refined (x, y, s, value) or None when the candidate walks out
    of bounds, fails the contrast test, or sits on an edge response.
    """
    n_layers, h, w = dog.shape
    for _ in range(3):
        d0 = dog[s, y, x]
        dx = 0.5 * (dog[s, y, x + 1] - dog[s, y, x - 1])
        dy = 0.5 * (dog[s, y + 1, x] - dog[s, y - 1, x])
        ds = 0.5 * (dog[s + 1, y, x] - dog[s - 1, y, x])
        dxx = dog[s, y, x + 1] - 2.0 * d0 + dog[s, y, x - 1]
        dyy = dog[s, y + 1, x] - 2.0 * d0 + dog[s, y - 1, x]
        dss = dog[s + 1, y, x] - 2.0 * d0 + dog[s - 1, y, x]
        dxy = 0.25 * (
            dog[s, y + 1, x + 1] - dog[s, y + 1, x - 1]
            - dog[s, y - 1, x + 1] + dog[s, y - 1, x - 1]
        )
        dxs = 0.25 * (
            dog[s + 1, y, x + 1] - dog[s + 1, y, x - 1]
            - dog[s - 1, y, x + 1] + dog[s - 1, y, x - 1]
        )
        dys = 0.25 * (
            dog[s + 1, y + 1, x] - dog[s + 1, y - 1, x]
            - dog[s - 1, y + 1, x] + dog[s - 1, y - 1, x]
        )
        hessian = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
        grad = np.array([dx, dy, ds])
        try:
            offset = -np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(offset) < 0.5):
            value = d0 + 0.5 * float(grad @ offset)
            if abs(value) < p.contrast_threshold:
                return None
            # Edge rejection on the spatial Hessian.
            tr = dxx + dyy
            det = dxx * dyy - dxy * dxy
            r = p.edge_ratio
            if det <= 0 or tr * tr * r >= det * (r + 1.0) ** 2:
                return None
            return (x + float(offset[0]), y + float(offset[1]), s + float(offset[2]), value)
        x += int(round(float(offset[0])))
        y += int(round(float(offset[1])))
        s += int(round(float(offset[2])))
        if not (1 <= s < n_layers - 1 and 1 <= y < h - 1 and 1 <= x < w - 1):
            return None
    return None


def _gradients(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gy, gx = np.gradient(image)
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx) % TWO_PI
    return mag, ang


def _orientations(
    mag: np.ndarray, ang: np.ndarray, x: float, y: float, sigma_oct: float, p: SiftParams
) -> list[float]:
    """Dominant gradient directions near (x, y); secondary peaks at >= 80%
    of the maximum each produce their own orientation."""
    h, w = mag.shape
    nbins = p.orientation_bins
    sigma_w = 1.5 * sigma_oct
    radius = max(1, int(round(3.0 * sigma_w)))
    xi, yi = int(round(x)), int(round(y))
    x0, x1 = max(0, xi - radius), min(w, xi + radius + 1)
    y0, y1 = max(0, yi - radius), min(h, yi + radius + 1)
    if x0 >= x1 or y0 >= y1:
        return []
    yy, xx = np.mgrid[y0:y1, x0:x1]
    weight = np.exp(-((xx - x) ** 2 + (yy - y) ** 2) / (2.0 * sigma_w**2))
    bins = (ang[y0:y1, x0:x1] / TWO_PI * nbins).astype(np.int64) % nbins
    hist = np.bincount(
        bins.ravel(), weights=(mag[y0:y1, x0:x1] * weight).ravel(), minlength=nbins
    )
    for _ in range(2):
        hist = (np.roll(hist, 1) + hist + np.roll(hist, -1)) / 3.0
    peak = hist.max()
    if peak <= 0.0:
        return []
    out: list[float] = []
    left = np.roll(hist, 1)
    right = np.roll(hist, -1)
    for i in range(nbins):
        if hist[i] >= p.orientation_peak_ratio * peak and hist[i] > left[i] and hist[i] > right[i]:
            denom = left[i] - 2.0 * hist[i] + right[i]
            shift = 0.0 if denom == 0 else 0.5 * (left[i] - right[i]) / denom
            out.append(((i + shift) % nbins) / nbins * TWO_PI)
    return out


def _descriptor(
    mag: np.ndarray,
    ang: np.ndarray,
    x: float,
    y: float,
    sigma_oct: float,
    theta: float,
    p: SiftParams,
) -> np.ndarray:
    """4x4 spatial cells by 8 orientation bins with trilinear soft binning,
    sampled in a frame rotated by the keypoint orientation."""
    h, w = mag.shape
    d = p.descriptor_grid
    nb = p.descriptor_bins
    hist_width = 3.0 * sigma_oct
    radius = int(round(hist_width * math.sqrt(2.0) * (d + 1) * 0.5))
    radius = min(radius, int(math.hypot(h, w)))
    xi, yi = int(round(x)), int(round(y))
    x0, x1 = max(0, xi - radius), min(w, xi + radius + 1)
    y0, y1 = max(0, yi - radius), min(h, yi + radius + 1)
    hist = np.zeros((d + 2, d + 2, nb), dtype=np.float64)
    if x0 >= x1 or y0 >= y1:
        return hist[1:-1, 1:-1, :].ravel().astype(np.float32)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dxp = xx - x
    dyp = yy - y
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    x_rot = (cos_t * dxp + sin_t * dyp) / hist_width
    y_rot = (-sin_t * dxp + cos_t * dyp) / hist_width
    rbin = y_rot + d / 2.0 - 0.5
    cbin = x_rot + d / 2.0 - 0.5
    keep = (rbin > -1.0) & (rbin < d) & (cbin > -1.0) & (cbin < d)
    if not keep.any():
        return hist[1:-1, 1:-1, :].ravel().astype(np.float32)
    rbin = rbin[keep]
    cbin = cbin[keep]
    obin = ((ang[y0:y1, x0:x1][keep] - theta) % TWO_PI) / TWO_PI * nb
    weight = np.exp(-(x_rot[keep] ** 2 + y_rot[keep] ** 2) / (2.0 * (0.5 * d) ** 2))
    contrib = mag[y0:y1, x0:x1][keep] * weight
    r0 = np.floor(rbin).astype(np.int64)
    c0 = np.floor(cbin).astype(np.int64)
    o0 = np.floor(obin).astype(np.int64)
    dr = rbin - r0
    dc = cbin - c0
    do = obin - o0
    for ir in (0, 1):
        wr = contrib * (dr if ir else 1.0 - dr)
        for ic in (0, 1):
            wc = wr * (dc if ic else 1.0 - dc)
            for io in (0, 1):
                wo = wc * (do if io else 1.0 - do)
                np.add.at(hist, (r0 + 1 + ir, c0 + 1 + ic, (o0 + io) % nb), wo)
    vec = hist[1:-1, 1:-1, :].ravel()
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec = np.minimum(vec / norm, 0.2)
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec = vec / norm
    return vec.astype(np.float32)


def detect_and_describe(
    img: RasterImage, params: SiftParams | None = None
) -> tuple[list[SiftKeypoint], np.ndarray]:
    """Find scale-space keypoints and their 128-d descriptors.

    Keypoints are capped at ``max_keypoints`` by contrast response to bound
    downstream matching cost. Returns (keypoints, descriptors) where
    descriptors is (len(keypoints), 128) float32.
    """
    p = params or SiftParams()
    if min(img.height, img.width) < p.min_image_dim:
        raise ImageTooSmall(
            f"image {img.width}x{img.height} below minimum dimension {p.min_image_dim}"
        )
    gray = (img.luminance() / 255.0).astype(np.float32)
    base_blur = math.sqrt(max(p.sigma**2 - p.assumed_blur**2, 0.01))
    current = gaussian_filter(gray, sigma=base_blur, mode="nearest")

    k = 2.0 ** (1.0 / p.scales_per_octave)
    octave_grads: list[dict[int, tuple[np.ndarray, np.ndarray]]] = []
    octaves: list[list[np.ndarray]] = []
    raw: list[tuple[float, float, float, float, int, int]] = []
    # raw: (x_oct, y_oct, s_ref, value, octave, layer)

    octave = 0
    while min(current.shape) >= p.min_octave_dim:
        gaussians = _gaussian_octave(current, p)
        octaves.append(gaussians)
        octave_grads.append({})
        dog = np.stack([gaussians[i + 1] - gaussians[i] for i in range(len(gaussians) - 1)])
        # A candidate must clear the contrast prefilter at its own pixel, so
        # when no interior pixel does (flat or low-texture imagery) the whole
        # extrema scan can be skipped. This is what keeps sliding-window
        # search over mostly featureless mosaics fast.
        strong = np.abs(dog[1:-1]) > 0.5 * p.contrast_threshold
        if strong.any():
            maxf = maximum_filter(dog, size=3, mode="nearest")
            minf = minimum_filter(dog, size=3, mode="nearest")
            cand = ((dog == maxf) | (dog == minf))
            cand[1:-1] &= strong
            cand[0] = False
            cand[-1] = False
            cand[:, :1, :] = False
            cand[:, -1:, :] = False
            cand[:, :, :1] = False
            cand[:, :, -1:] = False
            ss, ys, xs = np.nonzero(cand)
            strengths = np.abs(dog[ss, ys, xs])
            order = np.argsort(-strengths, kind="stable")
            budget = 4 * p.max_keypoints  # refine strongest-first, bounded
            for idx in order[:budget]:
                refined = _refine_extremum(dog, int(ss[idx]), int(ys[idx]), int(xs[idx]), p)
                if refined is None:
                    continue
                rx, ry, rs, value = refined
                layer = min(max(int(round(rs)), 1), p.scales_per_octave + 1)
                raw.append((rx, ry, rs, value, octave, layer))
        current = gaussians[p.scales_per_octave][::2, ::2]
        octave += 1

    # Strongest responses first; the cap bounds descriptor and match cost.
    raw.sort(key=lambda t: (-abs(t[3]), t[4], t[5], t[1], t[0]))
    raw = raw[: p.max_keypoints]

    keypoints: list[SiftKeypoint] = []
    descriptors: list[np.ndarray] = []
    h_img, w_img = gray.shape
    for rx, ry, rs, value, oct_i, layer in raw:
        scale_img = p.sigma * (2.0**oct_i) * (k**rs)
        x_img = rx * (2.0**oct_i)
        y_img = ry * (2.0**oct_i)
        if not (0.0 <= x_img <= w_img - 1 and 0.0 <= y_img <= h_img - 1):
            continue
        grads = octave_grads[oct_i]
        if layer not in grads:
            grads[layer] = _gradients(octaves[oct_i][layer])
        mag, ang = grads[layer]
        sigma_oct = p.sigma * (k**rs)
        for theta in _orientations(mag, ang, rx, ry, sigma_oct, p):
            desc = _descriptor(mag, ang, rx, ry, sigma_oct, theta, p)
            keypoints.append(
                SiftKeypoint(
                    x=x_img, y=y_img, scale=scale_img, orientation=theta, response=abs(value)
                )
            )
            descriptors.append(desc)
            if len(keypoints) >= p.max_keypoints:
                break
        if len(keypoints) >= p.max_keypoints:
            break

    if not descriptors:
        return [], np.zeros((0, p.descriptor_grid**2 * p.descriptor_bins), dtype=np.float32)
    return keypoints, np.stack(descriptors)


def match_descriptors(
    query: np.ndarray, reference: np.ndarray, ratio: float = 0.75
) -> list[tuple[int, int, float]]:
    """Nearest-neighbor matches passing the distance-ratio test.

    For each query descriptor the nearest and second-nearest reference
    descriptors are found; the pair survives iff d1 < ratio * d2. A greedy
    pass (best distance first) then keeps each reference descriptor in at
    most one pair. Returns (query_idx, reference_idx, distance) triples.
    """
    if not (0.0 < ratio <= 1.0):
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    nq, nr = len(query), len(reference)
    if nq == 0 or nr == 0:
        return []
    q = np.asarray(query, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    d2 = (
        np.sum(q * q, axis=1)[:, None]
        + np.sum(r * r, axis=1)[None, :]
        - 2.0 * (q @ r.T)
    )
    np.clip(d2, 0.0, None, out=d2)
    if nr == 1:
        best_idx = np.zeros(nq, dtype=np.int64)
        best_d2 = d2[:, 0]
        second_d2 = np.full(nq, np.inf)
    else:
        part = np.argpartition(d2, 1, axis=1)[:, :2]
        pair = np.take_along_axis(d2, part, axis=1)
        order = np.argsort(pair, axis=1, kind="stable")
        part = np.take_along_axis(part, order, axis=1)
        pair = np.take_along_axis(pair, order, axis=1)
        best_idx = part[:, 0]
        best_d2 = pair[:, 0]
        second_d2 = pair[:, 1]
    survives = best_d2 < (ratio * ratio) * second_d2
    candidates = [
        (float(best_d2[i]), i, int(best_idx[i])) for i in np.nonzero(survives)[0]
    ]
    candidates.sort()
    used: set[int] = set()
    out: list[tuple[int, int, float]] = []
    for dist2, qi, ri in candidates:
        if ri in used:
            continue
        used.add(ri)
        out.append((qi, ri, math.sqrt(dist2)))
    out.sort(key=lambda t: t[0])
    return out


def water_fraction(img: RasterImage) -> float:
    """Fraction of pixels reading as open water: blue strictly above both
    other channels and above 60 of 255."""
    if img.channels != 3:
        raise ValueError("water classification needs an RGB image")
    r = img.data[..., 0].astype(np.int16)
    g = img.data[..., 1].astype(np.int16)
    b = img.data[..., 2].astype(np.int16)
    return float(np.mean((b > r) & (b > g) & (b > 60)))


def subsample_windows(
    aoi: RasterImage,
    window_px: int,
    stride_px: int,
    geom: AoiGeometry | None = None,
) -> Iterator[WindowCandidate]:
    """Row-major overlapping windows over the AOI, lazily.

    Per axis there are floor((dim - window)/stride) + 1 placements. When
    geometry is supplied each candidate carries the window center projected
    to geographic coordinates.
    """
    if stride_px < 1:
        raise ValueError(f"stride_px must be >= 1, got {stride_px}")
    if window_px > aoi.width or window_px > aoi.height:
        raise WindowLargerThanAoi(
            f"window {window_px} exceeds AOI {aoi.width}x{aoi.height}"
        )
    nx = (aoi.width - window_px) // stride_px + 1
    ny = (aoi.height - window_px) // stride_px + 1
    index = 0
    for row in range(ny):
        for col in range(nx):
            x0 = col * stride_px
            y0 = row * stride_px
            center = None
            if geom is not None:
                center = aoi_pixel_to_geo(geom, x0 + window_px / 2.0, y0 + window_px / 2.0)
            yield WindowCandidate(
                window_index=index,
                top_left_px=PixelPoint(float(x0), float(y0)),
                size_px=window_px,
                score=0.0,
                center_geo=center,
            )
            index += 1


def window_size_for(
    optics: CameraOptics | None, geom: AoiGeometry, aoi: RasterImage
) -> int:
    """Window edge in AOI pixels, matched to the photograph's ground
    footprint when optics are known, else a tenth of the AOI."""
    if optics is None:
        size = min(aoi.width, aoi.height) // 10
    else:
        side_km = math.sqrt(footprint_area_km2(optics))
        lat = math.radians(geom.center.lat)
        km_per_px = math.cos(lat) * TWO_PI * 6371.0 / geom.context.scale
        size = int(round(side_km / km_per_px)) if km_per_px > 0 else 0
    return max(32, min(size, aoi.width, aoi.height))


def sift_geolocate(
    query: RasterImage,
    aoi: RasterImage,
    geom: AoiGeometry,
    params: SiftParams | None = None,
    *,
    image_id: str = "",
    window_px: int | None = None,
    stride_px: int | None = None,
    water_threshold: float = 0.85,
    optics: CameraOptics | None = None,
    progress: Callable[[int, int], None] | None = None,
    jobs: int = 1,
) -> list[MatchResult]:
    """Score every land window against the photograph; return the centers
    of the two best-matched windows as rank-1 and rank-2 results.

    Score is the good-match count. Ties rank the lower window index first,
    so output is identical for any worker count.
    """
    t0 = time.perf_counter()
    p = params or SiftParams()
    _, q_desc = detect_and_describe(query, p)
    if len(q_desc) == 0:
        raise NoQueryKeypoints("no keypoints in the photograph; cannot match")
    if window_px is None:
        window_px = window_size_for(optics, geom, aoi)
    if stride_px is None:
        stride_px = max(1, window_px // 2)
    candidates = list(subsample_windows(aoi, window_px, stride_px, geom))
    total = len(candidates)
    check_water = aoi.channels == 3
    done = 0
    lock = threading.Lock()

    def score_one(cand: WindowCandidate) -> WindowCandidate | None:
        nonlocal done
        x0 = int(cand.top_left_px.x)
        y0 = int(cand.top_left_px.y)
        window = RasterImage(aoi.data[y0 : y0 + cand.size_px, x0 : x0 + cand.size_px])
        scored: WindowCandidate | None
        if check_water and water_fraction(window) >= water_threshold:
            scored = None
        else:
            _, w_desc = detect_and_describe(window, p)
            n = len(match_descriptors(q_desc, w_desc, p.match_ratio)) if len(w_desc) else 0
            scored = replace(cand, score=float(n))
        if progress is not None:
            with lock:
                done += 1
                progress(done, total)
        return scored

    if jobs <= 1:
        outcomes = [score_one(c) for c in candidates]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(score_one, candidates))

    land = [c for c in outcomes if c is not None]
    if not land:
        raise NoLandWindows(f"all {total} windows precluded as water")
    land.sort(key=lambda c: (-c.score, c.window_index))
    runtime = time.perf_counter() - t0
    return [
        MatchResult(
            image_id=image_id,
            pipeline="sift",
            predicted=c.center_geo,
            score=c.score,
            rank=rank,
            runtime_s=runtime,
        )
        for rank, c in enumerate(land[:2], start=1)
    ]
