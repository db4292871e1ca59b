"""Benchmark harness: manifests, scoring, aggregation, and result files.

A manifest is a UTF-8 CSV describing photographs with platform and
ground-truth coordinates plus optional camera metadata. Pipelines produce
MatchResults; evaluation scores them against ground truth either by
great-circle distance against a threshold or by place-name matching
against an alias list. Success rates are exact rationals end to end so a
reported percentage is arithmetic, not float drift.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .errors import (
    CsvParseError,
    DuplicateImageId,
    IoError,
    ManifestParseError,
    UnknownCamera,
    UnknownImageId,
)
from .geo import (
    DEFAULT_ALTITUDE_KM,
    AreaCategory,
    CameraOptics,
    GeoPoint,
    categorize_area,
    footprint_area_km2,
    haversine_km,
)
from .metadata import load_sensor_table, lookup_sensor
from .results import MatchResult
from .tiles import atomic_write_bytes

MANIFEST_HEADER = (
    "image_id,image_path,iss_lat,iss_lon,gt_lat,gt_lon,"
    "camera_model,focal_length_mm,altitude_km,area_km2,aliases"
)
RESULTS_HEADER = "image_id,pipeline,rank,pred_lat,pred_lon,score,place_names,runtime_s"
DEFAULT_THRESHOLD_KM = 50.0


@dataclass(frozen=True)
class BenchmarkRecord:
    image_id: str
    image_path: str
    iss: GeoPoint
    ground_truth: GeoPoint
    camera_model: str | None = None
    focal_length_mm: float | None = None
    altitude_km: float | None = None
    area_km2: float | None = None
    aliases: tuple[str, ...] = ()
    area_category: AreaCategory | None = None


def _optional_float(raw: str, field: str, line: int) -> float | None:
    raw = raw.strip()
    if not raw:
        return None
    try:
        return float(raw)
    except ValueError:
        raise ManifestParseError(f"line {line}: {field} is not a number: {raw!r}")


def _record_category(
    camera_model: str | None,
    focal_mm: float | None,
    altitude_km: float | None,
    area_km2: float | None,
) -> tuple[AreaCategory | None, float | None]:
    """Category from optics when the camera is known, else from the area
    column, else uncategorized. Returns (category, area actually used)."""
    if camera_model and focal_mm:
        try:
            sensor = lookup_sensor(camera_model, load_sensor_table())
        except UnknownCamera:
            sensor = None
        if sensor is not None:
            optics = CameraOptics(
                focal_length_mm=focal_mm,
                sensor_width_mm=sensor.sensor_width_mm,
                sensor_height_mm=sensor.sensor_height_mm,
                altitude_km=altitude_km if altitude_km is not None else DEFAULT_ALTITUDE_KM,
            )
            area = footprint_area_km2(optics)
            return categorize_area(area), area
    if area_km2 is not None:
        return categorize_area(area_km2), area_km2
    return None, None


def load_manifest(path: str | Path) -> list[BenchmarkRecord]:
    """Read benchmark records; errors carry the offending file line."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise ManifestParseError(
            f"line 1: header must be exactly {MANIFEST_HEADER!r}"
        )
    records: list[BenchmarkRecord] = []
    seen: set[str] = set()
    reader = csv.reader(lines[1:])
    for i, row in enumerate(reader):
        line = i + 2
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 11:
            raise ManifestParseError(f"line {line}: expected 11 fields, got {len(row)}")
        image_id = row[0].strip()
        if not image_id:
            raise ManifestParseError(f"line {line}: empty image_id")
        if image_id in seen:
            raise DuplicateImageId(f"line {line}: duplicate image_id {image_id!r}")
        seen.add(image_id)
        try:
            iss = GeoPoint(float(row[2]), float(row[3]))
            gt = GeoPoint(float(row[4]), float(row[5]))
        except Exception as exc:
            raise ManifestParseError(f"line {line}: bad coordinates: {exc}") from exc
        camera = row[6].strip() or None
        focal = _optional_float(row[7], "focal_length_mm", line)
        altitude = _optional_float(row[8], "altitude_km", line)
        area = _optional_float(row[9], "area_km2", line)
        aliases = tuple(a.strip() for a in row[10].split(";") if a.strip())
        category, area_used = _record_category(camera, focal, altitude, area)
        records.append(
            BenchmarkRecord(
                image_id=image_id,
                image_path=row[1].strip(),
                iss=iss,
                ground_truth=gt,
                camera_model=camera,
                focal_length_mm=focal,
                altitude_km=altitude,
                area_km2=area_used if area_used is not None else area,
                aliases=aliases,
                area_category=category,
            )
        )
    return records


@dataclass(frozen=True)
class RecordEval:
    image_id: str
    success: bool
    distance_km: float | None
    mode: str


def render_rate(successes: int, scored: int) -> str:
    """Exact-rational percentage with two decimals; 'n/a' when nothing was
    scored. 107/142 renders '75.35' and 128/142 renders '90.14'."""
    if scored == 0:
        return "n/a"
    hundredths = Fraction(successes, scored) * 10000
    q = int(hundredths + Fraction(1, 2))  # round half up, exactly
    return f"{q // 100}.{q % 100:02d}"


@dataclass(frozen=True)
class EvalReport:
    mode: str
    threshold_km: float
    consider_top2: bool
    entries: tuple[RecordEval, ...]

    @property
    def scored(self) -> int:
        return len(self.entries)

    @property
    def successes(self) -> int:
        return sum(1 for e in self.entries if e.success)

    def success_fraction(self) -> Fraction:
        if not self.entries:
            return Fraction(0)
        return Fraction(self.successes, self.scored)

    def success_rate_text(self) -> str:
        return f"{self.successes}/{self.scored} ({render_rate(self.successes, self.scored)}%)"


def evaluate(
    results: list[MatchResult],
    records: list[BenchmarkRecord],
    threshold_km: float = DEFAULT_THRESHOLD_KM,
    consider_top2: bool = False,
    mode: str = "distance",
) -> EvalReport:
    """Score results against ground truth.

    Distance mode: success iff the great-circle distance from prediction to
    ground truth is within the threshold. Name mode: success iff any
    predicted place name equals a ground-truth alias, case-folded. With
    ``consider_top2`` a record passes when either rank passes. Unresolved
    or coordinate-less results fail; records with no results are not scored.
    """
    if mode not in ("distance", "name"):
        raise ValueError(f"mode must be 'distance' or 'name', got {mode!r}")
    by_id = {r.image_id: r for r in records}
    grouped: dict[str, list[MatchResult]] = {}
    for res in results:
        if res.image_id not in by_id:
            raise UnknownImageId(f"result references unknown image {res.image_id!r}")
        grouped.setdefault(res.image_id, []).append(res)

    entries: list[RecordEval] = []
    for rec in records:
        if rec.image_id not in grouped:
            continue
        ranked = grouped[rec.image_id]
        considered = [r for r in ranked if r.rank == 1]
        if consider_top2:
            considered += [r for r in ranked if r.rank == 2]
        success = False
        best_distance: float | None = None
        for res in considered:
            if res.unresolved:
                continue
            if mode == "distance":
                if res.predicted is None:
                    continue
                d = haversine_km(res.predicted, rec.ground_truth)
                if best_distance is None or d < best_distance:
                    best_distance = d
                if d <= threshold_km:
                    success = True
            else:
                aliases = {a.casefold() for a in rec.aliases}
                if any(n.casefold() in aliases for n in res.place_names):
                    success = True
        entries.append(
            RecordEval(
                image_id=rec.image_id,
                success=success,
                distance_km=best_distance,
                mode=mode,
            )
        )
    return EvalReport(
        mode=mode,
        threshold_km=threshold_km,
        consider_top2=consider_top2,
        entries=tuple(entries),
    )


def aggregate_by_category(
    report: EvalReport, records: list[BenchmarkRecord]
) -> list[tuple[str, int, int, str]]:
    """Success tallies per footprint-area bucket plus an overall row.

    Rows are (label, successes, scored, rate) ordered by bucket lower edge,
    with uncategorized records after the buckets and 'overall' last. Only
    buckets that contain scored records appear (plus overall, always).
    """
    success_by_id = {e.image_id: e.success for e in report.entries}
    by_cat: dict[AreaCategory | None, list[bool]] = {}
    for rec in records:
        if rec.image_id not in success_by_id:
            continue
        by_cat.setdefault(rec.area_category, []).append(success_by_id[rec.image_id])
    rows: list[tuple[str, int, int, str]] = []
    for cat in AreaCategory:
        if cat in by_cat:
            outcomes = by_cat[cat]
            s = sum(outcomes)
            rows.append((cat.label, s, len(outcomes), render_rate(s, len(outcomes))))
    if None in by_cat:
        outcomes = by_cat[None]
        s = sum(outcomes)
        rows.append(("uncategorized", s, len(outcomes), render_rate(s, len(outcomes))))
    rows.append(
        ("overall", report.successes, report.scored, render_rate(report.successes, report.scored))
    )
    return rows


def _format_coord(value: float) -> str:
    return f"{value:.6f}"


def write_results_csv(results: list[MatchResult], path: str | Path) -> None:
    """Pinned wire format: coordinates at 6 decimals, place names joined by
    ';' (the csv layer quotes as needed), floats at full precision."""
    rows = [RESULTS_HEADER.split(",")]
    for r in results:
        rows.append(
            [
                r.image_id,
                r.pipeline,
                str(r.rank),
                _format_coord(r.predicted.lat) if r.predicted else "",
                _format_coord(r.predicted.lon) if r.predicted else "",
                repr(r.score),
                ";".join(r.place_names),
                repr(r.runtime_s),
            ]
        )
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    try:
        atomic_write_bytes(Path(path), buf.getvalue().encode("utf-8"))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_results_csv(path: str | Path) -> list[MatchResult]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0] != RESULTS_HEADER:
        raise CsvParseError(f"line 1: header must be exactly {RESULTS_HEADER!r}")
    out: list[MatchResult] = []
    reader = csv.reader(lines[1:])
    for i, row in enumerate(reader):
        line = i + 2
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 8:
            raise CsvParseError(f"line {line}: expected 8 fields, got {len(row)}")
        try:
            predicted = None
            if row[3] or row[4]:
                predicted = GeoPoint(float(row[3]), float(row[4]))
            names = tuple(n for n in row[6].split(";") if n)
            out.append(
                MatchResult(
                    image_id=row[0],
                    pipeline=row[1],
                    rank=int(row[2]),
                    predicted=predicted,
                    score=float(row[5]),
                    place_names=names,
                    runtime_s=float(row[7]),
                    unresolved=predicted is None and not names,
                )
            )
        except CsvParseError:
            raise
        except Exception as exc:
            raise CsvParseError(f"line {line}: {exc}") from exc
    return out


def emit_plot_data(
    records: list[BenchmarkRecord], report: EvalReport | None, out_dir: str | Path
) -> tuple[Path, Path]:
    """Write area_histogram.csv (category, count) and distribution.geojson
    (per record: platform point, footprint point, connecting line)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    counts: dict[str, int] = {}
    for rec in records:
        label = rec.area_category.label if rec.area_category else "uncategorized"
        counts[label] = counts.get(label, 0) + 1
    hist_rows = ["category,count"]
    for cat in AreaCategory:
        if cat.label in counts:
            hist_rows.append(f"{cat.label},{counts[cat.label]}")
    if "uncategorized" in counts:
        hist_rows.append(f"uncategorized,{counts['uncategorized']}")
    hist_path = out / "area_histogram.csv"
    try:
        atomic_write_bytes(hist_path, ("\n".join(hist_rows) + "\n").encode("utf-8"))
    except OSError as exc:
        raise IoError(f"cannot write {hist_path}: {exc}") from exc

    features: list[dict] = []
    for rec in records:
        iss_xy = [rec.iss.lon, rec.iss.lat]
        gt_xy = [rec.ground_truth.lon, rec.ground_truth.lat]
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": iss_xy},
                "properties": {"image_id": rec.image_id, "style": "iss"},
            }
        )
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": gt_xy},
                "properties": {"image_id": rec.image_id, "style": "footprint"},
            }
        )
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": [iss_xy, gt_xy]},
                "properties": {"image_id": rec.image_id, "style": "offset"},
            }
        )
    geojson = {"type": "FeatureCollection", "features": features}
    geo_path = out / "distribution.geojson"
    try:
        atomic_write_bytes(geo_path, json.dumps(geojson, sort_keys=True).encode("utf-8"))
    except OSError as exc:
        raise IoError(f"cannot write {geo_path}: {exc}") from exc
    return hist_path, geo_path
