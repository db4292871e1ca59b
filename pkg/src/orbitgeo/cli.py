"""Command-line entry point.

Subcommands: ``fetch-aoi`` pulls map imagery for an area and writes the
image plus a geometry sidecar; ``geolocate`` runs one of the three
pipelines over a photograph; ``evaluate`` scores a results CSV against a
manifest; ``report`` writes plot data. Exit codes: 0 success, 1 expected
errors (printed by error name), 2 usage errors. Progress goes to standard
error; data goes to files and standard output only.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from .bench import (
    BenchmarkRecord,
    aggregate_by_category,
    emit_plot_data,
    evaluate,
    load_manifest,
    read_results_csv,
    write_results_csv,
)
from .errors import OrbitgeoError
from .features import ExtractorSpec, nn_geolocate
from .geo import GeoPoint, MercatorContext, aoi_bbox
from .raster import load_image
from .results import MatchResult
from .sift import SiftParams, sift_geolocate
from .tiles import (
    ProviderConfig,
    atomic_write_bytes,
    fetch_static_aoi,
    mosaic_for_aoi,
    read_geometry_sidecar,
    write_geometry_sidecar,
)
from .vlm import LiveBackend, MockBackend, ReplayBackend, vlm_geolocate

SIDECAR_SUFFIX = ".geom"


@dataclass(frozen=True)
class CliConfig:
    """Validated run settings shared by the subcommands."""

    offline: bool
    jobs: int
    out_dir: Path
    backend_name: str | None = None

    def __post_init__(self) -> None:
        if self.jobs < 1:
            raise ValueError(f"--jobs must be >= 1, got {self.jobs}")
        if self.offline and self.backend_name == "live":
            raise ValueError("--offline forbids the live backend")


def _out_path(cfg: CliConfig, raw: str) -> Path:
    p = Path(raw)
    return p if p.is_absolute() else cfg.out_dir / p


def _provider(args: argparse.Namespace) -> ProviderConfig:
    return ProviderConfig(
        endpoint_template=args.endpoint,
        api_key=args.api_key,
        tile_px=args.tile_px,
        rate_limit=args.rate_limit,
        cache_dir=args.cache_dir,
        offline=args.offline,
        fixture_dir=args.fixture_dir,
    )


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--offline", action="store_true", help="never touch the network")
    p.add_argument("--jobs", type=int, default=1, help="worker count")
    p.add_argument("--out-dir", default=".", help="directory for output files")


def _cmd_fetch_aoi(args: argparse.Namespace) -> int:
    cfg = CliConfig(offline=args.offline, jobs=args.jobs, out_dir=Path(args.out_dir))
    geom = aoi_bbox(
        GeoPoint(args.center_lat, args.center_lon),
        MercatorContext(args.zoom, args.tile_size),
        args.width_px,
        args.height_px,
    )
    provider = _provider(args)
    if args.static:
        img = fetch_static_aoi(geom, provider)
    else:
        tile_zoom = args.tile_zoom if args.tile_zoom is not None else round(args.zoom)
        img = mosaic_for_aoi(geom, provider, tile_zoom, jobs=cfg.jobs)
    out = _out_path(cfg, args.out)
    atomic_write_bytes(out, img.png_bytes())
    write_geometry_sidecar(geom, out.with_name(out.name + SIDECAR_SUFFIX))
    print(f"wrote {out} ({img.width}x{img.height})", file=sys.stderr)
    return 0


def _nn_results(args: argparse.Namespace, image_id: str) -> list[MatchResult]:
    t0 = time.perf_counter()
    query = load_image(args.image)
    aoi = load_image(args.aoi)
    sidecar = args.sidecar or str(args.aoi) + SIDECAR_SUFFIX
    geom = read_geometry_sidecar(sidecar)
    match = nn_geolocate(
        query, aoi, geom, spec=ExtractorSpec.parse(args.extractor), normalized=not args.raw
    )
    runtime = time.perf_counter() - t0
    out = [
        MatchResult(
            image_id=image_id,
            pipeline="nn",
            predicted=match.best,
            score=match.best_score,
            rank=1,
            runtime_s=runtime,
        )
    ]
    if match.runner_up is not None:
        out.append(
            MatchResult(
                image_id=image_id,
                pipeline="nn",
                predicted=match.runner_up,
                score=match.runner_up_score or 0.0,
                rank=2,
                runtime_s=runtime,
            )
        )
    return out


def _sift_results(args: argparse.Namespace, image_id: str, jobs: int) -> list[MatchResult]:
    query = load_image(args.image)
    aoi = load_image(args.aoi)
    sidecar = args.sidecar or str(args.aoi) + SIDECAR_SUFFIX
    geom = read_geometry_sidecar(sidecar)

    def progress(done: int, total: int) -> None:
        if done == total or done % 25 == 0:
            print(f"windows {done}/{total}", file=sys.stderr)

    return sift_geolocate(
        query,
        aoi,
        geom,
        SiftParams(match_ratio=args.ratio),
        image_id=image_id,
        window_px=args.window_px,
        stride_px=args.stride_px,
        water_threshold=args.water_threshold,
        progress=progress,
        jobs=jobs,
    )


def _vlm_results(args: argparse.Namespace, image_id: str) -> list[MatchResult]:
    if args.backend == "mock":
        if not args.response_file:
            raise ValueError("--backend mock needs --response-file")
        backend = MockBackend(Path(args.response_file).read_text(encoding="utf-8"))
    elif args.backend == "replay":
        if not args.transcript:
            raise ValueError("--backend replay needs --transcript")
        backend = ReplayBackend(args.transcript)
    else:
        backend = LiveBackend()
    iss = GeoPoint(args.iss_lat, args.iss_lon)
    record = BenchmarkRecord(
        image_id=image_id,
        image_path=args.image,
        iss=iss,
        ground_truth=iss,  # unknown at geolocation time; never read here
    )
    return [vlm_geolocate(record, backend)]


def _cmd_geolocate(args: argparse.Namespace) -> int:
    cfg = CliConfig(
        offline=args.offline,
        jobs=args.jobs,
        out_dir=Path(args.out_dir),
        backend_name=args.backend if args.pipeline == "vlm" else None,
    )
    image_id = args.image_id or Path(args.image).stem
    if args.pipeline == "nn":
        results = _nn_results(args, image_id)
    elif args.pipeline == "sift":
        results = _sift_results(args, image_id, cfg.jobs)
    else:
        results = _vlm_results(args, image_id)
    out = _out_path(cfg, args.out)
    write_results_csv(results, out)
    print(f"wrote {out} ({len(results)} results)", file=sys.stderr)
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    records = load_manifest(args.manifest)
    results = read_results_csv(args.results)
    report = evaluate(
        results,
        records,
        threshold_km=args.threshold_km,
        consider_top2=args.top2,
        mode=args.mode,
    )
    for label, s, n, rate in aggregate_by_category(report, records):
        if rate == "n/a":
            print(f"{label} {s}/{n} n/a")
        else:
            print(f"{label} {s}/{n} ({rate}%)")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    cfg = CliConfig(offline=args.offline, jobs=args.jobs, out_dir=Path(args.out_dir))
    records = load_manifest(args.manifest)
    report = None
    if args.results:
        results = read_results_csv(args.results)
        report = evaluate(
            results,
            records,
            threshold_km=args.threshold_km,
            consider_top2=args.top2,
            mode=args.mode,
        )
    hist, geo = emit_plot_data(records, report, cfg.out_dir)
    print(f"wrote {hist} and {geo}", file=sys.stderr)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orbitgeo",
        description="Geolocate orbital photographs against map imagery.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fetch = sub.add_parser("fetch-aoi", help="download and stitch an area of interest")
    _add_common(fetch)
    fetch.add_argument("--center-lat", type=float, required=True)
    fetch.add_argument("--center-lon", type=float, required=True)
    fetch.add_argument("--zoom", type=float, default=9.5)
    fetch.add_argument("--tile-size", type=int, default=512)
    fetch.add_argument("--width-px", type=float, default=1024)
    fetch.add_argument("--height-px", type=float, default=1024)
    fetch.add_argument("--endpoint", required=True, help="URL template")
    fetch.add_argument("--api-key", default=None)
    fetch.add_argument("--tile-px", type=int, default=512, choices=(256, 512))
    fetch.add_argument("--rate-limit", type=float, default=4.0)
    fetch.add_argument("--cache-dir", default=None)
    fetch.add_argument("--fixture-dir", default=None)
    fetch.add_argument("--tile-zoom", type=int, default=None)
    fetch.add_argument("--static", action="store_true", help="single static-map request")
    fetch.add_argument("--out", default="aoi.png")
    fetch.set_defaults(func=_cmd_fetch_aoi)

    geo = sub.add_parser("geolocate", help="run a pipeline over one photograph")
    _add_common(geo)
    geo.add_argument("--pipeline", required=True, choices=("nn", "sift", "vlm"))
    geo.add_argument("--image", required=True)
    geo.add_argument("--image-id", default=None)
    geo.add_argument("--aoi", help="AOI image (expects <aoi>.geom sidecar)")
    geo.add_argument("--sidecar", default=None, help="explicit geometry sidecar path")
    geo.add_argument("--extractor", default="identity-gray")
    geo.add_argument("--raw", action="store_true", help="unnormalized correlation")
    geo.add_argument("--window-px", type=int, default=None)
    geo.add_argument("--stride-px", type=int, default=None)
    geo.add_argument("--water-threshold", type=float, default=0.85)
    geo.add_argument("--ratio", type=float, default=0.75)
    geo.add_argument("--backend", default="mock", choices=("mock", "replay", "live"))
    geo.add_argument("--response-file", default=None, help="canned text for mock")
    geo.add_argument("--transcript", default=None, help="replay transcript path")
    geo.add_argument("--iss-lat", type=float, default=None)
    geo.add_argument("--iss-lon", type=float, default=None)
    geo.add_argument("--out", default="results.csv")
    geo.set_defaults(func=_cmd_geolocate)

    ev = sub.add_parser("evaluate", help="score a results CSV against a manifest")
    _add_common(ev)
    ev.add_argument("--results", required=True)
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--threshold-km", type=float, default=50.0)
    ev.add_argument("--top2", action="store_true")
    ev.add_argument("--mode", default="distance", choices=("distance", "name"))
    ev.set_defaults(func=_cmd_evaluate)

    rep = sub.add_parser("report", help="write histogram and map plot data")
    _add_common(rep)
    rep.add_argument("--manifest", required=True)
    rep.add_argument("--results", default=None)
    rep.add_argument("--threshold-km", type=float, default=50.0)
    rep.add_argument("--top2", action="store_true")
    rep.add_argument("--mode", default="distance", choices=("distance", "name"))
    rep.set_defaults(func=_cmd_report)

    return parser


def _validate_geolocate(args: argparse.Namespace) -> None:
    if args.pipeline in ("nn", "sift") and not args.aoi:
        raise ValueError(f"--pipeline {args.pipeline} needs --aoi")
    if args.pipeline == "vlm" and (args.iss_lat is None or args.iss_lon is None):
        raise ValueError("--pipeline vlm needs --iss-lat and --iss-lon")


def dispatch(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "geolocate":
            _validate_geolocate(args)
        return args.func(args)
    except (OrbitgeoError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
