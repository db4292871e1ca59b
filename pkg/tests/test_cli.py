"""Command-line behavior: exit codes, file outputs, and printed lines."""

from __future__ import annotations

import numpy as np
import pytest

from orbitgeo import (
    GeoPoint,
    MatchResult,
    MercatorContext,
    RasterImage,
    aoi_bbox,
    aoi_pixel_to_geo,
    load_image,
    read_geometry_sidecar,
    read_results_csv,
    tiles_for_bbox,
    write_geometry_sidecar,
    write_results_csv,
)
from orbitgeo.bench import MANIFEST_HEADER
from orbitgeo.cli import CliConfig, dispatch

from helpers import gray_texture, make_geom, tile_rgb, write_fixture_tiles

SUEZ_TEXT = (
    "The image shows the Suez Canal running between the Eastern Desert and the "
    "Sinai Peninsula. Water from the Red Sea meets the Mediterranean Sea along this "
    "corridor, and the waterway is very likely the scene's subject. "
    "Estimated scene center: 33.40787° N, 22.99734° E."
)


def save_png(img: RasterImage, path) -> None:
    path.write_bytes(img.png_bytes())


@pytest.fixture()
def nn_setup(tmp_path):
    """AOI image + sidecar + exact query crop on disk."""
    geom = make_geom(width_px=256, height_px=256)
    aoi = gray_texture(50, 256)
    query = RasterImage(aoi.data[37 : 37 + 64, 91 : 91 + 64].copy())
    aoi_path = tmp_path / "aoi.png"
    save_png(aoi, aoi_path)
    write_geometry_sidecar(geom, tmp_path / "aoi.png.geom")
    save_png(query, tmp_path / "query.png")
    return geom, tmp_path


class TestCliConfig:
    def test_jobs_floor(self):
        with pytest.raises(ValueError, match="--jobs"):
            CliConfig(offline=False, jobs=0, out_dir=None)

    def test_offline_forbids_live(self):
        with pytest.raises(ValueError, match="live"):
            CliConfig(offline=True, jobs=1, out_dir=None, backend_name="live")
        CliConfig(offline=True, jobs=1, out_dir=None, backend_name="mock")


class TestUsageErrors:
    def test_no_command_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            dispatch([])
        assert exc.value.code == 2

    def test_missing_required_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            dispatch(["geolocate"])
        assert exc.value.code == 2

    def test_help_exits_0(self):
        with pytest.raises(SystemExit) as exc:
            dispatch(["--help"])
        assert exc.value.code == 0

    def test_jobs_zero_is_a_domain_error(self, tmp_path):
        code = dispatch(
            [
                "fetch-aoi",
                "--center-lat", "0", "--center-lon", "0",
                "--endpoint", "http://t/{z}/{x}/{y}",
                "--jobs", "0",
                "--out-dir", str(tmp_path),
            ]
        )
        assert code == 1


class TestFetchAoi:
    def fetch(self, tmp_path, extra: list[str] = ()) -> int:
        return dispatch(
            [
                "fetch-aoi",
                "--center-lat", "0", "--center-lon", "0",
                "--zoom", "1",
                "--tile-size", "512",
                "--width-px", "512", "--height-px", "512",
                "--endpoint", "http://t/{z}/{x}/{y}",
                "--offline",
                "--fixture-dir", str(tmp_path / "fixtures"),
                "--out", "aoi.png",
                "--out-dir", str(tmp_path),
                *extra,
            ]
        )

    def seed_fixtures(self, tmp_path) -> None:
        geom = make_geom(lat=0.0, lon=0.0, zoom=1, tile_size=512, width_px=512, height_px=512)
        write_fixture_tiles(tmp_path / "fixtures", tiles_for_bbox(geom, 1, 512))

    def test_offline_fixture_run(self, tmp_path, capsys):
        self.seed_fixtures(tmp_path)
        assert self.fetch(tmp_path) == 0
        err = capsys.readouterr().err
        assert f"wrote {tmp_path / 'aoi.png'} (512x512)" in err

        img = load_image(tmp_path / "aoi.png")
        assert (img.width, img.height) == (512, 512)
        assert np.array_equal(img.data[0, 0], tile_rgb(1, 0, 0, 1).data[0, 0])
        assert np.array_equal(img.data[0, 511], tile_rgb(1, 1, 0, 1).data[0, 0])
        assert np.array_equal(img.data[511, 0], tile_rgb(1, 0, 1, 1).data[0, 0])
        assert np.array_equal(img.data[511, 511], tile_rgb(1, 1, 1, 1).data[0, 0])

        geom = read_geometry_sidecar(tmp_path / "aoi.png.geom")
        want = aoi_bbox(GeoPoint(0.0, 0.0), MercatorContext(1, 512), 512, 512)
        assert geom == want

    def test_rerun_is_byte_identical(self, tmp_path):
        self.seed_fixtures(tmp_path)
        assert self.fetch(tmp_path) == 0
        first = (tmp_path / "aoi.png").read_bytes()
        assert self.fetch(tmp_path) == 0
        assert (tmp_path / "aoi.png").read_bytes() == first

    def test_offline_miss_reported(self, tmp_path, capsys):
        (tmp_path / "fixtures").mkdir()
        assert self.fetch(tmp_path) == 1
        assert "OfflineMiss" in capsys.readouterr().err

    def test_tile_zoom_defaults_to_rounded_aoi_zoom(self, tmp_path):
        self.seed_fixtures(tmp_path)
        code = dispatch(
            [
                "fetch-aoi",
                "--center-lat", "0", "--center-lon", "0",
                "--zoom", "1.4",
                "--tile-size", "512",
                "--width-px", "512", "--height-px", "512",
                "--endpoint", "http://t/{z}/{x}/{y}",
                "--offline",
                "--fixture-dir", str(tmp_path / "fixtures"),
                "--out", "frac.png",
                "--out-dir", str(tmp_path),
            ]
        )
        assert code == 0
        img = load_image(tmp_path / "frac.png")
        assert (img.width, img.height) == (512, 512)


class TestGeolocateNn:
    def test_end_to_end(self, nn_setup, capsys):
        geom, tmp_path = nn_setup
        code = dispatch(
            [
                "geolocate",
                "--pipeline", "nn",
                "--image", str(tmp_path / "query.png"),
                "--aoi", str(tmp_path / "aoi.png"),
                "--out", "results.csv",
                "--out-dir", str(tmp_path),
            ]
        )
        assert code == 0
        assert "wrote" in capsys.readouterr().err
        rows = read_results_csv(tmp_path / "results.csv")
        assert len(rows) == 2
        assert [r.rank for r in rows] == [1, 2]
        assert rows[0].image_id == "query"
        assert rows[0].pipeline == "nn"
        assert rows[0].score > 0.99
        want = aoi_pixel_to_geo(geom, 91 + 32.0, 37 + 32.0)
        assert rows[0].predicted.lat == pytest.approx(want.lat, abs=1e-6)
        assert rows[0].predicted.lon == pytest.approx(want.lon, abs=1e-6)

    def test_missing_aoi_flag(self, nn_setup, capsys):
        _, tmp_path = nn_setup
        code = dispatch(
            ["geolocate", "--pipeline", "nn", "--image", str(tmp_path / "query.png")]
        )
        assert code == 1
        assert "needs --aoi" in capsys.readouterr().err

    def test_absolute_out_ignores_out_dir(self, nn_setup, tmp_path_factory):
        _, tmp_path = nn_setup
        elsewhere = tmp_path_factory.mktemp("abs") / "r.csv"
        code = dispatch(
            [
                "geolocate",
                "--pipeline", "nn",
                "--image", str(tmp_path / "query.png"),
                "--aoi", str(tmp_path / "aoi.png"),
                "--out", str(elsewhere),
                "--out-dir", str(tmp_path),
            ]
        )
        assert code == 0
        assert elsewhere.is_file()


class TestGeolocateSift:
    def test_end_to_end_with_progress(self, tmp_path, capsys):
        geom = make_geom(width_px=256, height_px=256)
        aoi = gray_texture(51, 256, sigma=2.0)
        query = RasterImage(aoi.data[64 : 64 + 64, 128 : 128 + 64].copy())
        save_png(aoi, tmp_path / "aoi.png")
        write_geometry_sidecar(geom, tmp_path / "aoi.png.geom")
        save_png(query, tmp_path / "query.png")
        code = dispatch(
            [
                "geolocate",
                "--pipeline", "sift",
                "--image", str(tmp_path / "query.png"),
                "--image-id", "scene-9",
                "--aoi", str(tmp_path / "aoi.png"),
                "--window-px", "64",
                "--stride-px", "32",
                "--out", "results.csv",
                "--out-dir", str(tmp_path),
            ]
        )
        assert code == 0
        err = capsys.readouterr().err
        assert "windows 25/49" in err
        assert "windows 49/49" in err
        rows = read_results_csv(tmp_path / "results.csv")
        assert len(rows) == 2
        assert rows[0].image_id == "scene-9"
        assert rows[0].pipeline == "sift"
        want = aoi_pixel_to_geo(geom, 128 + 32.0, 64 + 32.0)
        assert rows[0].predicted.lat == pytest.approx(want.lat, abs=1e-6)
        assert rows[0].predicted.lon == pytest.approx(want.lon, abs=1e-6)


class TestGeolocateVlm:
    def test_mock_end_to_end(self, tmp_path):
        response = tmp_path / "canned.txt"
        response.write_text(SUEZ_TEXT, encoding="utf-8")
        code = dispatch(
            [
                "geolocate",
                "--pipeline", "vlm",
                "--image", str(tmp_path / "absent.jpg"),
                "--image-id", "iss070-e-1",
                "--iss-lat", "33.40787", "--iss-lon", "22.99734",
                "--backend", "mock",
                "--response-file", str(response),
                "--out", "results.csv",
                "--out-dir", str(tmp_path),
            ]
        )
        assert code == 0
        rows = read_results_csv(tmp_path / "results.csv")
        assert len(rows) == 1
        assert rows[0].pipeline == "vlm"
        assert rows[0].score == 1.0
        assert rows[0].predicted.lat == pytest.approx(33.40787, abs=1e-6)
        assert rows[0].predicted.lon == pytest.approx(22.99734, abs=1e-6)
        assert "Suez Canal" in rows[0].place_names

    def test_mock_needs_response_file(self, tmp_path, capsys):
        code = dispatch(
            [
                "geolocate",
                "--pipeline", "vlm",
                "--image", "x.jpg",
                "--iss-lat", "0", "--iss-lon", "0",
                "--out-dir", str(tmp_path),
            ]
        )
        assert code == 1
        assert "needs --response-file" in capsys.readouterr().err

    def test_missing_platform_coordinates(self, tmp_path, capsys):
        code = dispatch(
            ["geolocate", "--pipeline", "vlm", "--image", "x.jpg", "--out-dir", str(tmp_path)]
        )
        assert code == 1
        assert "--iss-lat" in capsys.readouterr().err

    def test_live_without_key_is_an_auth_error(self, tmp_path, capsys, monkeypatch):
        monkeypatch.delenv("ORBITGEO_VLM_KEY", raising=False)
        monkeypatch.setenv("ORBITGEO_VLM_ENDPOINT", "http://vlm.test/v1")
        code = dispatch(
            [
                "geolocate",
                "--pipeline", "vlm",
                "--image", "x.jpg",
                "--iss-lat", "0", "--iss-lon", "0",
                "--backend", "live",
                "--out-dir", str(tmp_path),
            ]
        )
        assert code == 1
        assert "AuthError" in capsys.readouterr().err

    def test_offline_blocks_live_backend(self, tmp_path, capsys):
        code = dispatch(
            [
                "geolocate",
                "--pipeline", "vlm",
                "--image", "x.jpg",
                "--iss-lat", "0", "--iss-lon", "0",
                "--backend", "live",
                "--offline",
                "--out-dir", str(tmp_path),
            ]
        )
        assert code == 1
        assert "forbids the live backend" in capsys.readouterr().err


class TestEvaluateCommand:
    def test_benchmark_scale_rates(self, tmp_path, capsys):
        manifest = tmp_path / "manifest.csv"
        rows = [f"i{k},,10.0,20.0,10.0,20.0,,,,," for k in range(142)]
        manifest.write_text(MANIFEST_HEADER + "\n" + "".join(r + "\n" for r in rows))
        results = [
            MatchResult(
                image_id=f"i{k}",
                pipeline="nn",
                predicted=GeoPoint(10.0, 20.0) if k < 107 else GeoPoint(-60.0, 120.0),
            )
            for k in range(142)
        ]
        write_results_csv(results, tmp_path / "results.csv")
        code = dispatch(
            [
                "evaluate",
                "--results", str(tmp_path / "results.csv"),
                "--manifest", str(manifest),
            ]
        )
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[-1] == "overall 107/142 (75.35%)"
        assert lines[-2] == "uncategorized 107/142 (75.35%)"

    def test_name_mode(self, tmp_path, capsys):
        manifest = tmp_path / "manifest.csv"
        manifest.write_text(MANIFEST_HEADER + "\na,,1.0,2.0,1.5,2.5,,,,,Suez Canal;Red Sea\n")
        results = [
            MatchResult(image_id="a", pipeline="vlm", place_names=("red sea",), score=0.5)
        ]
        write_results_csv(results, tmp_path / "results.csv")
        code = dispatch(
            [
                "evaluate",
                "--results", str(tmp_path / "results.csv"),
                "--manifest", str(manifest),
                "--mode", "name",
            ]
        )
        assert code == 0
        assert capsys.readouterr().out.strip().splitlines()[-1] == "overall 1/1 (100.00%)"

    def test_missing_results_file(self, tmp_path, capsys):
        manifest = tmp_path / "manifest.csv"
        manifest.write_text(MANIFEST_HEADER + "\n")
        code = dispatch(
            [
                "evaluate",
                "--results", str(tmp_path / "nope.csv"),
                "--manifest", str(manifest),
            ]
        )
        assert code == 1
        assert "IoError" in capsys.readouterr().err


class TestReportCommand:
    def test_writes_plot_data(self, tmp_path, capsys):
        manifest = tmp_path / "manifest.csv"
        manifest.write_text(
            MANIFEST_HEADER + "\n"
            "a,,10.0,20.0,10.5,20.5,,,,0.5,\n"
            "b,,11.0,21.0,11.5,21.5,,,,75.0,\n"
            "c,,12.0,22.0,12.5,22.5,,,,,\n"
        )
        out_dir = tmp_path / "plots"
        code = dispatch(["report", "--manifest", str(manifest), "--out-dir", str(out_dir)])
        assert code == 0
        assert "wrote" in capsys.readouterr().err
        import json

        payload = json.loads((out_dir / "distribution.geojson").read_text())
        assert len(payload["features"]) == 9
        hist = (out_dir / "area_histogram.csv").read_text().splitlines()
        assert hist[0] == "category,count"
        assert sum(int(r.rsplit(",", 1)[1]) for r in hist[1:]) == 3

    def test_rerun_byte_identical(self, tmp_path):
        manifest = tmp_path / "manifest.csv"
        manifest.write_text(MANIFEST_HEADER + "\na,,10.0,20.0,10.5,20.5,,,,0.5,\n")
        out_dir = tmp_path / "plots"
        dispatch(["report", "--manifest", str(manifest), "--out-dir", str(out_dir)])
        first = (out_dir / "distribution.geojson").read_bytes()
        dispatch(["report", "--manifest", str(manifest), "--out-dir", str(out_dir)])
        assert (out_dir / "distribution.geojson").read_bytes() == first
