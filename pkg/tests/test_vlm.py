"""Prompt construction, backends, transcripts, and response mining."""

from __future__ import annotations

import base64
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orbitgeo import (
    GeoPoint,
    LiveBackend,
    MockBackend,
    ReplayBackend,
    build_prompt,
    parse_response,
    vlm_geolocate,
)
from orbitgeo.bench import BenchmarkRecord
from orbitgeo.errors import (
    AuthError,
    BackendUnavailable,
    EmptyResponse,
    NoHypothesis,
    ReplayMiss,
)
from orbitgeo.vlm import (
    API_KEY_ENV,
    ENDPOINT_ENV,
    MODEL_ENV,
    VlmPrompt,
    load_transcript,
    prompt_digest,
    save_transcript,
)

SUEZ_TEXT = (
    "The image shows the Suez Canal running between the Eastern Desert and the "
    "Sinai Peninsula. Water from the Red Sea meets the Mediterranean Sea along this "
    "corridor, and the waterway is very likely the scene's subject. "
    "Estimated scene center: 33.40787° N, 22.99734° E."
)

SUEZ_NAMES = (
    "Suez Canal",
    "Eastern Desert",
    "Sinai Peninsula",
    "Red Sea",
    "Mediterranean Sea",
)


def record(image_id: str = "img-1", image_path: str = "") -> BenchmarkRecord:
    return BenchmarkRecord(
        image_id=image_id,
        image_path=image_path,
        iss=GeoPoint(33.40787, 22.99734),
        ground_truth=GeoPoint(33.40787, 22.99734),
    )


class TestPrompt:
    def test_user_text_embeds_coordinates(self):
        prompt = build_prompt(GeoPoint(33.40787, 22.99734))
        assert "positioned at 33.40787°N latitude and 22.99734°E longitude" in prompt.user_text
        assert prompt.system_text.startswith("You identify Earth locations")

    def test_negative_coordinates_use_south_west(self):
        prompt = build_prompt(GeoPoint(-12.5, -0.25))
        assert "12.50000°S latitude" in prompt.user_text
        assert "0.25000°W longitude" in prompt.user_text

    def test_deterministic(self):
        a = build_prompt(GeoPoint(1.5, 2.5), b"img")
        b = build_prompt(GeoPoint(1.5, 2.5), b"img")
        assert a == b
        assert prompt_digest(a) == prompt_digest(b)

    def test_digest_covers_every_field(self):
        base = build_prompt(GeoPoint(1.0, 2.0), b"img")
        other_point = build_prompt(GeoPoint(1.0, 2.1), b"img")
        other_image = build_prompt(GeoPoint(1.0, 2.0), b"IMG")
        digests = {prompt_digest(p) for p in (base, other_point, other_image)}
        assert len(digests) == 3

    def test_digest_separates_fields(self):
        a = VlmPrompt(system_text="ab", user_text="c")
        b = VlmPrompt(system_text="a", user_text="bc")
        assert prompt_digest(a) != prompt_digest(b)


class TestMockBackend:
    def test_fixed_text(self):
        assert MockBackend("hello").complete(build_prompt(GeoPoint(0, 0))) == "hello"

    def test_callable_sees_the_prompt(self):
        backend = MockBackend(lambda p: p.user_text[:4])
        assert backend.complete(build_prompt(GeoPoint(0, 0))) == "This"


class TestParseCoordinates:
    def test_hemisphere_grammar(self):
        hyp = parse_response("Likely near 12.5° S, 140.25° E in the outback.")
        assert hyp.coords == GeoPoint(-12.5, 140.25)

    def test_out_of_range_hemisphere_values_are_skipped(self):
        hyp = parse_response("Bad fix 95.0°N; the better fix is 45.0°N and 10.0°E.")
        assert hyp.coords == GeoPoint(45.0, 10.0)

    def test_signed_pair_grammar(self):
        hyp = parse_response("The image shows Sydney Harbour City at -33.86, 151.21 roughly.")
        assert hyp.coords == GeoPoint(-33.86, 151.21)

    def test_hemisphere_takes_precedence_over_signed(self):
        hyp = parse_response(
            "Either 10.5°N 20.5°E, or the signed reading -33.0, 151.0 instead. "
            "The image shows the Blue River."
        )
        assert hyp.coords == GeoPoint(10.5, 20.5)

    def test_out_of_range_signed_pair_falls_through(self):
        hyp = parse_response("Reject 999.0, 10.0 but accept 12.0, 34.5 here.")
        assert hyp.coords == GeoPoint(12.0, 34.5)

    def test_integers_without_decimals_are_not_coordinates(self):
        with pytest.raises(NoHypothesis):
            parse_response("Roughly 33, 151 by dead reckoning.")

    def test_latitude_only_is_not_a_fix(self):
        hyp = parse_response("The image shows the Nile River around 27.1°N.")
        assert hyp.coords is None
        assert hyp.place_names == ("Nile River",)


class TestParseNames:
    def test_suez_composition(self):
        hyp = parse_response(SUEZ_TEXT)
        assert hyp.place_names == SUEZ_NAMES
        assert hyp.coords == GeoPoint(33.40787, 22.99734)
        assert "very likely" in hyp.confidence_note

    def test_cue_without_feature_noun(self):
        hyp = parse_response("This is very likely Lake Garda in northern Italy.")
        assert hyp.place_names == ("Lake Garda",)

    def test_cue_and_phrase_hits_deduplicate(self):
        hyp = parse_response("The image shows New York City at night.")
        assert hyp.place_names == ("New York City",)

    def test_cue_never_captures_lowercase_prose(self):
        with pytest.raises(NoHypothesis):
            parse_response("This is very likely the canal region near the coast.")

    def test_single_capitalized_word_is_not_enough_for_the_cue(self):
        with pytest.raises(NoHypothesis):
            parse_response("It is very likely Egypt.")

    def test_dedup_is_case_insensitive_keeping_first_spelling(self):
        hyp = parse_response("The image shows the Red Sea. Later the RED SEA appears again.")
        assert hyp.place_names == ("Red Sea",)

    def test_confidence_note_is_first_matching_sentence(self):
        hyp = parse_response(
            "I am confident the image shows the Nile River. A likely afterthought follows."
        )
        assert hyp.confidence_note == "I am confident the image shows the Nile River."

    def test_no_note_without_hedging_language(self):
        hyp = parse_response("The image shows the Nile River.")
        assert hyp.confidence_note is None

    def test_empty_response(self):
        with pytest.raises(EmptyResponse):
            parse_response("")
        with pytest.raises(EmptyResponse):
            parse_response("   \n  ")

    def test_no_hypothesis(self):
        with pytest.raises(NoHypothesis):
            parse_response("Clouds obscure everything of note.")


class TestPromptParseRoundTrip:
    @settings(max_examples=100)
    @given(
        lat=st.floats(-85.0, 85.0),
        lon=st.floats(-179.99999, 179.99999),
    )
    def test_embedded_coordinates_survive_mining(self, lat, lon):
        prompt = build_prompt(GeoPoint(lat, lon))
        hyp = parse_response(prompt.user_text)
        want = GeoPoint(
            float(f"{abs(lat):.5f}") * (1 if lat >= 0 else -1),
            float(f"{abs(lon):.5f}") * (1 if lon >= 0 else -1),
        )
        assert hyp.coords == want


class TestTranscripts:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "t.tsv"
        entries = {"d2": "Ünïcode reply …", "d1": "plain"}
        save_transcript(entries, path)
        assert load_transcript(path) == entries

    def test_file_is_sorted_and_byte_deterministic(self, tmp_path):
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        save_transcript({"zz": "2", "aa": "1"}, a)
        save_transcript({"aa": "1", "zz": "2"}, b)
        assert a.read_bytes() == b.read_bytes()
        lines = a.read_text().splitlines()
        assert lines[0].startswith("aa\t")
        assert lines[1].startswith("zz\t")

    def test_bad_line_reports_position(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_text("good\t" + base64.b64encode(b"x").decode() + "\nno tab here\n")
        with pytest.raises(ValueError, match=r"t\.tsv:2"):
            load_transcript(path)

    def test_blank_lines_ignored(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_text("\n\nd\t" + base64.b64encode(b"x").decode() + "\n\n")
        assert load_transcript(path) == {"d": "x"}

    def test_replay_backend_serves_and_misses(self, tmp_path):
        prompt = build_prompt(GeoPoint(10.0, 20.0))
        path = tmp_path / "t.tsv"
        save_transcript({prompt_digest(prompt): SUEZ_TEXT}, path)
        backend = ReplayBackend(path)
        assert backend.complete(prompt) == SUEZ_TEXT
        with pytest.raises(ReplayMiss):
            backend.complete(build_prompt(GeoPoint(11.0, 20.0)))


class TestLiveBackend:
    def env(self, **kw) -> dict[str, str]:
        base = {
            ENDPOINT_ENV: "http://vlm.test/v1",
            API_KEY_ENV: "k3y",
            MODEL_ENV: "scout-1",
        }
        base.update(kw)
        return {k: v for k, v in base.items() if v}

    def test_missing_key_fails_before_any_request(self):
        def explode(url, payload, headers):
            raise AssertionError("transport reached")

        backend = LiveBackend(transport=explode, env=self.env(**{API_KEY_ENV: ""}))
        with pytest.raises(AuthError, match="ORBITGEO_VLM_KEY"):
            backend.complete(build_prompt(GeoPoint(0, 0)))

    def test_missing_endpoint(self):
        backend = LiveBackend(transport=lambda *a: b"", env=self.env(**{ENDPOINT_ENV: ""}))
        with pytest.raises(BackendUnavailable, match="ORBITGEO_VLM_ENDPOINT"):
            backend.complete(build_prompt(GeoPoint(0, 0)))

    def test_request_shape(self):
        seen = {}

        def transport(url, payload, headers):
            seen["url"] = url
            seen["payload"] = json.loads(payload.decode("utf-8"))
            seen["headers"] = headers
            return json.dumps({"text": "reply"}).encode()

        backend = LiveBackend(transport=transport, env=self.env())
        prompt = build_prompt(GeoPoint(5.0, 6.0), b"imagebytes")
        assert backend.complete(prompt) == "reply"
        assert seen["url"] == "http://vlm.test/v1"
        assert seen["headers"]["Authorization"] == "Bearer k3y"
        assert seen["headers"]["Content-Type"] == "application/json"
        assert seen["payload"] == {
            "model": "scout-1",
            "system": prompt.system_text,
            "user": prompt.user_text,
            "image_b64": base64.b64encode(b"imagebytes").decode("ascii"),
            "temperature": 0,
        }

    def test_retry_backoff_then_success(self):
        calls = {"n": 0}
        slept: list[float] = []

        def flaky(url, payload, headers):
            calls["n"] += 1
            if calls["n"] <= 2:
                raise ConnectionError("transient")
            return json.dumps({"text": "ok"}).encode()

        backend = LiveBackend(transport=flaky, sleep=slept.append, env=self.env())
        assert backend.complete(build_prompt(GeoPoint(0, 0))) == "ok"
        assert calls["n"] == 3
        assert slept == [0.5, 1.0]

    def test_retries_exhausted(self):
        calls = {"n": 0}

        def dead(url, payload, headers):
            calls["n"] += 1
            raise ConnectionError("down")

        backend = LiveBackend(transport=dead, sleep=lambda s: None, env=self.env())
        with pytest.raises(BackendUnavailable, match="3 attempts"):
            backend.complete(build_prompt(GeoPoint(0, 0)))
        assert calls["n"] == 3

    @pytest.mark.parametrize("reply", [b"not json", b'{"no_text": 1}'])
    def test_malformed_reply(self, reply):
        backend = LiveBackend(transport=lambda *a: reply, env=self.env())
        with pytest.raises(BackendUnavailable, match="malformed"):
            backend.complete(build_prompt(GeoPoint(0, 0)))


class TestVlmGeolocate:
    def test_full_hypothesis_scores_one(self):
        result = vlm_geolocate(record(), MockBackend(SUEZ_TEXT))
        assert result.pipeline == "vlm"
        assert result.rank == 1
        assert result.score == 1.0
        assert result.predicted == GeoPoint(33.40787, 22.99734)
        assert result.place_names == SUEZ_NAMES
        assert not result.unresolved

    def test_names_only_scores_half(self):
        result = vlm_geolocate(record(), MockBackend("The image shows the Gobi Desert."))
        assert result.score == 0.5
        assert result.predicted is None
        assert result.place_names == ("Gobi Desert",)

    def test_no_hypothesis_is_unresolved_not_raised(self):
        result = vlm_geolocate(record(), MockBackend("Only clouds and ocean glare."))
        assert result.unresolved
        assert result.score == 0.0
        assert result.predicted is None
        assert result.rank == 1

    def test_empty_reply_still_raises(self):
        with pytest.raises(EmptyResponse):
            vlm_geolocate(record(), MockBackend(""))

    def test_audit_hook_sees_raw_text(self):
        seen: list[tuple[str, str]] = []
        vlm_geolocate(record("img-7"), MockBackend("No landmarks."), audit=lambda i, t: seen.append((i, t)))
        assert seen == [("img-7", "No landmarks.")]

    def test_image_bytes_feed_the_prompt_digest(self, tmp_path):
        img = tmp_path / "photo.jpg"
        img.write_bytes(b"JPEGDATA")
        rec = record(image_path=str(img))
        prompt = build_prompt(rec.iss, b"JPEGDATA")
        path = tmp_path / "t.tsv"
        save_transcript({prompt_digest(prompt): SUEZ_TEXT}, path)
        result = vlm_geolocate(rec, ReplayBackend(path))
        assert result.score == 1.0
        img.write_bytes(b"DIFFERENT")
        with pytest.raises(ReplayMiss):
            vlm_geolocate(rec, ReplayBackend(path))
