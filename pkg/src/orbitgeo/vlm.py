"""Language-model geolocation: prompts, backends, and response parsing.

The pipeline sends a photograph plus the platform's coordinates to a
vision-capable language model and mines the free-text reply for a location
hypothesis. Three backends share one interface: ``live`` posts to an HTTP
endpoint configured by environment variables, ``mock`` returns canned text,
and ``replay`` serves responses recorded in a transcript file keyed by a
prompt digest, which keeps tests deterministic and network-free.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import re
import time
import urllib.request
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Protocol

from .errors import (
    AuthError,
    BackendUnavailable,
    EmptyResponse,
    NoHypothesis,
    ReplayMiss,
)
from .geo import GeoPoint
from .results import MatchResult

if TYPE_CHECKING:
    from .bench import BenchmarkRecord

ENDPOINT_ENV = "ORBITGEO_VLM_ENDPOINT"
API_KEY_ENV = "ORBITGEO_VLM_KEY"
MODEL_ENV = "ORBITGEO_VLM_MODEL"

RETRY_ATTEMPTS = 3
RETRY_BASE_DELAY_S = 0.5

SYSTEM_TEXT = (
    "You identify Earth locations shown in photographs taken from low Earth orbit."
)

_USER_TEMPLATE = (
    "This photograph was taken from an orbital platform positioned at {lat} latitude "
    "and {lon} longitude at the moment of capture. Describe the geographic features "
    "visible in the photograph, then infer the most likely location shown. State "
    "coordinates in decimal degrees and name every place you recognize."
)


@dataclass(frozen=True)
class VlmPrompt:
    system_text: str
    user_text: str
    image_ref: bytes = b""


@dataclass(frozen=True)
class LocationHypothesis:
    """What could be mined out of one model response."""

    place_names: tuple[str, ...]
    coords: GeoPoint | None
    raw_response: str
    confidence_note: str | None = None


def _coord_text(value: float, positive: str, negative: str) -> str:
    hemi = positive if value >= 0 else negative
    return f"{abs(value):.5f}°{hemi}"


def build_prompt(iss: GeoPoint, image: bytes = b"") -> VlmPrompt:
    """Deterministic prompt embedding the platform coordinates.

    Coordinates render at exactly 5 decimal places with hemisphere letters,
    e.g. ``33.40787°N latitude and 22.99734°E longitude``. Identical inputs
    give byte-identical prompts.
    """
    user = _USER_TEMPLATE.format(
        lat=_coord_text(iss.lat, "N", "S"),
        lon=_coord_text(iss.lon, "E", "W"),
    )
    return VlmPrompt(system_text=SYSTEM_TEXT, user_text=user, image_ref=image)


def prompt_digest(prompt: VlmPrompt) -> str:
    h = hashlib.sha256()
    h.update(prompt.system_text.encode("utf-8"))
    h.update(b"\x00")
    h.update(prompt.user_text.encode("utf-8"))
    h.update(b"\x00")
    h.update(prompt.image_ref)
    return h.hexdigest()


class VlmBackend(Protocol):
    def complete(self, prompt: VlmPrompt) -> str: ...


class MockBackend:
    """Returns configured text verbatim; a callable can vary it per prompt."""

    def __init__(self, text: str | Callable[[VlmPrompt], str]):
        self._text = text

    def complete(self, prompt: VlmPrompt) -> str:
        if callable(self._text):
            return self._text(prompt)
        return self._text


class ReplayBackend:
    """Serves recorded responses keyed by prompt digest.

    The transcript is UTF-8 lines of ``sha256(prompt)<TAB>base64(response)``,
    loaded once and treated read-only; no network is ever involved.
    """

    def __init__(self, transcript_path: str | Path):
        self._store = load_transcript(transcript_path)

    def complete(self, prompt: VlmPrompt) -> str:
        digest = prompt_digest(prompt)
        if digest not in self._store:
            raise ReplayMiss(f"no recorded response for prompt {digest[:16]}…")
        return self._store[digest]


class LiveBackend:
    """Posts JSON to a configured HTTP endpoint and reads a JSON reply.

    Endpoint, API key, and model identifier come from environment variables.
    A missing key raises AuthError before any network activity. Transient
    transport failures are retried 3 times with exponential backoff.
    """

    def __init__(
        self,
        transport: Callable[[str, bytes, dict[str, str]], bytes] | None = None,
        sleep: Callable[[float], None] = time.sleep,
        env: dict[str, str] | None = None,
    ):
        e = env if env is not None else os.environ
        self._endpoint = e.get(ENDPOINT_ENV, "")
        self._api_key = e.get(API_KEY_ENV, "")
        self._model = e.get(MODEL_ENV, "")
        self._transport = transport or _default_post
        self._sleep = sleep

    def complete(self, prompt: VlmPrompt) -> str:
        if not self._api_key:
            raise AuthError(f"no API key in ${API_KEY_ENV}")
        if not self._endpoint:
            raise BackendUnavailable(f"no endpoint in ${ENDPOINT_ENV}")
        payload = json.dumps(
            {
                "model": self._model,
                "system": prompt.system_text,
                "user": prompt.user_text,
                "image_b64": base64.b64encode(prompt.image_ref).decode("ascii"),
                "temperature": 0,
            },
            sort_keys=True,
        ).encode("utf-8")
        headers = {
            "Authorization": f"Bearer {self._api_key}",
            "Content-Type": "application/json",
        }
        last: Exception | None = None
        for attempt in range(RETRY_ATTEMPTS):
            try:
                raw = self._transport(self._endpoint, payload, headers)
                break
            except Exception as exc:
                last = exc
                if attempt < RETRY_ATTEMPTS - 1:
                    self._sleep(RETRY_BASE_DELAY_S * 2**attempt)
        else:
            raise BackendUnavailable(
                f"endpoint failed after {RETRY_ATTEMPTS} attempts: {last}"
            ) from last
        try:
            return str(json.loads(raw.decode("utf-8"))["text"])
        except Exception as exc:
            raise BackendUnavailable(f"malformed endpoint reply: {exc}") from exc


def _default_post(url: str, payload: bytes, headers: dict[str, str]) -> bytes:
    req = urllib.request.Request(url, data=payload, headers=headers, method="POST")
    with urllib.request.urlopen(req, timeout=60) as resp:
        return resp.read()


def query_backend(prompt: VlmPrompt, backend: VlmBackend) -> str:
    return backend.complete(prompt)


def load_transcript(path: str | Path) -> dict[str, str]:
    store: dict[str, str] = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        digest, sep, encoded = line.partition("\t")
        if not sep:
            raise ValueError(f"{path}:{n}: expected digest<TAB>base64 line")
        store[digest.strip()] = base64.b64decode(encoded.strip()).decode("utf-8")
    return store


def save_transcript(entries: dict[str, str], path: str | Path) -> None:
    lines = [
        f"{digest}\t{base64.b64encode(text.encode('utf-8')).decode('ascii')}\n"
        for digest, text in sorted(entries.items())
    ]
    Path(path).write_text("".join(lines), encoding="utf-8")


# Response mining. Two coordinate grammars are recognized: degree-sign plus
# hemisphere letter (33.40787°N, 12.5° S) and a signed decimal pair joined
# by a comma. Out-of-range values are discarded, never clamped.

_HEMI_RE = re.compile(r"(\d+(?:\.\d+)?)\s*°\s*([NSEW])\b")
_SIGNED_PAIR_RE = re.compile(r"([-+]?\d{1,3}\.\d+)\s*,\s*([-+]?\d{1,3}\.\d+)")

_FEATURE_NOUNS = ("Canal", "Peninsula", "River", "Sea", "Desert", "City")
_PHRASE_RE = re.compile(
    r"\b((?:[A-Z][A-Za-z'’-]*\s+)+(?:" + "|".join(_FEATURE_NOUNS) + r"))\b"
)
# Case-insensitivity is scoped to the cue words; the captured name must
# keep real capitalization or the capture swallows whole clauses.
_CUE_RE = re.compile(
    r"(?i:the image shows|very likely)\s+(?:[Tt]he\s+|[Aa]n?\s+)?"
    r"((?:[A-Z][A-Za-z'’-]*)(?:\s+[A-Z][A-Za-z'’-]*)+)"
)


def _hemi_coords(text: str) -> GeoPoint | None:
    lat: float | None = None
    lon: float | None = None
    for m in _HEMI_RE.finditer(text):
        value = float(m.group(1))
        hemi = m.group(2)
        if hemi in "NS" and lat is None and value <= 90.0:
            lat = value if hemi == "N" else -value
        elif hemi in "EW" and lon is None and value <= 180.0:
            lon = value if hemi == "E" else -value
        if lat is not None and lon is not None:
            return GeoPoint(lat, lon)
    return None


def _signed_coords(text: str) -> GeoPoint | None:
    for m in _SIGNED_PAIR_RE.finditer(text):
        a, b = float(m.group(1)), float(m.group(2))
        if abs(a) <= 90.0 and abs(b) <= 180.0:
            return GeoPoint(a, b)
    return None


def _place_names(text: str) -> tuple[str, ...]:
    hits: list[tuple[int, str]] = []
    for m in _PHRASE_RE.finditer(text):
        hits.append((m.start(1), m.group(1).strip()))
    for m in _CUE_RE.finditer(text):
        hits.append((m.start(1), m.group(1).strip()))
    hits.sort()
    seen: set[str] = set()
    ordered: list[str] = []
    for _, name in hits:
        key = name.casefold()
        if key not in seen:
            seen.add(key)
            ordered.append(name)
    return tuple(ordered)


def parse_response(text: str) -> LocationHypothesis:
    """Mine a response for the first complete coordinate pair and any
    recognizable proper place names (multi-word capitalized phrases headed
    by a geographic feature noun, or introduced by a locating cue)."""
    if not text or not text.strip():
        raise EmptyResponse("model returned no text")
    coords = _hemi_coords(text) or _signed_coords(text)
    names = _place_names(text)
    if coords is None and not names:
        raise NoHypothesis("no coordinates or place names in response")
    note = None
    for sentence in re.split(r"(?<=[.!?])\s+", text):
        low = sentence.casefold()
        if "likely" in low or "confident" in low:
            note = sentence.strip()
            break
    return LocationHypothesis(
        place_names=names, coords=coords, raw_response=text, confidence_note=note
    )


def vlm_geolocate(
    record: "BenchmarkRecord",
    backend: VlmBackend,
    audit: Callable[[str, str], None] | None = None,
) -> MatchResult:
    """Prompt, query, parse; returns one rank-1 result for the record.

    A response naming places without usable coordinates yields a result
    carrying only place names (scored by name matching downstream). A
    response with neither is returned flagged unresolved rather than
    raised, so batch runs keep going. The ``audit`` hook receives
    (image_id, raw response) for retention.
    """
    t0 = time.perf_counter()
    image = b""
    path = Path(record.image_path)
    if record.image_path and path.is_file():
        image = path.read_bytes()
    prompt = build_prompt(record.iss, image)
    text = query_backend(prompt, backend)
    if audit is not None:
        audit(record.image_id, text)
    try:
        hyp = parse_response(text)
    except NoHypothesis:
        return MatchResult(
            image_id=record.image_id,
            pipeline="vlm",
            predicted=None,
            score=0.0,
            rank=1,
            runtime_s=time.perf_counter() - t0,
            unresolved=True,
        )
    return MatchResult(
        image_id=record.image_id,
        pipeline="vlm",
        predicted=hyp.coords,
        score=1.0 if hyp.coords is not None else 0.5,
        rank=1,
        place_names=hyp.place_names,
        runtime_s=time.perf_counter() - t0,
    )
