"""The shared result record every geolocation pipeline emits."""

from __future__ import annotations

from dataclasses import dataclass, field

from .geo import GeoPoint

PIPELINES = ("nn", "sift", "vlm")


@dataclass(frozen=True)
class MatchResult:
    """One ranked location hypothesis for one image.

    A result carries either predicted coordinates, place names, or both;
    a result with neither must be flagged ``unresolved`` (the pipeline ran
    but produced nothing scoreable).
    """

    image_id: str
    pipeline: str
    predicted: GeoPoint | None = None
    score: float = 0.0
    rank: int = 1
    place_names: tuple[str, ...] = field(default=())
    runtime_s: float = 0.0
    unresolved: bool = False

    def __post_init__(self) -> None:
        if self.pipeline not in PIPELINES:
            raise ValueError(f"pipeline must be one of {PIPELINES}, got {self.pipeline!r}")
        if self.rank not in (1, 2):
            raise ValueError(f"rank must be 1 or 2, got {self.rank}")
        if self.runtime_s < 0:
            raise ValueError(f"runtime_s must be >= 0, got {self.runtime_s}")
        object.__setattr__(self, "place_names", tuple(self.place_names))
        if not self.unresolved and self.predicted is None and not self.place_names:
            raise ValueError(
                "a result needs coordinates or place names unless flagged unresolved"
            )
