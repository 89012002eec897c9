"""Scenes, detections, score maps and the JSON-lines corpus format.

Geometry lives in the unit square with image orientation (y grows downward).
A G-resolution grid splits it into half-open cells; cell ``(ix, iy)`` covers
``[ix/G, (ix+1)/G) x [iy/G, (iy+1)/G)``.  Score-map arrays are stored
row-major as ``values[iy, ix]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import ParseError, ValidationError

DEFAULT_GRID = 101


@dataclass(frozen=True)
class Box:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) and 0.0 <= c <= 1.0 for c in coords):
            raise ValidationError(f"box coordinates outside [0,1]: {coords}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValidationError(f"degenerate box: {coords}")

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def mirrored_x(self) -> "Box":
        return Box(1.0 - self.x_max, self.y_min, 1.0 - self.x_min, self.y_max)

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class Detection:
    id: int
    category: str
    box: Box
    score: float = 1.0

    def __post_init__(self):
        if not self.category:
            raise ValidationError(f"detection {self.id} has an empty category")
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValidationError(f"detection {self.id} score {self.score} not in [0,1]")


@dataclass(frozen=True)
class Scene:
    id: str
    width: int
    height: int
    detections: tuple[Detection, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"scene {self.id!r}: non-positive size")
        ids = [d.id for d in self.detections]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"scene {self.id!r}: duplicate detection ids")

    @property
    def categories(self) -> frozenset[str]:
        return frozenset(d.category for d in self.detections)

    def of_category(self, category: str) -> list[Detection]:
        return [d for d in self.detections if d.category == category]

    def max_score(self, category: str) -> float:
        """Highest detector score for ``category``; 0 if absent."""
        return max((d.score for d in self.detections if d.category == category), default=0.0)


@dataclass(frozen=True)
class Relevance:
    query: str
    scene: str
    relevant: bool


@dataclass(frozen=True)
class Corpus:
    scenes: tuple[Scene, ...] = ()
    annotations: tuple[Relevance, ...] = ()
    vocabulary: frozenset[str] = field(default=frozenset())

    def __post_init__(self):
        object.__setattr__(self, "scenes", tuple(self.scenes))
        object.__setattr__(self, "annotations", tuple(self.annotations))
        ids = [s.id for s in self.scenes]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate scene ids in corpus")
        cats = frozenset(c for s in self.scenes for c in s.categories)
        vocab = frozenset(self.vocabulary) | cats
        object.__setattr__(self, "vocabulary", vocab)
        known = set(ids)
        for a in self.annotations:
            if a.scene not in known:
                raise ValidationError(f"annotation refers to unknown scene {a.scene!r}")

    def scene(self, scene_id: str) -> Scene:
        for s in self.scenes:
            if s.id == scene_id:
                return s
        raise KeyError(scene_id)

    def with_annotations(self, annotations: Iterable[Relevance]) -> "Corpus":
        return Corpus(self.scenes, tuple(self.annotations) + tuple(annotations), self.vocabulary)


# ---------------------------------------------------------------- score maps


@dataclass(frozen=True, eq=False)
class ScoreMap:
    """A localization map over the G x G grid.

    ``kind`` is ``"dense"``, ``"dirac"`` (unit mass at ``center``) or ``"box"``
    (0/1 mask).  ``center`` is the ``(ix, iy)`` cell of a dirac map.
    """

    values: np.ndarray
    kind: str = "dense"
    center: Optional[tuple[int, int]] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValidationError(f"score map must be square, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("score map has non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    @property
    def mass(self) -> float:
        return float(self.values.sum())


def check_grid(G: int) -> None:
    if not isinstance(G, (int, np.integer)) or G <= 0 or G % 2 == 0:
        raise ValidationError(f"grid resolution must be a positive odd integer, got {G}")


def point_cell(x: float, y: float, G: int) -> tuple[int, int]:
    """Grid cell ``(ix, iy)`` holding the point, clamped to the last cell at 1.0."""
    return (min(int(math.floor(x * G)), G - 1), min(int(math.floor(y * G)), G - 1))


def center_cell(box: Box, G: int) -> tuple[int, int]:
    return point_cell(*box.center, G)


def dirac_image(d: Detection, G: int = DEFAULT_GRID) -> ScoreMap:
    check_grid(G)
    ix, iy = center_cell(d.box, G)
    values = np.zeros((G, G))
    values[iy, ix] = 1.0
    return ScoreMap(values, kind="dirac", center=(ix, iy))


def dirac_at(cell: tuple[int, int], G: int) -> ScoreMap:
    ix, iy = cell
    values = np.zeros((G, G))
    values[iy, ix] = 1.0
    return ScoreMap(values, kind="dirac", center=(ix, iy))


def box_mask(d: Detection | Box, G: int = DEFAULT_GRID) -> ScoreMap:
    """1 on cells whose centers lie in the (closed) box, 0 elsewhere."""
    check_grid(G)
    box = d.box if isinstance(d, Detection) else d
    centers = (np.arange(G) + 0.5) / G
    in_x = (centers >= box.x_min) & (centers <= box.x_max)
    in_y = (centers >= box.y_min) & (centers <= box.y_max)
    return ScoreMap(np.outer(in_y, in_x).astype(np.float64), kind="box")


# ---------------------------------------------------------------- file format


def _scene_from_record(rec: dict) -> Scene:
    dets = []
    for d in rec.get("detections", []):
        box = d["box"]
        if not isinstance(box, list) or len(box) != 4:
            raise ValueError("box must be a list of 4 numbers")
        dets.append(
            Detection(
                id=int(d["id"]),
                category=str(d["category"]),
                box=Box(*(float(c) for c in box)),
                score=float(d["score"]),
            )
        )
    return Scene(str(rec["id"]), int(rec["width"]), int(rec["height"]), tuple(dets))


def _parse_records(lines: Iterable[str]) -> tuple[list[Scene], list[Relevance]]:
    scenes: list[Scene] = []
    annotations: list[Relevance] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}", f"invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise ParseError(f"line {lineno}", "expected a JSON object")
        kind = rec.get("type")
        try:
            if kind == "scene":
                scenes.append(_scene_from_record(rec))
            elif kind == "relevance":
                relevant = rec["relevant"]
                if not isinstance(relevant, bool):
                    raise ValueError("'relevant' must be a boolean")
                annotations.append(Relevance(str(rec["query"]), str(rec["scene"]), relevant))
            else:
                raise ParseError(f"line {lineno}", f"unknown record type {kind!r}")
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"line {lineno}", f"malformed record ({exc})") from None
    return scenes, annotations


def parse_corpus_lines(lines: Iterable[str]) -> Corpus:
    scenes, annotations = _parse_records(lines)
    return Corpus(tuple(scenes), tuple(annotations))


def load_corpus(path) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus_lines(fh)


def load_relevance(path) -> list[Relevance]:
    """Relevance lines of a file; scene lines, if any, are parsed and dropped."""
    with open(path, encoding="utf-8") as fh:
        return _parse_records(fh)[1]


def scene_record(scene: Scene) -> dict:
    return {
        "type": "scene",
        "id": scene.id,
        "width": scene.width,
        "height": scene.height,
        "detections": [
            {"id": d.id, "category": d.category, "score": d.score, "box": d.box.as_list()}
            for d in scene.detections
        ],
    }


def relevance_record(a: Relevance) -> dict:
    return {"type": "relevance", "query": a.query, "scene": a.scene, "relevant": a.relevant}


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def save_corpus(corpus: Corpus, path, include_annotations: bool = True) -> None:
    records = [scene_record(s) for s in corpus.scenes]
    if include_annotations:
        records += [relevance_record(a) for a in corpus.annotations]
    write_jsonl(Path(path), records)
