"""Spatial templates as movable weighted pooling regions.

A template for a G-grid is an S x S weight grid with S = 2G - 1, indexed by
offset from a reference cell: ``weights[c + dy, c + dx]`` with ``c = G - 1``.
Placing it at any reference cell therefore covers the entire image.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, MissingCategory, UnknownPreposition, ValidationError
from .query import DEFAULT_LEXICON, SpatialTriplet
from .scene import DEFAULT_GRID, Corpus, ScoreMap, box_mask, center_cell, check_grid


def template_size(G: int) -> int:
    return 2 * G - 1


@dataclass(frozen=True, eq=False)
class Template:
    name: str
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
            raise ValidationError(f"template {self.name!r} must be odd and square, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValidationError(f"template {self.name!r} has non-finite weights")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def grid(self) -> int:
        return (self.size + 1) // 2

    @property
    def center(self) -> int:
        return self.size // 2

    def at_offset(self, dx: int, dy: int) -> float:
        return float(self.weights[self.center + dy, self.center + dx])

    def normalized(self) -> "Template":
        total = math.fsum(np.abs(self.weights).ravel())
        if total == 0.0:
            return self
        return Template(self.name, self.weights / total)

    def mirrored_x(self, name: str | None = None) -> "Template":
        return Template(name or self.name, self.weights[:, ::-1])


def uniform_template(name: str, G: int) -> Template:
    S = template_size(G)
    return Template(name, np.full((S, S), 1.0 / (S * S)))


def center_of_mass(t: Template) -> tuple[float, float]:
    """Weighted mean offset (dx, dy) in cells; negative dy means above."""
    w = t.weights
    total = w.sum()
    offsets = np.arange(t.size) - t.center
    return float((w.sum(axis=0) * offsets).sum() / total), float((w.sum(axis=1) * offsets).sum() / total)


@dataclass(frozen=True)
class TemplateBank:
    grid: int
    templates: Mapping[str, Template] = field(default_factory=dict)

    def __post_init__(self):
        check_grid(self.grid)
        S = template_size(self.grid)
        for name, t in self.templates.items():
            if t.size != S:
                raise DimensionMismatch(f"template {name!r} has size {t.size}, bank expects {S}")

    @property
    def size(self) -> int:
        return template_size(self.grid)

    def __getitem__(self, preposition: str) -> Template:
        try:
            return self.templates[preposition]
        except KeyError:
            raise UnknownPreposition(f"no template for {preposition!r}") from None

    def __contains__(self, preposition) -> bool:
        return preposition in self.templates

    def __iter__(self):
        return iter(self.templates)


def pool(t: Template, ref_center: tuple[int, int], u: ScoreMap) -> float:
    """Template placed at ``ref_center`` and pooled over ``u``.

    Out-of-image positions contribute 0, so only the G x G window of the
    template overlapping the image takes part.  Dense maps are summed with
    ``math.fsum`` which makes the result independent of summation order.
    """
    G = u.resolution
    if t.size != template_size(G):
        raise DimensionMismatch(f"template size {t.size} does not fit a {G}-grid")
    ix, iy = ref_center
    if not (0 <= ix < G and 0 <= iy < G):
        raise DimensionMismatch(f"reference cell {ref_center} outside the {G}-grid")
    c = t.center
    if u.kind == "dirac" and u.center is not None:
        cx, cy = u.center
        return float(t.weights[c + cy - iy, c + cx - ix] * u.values[cy, cx])
    window = t.weights[c - iy : c - iy + G, c - ix : c - ix + G]
    return math.fsum((window * u.values).ravel())


def recenter(u: ScoreMap, ref_center: tuple[int, int]) -> ScoreMap:
    """Express ``u`` in offset coordinates around ``ref_center`` (a 2G-1 grid)."""
    G = u.resolution
    S = template_size(G)
    ix, iy = ref_center
    c = G - 1
    out = np.zeros((S, S))
    out[c - iy : c - iy + G, c - ix : c - ix + G] = u.values
    center = None
    if u.center is not None:
        center = (c + u.center[0] - ix, c + u.center[1] - iy)
    return ScoreMap(out, kind=u.kind, center=center)


# ---------------------------------------------------------------- estimation


def _accumulate_pair(acc: np.ndarray, G: int, ref_cell, subject_box, weight: float) -> None:
    mask = box_mask(subject_box, G).values
    cells = mask.sum()
    if cells == 0:
        # box too thin to cover any cell center: fall back to its center cell
        mask = np.zeros((G, G))
        sx, sy = center_cell(subject_box, G)
        mask[sy, sx] = 1.0
        cells = 1.0
    c = G - 1
    rx, ry = ref_cell
    acc[c - ry : c - ry + G, c - rx : c - rx + G] += mask * (weight / cells)


def estimate_templates(
    corpus: Corpus,
    pairs: Iterable[tuple[SpatialTriplet, str]],
    G: int = DEFAULT_GRID,
    relations: Sequence[str] | None = None,
) -> TemplateBank:
    """Estimate one template per relation from positively annotated scenes.

    For every (triplet, scene) pair the filled subject box, scaled to unit
    mass, is copied into an accumulator centered on the reference box center.
    When a scene holds several detections of the named categories, every
    (reference, subject) combination contributes with weight 1/#combinations.
    Relations without training pairs get the uniform template.
    """
    check_grid(G)
    S = template_size(G)
    names = list(relations) if relations is not None else list(DEFAULT_LEXICON)
    acc: dict[str, np.ndarray] = {}
    scenes = {s.id: s for s in corpus.scenes}
    for trip, scene_id in pairs:
        scene = scenes.get(scene_id)
        if scene is None:
            raise MissingCategory(scene_id, trip.reference)
        refs = scene.of_category(trip.reference)
        if not refs:
            raise MissingCategory(scene_id, trip.reference)
        subjects = scene.of_category(trip.subject)
        combos = [(r, s) for r in refs for s in subjects if r.id != s.id]
        if not combos:
            raise MissingCategory(scene_id, trip.subject)
        grid = acc.setdefault(trip.preposition, np.zeros((S, S)))
        if trip.preposition not in names:
            names.append(trip.preposition)
        weight = 1.0 / len(combos)
        for ref, subj in combos:
            _accumulate_pair(grid, G, center_cell(ref.box, G), subj.box, weight)

    templates = {}
    for name in names:
        if name in acc:
            grid = acc[name]
            templates[name] = Template(name, grid / math.fsum(grid.ravel()))
        else:
            templates[name] = uniform_template(name, G)
    return TemplateBank(G, templates)


# ---------------------------------------------------------------- discretization


@dataclass(frozen=True)
class PoolingScheme:
    """Partitions of the unit square, each given as (columns, rows)."""

    partitions: tuple[tuple[int, int], ...] = ((2, 2), (4, 4))

    def __post_init__(self):
        parts = tuple((int(nx), int(ny)) for nx, ny in self.partitions)
        if not parts or any(nx < 1 or ny < 1 for nx, ny in parts):
            raise ValidationError(f"invalid pooling scheme {self.partitions}")
        object.__setattr__(self, "partitions", parts)

    @property
    def length(self) -> int:
        return sum(nx * ny for nx, ny in self.partitions)

    @classmethod
    def parse(cls, text: str) -> "PoolingScheme":
        """'2x2+4x4' -> ((2, 2), (4, 4))."""
        parts = []
        for item in text.replace(",", "+").split("+"):
            nx, ny = item.lower().split("x")
            parts.append((int(nx), int(ny)))
        return cls(tuple(parts))


DEFAULT_SCHEME = PoolingScheme()


def _region_index(cells: np.ndarray, R: int, n: int) -> np.ndarray:
    # region holding each cell's center, in exact integer arithmetic
    return ((2 * cells + 1) * n) // (2 * R)


def discretize(u: ScoreMap, scheme: PoolingScheme = DEFAULT_SCHEME) -> np.ndarray:
    """Mass of ``u`` in every region, partitions concatenated, rows major.

    A grid cell belongs to the region containing its center.
    """
    R = u.resolution
    out = []
    if u.kind == "dirac" and u.center is not None:
        cx, cy = u.center
        mass = u.values[cy, cx]
        for nx, ny in scheme.partitions:
            part = np.zeros(nx * ny)
            col = int(_region_index(np.array(cx), R, nx))
            row = int(_region_index(np.array(cy), R, ny))
            part[row * nx + col] = mass
            out.append(part)
        return np.concatenate(out)
    idx = np.arange(R)
    for nx, ny in scheme.partitions:
        cols = _region_index(idx, R, nx)
        rows = _region_index(idx, R, ny)
        labels = rows[:, None] * nx + cols[None, :]
        out.append(np.bincount(labels.ravel(), weights=u.values.ravel(), minlength=nx * ny))
    return np.concatenate(out)


# ---------------------------------------------------------------- files


def heatmap_pixels(t: Template) -> np.ndarray:
    w = t.weights
    top = w.max()
    if top <= 0:
        return np.zeros(w.shape, dtype=int)
    return np.clip(np.floor(255.0 * w / top + 0.5), 0, 255).astype(int)


def export_heatmap(t: Template, path) -> tuple[Path, Path]:
    """Write a P2 PGM (brightest = largest weight) and a CSV of raw weights."""
    path = Path(path)
    pgm = path if path.suffix == ".pgm" else Path(f"{path}.pgm")
    csv = pgm.with_suffix(".csv")
    pixels = heatmap_pixels(t)
    lines = ["P2", f"{t.size} {t.size}", "255"]
    lines += [" ".join(str(v) for v in row) for row in pixels]
    pgm.write_text("\n".join(lines) + "\n", encoding="ascii")
    csv.write_text(
        "\n".join(",".join(repr(float(v)) for v in row) for row in t.weights) + "\n", encoding="ascii"
    )
    return pgm, csv


def read_pgm(path) -> np.ndarray:
    tokens = Path(path).read_text(encoding="ascii").split()
    if tokens[0] != "P2":
        raise ValueError(f"{path}: not a P2 graymap")
    w, h, _maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    return np.array([int(v) for v in tokens[4:]], dtype=int).reshape(h, w)


def bank_to_json(bank: TemplateBank) -> dict:
    return {
        "grid": bank.grid,
        "size": bank.size,
        "templates": {name: [float(v) for v in t.weights.ravel()] for name, t in bank.templates.items()},
    }


def bank_from_json(data: dict) -> TemplateBank:
    G, S = int(data["grid"]), int(data["size"])
    if S != template_size(G):
        raise DimensionMismatch(f"bank size {S} does not match grid {G}")
    templates = {}
    for name, flat in data["templates"].items():
        if len(flat) != S * S:
            raise DimensionMismatch(f"template {name!r} has {len(flat)} weights, expected {S * S}")
        templates[name] = Template(name, np.asarray(flat, dtype=np.float64).reshape(S, S))
    return TemplateBank(G, templates)


def save_bank(bank: TemplateBank, path, extra: dict | None = None) -> None:
    data = bank_to_json(bank)
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data) + "\n", encoding="utf-8")


def load_bank(path) -> TemplateBank:
    return bank_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
