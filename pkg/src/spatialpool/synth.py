"""Rule-based synthetic scenes, queries and relevance labels.

Relations are decided by fixed formulas on box coordinates, so relevance is
an exact oracle for end-to-end tests: a scene is relevant to
(subject, rel, reference) iff it holds detections of both categories whose
boxes satisfy ``rel`` under :func:`rule_relation`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import GenerationError, ValidationError
from .query import SpatialTriplet, StructuredQuery
from .scene import Box, Corpus, Detection, Relevance, Scene

DEFAULT_CATEGORIES = ("bed", "lamp", "picture", "table", "chair", "window", "plant", "rug")
DEFAULT_RELATIONS = ("above", "below", "left of", "right of", "on", "inside of")
MIRROR_X = {"left of": "right of", "right of": "left of"}


@dataclass(frozen=True)
class GenConfig:
    seed: int = 42
    n_scenes: int = 40
    n_queries: int = 30
    categories: tuple[str, ...] = DEFAULT_CATEGORIES
    relations: tuple[str, ...] = DEFAULT_RELATIONS
    min_objects: int = 2
    max_objects: int = 5
    tau: float = 0.15
    inside_overlap: float = 1.0
    noise: float = 0.0
    min_size: float = 0.08
    max_size: float = 0.3
    p_nested: float = 0.15
    mirror_x: bool = False
    max_retries: int = 20
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if self.tau <= 0:
            raise ValidationError("tau must be positive")
        if self.noise < 0:
            raise ValidationError("noise must be non-negative")
        if not 0 < self.inside_overlap <= 1:
            raise ValidationError("inside_overlap must lie in (0, 1]")
        if not 1 <= self.min_objects <= self.max_objects <= len(self.categories):
            raise ValidationError("need 1 <= min_objects <= max_objects <= #categories")
        if not 0 < self.min_size <= self.max_size < 1:
            raise ValidationError("box size range must lie in (0, 1)")


def _overlap_fraction(a: Box, b: Box) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0 or h <= 0:
        return 0.0
    return (w * h) / a.area


def rule_relation(a: Box, b: Box, cfg: GenConfig = GenConfig()) -> frozenset[str]:
    """Relations that hold for subject box ``a`` relative to reference ``b``."""
    ax, ay = a.center
    bx, by = b.center
    tau = cfg.tau
    labels = set()
    if ay < by - tau:
        labels.add("above")
    if ay > by + tau:
        labels.add("below")
    if ax < bx - tau:
        labels.add("left of")
    if ax > bx + tau:
        labels.add("right of")
    if cfg.inside_overlap >= 1.0:
        inside = a.x_min >= b.x_min and a.x_max <= b.x_max and a.y_min >= b.y_min and a.y_max <= b.y_max
    else:
        inside = _overlap_fraction(a, b) >= cfg.inside_overlap
    if inside:
        labels.update(("in", "inside of"))
    h_overlap = min(a.x_max, b.x_max) > max(a.x_min, b.x_min)
    if "above" in labels and abs(b.y_min - a.y_max) < tau / 2 and h_overlap:
        labels.add("on")
    return frozenset(labels)


def holds(scene: Scene, trip: SpatialTriplet, cfg: GenConfig = GenConfig()) -> bool:
    for a in scene.of_category(trip.subject):
        for b in scene.of_category(trip.reference):
            if a.id != b.id and trip.preposition in rule_relation(a.box, b.box, cfg):
                return True
    return False


def query_relevant(scene: Scene, q: StructuredQuery, cfg: GenConfig = GenConfig()) -> bool:
    if any(not scene.of_category(n) for n in q.objects):
        return False
    return all(holds(scene, t, cfg) for t in q.triplets)


def _random_box(rng: np.random.Generator, cfg: GenConfig) -> Box:
    w, h = rng.uniform(cfg.min_size, cfg.max_size, size=2)
    x0 = rng.uniform(0.0, 1.0 - w)
    y0 = rng.uniform(0.0, 1.0 - h)
    return Box(float(x0), float(y0), float(x0 + w), float(y0 + h))


def _nested_box(rng: np.random.Generator, parent: Box) -> Box:
    pw, ph = parent.x_max - parent.x_min, parent.y_max - parent.y_min
    fw, fh = rng.uniform(0.3, 0.7, size=2)
    w, h = fw * pw, fh * ph
    x0 = parent.x_min + rng.uniform(0.0, pw - w)
    y0 = parent.y_min + rng.uniform(0.0, ph - h)
    return Box(float(x0), float(y0), float(min(x0 + w, parent.x_max)), float(min(y0 + h, parent.y_max)))


def _make_scene(rng: np.random.Generator, index: int, cfg: GenConfig) -> Scene:
    n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    cats = rng.choice(len(cfg.categories), size=n, replace=False)
    dets: list[Detection] = []
    for k, ci in enumerate(cats):
        nest = rng.uniform() < cfg.p_nested
        parents = [d.box for d in dets if min(d.box.x_max - d.box.x_min, d.box.y_max - d.box.y_min) >= 0.15]
        if nest and parents:
            box = _nested_box(rng, parents[int(rng.integers(len(parents)))])
        else:
            box = _random_box(rng, cfg)
        score = float(np.clip(1.0 - abs(cfg.noise * rng.standard_normal()), 1e-6, 1.0))
        dets.append(Detection(k, cfg.categories[int(ci)], box, score))
    return Scene(f"s{index:03d}", cfg.width, cfg.height, tuple(dets))


def _candidates(scenes: Sequence[Scene], cfg: GenConfig) -> list[SpatialTriplet]:
    holding: dict[SpatialTriplet, set[str]] = {}
    relations = set(cfg.relations)
    for s in scenes:
        for a in s.detections:
            for b in s.detections:
                if a.id == b.id:
                    continue
                for rel in rule_relation(a.box, b.box, cfg) & relations:
                    holding.setdefault(SpatialTriplet(a.category, rel, b.category), set()).add(s.id)
    keep = [t for t, ids in holding.items() if 0 < len(ids) < len(scenes)]
    return sorted(keep, key=lambda t: (t.subject, t.preposition, t.reference))


def mirror_scene(scene: Scene) -> Scene:
    dets = tuple(replace(d, box=d.box.mirrored_x()) for d in scene.detections)
    return replace(scene, detections=dets)


def mirror_triplet(t: SpatialTriplet) -> SpatialTriplet:
    return SpatialTriplet(t.subject, MIRROR_X.get(t.preposition, t.preposition), t.reference)


def relevance_labels(
    scenes: Iterable[Scene], queries: Iterable[StructuredQuery], cfg: GenConfig = GenConfig()
) -> list[Relevance]:
    scenes = list(scenes)
    return [Relevance(q.id, s.id, query_relevant(s, q, cfg)) for q in queries for s in scenes]


def generate_corpus(cfg: GenConfig = GenConfig()):
    """Return (corpus with relevance annotations, queries, annotations).

    Queries are triplets that hold in at least one scene and fail in at
    least one.  With ``mirror_x`` the same geometry is reflected in x and
    left/right relations are swapped, so the output is the mirror image of
    the unmirrored corpus drawn from the same seed.
    """
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.max_retries):
        scenes = [_make_scene(rng, i, cfg) for i in range(cfg.n_scenes)]
        candidates = _candidates(scenes, cfg)
        if len(candidates) >= cfg.n_queries:
            break
    else:
        raise GenerationError(
            f"fewer than {cfg.n_queries} usable queries after {cfg.max_retries} attempts"
        )
    picked = sorted(rng.choice(len(candidates), size=cfg.n_queries, replace=False).tolist())
    triplets = [candidates[i] for i in picked]
    if cfg.mirror_x:
        scenes = [mirror_scene(s) for s in scenes]
        triplets = [mirror_triplet(t) for t in triplets]
    queries = [StructuredQuery(f"q{i:03d}", (), (t,)) for i, t in enumerate(triplets)]
    annotations = relevance_labels(scenes, queries, cfg)
    for q in queries:
        flags = [a.relevant for a in annotations if a.query == q.id]
        if all(flags) or not any(flags):
            raise GenerationError(f"query {q.id} lost its relevant/irrelevant split after mirroring")
    corpus = Corpus(tuple(scenes), tuple(annotations), frozenset(cfg.categories))
    return corpus, queries, annotations
