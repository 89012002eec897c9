"""Scene scoring with the additive compatibility function and ranking I/O.

score(q, scene) = sum_i alpha_i * f(i)                       query objects
                + sum_i sum_{c not in q} gamma_ic * f(c)     co-occurring context
                + sum_(s,p,r) beta_srp * spatial(s, p, r)    query triplets

f(n) is the highest detector score of category n in the scene (0 if absent)
and the spatial part pools a relation template placed at the reference
detection over the subject's dirac image.
"""

from __future__ import annotations

import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .query import SpatialTriplet, StructuredQuery
from .scene import Corpus, Relevance, Scene, center_cell, dirac_image
from .template import TemplateBank, pool

KEY_SEP = "|"


@dataclass(frozen=True)
class CompatibilityWeights:
    alpha: Mapping[str, float] = field(default_factory=dict)
    gamma: Mapping[tuple[str, str], float] = field(default_factory=dict)
    beta: Mapping[tuple[str, str, str], float] = field(default_factory=dict)
    alpha_default: float = 1.0
    gamma_default: float = 0.0
    beta_default: float = 1.0

    def a(self, noun: str) -> float:
        return self.alpha.get(noun, self.alpha_default)

    def g(self, noun: str, context: str) -> float:
        return self.gamma.get((noun, context), self.gamma_default)

    def b(self, trip: SpatialTriplet) -> float:
        return self.beta.get((trip.subject, trip.reference, trip.preposition), self.beta_default)

    def scaled(self, lam: float) -> "CompatibilityWeights":
        return CompatibilityWeights(
            {k: lam * v for k, v in self.alpha.items()},
            {k: lam * v for k, v in self.gamma.items()},
            {k: lam * v for k, v in self.beta.items()},
            lam * self.alpha_default,
            lam * self.gamma_default,
            lam * self.beta_default,
        )

    def to_json(self) -> dict:
        def group(entries, default):
            out = {"default": default}
            out.update({KEY_SEP.join(k) if isinstance(k, tuple) else k: v for k, v in entries.items()})
            return out

        return {
            "alpha": group(self.alpha, self.alpha_default),
            "gamma": group(self.gamma, self.gamma_default),
            "beta": group(self.beta, self.beta_default),
        }

    @classmethod
    def from_json(cls, data: dict) -> "CompatibilityWeights":
        def split(name, arity, default):
            entries = dict(data.get(name, {}))
            dflt = float(entries.pop("default", default))
            keyed = {}
            for key, value in entries.items():
                parts = key.split(KEY_SEP) if arity > 1 else key
                if arity > 1 and len(parts) != arity:
                    raise ValueError(f"{name} key {key!r} needs {arity} '|'-separated parts")
                keyed[tuple(parts) if arity > 1 else parts] = float(value)
            return keyed, dflt

        alpha, ad = split("alpha", 1, 1.0)
        gamma, gd = split("gamma", 2, 0.0)
        beta, bd = split("beta", 3, 1.0)
        return cls(alpha, gamma, beta, ad, gd, bd)


def load_weights(path) -> CompatibilityWeights:
    return CompatibilityWeights.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def spatial_term(bank: TemplateBank, trip: SpatialTriplet, scene: Scene, G: Optional[int] = None) -> float:
    """Best detector-weighted template response over all (reference, subject) pairs."""
    template = bank[trip.preposition]
    G = bank.grid if G is None else G
    best = 0.0
    found = False
    for ref in scene.of_category(trip.reference):
        ref_cell = center_cell(ref.box, G)
        for subj in scene.of_category(trip.subject):
            if subj.id == ref.id:
                continue
            value = ref.score * subj.score * pool(template, ref_cell, dirac_image(subj, G))
            best = value if not found else max(best, value)
            found = True
    return best


def score_scene(
    q: StructuredQuery,
    scene: Scene,
    weights: CompatibilityWeights,
    bank: TemplateBank,
    G: Optional[int] = None,
) -> float:
    objects = q.objects
    score = 0.0
    for noun in objects:
        score += weights.a(noun) * scene.max_score(noun)
    context = sorted(scene.categories - set(objects))
    for noun in objects:
        for c in context:
            score += weights.g(noun, c) * scene.max_score(c)
    for trip in q.triplets:
        score += weights.b(trip) * spatial_term(bank, trip, scene, G)
    return score


@dataclass(frozen=True)
class RankedResult:
    query_id: str
    entries: tuple[tuple[str, float], ...]

    @property
    def scene_ids(self) -> list[str]:
        return [sid for sid, _ in self.entries]

    def relevance(self, annotations: Iterable[Relevance]) -> list[bool]:
        """Relevance flags in rank order; unannotated scenes count as irrelevant."""
        rel = {a.scene for a in annotations if a.query == self.query_id and a.relevant}
        return [sid in rel for sid in self.scene_ids]


def sort_scores(query_id: str, scored: Iterable[tuple[str, float]]) -> RankedResult:
    ordered = sorted(scored, key=lambda item: (-item[1], item[0]))
    return RankedResult(query_id, tuple(ordered))


def rank_scenes(
    q: StructuredQuery,
    corpus: Corpus,
    weights: CompatibilityWeights,
    bank: TemplateBank,
    G: Optional[int] = None,
    jobs: int = 1,
) -> RankedResult:
    """Score every scene and sort by descending score, ties by scene id."""

    def one(scene):
        return scene.id, score_scene(q, scene, weights, bank, G)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool_:
            scored = list(pool_.map(one, corpus.scenes))
    else:
        scored = [one(s) for s in corpus.scenes]
    return sort_scores(q.id, scored)


def _write_rows(results: Sequence[RankedResult], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["query_id", "rank", "scene_id", "score"])
    for res in results:
        for rank, (sid, score) in enumerate(res.entries, start=1):
            writer.writerow([res.query_id, rank, sid, f"{score:.12g}"])


def write_rankings(results: Sequence[RankedResult], path) -> None:
    """Ranking CSV at ``path``; ``None`` or ``-`` means standard output."""
    if path is None or str(path) == "-":
        _write_rows(results, sys.stdout)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        _write_rows(results, fh)


def read_rankings(path) -> list[RankedResult]:
    rows: dict[str, list[tuple[int, str, float]]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"query_id", "rank", "scene_id", "score"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: ranking CSV lacks columns {sorted(missing)}")
        for row in reader:
            rows.setdefault(row["query_id"], []).append((int(row["rank"]), row["scene_id"], float(row["score"])))
    results = []
    for qid, items in rows.items():
        items.sort()
        results.append(RankedResult(qid, tuple((sid, score) for _, sid, score in items)))
    return results
