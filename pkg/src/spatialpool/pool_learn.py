"""Learnable pooling: relation templates trained jointly with a logistic classifier.

For an example (subject, rel, reference) in a scene with label y the model
predicts ``sigmoid(c[rel] * x + b)`` where x is the template response of
``rel`` placed at the reference center and pooled over the subject's dirac
image (averaged over matching detection pairs).  The response is linear in
the template, so the gradient with respect to a weight is the dirac mass it
touches.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DivergenceError, EmptyBatch, MissingCategory
from .query import SpatialTriplet, StructuredQuery
from .scene import Corpus, Relevance, Scene, center_cell
from .template import Template, TemplateBank, bank_from_json, save_bank, template_size


@dataclass(frozen=True)
class TrainExample:
    triplet: SpatialTriplet
    scene: Scene
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if not self.scene.of_category(self.triplet.subject):
            raise MissingCategory(self.scene.id, self.triplet.subject)
        if not self.scene.of_category(self.triplet.reference):
            raise MissingCategory(self.scene.id, self.triplet.reference)


@dataclass
class PoolLearnParams:
    grid: int
    weights: dict[str, np.ndarray]
    cls: dict[str, float]
    bias: float = 0.0
    losses: tuple[float, ...] = field(default=())

    def copy(self) -> "PoolLearnParams":
        return PoolLearnParams(
            self.grid, {k: w.copy() for k, w in self.weights.items()}, dict(self.cls), self.bias, self.losses
        )

    def zeros_like(self) -> "PoolLearnParams":
        return PoolLearnParams(self.grid, {k: np.zeros_like(w) for k, w in self.weights.items()},
                               {k: 0.0 for k in self.cls}, 0.0)

    def to_vector(self) -> np.ndarray:
        names = sorted(self.weights)
        parts = [self.weights[k].ravel() for k in names] + [np.array([self.cls[k] for k in names]), [self.bias]]
        return np.concatenate(parts)

    def from_vector(self, vec: np.ndarray) -> "PoolLearnParams":
        out = self.copy()
        names = sorted(self.weights)
        pos = 0
        for k in names:
            n = self.weights[k].size
            out.weights[k] = np.array(vec[pos : pos + n]).reshape(self.weights[k].shape)
            pos += n
        for k in names:
            out.cls[k] = float(vec[pos])
            pos += 1
        out.bias = float(vec[pos])
        return out

    @property
    def bank(self) -> TemplateBank:
        return TemplateBank(self.grid, {k: Template(k, w) for k, w in self.weights.items()})


def _peak(w: np.ndarray) -> float:
    top = float(np.abs(w).max())
    return top if top > 0 else 1.0


def init_params(bank: TemplateBank, cls: float = 1.0, bias: float = 0.0) -> PoolLearnParams:
    """Trainable copy of ``bank`` with every template divided by its peak.

    Pooled features then lie in [-1, 1] and a uniform template becomes all
    ones.  The scale only affects conditioning; normalization folds it back
    into the classifier weight.
    """
    return PoolLearnParams(
        bank.grid,
        {k: np.array(t.weights) / _peak(t.weights) for k, t in bank.templates.items()},
        {k: float(cls) for k in bank.templates},
        float(bias),
    )


def normalize_params(p: PoolLearnParams) -> PoolLearnParams:
    """L1-normalize every template, moving its scale into the classifier."""
    out = p.copy()
    for k, w in p.weights.items():
        total = math.fsum(np.abs(w).ravel())
        if total > 0:
            out.weights[k] = w / total
            out.cls[k] = p.cls[k] * total
    return out


def pair_offsets(ex: TrainExample, G: int) -> np.ndarray:
    """Flat template indices hit by the subject diracs, one per detection pair."""
    S = template_size(G)
    c = G - 1
    idx = []
    for ref in ex.scene.of_category(ex.triplet.reference):
        rx, ry = center_cell(ref.box, G)
        for subj in ex.scene.of_category(ex.triplet.subject):
            if subj.id == ref.id:
                continue
            sx, sy = center_cell(subj.box, G)
            idx.append((c + sy - ry) * S + (c + sx - rx))
    if not idx:
        raise MissingCategory(ex.scene.id, ex.triplet.subject)
    return np.array(idx, dtype=np.intp)


def _sigmoid(m: float) -> float:
    return math.exp(-np.logaddexp(0.0, -m))


def margins(p: PoolLearnParams, batch: Sequence[TrainExample]) -> np.ndarray:
    out = []
    for ex in batch:
        rel = ex.triplet.preposition
        x = p.weights[rel].ravel()[pair_offsets(ex, p.grid)].mean()
        out.append(p.cls[rel] * x + p.bias)
    return np.array(out)


def accuracy(p: PoolLearnParams, batch: Sequence[TrainExample]) -> float:
    m = margins(p, batch)
    y = np.array([ex.label for ex in batch])
    return float(np.mean((m > 0) == (y == 1)))


def loss_and_grad(p: PoolLearnParams, batch: Sequence[TrainExample], l2: float = 0.0, _offsets=None):
    """Mean logistic loss plus ``l2 * sum of squared template weights``."""
    if not batch:
        raise EmptyBatch("loss_and_grad needs at least one example")
    if l2 < 0:
        raise ValueError("l2 must be non-negative")
    n = len(batch)
    grad = p.zeros_like()
    losses = []
    for i, ex in enumerate(batch):
        rel = ex.triplet.preposition
        idx = _offsets[i] if _offsets is not None else pair_offsets(ex, p.grid)
        w = p.weights[rel].ravel()
        x = w[idx].mean()
        c = p.cls[rel]
        m = c * x + p.bias
        losses.append(float(np.logaddexp(0.0, m)) - ex.label * m)
        r = (_sigmoid(m) - ex.label) / n
        grad.bias += r
        grad.cls[rel] += r * x
        np.add.at(grad.weights[rel].ravel(), idx, r * c / len(idx))
    loss = math.fsum(losses) / n
    if l2:
        for k, w in p.weights.items():
            loss += l2 * float(np.sum(w * w))
            grad.weights[k] += 2.0 * l2 * w
    return loss, grad


@dataclass(frozen=True)
class PoolHyper:
    lr: float = 0.1
    epochs: int = 500
    l2: float = 1e-4
    seed: int = 0
    cls_init: float = 1.0
    bias_init: float = 0.0


def train_pooling(data: Sequence[TrainExample], init: TemplateBank, hyper: PoolHyper = PoolHyper()) -> PoolLearnParams:
    """Full-batch gradient descent; returns normalized params with the loss curve.

    There is no sampling anywhere, so ``hyper.seed`` only labels the run.
    """
    if not data:
        raise EmptyBatch("train_pooling needs data")
    p = init_params(init, hyper.cls_init, hyper.bias_init)
    offsets = [pair_offsets(ex, p.grid) for ex in data]
    with np.errstate(over="ignore", invalid="ignore"):
        return _descend(p, data, offsets, hyper)


def _descend(p: PoolLearnParams, data, offsets, hyper: PoolHyper) -> PoolLearnParams:
    history = []
    for _ in range(hyper.epochs):
        loss, grad = loss_and_grad(p, data, hyper.l2, _offsets=offsets)
        if not math.isfinite(loss):
            raise DivergenceError(f"loss became {loss} after {len(history)} epochs")
        history.append(loss)
        for k in p.weights:
            p.weights[k] -= hyper.lr * grad.weights[k]
            p.cls[k] -= hyper.lr * grad.cls[k]
        p.bias -= hyper.lr * grad.bias
    final, _ = loss_and_grad(p, data, hyper.l2, _offsets=offsets)
    if not math.isfinite(final):
        raise DivergenceError(f"loss became {final} at the end of training")
    history.append(final)
    out = normalize_params(p)
    out.losses = tuple(history)
    return out


def build_examples(
    corpus: Corpus, queries: Iterable[StructuredQuery], annotations: Iterable[Relevance]
) -> list[TrainExample]:
    """One example per (query triplet, scene holding both categories)."""
    relevant = {(a.query, a.scene) for a in annotations if a.relevant}
    out = []
    for q in queries:
        for trip in q.triplets:
            for scene in corpus.scenes:
                refs = scene.of_category(trip.reference)
                subs = scene.of_category(trip.subject)
                if any(r.id != s.id for r in refs for s in subs):
                    out.append(TrainExample(trip, scene, int((q.id, scene.id) in relevant)))
    return out


def save_params(p: PoolLearnParams, path) -> None:
    save_bank(p.bank, path, extra={"bias": p.bias, "cls": dict(p.cls)})


def load_params(path) -> PoolLearnParams:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    bank = bank_from_json(data)
    cls = {k: float(data.get("cls", {}).get(k, 1.0)) for k in bank.templates}
    return PoolLearnParams(bank.grid, {k: np.array(t.weights) for k, t in bank.templates.items()}, cls,
                           float(data.get("bias", 0.0)))
