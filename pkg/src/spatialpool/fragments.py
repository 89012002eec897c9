"""Image-sentence fragment embeddings extended with spatial fragments.

Fragments and their embeddings:

* textual      s = relu(W_R [W_e t1; W_e t2] + b_R)      (sentence side)
* visual       v = W_m feature                           (image side)
* spatio-text  z = relu(W_z [W_e t1; W_e t2] + b_z)      (sentence side)
* spatial      p = W_s g(dirac of d2 around center of d1) (image side, ordered pairs)

Textual fragments score against visual ones and spatio-textual against
spatial ones, both with inner products.  An image-sentence score averages,
over the sentence fragments, the best-matching image fragment; the two pools
are scored separately and added.

Training minimizes ``lam_g * ranking + lam_f * alignment``:

* ranking: bidirectional hinge ``max(0, margin - S(i, s_i) + S(i, s'))`` and
  ``max(0, margin - S(i, s_i) + S(i', s_i))`` over mismatched images/sentences;
* alignment (multiple-instance): every sentence fragment wants its best
  fragment in the true image above ``margin`` and every fragment of the
  other images below ``-margin``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, DivergenceError, EmptyBatch, ParseError
from .metrics import LabeledRanking, recall_at_k
from .scene import DEFAULT_GRID, Box, Detection, center_cell, dirac_image
from .template import DEFAULT_SCHEME, PoolingScheme, discretize, recenter

TRAINABLE = ("W_R", "b_R", "W_m", "W_z", "b_z", "W_s")
SPATIAL = ("W_z", "b_z", "W_s")


@dataclass(frozen=True)
class TextFragment:
    relation: str
    t1: int
    t2: int


@dataclass(frozen=True, eq=False)
class VisualFragment:
    id: int
    feature: np.ndarray
    box: Box | None = None

    def __post_init__(self):
        f = np.asarray(self.feature, dtype=np.float64)
        if f.ndim != 1 or not np.all(np.isfinite(f)):
            raise ValueError(f"fragment {self.id}: feature must be a finite vector")
        object.__setattr__(self, "feature", f)


@dataclass(frozen=True)
class ImageRecord:
    id: str
    fragments: tuple[VisualFragment, ...]


@dataclass(frozen=True)
class SentenceRecord:
    id: str
    image: str
    fragments: tuple[TextFragment, ...]


@dataclass(frozen=True)
class EmbedConfig:
    vocab: int = 200
    word_dim: int = 16
    hidden: int = 24
    concepts: int = 4
    feature_dim: int = 32
    scheme: PoolingScheme = DEFAULT_SCHEME
    grid: int = DEFAULT_GRID
    include_self: bool = False


@dataclass
class EmbeddingParams:
    W_e: np.ndarray
    W_R: np.ndarray
    b_R: np.ndarray
    W_m: np.ndarray
    W_z: np.ndarray
    b_z: np.ndarray
    W_s: np.ndarray

    def copy(self) -> "EmbeddingParams":
        return EmbeddingParams(**{k: np.array(getattr(self, k)) for k in ("W_e",) + TRAINABLE})

    def zeros_like(self) -> "EmbeddingParams":
        return EmbeddingParams(**{k: np.zeros_like(getattr(self, k)) for k in ("W_e",) + TRAINABLE})

    def to_json(self) -> dict:
        return {k: np.asarray(getattr(self, k)).tolist() for k in ("W_e",) + TRAINABLE}

    @classmethod
    def from_json(cls, data: dict) -> "EmbeddingParams":
        return cls(**{k: np.asarray(data[k], dtype=np.float64) for k in ("W_e",) + TRAINABLE})


def init_params(cfg: EmbedConfig = EmbedConfig(), seed: int = 0) -> EmbeddingParams:
    """Seeded initialization; W_e is unit variance and never trained."""
    rng = np.random.default_rng(seed)
    E2 = 2 * cfg.word_dim
    return EmbeddingParams(
        W_e=rng.standard_normal((cfg.vocab, cfg.word_dim)),
        W_R=rng.standard_normal((cfg.hidden, E2)) / math.sqrt(E2),
        b_R=np.zeros(cfg.hidden),
        W_m=rng.standard_normal((cfg.hidden, cfg.feature_dim)) / math.sqrt(cfg.feature_dim),
        W_z=rng.standard_normal((cfg.concepts, E2)) / math.sqrt(E2),
        b_z=np.zeros(cfg.concepts),
        W_s=rng.standard_normal((cfg.concepts, cfg.scheme.length)),
    )


# ---------------------------------------------------------------- single fragments


def word_pair(params: EmbeddingParams, frag: TextFragment) -> np.ndarray:
    V = params.W_e.shape[0]
    for t in (frag.t1, frag.t2):
        if not 0 <= t < V:
            raise IndexError(f"word index {t} outside vocabulary of {V}")
    return np.concatenate([params.W_e[frag.t1], params.W_e[frag.t2]])


def embed_text(params: EmbeddingParams, frag: TextFragment) -> np.ndarray:
    return np.maximum(0.0, params.W_R @ word_pair(params, frag) + params.b_R)


def embed_spatio_textual(params: EmbeddingParams, frag: TextFragment) -> np.ndarray:
    return np.maximum(0.0, params.W_z @ word_pair(params, frag) + params.b_z)


def embed_visual(params: EmbeddingParams, frag: VisualFragment) -> np.ndarray:
    if frag.feature.shape[0] != params.W_m.shape[1]:
        raise DimensionMismatch(f"feature has {frag.feature.shape[0]} dims, W_m expects {params.W_m.shape[1]}")
    return params.W_m @ frag.feature


def spatial_code(ref: Detection | Box, rel: Detection | Box, scheme: PoolingScheme = DEFAULT_SCHEME,
                 G: int = DEFAULT_GRID) -> np.ndarray:
    """g(u): the related detection's dirac image around the reference center, binned."""
    ref_box = ref.box if isinstance(ref, Detection) else ref
    rel_box = rel.box if isinstance(rel, Detection) else rel
    u = dirac_image(Detection(0, "_", rel_box), G)
    return discretize(recenter(u, center_cell(ref_box, G)), scheme)


def embed_spatial(params: EmbeddingParams, ref, rel, scheme: PoolingScheme = DEFAULT_SCHEME,
                  G: int = DEFAULT_GRID) -> np.ndarray:
    if params.W_s.shape[1] != scheme.length:
        raise DimensionMismatch(f"W_s has {params.W_s.shape[1]} columns, scheme has {scheme.length} regions")
    return params.W_s @ spatial_code(ref, rel, scheme, G)


def spatial_pairs(n: int, include_self: bool = False) -> list[tuple[int, int]]:
    """Ordered (reference, related) index pairs; n*n of them with self-pairs."""
    return [(i, j) for i, j in product(range(n), repeat=2) if include_self or i != j]


# ---------------------------------------------------------------- batched model


@dataclass
class Batch:
    """Images and sentences flattened into fragment matrices.

    ``X`` stacks visual features, ``Gs`` spatial codes, ``Ein`` word-pair
    embeddings; the ``*_img`` arrays give the owning image of every row and
    ``frag_sent`` the owning sentence of every text fragment.
    """

    n_images: int
    n_sentences: int
    X: np.ndarray
    X_img: np.ndarray
    Gs: np.ndarray
    Gs_img: np.ndarray
    Ein: np.ndarray
    frag_sent: np.ndarray
    sent_img: np.ndarray
    image_ids: list[str] = field(default_factory=list)
    sentence_ids: list[str] = field(default_factory=list)

    @property
    def frag_img(self) -> np.ndarray:
        return self.sent_img[self.frag_sent]


def make_batch(params: EmbeddingParams, images: Sequence[ImageRecord], sentences: Sequence[SentenceRecord],
               cfg: EmbedConfig = EmbedConfig()) -> Batch:
    if not images or not sentences:
        raise EmptyBatch("a batch needs images and sentences")
    index = {im.id: k for k, im in enumerate(images)}
    X, X_img, Gs, Gs_img = [], [], [], []
    for k, im in enumerate(images):
        if not im.fragments:
            raise ValueError(f"image {im.id!r} has no fragments")
        for fr in im.fragments:
            X.append(fr.feature)
            X_img.append(k)
        boxes = [fr.box for fr in im.fragments]
        if all(b is not None for b in boxes):
            for i, j in spatial_pairs(len(boxes), cfg.include_self):
                Gs.append(spatial_code(boxes[i], boxes[j], cfg.scheme, cfg.grid))
                Gs_img.append(k)
    Ein, frag_sent, sent_img = [], [], []
    for s, sen in enumerate(sentences):
        if sen.image not in index:
            raise ValueError(f"sentence {sen.id!r} refers to unknown image {sen.image!r}")
        if not sen.fragments:
            raise ValueError(f"sentence {sen.id!r} has no fragments")
        sent_img.append(index[sen.image])
        for fr in sen.fragments:
            Ein.append(word_pair(params, fr))
            frag_sent.append(s)
    P = cfg.scheme.length
    return Batch(
        len(images), len(sentences),
        np.array(X), np.array(X_img, dtype=np.intp),
        np.array(Gs).reshape(-1, P), np.array(Gs_img, dtype=np.intp),
        np.array(Ein), np.array(frag_sent, dtype=np.intp), np.array(sent_img, dtype=np.intp),
        [im.id for im in images], [s.id for s in sentences],
    )


def _segment_max(scores: np.ndarray, rows_img: np.ndarray, n_images: int):
    """Per image, max over its rows for every column; argmax as global row index.

    Images without rows get max 0 and argmax -1.
    """
    n_cols = scores.shape[1]
    best = np.zeros((n_images, n_cols))
    arg = np.full((n_images, n_cols), -1, dtype=np.intp)
    for k in range(n_images):
        rows = np.flatnonzero(rows_img == k)
        if rows.size:
            local = np.argmax(scores[rows], axis=0)
            arg[k] = rows[local]
            best[k] = scores[arg[k], np.arange(n_cols)]
    return best, arg


@dataclass
class Forward:
    V: np.ndarray
    S_pre: np.ndarray
    S: np.ndarray
    A: np.ndarray
    A_best: np.ndarray
    A_arg: np.ndarray
    P: np.ndarray | None = None
    Z_pre: np.ndarray | None = None
    Z: np.ndarray | None = None
    B: np.ndarray | None = None
    B_best: np.ndarray | None = None
    B_arg: np.ndarray | None = None
    sim: np.ndarray | None = None


def _mean_matrix(batch: Batch) -> np.ndarray:
    """(fragments x sentences) averaging matrix."""
    counts = np.bincount(batch.frag_sent, minlength=batch.n_sentences)
    M = np.zeros((len(batch.frag_sent), batch.n_sentences))
    M[np.arange(len(batch.frag_sent)), batch.frag_sent] = 1.0 / counts[batch.frag_sent]
    return M


def forward(params: EmbeddingParams, batch: Batch, use_spatial: bool = True) -> Forward:
    V = batch.X @ params.W_m.T
    S_pre = batch.Ein @ params.W_R.T + params.b_R
    S = np.maximum(0.0, S_pre)
    A = V @ S.T
    A_best, A_arg = _segment_max(A, batch.X_img, batch.n_images)
    M = _mean_matrix(batch)
    out = Forward(V, S_pre, S, A, A_best, A_arg)
    sim = A_best @ M
    if use_spatial and len(batch.Gs):
        P = batch.Gs @ params.W_s.T
        Z_pre = batch.Ein @ params.W_z.T + params.b_z
        Z = np.maximum(0.0, Z_pre)
        B = P @ Z.T
        B_best, B_arg = _segment_max(B, batch.Gs_img, batch.n_images)
        out.P, out.Z_pre, out.Z, out.B, out.B_best, out.B_arg = P, Z_pre, Z, B, B_best, B_arg
        sim = sim + B_best @ M
    out.sim = sim
    return out


def similarity(params: EmbeddingParams, batch: Batch, use_spatial: bool = True) -> np.ndarray:
    """S(image, sentence) for every image and sentence in the batch."""
    return forward(params, batch, use_spatial).sim


@dataclass(frozen=True)
class ObjectiveConfig:
    margin: float = 1.0
    lam_g: float = 1.0
    lam_f: float = 1.0
    normalize: bool = True


def _alignment(scores, best, arg, rows_img, frag_img, margin):
    """MIL alignment loss for one pool; returns (loss, d scores, #hinge terms)."""
    d = np.zeros_like(scores)
    n_frag = scores.shape[1]
    cols = np.arange(n_frag)
    own_arg = arg[frag_img, cols]
    has = own_arg >= 0
    pos = margin - best[frag_img, cols]
    active_pos = has & (pos > 0)
    loss = float(pos[active_pos].sum())
    np.add.at(d, (own_arg[active_pos], cols[active_pos]), -1.0)
    neg = margin + scores
    active_neg = (rows_img[:, None] != frag_img[None, :]) & (neg > 0)
    loss += float(neg[active_neg].sum())
    d += active_neg
    n_terms = int(has.sum()) + int((rows_img[:, None] != frag_img[None, :]).sum())
    return loss, d, n_terms


def objective(params: EmbeddingParams, batch: Batch, cfg: ObjectiveConfig = ObjectiveConfig(),
              use_spatial: bool = True):
    """Loss and gradients (an EmbeddingParams whose W_e entry is zero).

    With ``cfg.normalize`` each of the two terms is divided by its number of
    hinge terms, which keeps the step size independent of the batch size.
    """
    if batch.n_sentences == 0 or batch.n_images == 0:
        raise EmptyBatch("objective needs a non-empty batch")
    fw = forward(params, batch, use_spatial)
    sim = fw.sim
    m = cfg.margin
    n_i, n_s = sim.shape
    s_img = batch.sent_img
    true = sim[s_img, np.arange(n_s)]
    d_sim = np.zeros_like(sim)

    # sentence -> images
    h1 = m - true[None, :] + sim
    act1 = (np.arange(n_i)[:, None] != s_img[None, :]) & (h1 > 0)
    rank_loss = float(h1[act1].sum())
    d_sim += act1
    np.add.at(d_sim, (s_img, np.arange(n_s)), -act1.sum(axis=0))
    # image -> sentences
    h2 = m - true[:, None] + sim[s_img, :]
    act2 = (s_img[None, :] != s_img[:, None]) & (h2 > 0)
    rank_loss += float(h2[act2].sum())
    n_rank = int((np.arange(n_i)[:, None] != s_img[None, :]).sum() + (s_img[None, :] != s_img[:, None]).sum())
    rank_scale = cfg.lam_g / max(n_rank, 1) if cfg.normalize else cfg.lam_g
    rows = np.repeat(s_img, n_s).reshape(n_s, n_s)
    np.add.at(d_sim, (rows[act2], np.tile(np.arange(n_s), (n_s, 1))[act2]), 1.0)
    np.add.at(d_sim, (s_img, np.arange(n_s)), -act2.sum(axis=1))
    d_sim *= rank_scale

    M = _mean_matrix(batch)
    frag_img = batch.frag_img
    n_frag = len(batch.frag_sent)
    cols = np.arange(n_frag)

    align_loss, dA, n_align = _alignment(fw.A, fw.A_best, fw.A_arg, batch.X_img, frag_img, m)
    if fw.B is not None:
        b_loss, dB, n_b = _alignment(fw.B, fw.B_best, fw.B_arg, batch.Gs_img, frag_img, m)
        align_loss += b_loss
        n_align += n_b
    align_scale = cfg.lam_f / max(n_align, 1) if cfg.normalize else cfg.lam_f
    dA *= align_scale
    d_best = d_sim @ M.T
    for k in range(n_i):
        np.add.at(dA, (fw.A_arg[k], cols), d_best[k])

    grad = params.zeros_like()
    dV = dA @ fw.S
    dS = dA.T @ fw.V
    grad.W_m = dV.T @ batch.X
    dS_pre = dS * (fw.S_pre > 0)
    grad.W_R = dS_pre.T @ batch.Ein
    grad.b_R = dS_pre.sum(axis=0)

    if fw.B is not None:
        dB *= align_scale
        for k in range(n_i):
            ok = fw.B_arg[k] >= 0
            np.add.at(dB, (fw.B_arg[k][ok], cols[ok]), d_best[k][ok])
        dP = dB @ fw.Z
        dZ = dB.T @ fw.P
        grad.W_s = dP.T @ batch.Gs
        dZ_pre = dZ * (fw.Z_pre > 0)
        grad.W_z = dZ_pre.T @ batch.Ein
        grad.b_z = dZ_pre.sum(axis=0)

    loss = rank_scale * rank_loss + align_scale * align_loss
    return loss, grad


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class EmbedHyper:
    lr: float = 0.2
    epochs: int = 300
    stage1_epochs: int = 100
    margin: float = 1.0
    lam_g: float = 1.0
    lam_f: float = 1.0
    seed: int = 0
    normalize: bool = True


@dataclass
class TrainedEmbedding:
    params: EmbeddingParams
    losses: list[float]
    initial_loss: float
    final_loss: float


def train_embedding(images: Sequence[ImageRecord], sentences: Sequence[SentenceRecord],
                    hyper: EmbedHyper = EmbedHyper(), cfg: EmbedConfig = EmbedConfig(),
                    init: EmbeddingParams | None = None) -> TrainedEmbedding:
    """Two-stage full-batch descent: textual/visual only, then joint with spatial.

    ``losses`` records the objective actually optimized at every epoch;
    ``initial_loss`` and ``final_loss`` use the full objective.
    """
    if not images or not sentences:
        raise EmptyBatch("train_embedding needs a non-empty dataset")
    params = init.copy() if init is not None else init_params(cfg, hyper.seed)
    batch = make_batch(params, images, sentences, cfg)
    ocfg = ObjectiveConfig(hyper.margin, hyper.lam_g, hyper.lam_f, hyper.normalize)
    initial, _ = objective(params, batch, ocfg, use_spatial=True)
    losses = []
    for epoch in range(hyper.epochs):
        use_spatial = epoch >= hyper.stage1_epochs
        loss, grad = objective(params, batch, ocfg, use_spatial)
        if not math.isfinite(loss):
            raise DivergenceError(f"loss became {loss} at epoch {epoch}")
        losses.append(loss)
        for name in TRAINABLE if use_spatial else tuple(n for n in TRAINABLE if n not in SPATIAL):
            setattr(params, name, getattr(params, name) - hyper.lr * getattr(grad, name))
    final, _ = objective(params, batch, ocfg, use_spatial=True)
    if not math.isfinite(final):
        raise DivergenceError(f"final loss is {final}")
    return TrainedEmbedding(params, losses, initial, final)


def retrieval_metrics(params: EmbeddingParams, images, sentences, cfg: EmbedConfig = EmbedConfig(),
                      ks=(1, 5, 10)) -> dict:
    """Recall@k and mean rank for sentence->image retrieval and image->sentence annotation."""
    batch = make_batch(params, images, sentences, cfg)
    sim = similarity(params, batch)
    retrieval = []
    for s in range(batch.n_sentences):
        order = sorted(range(batch.n_images), key=lambda k: (-sim[k, s], k))
        retrieval.append(LabeledRanking(tuple(k == batch.sent_img[s] for k in order)))
    annotation = []
    for k in range(batch.n_images):
        order = sorted(range(batch.n_sentences), key=lambda s: (-sim[k, s], s))
        annotation.append(LabeledRanking(tuple(batch.sent_img[s] == k for s in order)))
    out = {}
    for name, ranks in (("retrieval", retrieval), ("annotation", annotation)):
        for k in ks:
            out[f"{name}_R@{k}"] = recall_at_k(ranks, k)
        out[f"{name}_mean_r"] = sum(r.first_relevant for r in ranks) / len(ranks)
    return out


# ---------------------------------------------------------------- alignment readout


@dataclass(frozen=True)
class AlignmentBinding:
    text_index: int
    kind: str
    target: int | tuple[int, int]
    score: float
    rank: int


def align(params: EmbeddingParams, image: ImageRecord, sentence: SentenceRecord, top_k: int = 4,
          cfg: EmbedConfig = EmbedConfig()) -> list[AlignmentBinding]:
    """Top-k visual/spatial bindings for every text fragment.

    Ties are broken by kind (visual first) and then fragment id.
    """
    frags = image.fragments
    visual = [(fr.id, embed_visual(params, fr)) for fr in frags]
    spatial = []
    if all(fr.box is not None for fr in frags):
        for i, j in spatial_pairs(len(frags), cfg.include_self):
            spatial.append(((frags[i].id, frags[j].id), embed_spatial(params, frags[i].box, frags[j].box,
                                                                      cfg.scheme, cfg.grid)))
    out = []
    for t, tf in enumerate(sentence.fragments):
        s = embed_text(params, tf)
        z = embed_spatio_textual(params, tf)
        cands = [(float(v @ s), 0, fid, "visual") for fid, v in visual]
        cands += [(float(p @ z), 1, pid, "spatial") for pid, p in spatial]
        cands.sort(key=lambda c: (-c[0], c[1], c[2]))
        for rank, (score, _, target, kind) in enumerate(cands[:top_k], start=1):
            out.append(AlignmentBinding(t, kind, target, score, rank))
    return out


# ---------------------------------------------------------------- files


def load_vocab(path) -> dict[str, int]:
    words = [w.strip() for w in Path(path).read_text(encoding="utf-8").splitlines() if w.strip()]
    if len(set(words)) != len(words):
        raise ParseError(str(path), "duplicate vocabulary entries")
    return {w: i for i, w in enumerate(words)}


def save_vocab(words: Sequence[str], path) -> None:
    Path(path).write_text("\n".join(words) + "\n", encoding="utf-8")


def load_dataset(path, vocab: dict[str, int]):
    images, sentences = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if rec["type"] == "image":
                    frags = tuple(
                        VisualFragment(int(f["id"]), np.asarray(f["feature"], dtype=np.float64),
                                       Box(*f["box"]) if f.get("box") is not None else None)
                        for f in rec["fragments"]
                    )
                    images.append(ImageRecord(str(rec["id"]), frags))
                elif rec["type"] == "sentence":
                    frags = []
                    for rel, w1, w2 in rec["triplets"]:
                        for w in (w1, w2):
                            if w not in vocab:
                                raise ValueError(f"word {w!r} not in vocabulary")
                        frags.append(TextFragment(str(rel), vocab[w1], vocab[w2]))
                    sentences.append(SentenceRecord(str(rec["id"]), str(rec["image"]), tuple(frags)))
                else:
                    raise ValueError(f"unknown record type {rec['type']!r}")
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"line {lineno}", str(exc)) from None
    return images, sentences


def dataset_records(images: Iterable[ImageRecord], sentences: Iterable[SentenceRecord], words: Sequence[str]):
    for im in images:
        yield {
            "type": "image",
            "id": im.id,
            "fragments": [
                {"id": f.id, "box": f.box.as_list() if f.box else None, "feature": f.feature.tolist()}
                for f in im.fragments
            ],
        }
    for s in sentences:
        yield {
            "type": "sentence",
            "id": s.id,
            "image": s.image,
            "triplets": [[f.relation, words[f.t1], words[f.t2]] for f in s.fragments],
        }


def save_params(params: EmbeddingParams, path) -> None:
    Path(path).write_text(json.dumps(params.to_json()) + "\n", encoding="utf-8")


def load_params(path) -> EmbeddingParams:
    return EmbeddingParams.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------- planted toy data

PLANTED_CATEGORIES = ("dog", "cat", "car", "tree", "boy", "ball", "horse", "bird")
PLANTED_RELATIONS = ("above", "below", "left of", "right of")


def planted_dataset(seed: int = 0, n_images: int = 10, cfg: EmbedConfig = EmbedConfig(),
                    sentences_per_image: int = 2, distractors: int = 1, noise: float = 0.1):
    """Toy images, each with a unique category pair in one relation.

    Returns (images, sentences, vocabulary words).  Features are category
    prototypes plus Gaussian noise; sentences name the pair and relation.
    """
    rng = np.random.default_rng(seed)
    rel_words = [r.replace(" ", "_") for r in PLANTED_RELATIONS]
    fillers = [f"w{i:03d}" for i in range(cfg.vocab)]
    words = list(PLANTED_CATEGORIES) + rel_words + ["a", "the"]
    words += fillers[: cfg.vocab - len(words)]
    widx = {w: i for i, w in enumerate(words)}
    protos = rng.standard_normal((len(PLANTED_CATEGORIES), cfg.feature_dim))
    pairs = [(a, b) for a in range(len(PLANTED_CATEGORIES)) for b in range(len(PLANTED_CATEGORIES)) if a != b]
    chosen = rng.choice(len(pairs), size=n_images, replace=False)
    images, sentences = [], []
    offsets = {"above": (0.0, -0.4), "below": (0.0, 0.4), "left of": (-0.4, 0.0), "right of": (0.4, 0.0)}
    for k, pi in enumerate(chosen.tolist()):
        a, b = pairs[pi]
        rel = PLANTED_RELATIONS[k % len(PLANTED_RELATIONS)]
        bx, by = rng.uniform(0.35, 0.65, size=2)
        dx, dy = offsets[rel]
        ax, ay = bx + dx, by + dy
        cats = [a, b]
        centers = [(ax, ay), (bx, by)]
        for _ in range(distractors):
            cats.append(int(rng.integers(len(PLANTED_CATEGORIES))))
            centers.append(tuple(rng.uniform(0.1, 0.9, size=2)))
        frags = []
        for fid, (c, (cx, cy)) in enumerate(zip(cats, centers)):
            half = 0.05
            box = Box(float(np.clip(cx - half, 0, 1 - 2 * half)), float(np.clip(cy - half, 0, 1 - 2 * half)),
                      float(np.clip(cx - half, 0, 1 - 2 * half) + 2 * half),
                      float(np.clip(cy - half, 0, 1 - 2 * half) + 2 * half))
            feat = protos[c] + noise * rng.standard_normal(cfg.feature_dim)
            frags.append(VisualFragment(fid, feat, box))
        img_id = f"img{k:02d}"
        images.append(ImageRecord(img_id, tuple(frags)))
        ca, cb = PLANTED_CATEGORIES[a], PLANTED_CATEGORIES[b]
        rw = rel.replace(" ", "_")
        variants = [
            (TextFragment(rw, widx[ca], widx[cb]),),
            (TextFragment(rw, widx[ca], widx[cb]), TextFragment("prep", widx[rw], widx[cb])),
            (TextFragment("det", widx["the"], widx[ca]), TextFragment(rw, widx[ca], widx[cb])),
        ]
        for j in range(sentences_per_image):
            sentences.append(SentenceRecord(f"{img_id}_s{j}", img_id, variants[j % len(variants)]))
    return images, sentences, words
