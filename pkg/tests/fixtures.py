"""Hand-authored scenes and small random problems shared across test modules."""

import numpy as np

from spatialpool import fragments as fe
from spatialpool.pool_learn import PoolLearnParams, TrainExample
from spatialpool.query import SpatialTriplet
from spatialpool.scene import Box, Corpus, Detection, Scene
from spatialpool.template import PoolingScheme

from oracles import max_relative_error

HAND_GRID = 7
HAND_RELATIONS = ("above", "in front of", "behind", "left of", "right of")


def hand_corpus():
    s1 = Scene("s1", 640, 480, (
        Detection(0, "bed", Box(0.30, 0.50, 0.70, 0.90)),
        Detection(1, "picture", Box(0.35, 0.05, 0.65, 0.30)),
        Detection(2, "chair", Box(0.40, 0.70, 0.60, 0.95), 0.8),
    ))
    s2 = Scene("s2", 640, 480, (
        Detection(0, "lamp", Box(0.05, 0.10, 0.25, 0.35)),
        Detection(1, "lamp", Box(0.75, 0.10, 0.95, 0.30)),
        Detection(2, "table", Box(0.30, 0.55, 0.70, 0.85)),
    ))
    s3 = Scene("s3", 640, 480, (
        Detection(0, "picture", Box(0.10, 0.10, 0.40, 0.40)),
        Detection(1, "bed", Box(0.10, 0.60, 0.60, 0.90)),
        Detection(2, "plant", Box(0.62, 0.20, 0.88, 0.55)),
        Detection(3, "sofa", Box(0.55, 0.45, 0.95, 0.80)),
    ))
    return Corpus((s1, s2, s3))


def hand_pairs():
    return [
        (SpatialTriplet("picture", "above", "bed"), "s1"),
        (SpatialTriplet("chair", "in front of", "bed"), "s1"),
        (SpatialTriplet("lamp", "above", "table"), "s2"),
        (SpatialTriplet("picture", "above", "bed"), "s3"),
        (SpatialTriplet("plant", "behind", "sofa"), "s3"),
        (SpatialTriplet("picture", "left of", "plant"), "s3"),
    ]


def two_pair_corpus():
    """Two scenes, one pair each, subject masks of 4 and 12 cells at G=7.

    Both references sit on the center cell (3, 3), so template offsets equal
    grid cells shifted by (3, 3).
    """
    ref = Box(0.40, 0.40, 0.60, 0.60)
    a = Scene("a", 100, 100, (Detection(0, "ref", ref), Detection(1, "obj", Box(0.05, 0.05, 0.25, 0.25))))
    b = Scene("b", 100, 100, (Detection(0, "ref", ref), Detection(1, "obj", Box(0.60, 0.45, 0.95, 0.95))))
    trip = SpatialTriplet("obj", "near", "ref")
    return Corpus((a, b)), [(trip, "a"), (trip, "b")]


def mirror_corpus(corpus):
    scenes = tuple(
        Scene(s.id, s.width, s.height, tuple(Detection(d.id, d.category, d.box.mirrored_x(), d.score)
                                             for d in s.detections))
        for s in corpus.scenes
    )
    return Corpus(scenes, corpus.annotations, corpus.vocabulary)


SWAP_LR = {"left of": "right of", "right of": "left of"}


def mirror_pairs(pairs):
    return [(SpatialTriplet(t.subject, SWAP_LR.get(t.preposition, t.preposition), t.reference), sid)
            for t, sid in pairs]


# ---------------------------------------------------------------- pooling fixtures


def separable_toy(G=11, n=20, seed=0):
    """Subjects above the reference for y=1, below it for y=0."""
    rng = np.random.default_rng(seed)
    data = []
    for i in range(n):
        bx, by = rng.uniform(0.3, 0.7, size=2)
        y = i % 2
        sy = by - 0.25 if y else by + 0.25
        sx = bx + rng.uniform(-0.1, 0.1)
        scene = Scene(f"s{i}", 1, 1, (
            Detection(0, "bed", Box(bx - 0.05, by - 0.05, bx + 0.05, by + 0.05)),
            Detection(1, "lamp", Box(sx - 0.05, sy - 0.05, sx + 0.05, sy + 0.05)),
        ))
        data.append(TrainExample(SpatialTriplet("lamp", "above", "bed"), scene, y))
    return data


def random_pool_problem(rng, G=5, n=8):
    """Random params and a batch exercising several relations and multi-pair scenes."""
    S = 2 * G - 1
    rels = ("above", "left of")
    params = PoolLearnParams(G, {r: rng.standard_normal((S, S)) for r in rels},
                             {r: float(rng.standard_normal()) for r in rels}, float(rng.standard_normal()))
    batch = []
    for i in range(n):
        dets = []
        for k, cat in enumerate(["bed", "lamp"] + ["lamp", "bed"][: int(rng.integers(0, 3))]):
            x0, y0 = rng.uniform(0, 0.8, size=2)
            dets.append(Detection(k, cat, Box(x0, y0, x0 + 0.2, y0 + 0.2)))
        scene = Scene(f"s{i}", 1, 1, tuple(dets))
        trip = SpatialTriplet("lamp", rels[int(rng.integers(2))], "bed")
        batch.append(TrainExample(trip, scene, int(rng.integers(2))))
    return params, batch


# ---------------------------------------------------------------- embedding fixtures

TINY_EMBED = dict(vocab=12, word_dim=3, hidden=4, concepts=2, feature_dim=5, grid=11)


def tiny_embed_problem(rng, n_images=3, frags=3, sentences_per_image=1):
    """Random tiny dataset; each image has several fragments so the MIL max matters."""
    cfg = fe.EmbedConfig(scheme=PoolingScheme(((2, 2), (3, 1))), **TINY_EMBED)
    images, sentences = [], []
    for k in range(n_images):
        vis = []
        for f in range(frags):
            x0, y0 = rng.uniform(0, 0.8, size=2)
            vis.append(fe.VisualFragment(f, rng.standard_normal(cfg.feature_dim), Box(x0, y0, x0 + 0.2, y0 + 0.2)))
        images.append(fe.ImageRecord(f"i{k}", tuple(vis)))
        for j in range(sentences_per_image):
            n = int(rng.integers(1, 4))
            tf = tuple(fe.TextFragment("r", int(rng.integers(cfg.vocab)), int(rng.integers(cfg.vocab)))
                       for _ in range(n))
            sentences.append(fe.SentenceRecord(f"i{k}s{j}", f"i{k}", tf))
    params = fe.init_params(cfg, int(rng.integers(2**31)))
    params.b_R = 0.3 * rng.standard_normal(cfg.hidden)
    params.b_z = 0.3 * rng.standard_normal(cfg.concepts)
    return params, images, sentences, cfg


def kink_distance(params, batch, ocfg, use_spatial=True):
    """Smallest distance of any rectifier, hinge or max comparison from its switch point."""
    fw = fe.forward(params, batch, use_spatial)
    gaps = [np.abs(fw.S_pre).min()]
    pools = [(fw.A, batch.X_img)]
    if fw.B is not None:
        gaps.append(np.abs(fw.Z_pre).min())
        pools.append((fw.B, batch.Gs_img))
    m = ocfg.margin
    frag_img = batch.frag_img
    for scores, rows_img in pools:
        for k in range(batch.n_images):
            # identical fragments stay tied under any perturbation, so only
            # the gap to the next distinct value is a real switch point
            block = np.unique(scores[rows_img == k], axis=0)
            for col in block.T:
                distinct = np.unique(col)
                if distinct.size > 1:
                    gaps.append(distinct[-1] - distinct[-2])
        own = np.array([scores[rows_img == frag_img[j], j].max() for j in range(scores.shape[1])])
        gaps.append(np.abs(m - own).min())
        neg = (rows_img[:, None] != frag_img[None, :])
        gaps.append(np.abs(m + scores[neg]).min())
    sim = fw.sim
    s_img = batch.sent_img
    true = sim[s_img, np.arange(len(s_img))]
    h1 = m - true[None, :] + sim
    h2 = m - true[:, None] + sim[s_img, :]
    gaps.append(np.abs(h1[np.arange(batch.n_images)[:, None] != s_img[None, :]]).min(initial=np.inf))
    gaps.append(np.abs(h2[s_img[None, :] != s_img[:, None]]).min(initial=np.inf))
    return float(min(gaps))


def embed_fd_error(params, batch, ocfg, use_spatial=True, eps=1e-5):
    """Max relative error of the analytic gradient over every trainable entry."""
    _, grad = fe.objective(params, batch, ocfg, use_spatial)
    names = fe.TRAINABLE if use_spatial else tuple(n for n in fe.TRAINABLE if n not in fe.SPATIAL)
    analytic, numeric = [], []
    for name in names:
        base = getattr(params, name)
        for i in range(base.size):
            vals = []
            for sign in (1, -1):
                p = params.copy()
                arr = getattr(p, name)
                arr.flat[i] += sign * eps
                vals.append(fe.objective(p, batch, ocfg, use_spatial)[0])
            numeric.append((vals[0] - vals[1]) / (2 * eps))
            analytic.append(getattr(grad, name).flat[i])
    return max_relative_error(analytic, numeric)
