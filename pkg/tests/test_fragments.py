import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spatialpool import fragments as fe
from spatialpool.errors import DimensionMismatch, EmptyBatch
from spatialpool.scene import Box, write_jsonl
from spatialpool.template import PoolingScheme

from fixtures import TINY_EMBED, embed_fd_error, kink_distance, tiny_embed_problem
from oracles import matvec, spatial_code_oracle

CFG = fe.EmbedConfig(**TINY_EMBED)


def relu(v):
    return np.array([x if x > 0 else 0.0 for x in v])


def random_params(seed):
    p = fe.init_params(CFG, seed)
    rng = np.random.default_rng(seed + 1)
    p.b_R = rng.standard_normal(CFG.hidden)
    p.b_z = rng.standard_normal(CFG.concepts)
    return p


# ---------------------------------------------------------------- single fragments


def test_embed_text_zero_params():
    p = random_params(0)
    p.W_R[:] = 0.0
    p.b_R[:] = 0.0
    assert np.all(fe.embed_text(p, fe.TextFragment("r", 1, 2)) == 0.0)


def test_embed_text_negative_bias_clamps():
    p = random_params(0)
    p.W_R[:] = 0.0
    p.b_R[:] = 0.5
    p.b_R[2] = -0.7
    s = fe.embed_text(p, fe.TextFragment("r", 1, 2))
    assert s[2] == 0.0 and np.all(np.delete(s, 2) == 0.5)


def test_spatio_textual_zero_and_clamp():
    p = random_params(0)
    p.W_z[:] = 0.0
    p.b_z[:] = [-1.0, 2.0]
    assert fe.embed_spatio_textual(p, fe.TextFragment("r", 0, 3)).tolist() == [0.0, 2.0]


def test_word_index_out_of_range():
    with pytest.raises(IndexError):
        fe.embed_text(random_params(0), fe.TextFragment("r", 0, CFG.vocab))


@settings(max_examples=50)
@given(st.integers(0, 2**20), st.integers(0, TINY_EMBED["vocab"] - 1), st.integers(0, TINY_EMBED["vocab"] - 1))
def test_text_embeddings_match_oracle(seed, t1, t2):
    p = random_params(seed)
    frag = fe.TextFragment("r", t1, t2)
    x = list(p.W_e[t1]) + list(p.W_e[t2])
    s_oracle = relu(matvec(p.W_R.tolist(), x) + p.b_R)
    z_oracle = relu(matvec(p.W_z.tolist(), x) + p.b_z)
    s = fe.embed_text(p, frag)
    z = fe.embed_spatio_textual(p, frag)
    assert np.max(np.abs(s - s_oracle)) <= 1e-12 and np.all(s >= 0)
    assert np.max(np.abs(z - z_oracle)) <= 1e-12 and np.all(z >= 0)


def test_embed_visual_cases():
    p = random_params(0)
    zero = fe.VisualFragment(0, np.zeros(CFG.feature_dim))
    assert np.all(fe.embed_visual(p, zero) == 0.0)
    eye = fe.EmbedConfig(**{**TINY_EMBED, "feature_dim": TINY_EMBED["hidden"]})
    q = fe.init_params(eye, 0)
    q.W_m = np.eye(eye.hidden)
    f = np.arange(eye.hidden, dtype=float)
    assert np.array_equal(fe.embed_visual(q, fe.VisualFragment(0, f)), f)
    with pytest.raises(DimensionMismatch):
        fe.embed_visual(p, fe.VisualFragment(0, np.zeros(CFG.feature_dim + 1)))


@settings(max_examples=50)
@given(st.integers(0, 2**20))
def test_embed_visual_matches_oracle(seed):
    p = random_params(seed)
    f = np.random.default_rng(seed).standard_normal(CFG.feature_dim)
    got = fe.embed_visual(p, fe.VisualFragment(0, f))
    assert np.max(np.abs(got - matvec(p.W_m.tolist(), list(f)))) <= 1e-12


def test_spatial_zero_offset_hits_central_regions():
    scheme = PoolingScheme.parse("2x2+4x4")
    box = Box(0.3, 0.3, 0.5, 0.5)
    g = fe.spatial_code(box, box, scheme, 101)
    # the zero offset sits exactly at the middle of the offset grid
    expected = np.zeros(20)
    expected[1 * 2 + 1] = 1.0
    expected[4 + 2 * 4 + 2] = 1.0
    assert np.array_equal(g, expected)
    p = fe.init_params(fe.EmbedConfig(), 0)
    assert np.array_equal(fe.embed_spatial(p, box, box, scheme, 101), p.W_s[:, 3] + p.W_s[:, 14])


def test_spatial_identity_returns_code():
    scheme = PoolingScheme.parse("2x2+4x4")
    p = fe.init_params(fe.EmbedConfig(concepts=20), 0)
    p.W_s = np.eye(20)
    a, b = Box(0.1, 0.1, 0.3, 0.2), Box(0.6, 0.5, 0.9, 0.9)
    assert np.array_equal(fe.embed_spatial(p, a, b, scheme, 101), fe.spatial_code(a, b, scheme, 101))


def test_spatial_scheme_mismatch():
    p = fe.init_params(fe.EmbedConfig(), 0)
    with pytest.raises(DimensionMismatch):
        fe.embed_spatial(p, Box(0, 0, 0.1, 0.1), Box(0.2, 0.2, 0.3, 0.3), PoolingScheme.parse("3x3"))


box_coord = st.floats(0.0, 0.85)


@settings(max_examples=100)
@given(box_coord, box_coord, box_coord, box_coord, st.sampled_from([5, 11, 101]), st.integers(0, 2**20))
def test_embed_spatial_matches_oracle(x0, y0, x1, y1, G, seed):
    scheme = PoolingScheme.parse("2x2+4x4")
    ref, rel = Box(x0, y0, x0 + 0.15, y0 + 0.15), Box(x1, y1, x1 + 0.15, y1 + 0.15)
    code = spatial_code_oracle(ref, rel, scheme.partitions, G)
    assert np.array_equal(fe.spatial_code(ref, rel, scheme, G), code)
    W_s = np.random.default_rng(seed).standard_normal((4, 20))
    p = fe.init_params(fe.EmbedConfig(), 0)
    p.W_s = W_s
    assert np.max(np.abs(fe.embed_spatial(p, ref, rel, scheme, G) - matvec(W_s.tolist(), list(code)))) <= 1e-12


@pytest.mark.parametrize("D", [1, 2, 3, 5])
def test_spatial_fragment_counts(D):
    assert len(fe.spatial_pairs(D, include_self=True)) == D * D
    assert len(fe.spatial_pairs(D)) == D * (D - 1)
    rng = np.random.default_rng(D)
    params, images, sentences, cfg = tiny_embed_problem(rng, n_images=1, frags=D)
    selfcfg = fe.EmbedConfig(**{**cfg.__dict__, "include_self": True})
    assert fe.make_batch(params, images, sentences, selfcfg).Gs.shape[0] == D * D


# ---------------------------------------------------------------- objective


def test_single_matched_pair_has_no_ranking_term():
    rng = np.random.default_rng(0)
    params, images, sentences, cfg = tiny_embed_problem(rng, n_images=1)
    batch = fe.make_batch(params, images, sentences, cfg)
    loss, _ = fe.objective(params, batch, fe.ObjectiveConfig(margin=0.0, lam_f=0.0))
    assert loss == 0.0


def test_objective_empty_batch():
    with pytest.raises(EmptyBatch):
        fe.make_batch(random_params(0), [], [], CFG)


def test_objective_gradient_check():
    rng = np.random.default_rng(123)
    checked = 0
    while checked < 20:
        params, images, sentences, cfg = tiny_embed_problem(rng, sentences_per_image=int(rng.integers(1, 3)))
        batch = fe.make_batch(params, images, sentences, cfg)
        ocfg = fe.ObjectiveConfig(margin=float(rng.uniform(0.1, 2)), lam_g=1.0, lam_f=float(rng.uniform(0.2, 1)),
                                  normalize=bool(rng.integers(2)))
        use_spatial = bool(rng.integers(4))
        if kink_distance(params, batch, ocfg, use_spatial) < 1e-3:
            continue
        assert embed_fd_error(params, batch, ocfg, use_spatial) < 1e-4
        checked += 1


def test_duplicated_sentence_fragments_keep_score():
    rng = np.random.default_rng(1)
    params, images, sentences, cfg = tiny_embed_problem(rng)
    doubled = [fe.SentenceRecord(s.id, s.image, s.fragments + s.fragments) for s in sentences]
    a = fe.similarity(params, fe.make_batch(params, images, sentences, cfg))
    b = fe.similarity(params, fe.make_batch(params, images, doubled, cfg))
    assert np.allclose(a, b, rtol=0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**20))
def test_similarity_ignores_fragment_order(seed):
    rng = np.random.default_rng(seed)
    params, images, sentences, cfg = tiny_embed_problem(rng)
    shuffled_images = [fe.ImageRecord(im.id, tuple(im.fragments[i] for i in rng.permutation(len(im.fragments))))
                       for im in images]
    shuffled_sentences = [fe.SentenceRecord(s.id, s.image, tuple(s.fragments[i] for i in
                                                                 rng.permutation(len(s.fragments))))
                          for s in sentences]
    a = fe.similarity(params, fe.make_batch(params, images, sentences, cfg))
    b = fe.similarity(params, fe.make_batch(params, shuffled_images, shuffled_sentences, cfg))
    assert np.allclose(a, b, rtol=0, atol=1e-12)


# ---------------------------------------------------------------- training


def test_stage_one_only_leaves_spatial_params():
    rng = np.random.default_rng(2)
    params, images, sentences, cfg = tiny_embed_problem(rng)
    out = fe.train_embedding(images, sentences, fe.EmbedHyper(epochs=30, stage1_epochs=30), cfg, init=params)
    for name in fe.SPATIAL + ("W_e",):
        assert np.array_equal(getattr(out.params, name), getattr(params, name)), name
    assert not np.array_equal(out.params.W_m, params.W_m)


def test_word_table_is_frozen():
    rng = np.random.default_rng(3)
    params, images, sentences, cfg = tiny_embed_problem(rng)
    out = fe.train_embedding(images, sentences, fe.EmbedHyper(epochs=20, stage1_epochs=5), cfg, init=params)
    assert np.array_equal(out.params.W_e, params.W_e)
    assert not np.array_equal(out.params.W_s, params.W_s)


def test_planted_recovery_and_reproducibility():
    images, sentences, _ = fe.planted_dataset(seed=0)
    a = fe.train_embedding(images, sentences, fe.EmbedHyper(seed=0))
    b = fe.train_embedding(images, sentences, fe.EmbedHyper(seed=0))
    assert a.final_loss == b.final_loss and a.losses == b.losses
    m = fe.retrieval_metrics(a.params, images, sentences)
    assert m["retrieval_R@1"] >= 0.9 and m["annotation_R@1"] >= 0.9
    assert a.final_loss < 0.2 * a.initial_loss


def test_planted_dataset_shape():
    images, sentences, words = fe.planted_dataset(seed=4)
    assert len(images) == 10 and len(sentences) == 20 and len(words) == 200
    pairs = set()
    for s in sentences:
        rel = [f for f in s.fragments if f.relation not in ("det", "prep")][0]
        pairs.add((s.image, rel.t1, rel.t2))
    assert len({(t1, t2) for _, t1, t2 in pairs}) == 10


# ---------------------------------------------------------------- alignment


def test_align_single_fragment():
    rng = np.random.default_rng(5)
    params, images, sentences, cfg = tiny_embed_problem(rng, n_images=1, frags=1)
    one = fe.SentenceRecord("s", "i0", sentences[0].fragments[:1])
    bindings = fe.align(params, images[0], one, 4, cfg)
    assert len(bindings) == 1 and bindings[0].kind == "visual" and bindings[0].rank == 1


def test_align_scores_and_order():
    rng = np.random.default_rng(6)
    params, images, sentences, cfg = tiny_embed_problem(rng, n_images=1, frags=3)
    image, sentence = images[0], sentences[0]
    bindings = fe.align(params, image, sentence, 50, cfg)
    per_text = 3 + 3 * 2
    assert len(bindings) == per_text * len(sentence.fragments)
    frags = {f.id: f for f in image.fragments}
    for b in bindings:
        tf = sentence.fragments[b.text_index]
        if b.kind == "visual":
            s = relu(matvec(params.W_R.tolist(), list(np.concatenate([params.W_e[tf.t1], params.W_e[tf.t2]])))
                     + params.b_R)
            v = matvec(params.W_m.tolist(), list(frags[b.target].feature))
            assert b.score == pytest.approx(float(np.dot(v, s)), abs=1e-12)
        else:
            i, j = b.target
            z = relu(matvec(params.W_z.tolist(), list(np.concatenate([params.W_e[tf.t1], params.W_e[tf.t2]])))
                     + params.b_z)
            code = spatial_code_oracle(frags[i].box, frags[j].box, cfg.scheme.partitions, cfg.grid)
            p = matvec(params.W_s.tolist(), list(code))
            assert b.score == pytest.approx(float(np.dot(p, z)), abs=1e-12)
    for t in range(len(sentence.fragments)):
        scores = [b.score for b in bindings if b.text_index == t]
        assert scores == sorted(scores, reverse=True)
    top = fe.align(params, image, sentence, 4, cfg)
    assert all(b.rank <= 4 for b in top) and len(top) == 4 * len(sentence.fragments)


# ---------------------------------------------------------------- files


def test_dataset_and_params_round_trip(tmp_path):
    images, sentences, words = fe.planted_dataset(seed=1, n_images=4)
    write_jsonl(tmp_path / "d.jsonl", fe.dataset_records(images, sentences, words))
    fe.save_vocab(words, tmp_path / "v.txt")
    vocab = fe.load_vocab(tmp_path / "v.txt")
    im2, se2 = fe.load_dataset(tmp_path / "d.jsonl", vocab)
    assert [s.fragments for s in se2] == [s.fragments for s in sentences]
    assert all(np.array_equal(a.feature, b.feature) and a.box == b.box
               for x, y in zip(images, im2) for a, b in zip(x.fragments, y.fragments))
    params = fe.init_params(fe.EmbedConfig(), 3)
    fe.save_params(params, tmp_path / "p.json")
    back = fe.load_params(tmp_path / "p.json")
    assert all(np.array_equal(getattr(back, k), getattr(params, k)) for k in ("W_e",) + fe.TRAINABLE)
