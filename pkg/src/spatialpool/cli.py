"""Command-line entry point: ``spatialpool <subcommand> ...``.

Exit codes: 0 success, 1 domain error, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import fragments as fe
from . import pool_learn as pl
from .errors import SpatialError
from .metrics import LabeledRanking, summarize
from .query import DEFAULT_LEXICON, parse_query, load_queries, save_queries, validate_query
from .retrieval import CompatibilityWeights, load_weights, rank_scenes, read_rankings, write_rankings
from .scene import DEFAULT_GRID, load_corpus, load_relevance, relevance_record, save_corpus, write_jsonl
from .synth import GenConfig, generate_corpus
from .template import (
    PoolingScheme,
    TemplateBank,
    estimate_templates,
    export_heatmap,
    load_bank,
    save_bank,
    uniform_template,
)

log = logging.getLogger("spatialpool")


def _setup_logging() -> None:
    level = os.environ.get("SPATIAL_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, seed: int, inputs: dict, hyper: dict) -> None:
    manifest = {
        "command": command,
        "seed": seed,
        "inputs": {name: {"path": str(p), "sha256": _sha256(p)} for name, p in inputs.items() if p is not None},
        "hyper": hyper,
    }
    Path(f"{out}.manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _dump_json(data, path) -> None:
    text = json.dumps(data, indent=2, sort_keys=True) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _corpus_with_relevance(args):
    corpus = load_corpus(args.corpus)
    if getattr(args, "relevance", None):
        corpus = corpus.with_annotations(load_relevance(args.relevance))
    return corpus


# ---------------------------------------------------------------- subcommands


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print(f"seed={args.seed}")
    if args.planted:
        cfg = fe.EmbedConfig()
        images, sentences, words = fe.planted_dataset(seed=args.seed, n_images=args.n_images, cfg=cfg)
        write_jsonl(out / "dataset.jsonl", fe.dataset_records(images, sentences, words))
        fe.save_vocab(words, out / "vocab.txt")
        log.info("wrote %d images and %d sentences", len(images), len(sentences))
        return 0
    cfg = GenConfig(
        seed=args.seed,
        n_scenes=args.n_scenes,
        n_queries=args.n_queries,
        tau=args.tau,
        noise=args.noise,
        mirror_x=args.mirror_x,
    )
    corpus, queries, annotations = generate_corpus(cfg)
    save_corpus(corpus, out / "corpus.jsonl", include_annotations=False)
    save_queries(queries, out / "queries.tsv")
    write_jsonl(out / "relevance.jsonl", (relevance_record(a) for a in annotations))
    log.info("wrote %d scenes and %d queries to %s", len(corpus.scenes), len(queries), out)
    return 0


def _positive_pairs(queries, annotations):
    relevant = [(a.query, a.scene) for a in annotations if a.relevant]
    by_id = {q.id: q for q in queries}
    return [(t, sid) for qid, sid in relevant if qid in by_id for t in by_id[qid].triplets]


def cmd_estimate(args) -> int:
    corpus = _corpus_with_relevance(args)
    queries = load_queries(args.queries)
    for q in queries:
        for w in validate_query(q, corpus.vocabulary):
            log.warning("%s: %s", q.id, w)
    bank = estimate_templates(corpus, _positive_pairs(queries, corpus.annotations), G=args.grid)
    save_bank(bank, args.out)
    if args.heatmaps:
        hdir = Path(args.heatmaps)
        hdir.mkdir(parents=True, exist_ok=True)
        for name, t in bank.templates.items():
            export_heatmap(t, hdir / f"{name.replace(' ', '_')}.pgm")
    return 0


def cmd_retrieve(args) -> int:
    corpus = load_corpus(args.corpus)
    queries = load_queries(args.queries) if args.queries else []
    queries += [parse_query(text, DEFAULT_LEXICON, qid=f"adhoc{i}") for i, text in enumerate(args.query or [])]
    if not queries:
        raise SpatialError("no queries given (use --queries or --query)")
    bank = load_bank(args.bank)
    weights = load_weights(args.weights) if args.weights else CompatibilityWeights()
    results = [rank_scenes(q, corpus, weights, bank, bank.grid, jobs=args.jobs) for q in queries]
    write_rankings(results, args.out)
    return 0


def cmd_eval(args) -> int:
    rankings = read_rankings(args.ranking)
    annotations = load_relevance(args.relevance)
    labeled = [LabeledRanking(tuple(r.relevance(annotations)), tuple(r.scene_ids)) for r in rankings]
    _dump_json(summarize(labeled), args.out)
    return 0


def cmd_train_pool(args) -> int:
    print(f"seed={args.seed}")
    corpus = _corpus_with_relevance(args)
    queries = load_queries(args.queries)
    data = pl.build_examples(corpus, queries, corpus.annotations)
    if args.init:
        init = load_bank(args.init)
    else:
        rels = sorted({t.preposition for q in queries for t in q.triplets})
        init = TemplateBank(args.grid, {r: uniform_template(r, args.grid) for r in rels})
    hyper = pl.PoolHyper(lr=args.lr, epochs=args.epochs, l2=args.l2, seed=args.seed)
    params = pl.train_pooling(data, init, hyper)
    pl.save_params(params, args.out)
    log.info("train accuracy %.4f, final loss %.6f", pl.accuracy(params, data), params.losses[-1])
    _write_manifest(Path(args.out), "train-pool", args.seed,
                    {"corpus": args.corpus, "queries": args.queries, "relevance": args.relevance, "init": args.init},
                    asdict(hyper))
    return 0


def _embed_config(args, **dims) -> fe.EmbedConfig:
    return fe.EmbedConfig(grid=args.grid, scheme=PoolingScheme.parse(args.scheme), include_self=args.include_self,
                          **dims)


def cmd_train_embed(args) -> int:
    print(f"seed={args.seed}")
    vocab = fe.load_vocab(args.vocab)
    images, sentences = fe.load_dataset(args.dataset, vocab)
    cfg = _embed_config(args, vocab=len(vocab), feature_dim=len(images[0].fragments[0].feature) if images else 32)
    hyper = fe.EmbedHyper(lr=args.lr, epochs=args.epochs, stage1_epochs=args.stage1_epochs, margin=args.margin,
                          lam_g=args.lam_g, lam_f=args.lam_f, seed=args.seed)
    result = fe.train_embedding(images, sentences, hyper, cfg)
    fe.save_params(result.params, args.out)
    metrics = fe.retrieval_metrics(result.params, images, sentences, cfg)
    _dump_json({"initial_loss": result.initial_loss, "final_loss": result.final_loss, "losses": result.losses,
                "metrics": metrics}, f"{args.out}.log.json")
    _write_manifest(Path(args.out), "train-embed", args.seed, {"dataset": args.dataset, "vocab": args.vocab},
                    {**asdict(hyper), "grid": cfg.grid, "scheme": args.scheme, "include_self": cfg.include_self})
    return 0


def cmd_align(args) -> int:
    vocab = fe.load_vocab(args.vocab)
    images, sentences = fe.load_dataset(args.dataset, vocab)
    params = fe.load_params(args.params)
    cfg = _embed_config(args)
    image = next((im for im in images if im.id == args.image), None)
    sentence = next((s for s in sentences if s.id == args.sentence), None)
    if image is None or sentence is None:
        raise SpatialError(f"unknown image {args.image!r} or sentence {args.sentence!r}")
    bindings = fe.align(params, image, sentence, args.top_k, cfg)
    _dump_json([asdict(b) for b in bindings], args.out)
    return 0


def cmd_export_heatmap(args) -> int:
    bank = load_bank(args.bank)
    out = Path(args.out)
    if args.relation:
        export_heatmap(bank[args.relation], out)
        return 0
    out.mkdir(parents=True, exist_ok=True)
    for name in bank:
        export_heatmap(bank[name], out / f"{name.replace(' ', '_')}.pgm")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spatialpool", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic corpus (or a planted embedding dataset)")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--n-scenes", type=int, default=40)
    g.add_argument("--n-queries", type=int, default=30)
    g.add_argument("--tau", type=float, default=0.15)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--mirror-x", action="store_true")
    g.add_argument("--planted", action="store_true", help="emit dataset.jsonl + vocab.txt for train-embed")
    g.add_argument("--n-images", type=int, default=10)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("estimate", help="estimate templates from positively annotated scenes")
    e.add_argument("--corpus", required=True)
    e.add_argument("--queries", required=True)
    e.add_argument("--relevance")
    e.add_argument("--out", required=True)
    e.add_argument("--heatmaps")
    e.add_argument("--grid", type=int, default=DEFAULT_GRID)
    e.set_defaults(func=cmd_estimate)

    r = sub.add_parser("retrieve", help="rank scenes for structured queries")
    r.add_argument("--corpus", required=True)
    r.add_argument("--queries")
    r.add_argument("--query", action="append", help="ad-hoc query text, e.g. 'lamp above bed'")
    r.add_argument("--bank", required=True)
    r.add_argument("--weights")
    r.add_argument("--out", default="-")
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_retrieve)

    v = sub.add_parser("eval", help="mAP / R@k / mean rank of a ranking CSV")
    v.add_argument("--ranking", required=True)
    v.add_argument("--relevance", required=True)
    v.add_argument("--out")
    v.set_defaults(func=cmd_eval)

    t = sub.add_parser("train-pool", help="learn pooling templates with a logistic classifier")
    t.add_argument("--corpus", required=True)
    t.add_argument("--queries", required=True)
    t.add_argument("--relevance")
    t.add_argument("--init", help="template bank used as initialization (default uniform)")
    t.add_argument("--out", required=True)
    t.add_argument("--grid", type=int, default=DEFAULT_GRID)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--epochs", type=int, default=500)
    t.add_argument("--l2", type=float, default=1e-4)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train_pool)

    for name, func, help_ in (
        ("train-embed", cmd_train_embed, "two-stage training of the fragment embedding"),
        ("align", cmd_align, "top-k fragment bindings for one image/sentence pair"),
    ):
        a = sub.add_parser(name, help=help_)
        a.add_argument("--dataset", required=True)
        a.add_argument("--vocab", required=True)
        a.add_argument("--out", required=name == "train-embed")
        a.add_argument("--grid", type=int, default=DEFAULT_GRID)
        a.add_argument("--scheme", default="2x2+4x4")
        a.add_argument("--include-self", action="store_true")
        a.set_defaults(func=func)
        if name == "train-embed":
            a.add_argument("--lr", type=float, default=0.2)
            a.add_argument("--epochs", type=int, default=300)
            a.add_argument("--stage1-epochs", type=int, default=100)
            a.add_argument("--margin", type=float, default=1.0)
            a.add_argument("--lam-g", type=float, default=1.0)
            a.add_argument("--lam-f", type=float, default=1.0)
            a.add_argument("--seed", type=int, default=0)
        else:
            a.add_argument("--params", required=True)
            a.add_argument("--image", required=True)
            a.add_argument("--sentence", required=True)
            a.add_argument("--top-k", type=int, default=4)

    h = sub.add_parser("export-heatmap", help="write PGM + CSV heatmaps of a template bank")
    h.add_argument("--bank", required=True)
    h.add_argument("--relation")
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_export_heatmap)
    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except OSError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SpatialError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
