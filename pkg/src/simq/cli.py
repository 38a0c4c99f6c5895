"""Single entry point: `simq <subcommand>`.

Exit codes: 0 success, 1 usage error, 2 data/model error. Set SIMQ_LOG to
error/info/debug to control logging; --quiet suppresses everything except
results and errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__, corpus as corpus_mod, datagen, embed, encoder, evaluation, index as index_mod, pipeline
from .errors import SimqError
from .text import load_entities, load_synonyms, load_vocab, save_vocab, build_vocab, tokenize_corpus

log = logging.getLogger("simq")


class _Parser(argparse.ArgumentParser):
    # spec's exit-code contract: usage errors exit 1, not argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _setup_logging(quiet: bool) -> None:
    level_name = os.environ.get("SIMQ_LOG", "info").lower()
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        level_name, logging.INFO
    )
    if quiet:
        level = logging.ERROR
    logging.basicConfig(
        level=level, format="%(asctime)s %(name)s %(message)s", datefmt="%H:%M:%S"
    )


def _add_tokenizer_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tokenizer", choices=["whitespace", "dictionary"], default=None,
                   help="token mode; defaults to dictionary when --entities is given")
    p.add_argument("--entities", default=None, help="entity dictionary file")


def _tokenizer_setup(args) -> tuple[str, object | None]:
    entities = load_entities(args.entities) if args.entities else None
    mode = args.tokenizer or ("dictionary" if entities else "whitespace")
    if mode == "dictionary" and entities is None:
        raise SimqError("--tokenizer dictionary requires --entities")
    return mode, entities


def _load_tokenized_corpus(path: str, args) -> tuple[corpus_mod.Corpus, str, object | None]:
    mode, entities = _tokenizer_setup(args)
    c = corpus_mod.ingest(path)
    tokenize_corpus(c, mode, entities)
    return c, mode, entities


def _stage(name: str):
    class Timer:
        def __enter__(self):
            self.start = time.perf_counter()
            return self

        def __exit__(self, *exc):
            if exc[0] is None:
                log.info("stage=%s elapsed=%.2fs", name, time.perf_counter() - self.start)

    return Timer()


def _cmd_ingest(args) -> int:
    with _stage("ingest"):
        c = corpus_mod.ingest(args.infile)
        corpus_mod.write(c, args.out)
    rep = c.report
    print(f"ingested {rep.accepted} questions ({rep.rejected} rejected) -> {args.out}")
    return 0


def _cmd_synth_corpus(args) -> int:
    with _stage("synth-corpus"):
        c = corpus_mod.synth_corpus(args.n, args.seed, args.templates)
        corpus_mod.write(c, args.out)
    print(f"generated {len(c)} questions -> {args.out}")
    return 0


def _cmd_build_vocab(args) -> int:
    with _stage("build-vocab"):
        c, _, _ = _load_tokenized_corpus(args.corpus, args)
        vocab = build_vocab(c, args.min_count)
        save_vocab(vocab, args.out)
    print(f"vocabulary of {len(vocab)} tokens (min_count={args.min_count}) -> {args.out}")
    return 0


def _cmd_train_embeddings(args) -> int:
    with _stage("train-embeddings"):
        c, _, _ = _load_tokenized_corpus(args.corpus, args)
        vocab = load_vocab(args.vocab)
        table = embed.train_skipgram(
            c, vocab, dim=args.dim, window=args.window, negatives=args.negatives,
            epochs=args.epochs, lr=args.lr, seed=args.seed, subsample=args.subsample,
        )
        embed.save_embeddings(table, args.out)
    print(f"trained {len(table)} x {table.dim} embeddings -> {args.out}")
    return 0


def _cmd_generate_pairs(args) -> int:
    with _stage("generate-pairs"):
        c, _, entities = _load_tokenized_corpus(args.corpus, args)
        if entities is None:
            raise SimqError("generate-pairs requires --entities")
        synonyms = load_synonyms(args.synonyms)
        cfg = datagen.GenConfig(
            replace_prob=args.replace_prob, drop_prob=args.drop_prob,
            negatives_per_question=args.negatives, seed=args.seed,
        )
        pairs = datagen.generate(c, args.anchors, synonyms, entities, cfg)
        datagen.write_pairs(pairs, args.out)
    print(f"generated {len(pairs)} pairs from {args.anchors} anchors -> {args.out}")
    return 0


def _cmd_train_encoder(args) -> int:
    with _stage("train-encoder"):
        pairs = datagen.read_pairs(args.pairs)
        table = embed.load_embeddings(args.emb)
        config = encoder.TrainConfig(
            hidden_dim=args.hidden, epochs=args.epochs, lr=args.lr,
            batch_size=args.batch_size, seed=args.seed,
            train_embeddings=args.train_embeddings, max_len=args.max_len,
        )
        result = encoder.train(pairs, table, config)
        encoder.save_params(result.params, args.out)
        if args.train_embeddings:
            if not args.emb_out:
                raise SimqError("--train-embeddings requires --emb-out")
            embed.save_embeddings(result.table, args.emb_out)
    first = result.epoch_losses[0] if result.epoch_losses else float("nan")
    last = result.epoch_losses[-1] if result.epoch_losses else float("nan")
    print(
        f"trained encoder ({args.hidden} hidden units, {args.epochs} epochs, "
        f"loss {first:.4f} -> {last:.4f}) -> {args.out}"
    )
    return 0


def _cmd_index(args) -> int:
    with _stage("index"):
        c, _, entities = _load_tokenized_corpus(args.corpus, args)
        if entities is None:
            raise SimqError("index requires --entities")
        rules = index_mod.load_rules(args.rules)
        idx = index_mod.build_index(c, entities, rules)
        index_mod.save_index(idx, args.out)
    print(f"indexed {len(idx)} postings -> {args.out}")
    return 0


def _cmd_precompute(args) -> int:
    with _stage("precompute"):
        engine_dir = Path(args.engine)
        engine_dir.mkdir(parents=True, exist_ok=True)
        mode, entities = _tokenizer_setup(args)
        if entities is None:
            raise SimqError("precompute requires --entities")
        c = corpus_mod.ingest(args.corpus)
        tokenize_corpus(c, mode, entities)
        table = embed.load_embeddings(args.emb)
        params = encoder.load_params(args.model)
        vectors = pipeline.precompute_vectors(c, table, params, args.max_len)
        vectors_path = engine_dir / "vectors.bin"
        pipeline.save_vectors(vectors, vectors_path)

        def relativize(p: str) -> str:
            p = Path(p).resolve()
            try:
                return str(p.relative_to(engine_dir.resolve()))
            except ValueError:
                return str(p)

        paths = {
            "corpus": relativize(args.corpus),
            "embeddings": relativize(args.emb),
            "encoder": relativize(args.model),
            "index": relativize(args.index),
            "rules": relativize(args.rules),
            "entities": relativize(args.entities),
            "vectors": "vectors.bin",
        }
        if args.vocab:
            paths["vocab"] = relativize(args.vocab)
        pipeline.write_manifest(
            engine_dir,
            paths,
            dims={"embedding": table.dim, "hidden": params.hidden_dim},
            config={
                "tokenizer": mode,
                "max_len": args.max_len,
                "max_candidates": args.max_candidates,
            },
        )
    print(f"cached {len(vectors)} question vectors; engine manifest -> {engine_dir}")
    return 0


def _cmd_query(args) -> int:
    engine = pipeline.load_engine(args.engine)
    results = pipeline.query(
        args.text, args.k, args.threshold, engine,
        category=args.category, intention=args.intention, use_cosine=args.cosine,
    )
    if args.format == "jsonl":
        for r in results:
            rec = {
                "rank": r.rank, "score": r.score, "id": r.question_id,
                "text": engine.corpus.get(r.question_id).text,
            }
            print(json.dumps(rec, sort_keys=True, ensure_ascii=False))
    else:
        for r in results:
            text = engine.corpus.get(r.question_id).text
            print(f"{r.rank}\t{r.score:.4f}\t{r.question_id}\t{text}")
    if not results:
        log.info("no similar questions found")
    return 0


def _cmd_eval(args) -> int:
    labels = evaluation.load_labels(args.labels)
    results: dict[int, list[pipeline.RankedResult]] = {}
    with Path(args.results).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            results.setdefault(int(obj["query_id"]), []).append(
                pipeline.RankedResult(
                    question_id=int(obj["candidate_id"]),
                    score=float(obj["score"]),
                    rank=int(obj["rank"]),
                )
            )
    for ranked in results.values():
        ranked.sort(key=lambda r: r.rank)

    prec = evaluation.precision(labels, results)
    print(f"precision (majority vote): {prec:.4f}")

    hist = evaluation.label_histogram(labels)
    print("histogram of % similar labels per returned pair:")
    peak = max(hist) or 1
    for i, count in enumerate(hist):
        lo, hi = i * 10, (i + 1) * 10
        bar = "#" * round(40 * count / peak)
        print(f"  [{lo:3d},{hi:3d}{']' if hi == 100 else ')'} {count:6d} {bar}")
    if args.hist_out:
        with Path(args.hist_out).open("w", encoding="utf-8") as fh:
            for i, count in enumerate(hist):
                fh.write(f"{i * 10}\t{(i + 1) * 10}\t{count}\n")

    taus, rhos = [], []
    print("per-query rank correlation (system order vs label order):")
    for query_id in sorted(results):
        ranked = sorted(results[query_id], key=lambda r: r.rank)
        if len(ranked) < 2:
            continue
        candidate_ids = [r.question_id for r in ranked]
        if any((query_id, cid) not in labels.labels for cid in candidate_ids):
            continue
        system_ranks = list(range(1, len(ranked) + 1))
        # ground truth: descending % similar, percentage ties broken by id
        fractions = {cid: labels.positive_fraction(query_id, cid) for cid in candidate_ids}
        by_truth = sorted(candidate_ids, key=lambda cid: (-fractions[cid], cid))
        tied = len(set(fractions.values())) < len(candidate_ids)
        truth_rank = evaluation.ranks_from_order(by_truth)
        truth_ranks = [truth_rank[cid] for cid in candidate_ids]
        tau = evaluation.kendall_tau(system_ranks, truth_ranks)
        rho = evaluation.spearman_rho(system_ranks, truth_ranks)
        taus.append(tau)
        rhos.append(rho)
        flag = " (label ties broken by id)" if tied else ""
        print(f"  query {query_id}: tau={tau:.4f} rho={rho:.4f}{flag}")
    if taus:
        for name, vals in (("kendall", taus), ("spearman", rhos)):
            s = evaluation.summarize(vals)
            print(
                f"{name}: min={s['min']:.4f} q1={s['q1']:.4f} median={s['median']:.4f} "
                f"q3={s['q3']:.4f} max={s['max']:.4f}"
            )
    return 0


def _cmd_probe(args) -> int:
    engine = pipeline.load_engine(args.engine)
    q = engine.corpus.get(args.id) if args.id in engine.corpus.questions else None
    if q is None:
        raise SimqError(f"question id {args.id} not found in engine corpus")
    substitutions = []
    for sub in args.sub:
        pos, _, token = sub.partition(":")
        try:
            substitutions.append((int(pos), token))
        except ValueError:
            raise SimqError(f"bad --sub value {sub!r}; expected POSITION:TOKEN") from None
    print(f"original: {' '.join(q.tokens)}")
    for r in evaluation.probe_saliency(q, substitutions, engine.table, engine.params):
        print(f"{r.score:.4f}\t{r.text}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="simq", description=__doc__)
    parser.add_argument("--version", action="version", version=f"simq {__version__}")
    parser.add_argument("--quiet", action="store_true", help="only errors and results")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")

    p = sub.add_parser("ingest", help="validate and normalize a corpus file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("synth-corpus", help="generate a synthetic corpus from templates")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--templates", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth_corpus)

    p = sub.add_parser("build-vocab", help="build a frequency-thresholded vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--min-count", type=int, default=5)
    p.add_argument("--out", required=True)
    _add_tokenizer_flags(p)
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("train-embeddings", help="train skip-gram word embeddings")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--dim", type=int, default=embed.DEFAULT_DIM)
    p.add_argument("--window", type=int, default=embed.DEFAULT_WINDOW)
    p.add_argument("--negatives", type=int, default=embed.DEFAULT_NEGATIVES)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=embed.DEFAULT_LR)
    p.add_argument("--subsample", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_tokenizer_flags(p)
    p.set_defaults(func=_cmd_train_embeddings)

    p = sub.add_parser("generate-pairs", help="generate labeled training pairs")
    p.add_argument("--corpus", required=True)
    p.add_argument("--anchors", type=int, required=True)
    p.add_argument("--negatives", type=int, default=datagen.DEFAULT_NEGATIVES)
    p.add_argument("--replace-prob", type=float, default=datagen.DEFAULT_REPLACE_PROB)
    p.add_argument("--drop-prob", type=float, default=datagen.DEFAULT_DROP_PROB)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--synonyms", required=True)
    p.add_argument("--out", required=True)
    _add_tokenizer_flags(p)
    p.set_defaults(func=_cmd_generate_pairs)

    p = sub.add_parser("train-encoder", help="train the LSTM encoder on pairs")
    p.add_argument("--pairs", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--hidden", type=int, default=100)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-len", type=int, default=encoder.DEFAULT_MAX_LEN)
    p.add_argument("--train-embeddings", action="store_true")
    p.add_argument("--emb-out", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_encoder)

    p = sub.add_parser("index", help="build the inverted candidate index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--out", required=True)
    _add_tokenizer_flags(p)
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("precompute", help="cache question vectors and write the engine manifest")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--emb", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--max-len", type=int, default=encoder.DEFAULT_MAX_LEN)
    p.add_argument("--max-candidates", type=int, default=index_mod.DEFAULT_MAX_CANDIDATES)
    p.add_argument("--engine", required=True, help="engine output directory")
    _add_tokenizer_flags(p)
    p.set_defaults(func=_cmd_precompute)

    p = sub.add_parser("query", help="find similar solved questions")
    p.add_argument("--engine", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--k", type=int, default=pipeline.DEFAULT_K)
    p.add_argument("--threshold", type=float, default=pipeline.DEFAULT_THRESHOLD)
    p.add_argument("--category", default=corpus_mod.UNKNOWN)
    p.add_argument("--intention", default=corpus_mod.UNKNOWN)
    p.add_argument("--cosine", action="store_true")
    p.add_argument("--format", choices=["tsv", "jsonl"], default="tsv")
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("eval", help="precision, histogram, and rank correlation report")
    p.add_argument("--engine", default=None, help="unused for metrics; kept for symmetry")
    p.add_argument("--labels", required=True)
    p.add_argument("--results", required=True)
    p.add_argument("--hist-out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("probe", help="salient-word probe on a stored question")
    p.add_argument("--engine", required=True)
    p.add_argument("--id", type=int, required=True)
    p.add_argument("--sub", action="append", required=True, metavar="POSITION:TOKEN")
    p.set_defaults(func=_cmd_probe)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(getattr(args, "quiet", False))
    if not getattr(args, "command", None):
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except SimqError as exc:
        print(f"simq {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"simq {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
