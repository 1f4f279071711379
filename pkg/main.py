"""
nusacorpus command line.

Each subcommand runs one stage on files; ``run`` drives the whole pipeline
from a TOML config. Exit codes: 0 success, 1 invalid input or config,
2 stage or backend failure.
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path

from dotenv import load_dotenv
from pydantic import ValidationError

from utils.backtranslation import (
    SyntheticFilterChain,
    backtranslate,
    build_synthetic_corpus,
    select_monolingual,
    sentence_stage_counts,
)
from utils.bleu import DEFAULT_SMOOTHING, bleu, load_text_segments, load_token_sidecar
from utils.cache import ResponseCache, default_cache_path
from utils.cleaner import DEFAULT_BATCH_SIZE, DEFAULT_CONCURRENCY, DEFAULT_RETRIES, clean_corpus
from utils.config import load_config, make_chat_backend, make_lid_backend, make_translator_backend
from utils.corpus import LanguageRegistry, SplitAssignment, read_corpus, read_sentences, split_dataset, write_corpus
from utils.embeddings import load_embeddings
from utils.errors import ConfigError, CorpusFormatError, EmbeddingError, NusaCorpusError, StageError
from utils.heuristics import HeuristicConfig, run_heuristics
from utils.lid import DEFAULT_LID_THRESHOLD, lid_filter_corpus, ngram_backend, read_lid_training
from utils.margin import (
    DEFAULT_K,
    DEFAULT_MARGIN_THRESHOLD,
    DEFAULT_MINE_THRESHOLD,
    filter_by_margin,
    mine_documents,
    mine_pairs,
)
from utils.pipeline import run_pipeline
from utils.report import FilterReport
from utils.sft import emit_sft, expand_directions
from utils.stats import stats_report

logger = logging.getLogger("nusacorpus")

PROBE_PROMPT = "Reply with the single word: ready"


def _finish(pairs, report: FilterReport, args) -> int:
    write_corpus(pairs, args.out)
    if args.report:
        report.write(args.report)
    return 0


def cmd_filter(args) -> int:
    cfg = HeuristicConfig(
        min_chars=args.min_chars,
        max_chars=args.max_chars,
        max_length_ratio=args.max_length_ratio,
        max_word_len=args.max_word_len,
        punct_digit_threshold=args.punct_digit_threshold,
    )
    pairs, report = run_heuristics(read_corpus(args.input, args.format), cfg)
    return _finish(pairs, report, args)


def cmd_lid(args) -> int:
    backend = make_lid_backend(args.backend)
    tgt_backend = make_lid_backend(args.tgt_backend) if args.tgt_backend else None
    pairs, report = lid_filter_corpus(read_corpus(args.input, args.format), backend, args.threshold, tgt_backend)
    return _finish(pairs, report, args)


def cmd_train_lid(args) -> int:
    model = ngram_backend(read_lid_training(args.train), n_max=args.n_max)
    model.save(args.out)
    logger.info(f"Saved n-gram LID model ({', '.join(model.languages)}) to {args.out}")
    return 0


def cmd_margin_filter(args) -> int:
    pairs = read_corpus(args.input, args.format)
    src_table = load_embeddings(args.src_emb)
    tgt_table = load_embeddings(args.tgt_emb)
    pairs, report = filter_by_margin(pairs, src_table, tgt_table, args.threshold, args.k)
    return _finish(pairs, report, args)


def cmd_mine(args) -> int:
    srcs = read_sentences(args.src, args.src_lang, args.origin, with_doc_ids=args.docs)
    tgts = read_sentences(args.tgt, args.tgt_lang, args.origin, with_doc_ids=args.docs)
    src_table = load_embeddings(args.src_emb, args.src_lang)
    tgt_table = load_embeddings(args.tgt_emb, args.tgt_lang)
    mine = mine_documents if args.docs else mine_pairs
    write_corpus(mine(srcs, src_table, tgts, tgt_table, args.threshold, args.mutual), args.out)
    return 0


def cmd_clean(args) -> int:
    record_to = Path(args.record) if args.record else None
    backend = make_chat_backend(args.backend, record_to)
    cache = None if args.no_cache else ResponseCache(args.cache or default_cache_path())
    pairs, report = clean_corpus(
        read_corpus(args.input, args.format),
        backend,
        batch_size=args.batch_size,
        retries=args.retries,
        concurrency=args.concurrency,
        strict=args.strict,
        cache=cache,
    )
    return _finish(pairs, report, args)


def cmd_backtranslate(args) -> int:
    registry = LanguageRegistry()
    mono = read_sentences(args.mono, args.mono_lang, args.origin, registry)
    lid = make_lid_backend(args.lid_backend) if args.lid_backend else None
    generated_lid = make_lid_backend(args.generated_lid_backend) if args.generated_lid_backend else None
    selected, selection = select_monolingual(mono, HeuristicConfig(), lid, args.lid_threshold, args.sample_n, args.seed)
    translator = make_translator_backend(args.translator)
    synthetic, translation = backtranslate(
        selected, translator, registry.tag(args.src_lang), args.chunk_size, args.concurrency
    )

    chain = SyntheticFilterChain(
        heuristics=HeuristicConfig(),
        lid_backend=lid,
        generated_lid_backend=generated_lid,
        lid_threshold=args.lid_threshold,
    )
    if args.cleaner_backend:
        backend = make_chat_backend(args.cleaner_backend)
        chain.cleaner = lambda pairs: clean_corpus(pairs, backend, registry=registry)
    pairs, refilter = build_synthetic_corpus(synthetic, chain)

    if args.report:
        # rejections here are keyed by monolingual sentence id
        sentences = FilterReport().merge(selection).merge(translation)
        sentences.write(Path(args.report).with_suffix(".sentences.json"))
    report = sentence_stage_counts(selection, translation).merge(refilter)
    return _finish(pairs, report, args)


def cmd_split(args) -> int:
    split = split_dataset(read_corpus(args.input, args.format), args.seed, args.validation_ratio, args.test_ratio)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(split.to_json(), f)
        f.write("\n")
    return 0


def cmd_emit_sft(args) -> int:
    pairs = [pair for pair in read_corpus(args.input, args.format) if not pair.is_rejected]
    if args.split:
        with open(args.split, "r", encoding="utf-8") as f:
            split = SplitAssignment.from_json(json.load(f))
    else:
        split = split_dataset(pairs, args.seed)
    emit_sft(expand_directions(pairs), split, args.out)
    return 0


def cmd_eval_bleu(args) -> int:
    load = load_token_sidecar if args.tokenized else load_text_segments
    ref = load(args.ref)
    hyp = load(args.hyp, expected_segments=len(ref))
    score = bleu(hyp, ref, max_n=args.max_n, smoothing=args.smoothing)
    print(json.dumps(score.to_json()))
    return 0


def cmd_stats(args) -> int:
    stats = stats_report(read_corpus(args.before), read_corpus(args.after), args.group_by)
    if args.json:
        stats.write(args.json)
    print(stats.render(), end="")
    return 0


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.output_dir:
        config = config.model_copy(update={"output_dir": Path(args.output_dir)})
    result = run_pipeline(config, resume=not args.fresh)
    print(result.stats.render(), end="")
    return 0


def cmd_check_backend(args) -> int:
    backend = make_chat_backend(args.backend)
    response = backend.complete(PROBE_PROMPT)
    logger.info(f"Backend {args.backend} answered: {response.strip()[:80]!r}")
    print(json.dumps({"backend": args.backend, "ok": True, "response": response.strip()}, ensure_ascii=False))
    return 0


def _corpus_io(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--in", dest="input", required=True, help="input corpus (.jsonl or .tsv)")
    parser.add_argument("--out", required=True, help="output corpus")
    parser.add_argument("--format", choices=["jsonl", "tsv"], help="override the format inferred from the suffix")
    parser.add_argument("--report", help="write the FilterReport JSON here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nusacorpus", description="Parallel corpus filtering and SFT data pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    defaults = HeuristicConfig()

    p = sub.add_parser("filter", help="dedup and rule-based heuristics")
    _corpus_io(p)
    p.add_argument("--min-chars", type=int, default=defaults.min_chars)
    p.add_argument("--max-chars", type=int, default=defaults.max_chars)
    p.add_argument("--max-length-ratio", type=float, default=defaults.max_length_ratio)
    p.add_argument("--max-word-len", type=int, default=defaults.max_word_len)
    p.add_argument("--punct-digit-threshold", type=float, default=defaults.punct_digit_threshold)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("lid", help="language-identification gate")
    _corpus_io(p)
    p.add_argument("--backend", required=True, help="sidecar:<path> or ngram:<path> (source side, or both)")
    p.add_argument("--tgt-backend", help="separate backend for the target side")
    p.add_argument("--threshold", type=float, default=DEFAULT_LID_THRESHOLD)
    p.set_defaults(func=cmd_lid)

    p = sub.add_parser("train-lid", help="train the character n-gram LID model")
    p.add_argument("--train", required=True, help="text<TAB>lang file")
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--n-max", type=int, default=3)
    p.set_defaults(func=cmd_train_lid)

    p = sub.add_parser("margin-filter", help="ratio-margin filter over sentence embeddings")
    _corpus_io(p)
    p.add_argument("--src-emb", required=True)
    p.add_argument("--tgt-emb", required=True)
    p.add_argument("--threshold", type=float, default=DEFAULT_MARGIN_THRESHOLD)
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.set_defaults(func=cmd_margin_filter)

    p = sub.add_parser("mine", help="mine pairs from comparable sentences")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--src-lang", required=True)
    p.add_argument("--tgt-lang", required=True)
    p.add_argument("--src-emb", required=True)
    p.add_argument("--tgt-emb", required=True)
    p.add_argument("--threshold", type=float, default=DEFAULT_MINE_THRESHOLD)
    p.add_argument("--mutual", action="store_true", help="require mutual nearest neighbours")
    p.add_argument("--docs", action="store_true", help="input lines are doc_id<TAB>text; mine per document")
    p.add_argument("--origin", default="mined")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("clean", help="LLM cleaning with batch prompting")
    _corpus_io(p)
    p.add_argument("--backend", required=True, help="http, gemini or replay:<path>")
    p.add_argument("--batch-size", type=int, default=DEFAULT_BATCH_SIZE)
    p.add_argument("--retries", type=int, default=DEFAULT_RETRIES)
    p.add_argument("--concurrency", type=int, default=DEFAULT_CONCURRENCY)
    p.add_argument("--strict", action="store_true", help="reject pairs whose batch never parsed")
    p.add_argument("--cache", help="response cache file (default: $CACHE_DIR/cleaner_responses.jsonl)")
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--record", help="append prompt/response pairs to this replay file")
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("backtranslate", help="build synthetic pairs from monolingual text")
    p.add_argument("--mono", required=True)
    p.add_argument("--mono-lang", required=True)
    p.add_argument("--src-lang", required=True)
    p.add_argument("--translator", required=True, help="http, replay:<path> or chat:<chat backend>")
    p.add_argument("--chunk-size", type=int, default=32)
    p.add_argument("--concurrency", type=int, default=2)
    p.add_argument("--sample-n", type=int)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--lid-backend", help="LID for the monolingual side (selection and re-filtering)")
    p.add_argument("--generated-lid-backend", help="LID for the generated side; sidecars keyed by --mono line number")
    p.add_argument("--lid-threshold", type=float, default=DEFAULT_LID_THRESHOLD)
    p.add_argument("--cleaner-backend", help="clean the synthetic pairs with this chat backend")
    p.add_argument("--origin", default="backtranslation")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_backtranslate)

    p = sub.add_parser("split", help="seeded pair-level train/validation/test split")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", choices=["jsonl", "tsv"])
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--validation-ratio", type=float, default=0.05)
    p.add_argument("--test-ratio", type=float, default=0.05)
    p.add_argument("--out", required=True, help="split JSON path")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("emit-sft", help="write SFT records per split")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", choices=["jsonl", "tsv"])
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--split", help="reuse a split JSON instead of splitting")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_emit_sft)

    p = sub.add_parser("eval-bleu", help="corpus BLEU / spBLEU")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--tokenized", action="store_true", help="inputs are token sidecars (spBLEU)")
    p.add_argument("--smoothing", choices=["none", "add1_for_n_ge_2"], default=DEFAULT_SMOOTHING)
    p.add_argument("--max-n", type=int, default=4)
    p.set_defaults(func=cmd_eval_bleu)

    p = sub.add_parser("stats", help="before/after counts table")
    p.add_argument("--before", required=True)
    p.add_argument("--after", required=True)
    p.add_argument("--group-by", choices=["dataset", "lang_pair"], default="dataset")
    p.add_argument("--json", help="also write the stats JSON here")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("run", help="run the full pipeline from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", help="override output_dir from the config")
    p.add_argument("--fresh", action="store_true", help="ignore existing checkpoints")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check-backend", help="send a probe prompt to a chat backend")
    p.add_argument("--backend", required=True, help="http, gemini or replay:<path>")
    p.set_defaults(func=cmd_check_backend)

    return parser


def main(argv=None) -> int:
    load_dotenv()
    logging.basicConfig(level=os.getenv("LOG_LEVEL", "INFO").upper())
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageError as e:
        logger.error(f"{e} (completed stages are checkpointed)")
        return 2
    except (ConfigError, CorpusFormatError, EmbeddingError, ValidationError) as e:
        logger.error(f"Invalid input: {e}")
        return 1
    except NusaCorpusError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
