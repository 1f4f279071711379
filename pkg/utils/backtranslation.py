"""
Backtranslation: select clean monolingual target-language sentences, translate
them into the source language and push the synthetic pairs through the
filters and the cleaner a second time.

A synthetic pair keeps the monolingual sentence verbatim as ``tgt`` and the
machine translation as ``src``; it is only ever trained generated -> authentic.
"""
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

from pydantic import ValidationError
from tqdm import tqdm

from utils.backends import TranslatorBackend
from utils.corpus import LanguageTag, Sentence, SentencePair
from utils.embeddings import EmbeddingTable
from utils.errors import ConfigError
from utils.heuristics import HeuristicConfig, check_sentence, normalize_key, run_heuristics
from utils.lid import DEFAULT_LID_THRESHOLD, LidBackend, lid_accepts_sentence, lid_filter_corpus, scores_any_text
from utils.margin import DEFAULT_K, DEFAULT_MARGIN_THRESHOLD, filter_by_margin
from utils.report import FilterReport

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 32
DEFAULT_CONCURRENCY = 2
STAGE = "backtranslate"

Cleaner = Callable[[List[SentencePair]], Tuple[List[SentencePair], FilterReport]]


def select_monolingual(
    sentences: Sequence[Sentence],
    heuristic_cfg: Optional[HeuristicConfig] = None,
    lid_backend: Optional[LidBackend] = None,
    lid_threshold: float = DEFAULT_LID_THRESHOLD,
    sample_n: Optional[int] = None,
    seed: int = 0,
) -> Tuple[List[Sentence], FilterReport]:
    """Exact dedup, single-side heuristics, the LID gate, then an optional seeded sample.

    Report rejections are keyed by sentence id.
    """
    cfg = heuristic_cfg or HeuristicConfig()
    report = FilterReport()

    report.start_stage("mono_dedup", len(sentences))
    seen = set()
    kept: List[Sentence] = []
    for sentence in sentences:
        key = normalize_key(sentence.text)
        if key in seen:
            report.record_rejection(sentence.id, "mono_dedup", "duplicate")
            continue
        seen.add(key)
        kept.append(sentence)

    report.start_stage("mono_heuristics", len(kept))
    survivors: List[Sentence] = []
    for sentence in kept:
        failed = check_sentence(sentence.text, cfg)
        if failed:
            report.record_rejection(sentence.id, "mono_heuristics", failed[1])
        else:
            survivors.append(sentence)

    if lid_backend is not None:
        report.start_stage("mono_lid", len(survivors))
        gated = []
        for sentence in survivors:
            _, ok = lid_accepts_sentence(sentence, lid_backend, lid_threshold)
            if ok:
                gated.append(sentence)
            else:
                report.record_rejection(sentence.id, "mono_lid", "lid")
        survivors = gated

    if sample_n is not None and sample_n < len(survivors):
        report.start_stage("mono_sample", len(survivors))
        chosen = set(random.Random(seed).sample(sorted(s.id for s in survivors), sample_n))
        for sentence in survivors:
            if sentence.id not in chosen:
                report.record_rejection(sentence.id, "mono_sample", "not_sampled")
        survivors = [s for s in survivors if s.id in chosen]

    logger.info(f"[{STAGE}] selected {len(survivors)}/{len(sentences)} monolingual sentences")
    return survivors, report


def make_synthetic_pair(mono: Sentence, generated_text: str, src_lang: LanguageTag) -> SentencePair:
    generated = Sentence(id=mono.id, text=generated_text, lang=src_lang, origin=mono.origin, doc_id=mono.doc_id)
    return SentencePair(
        id=mono.id,
        src=generated,
        tgt=mono,
        status="synthetic",
        synthetic_direction=f"{mono.lang.code}-{src_lang.code}",
    )


def backtranslate(
    mono_sentences: Sequence[Sentence],
    translator: TranslatorBackend,
    src_lang: LanguageTag,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    concurrency: int = DEFAULT_CONCURRENCY,
) -> Tuple[List[SentencePair], FilterReport]:
    """Translate monolingual sentences into ``src_lang`` in chunks.

    A failed chunk is skipped and counted; the rest of the run continues.
    Output order is input order.
    """
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    report = FilterReport()
    report.start_stage(STAGE, len(mono_sentences))
    if not mono_sentences:
        return [], report

    langs = {s.lang.code for s in mono_sentences}
    if len(langs) != 1:
        raise ConfigError(f"monolingual sentences mix languages: {sorted(langs)}")
    mono_lang = mono_sentences[0].lang
    if mono_lang.code == src_lang.code:
        raise ConfigError(f"cannot backtranslate {mono_lang.code} into itself")

    chunks = [list(mono_sentences[i:i + chunk_size]) for i in range(0, len(mono_sentences), chunk_size)]

    def translate_chunk(indexed: Tuple[int, List[Sentence]]) -> Tuple[Optional[List[str]], Optional[str]]:
        index, chunk = indexed
        try:
            out = translator.translate([s.text for s in chunk], mono_lang, src_lang)
            if len(out) != len(chunk):
                raise ValueError(f"translator returned {len(out)} texts for {len(chunk)} inputs")
            return out, None
        except Exception as e:
            logger.error(f"[{STAGE}] chunk {index} ({len(chunk)} sentences) failed: {type(e).__name__}: {e}")
            return None, f"chunk {index}: {type(e).__name__}: {e}"

    with ThreadPoolExecutor(max_workers=max(1, concurrency), thread_name_prefix="backtranslate") as executor:
        results = list(tqdm(
            executor.map(translate_chunk, enumerate(chunks)),
            total=len(chunks), desc="backtranslating", unit="chunk", disable=None,
        ))

    pairs: List[SentencePair] = []
    for chunk, (translations, error) in zip(chunks, results):
        if translations is None:
            report.errors.append(error)
            report.bump(STAGE, "failed_chunks")
            report.bump(STAGE, "skipped", len(chunk))
            for sentence in chunk:
                report.record_rejection(sentence.id, STAGE, "translator_failed")
            continue
        for sentence, text in zip(chunk, translations):
            try:
                pairs.append(make_synthetic_pair(sentence, text, src_lang))
            except ValidationError:
                report.bump(STAGE, "skipped")
                report.record_rejection(sentence.id, STAGE, "empty_translation")

    logger.info(
        f"[{STAGE}] {len(pairs)}/{len(mono_sentences)} sentences translated {mono_lang.code}->{src_lang.code}"
    )
    return pairs, report


@dataclass
class SyntheticFilterChain:
    """Second filtering pass for synthetic pairs; margin runs only when both tables are given.

    ``lid_backend`` gates the monolingual (target) side. The generated side is
    gated by ``generated_lid_backend``, or by ``lid_backend`` when that one scores
    text; an id-keyed sidecar built for the monolingual file never scores it.
    """

    heuristics: HeuristicConfig
    lid_backend: Optional[LidBackend] = None
    generated_lid_backend: Optional[LidBackend] = None
    lid_threshold: float = DEFAULT_LID_THRESHOLD
    src_table: Optional[EmbeddingTable] = None
    tgt_table: Optional[EmbeddingTable] = None
    margin_threshold: float = DEFAULT_MARGIN_THRESHOLD
    k: int = DEFAULT_K
    cleaner: Optional[Cleaner] = None


def build_synthetic_corpus(
    synthetic_pairs: List[SentencePair], pipeline: SyntheticFilterChain
) -> Tuple[List[SentencePair], FilterReport]:
    """Run heuristics, LID, optional margin and the cleaner over synthetic pairs.

    Stage names in the returned report carry a ``synthetic:`` prefix.
    """
    for pair in synthetic_pairs:
        if not pair.is_synthetic:
            raise ValueError(f"pair {pair.id} is not synthetic")

    pairs, report = run_heuristics(synthetic_pairs, pipeline.heuristics)
    generated_lid = pipeline.generated_lid_backend
    if generated_lid is None and scores_any_text(pipeline.lid_backend):
        generated_lid = pipeline.lid_backend
    if pipeline.lid_backend is not None or generated_lid is not None:
        pairs, lid_report = lid_filter_corpus(
            pairs,
            generated_lid,
            pipeline.lid_threshold,
            tgt_backend=pipeline.lid_backend,
            check_tgt=pipeline.lid_backend is not None,
        )
        report.merge(lid_report)
    if pipeline.src_table is not None and pipeline.tgt_table is not None:
        pairs, margin_report = filter_by_margin(
            pairs, pipeline.src_table, pipeline.tgt_table, pipeline.margin_threshold, pipeline.k
        )
        report.merge(margin_report)
    if pipeline.cleaner is not None:
        pairs, cleaner_report = pipeline.cleaner(pairs)
        report.merge(cleaner_report)

    logger.info(f"[{STAGE}] {len(pairs)}/{len(synthetic_pairs)} synthetic pairs survive re-filtering")
    return pairs, report.prefixed("synthetic:")


def sentence_stage_counts(*reports: FilterReport) -> FilterReport:
    """Stage counts and errors of sentence-level reports (selection, translation).

    Their rejections are keyed by monolingual sentence id, not pair id, so they
    are left out of a pair-level report.
    """
    counts = FilterReport()
    for report in reports:
        counts.stages.update({stage: c.model_copy(deep=True) for stage, c in report.stages.items()})
        counts.errors.extend(report.errors)
    return counts
