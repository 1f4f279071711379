"""
End-to-end corpus pipeline.

Stages run in a fixed order: mine, heuristics, lid, margin, cleaner,
backtranslation, split, emission. Each corpus stage writes its survivors to
``checkpoints/<NN>-<stage>.jsonl`` plus a ``.report.json``; ``manifest.json``
holds the config fingerprint and completed stages, and a rerun with the same
fingerprint loads those checkpoints instead of recomputing them.
"""
import json
import logging
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Dict, List, Optional, Set, Tuple

from pydantic import BaseModel

from utils.backends import ChatBackend, TranslatorBackend
from utils.backtranslation import (
    SyntheticFilterChain,
    backtranslate,
    build_synthetic_corpus,
    select_monolingual,
    sentence_stage_counts,
)
from utils.cache import ResponseCache
from utils.cleaner import clean_corpus
from utils.config import (
    STAGE_ORDER,
    PipelineConfig,
    make_chat_backend,
    make_lid_backend,
    make_translator_backend,
)
from utils.corpus import (
    SentencePair,
    SplitAssignment,
    read_corpus,
    read_sentences,
    renumber_pairs,
    split_dataset,
    write_corpus,
)
from utils.embeddings import load_embeddings
from utils.errors import ConfigError, StageError
from utils.heuristics import run_heuristics
from utils.lid import LidBackend, lid_filter_corpus, scores_any_text
from utils.margin import filter_by_margin, mine_documents, mine_pairs
from utils.report import FilterReport
from utils.sft import emit_sft, expand_directions
from utils.stats import PipelineStats, stats_report

logger = logging.getLogger(__name__)

CORPUS_STAGES = ("mine", "heuristics", "lid", "margin", "cleaner", "backtranslation")
SYNTHETIC_PREFIX = "synthetic:"


class Manifest(BaseModel):
    fingerprint: str
    completed: List[str] = []


@dataclass
class StageOutcome:
    pairs: List[SentencePair]
    report: FilterReport
    # pairs introduced by the stage (mined or backtranslated), before any filtering
    added: List[SentencePair] = field(default_factory=list)


@dataclass
class PipelineResult:
    corpus: List[SentencePair]
    stats: PipelineStats
    report: FilterReport
    provenance_path: Path
    split: Optional[SplitAssignment] = None


def _next_id(pairs: List[SentencePair]) -> int:
    return max((pair.id for pair in pairs), default=-1) + 1


def _in_order(pairs: List[SentencePair], survivors: List[SentencePair]) -> List[SentencePair]:
    kept = {pair.id: pair for pair in survivors}
    return [kept[pair.id] for pair in pairs if pair.id in kept]


def _text_scoring(backend: Optional[LidBackend]) -> Optional[LidBackend]:
    return backend if scores_any_text(backend) else None


class Pipeline:
    """Runs a ``PipelineConfig``; backends may be injected, otherwise they are built from the config."""

    def __init__(
        self,
        config: PipelineConfig,
        chat_backend: Optional[ChatBackend] = None,
        translator: Optional[TranslatorBackend] = None,
    ):
        self.config = config
        self.registry = config.registry()
        self.output_dir = Path(config.output_dir)
        self.checkpoint_dir = self.output_dir / "checkpoints"
        self._chat_backend = chat_backend
        self._translator = translator
        # every pair that ever entered the pipeline, for provenance and stats
        self.universe: List[SentencePair] = []
        self.mined_ids: Set[int] = set()

    # backends

    def chat_backend(self) -> Optional[ChatBackend]:
        if self._chat_backend is None and self.config.cleaner.backend:
            self._chat_backend = make_chat_backend(self.config.cleaner.backend, self.config.cleaner.record_to)
        return self._chat_backend

    def translator(self) -> TranslatorBackend:
        if self._translator is None:
            self._translator = make_translator_backend(self.config.backtranslation.translator)
        return self._translator

    def cleaner(self) -> Callable:
        cfg = self.config.cleaner
        backend = self.chat_backend()
        if backend is None:
            logger.warning("[cleaner] No cleaner backend configured; uncached batches stay unverified")
        cache = ResponseCache(self.output_dir / "cache" / "cleaner_responses.jsonl") if cfg.use_cache else None
        return partial(
            clean_corpus,
            backend=backend,
            batch_size=cfg.batch_size,
            retries=cfg.retries,
            registry=self.registry,
            concurrency=cfg.concurrency,
            strict=cfg.strict,
            cache=cache,
        )

    # stages

    def stage_mine(self, pairs: List[SentencePair]) -> StageOutcome:
        m = self.config.mining
        srcs = read_sentences(m.src_sentences, m.src_lang, m.origin, self.registry, m.with_doc_ids)
        tgts = read_sentences(m.tgt_sentences, m.tgt_lang, m.origin, self.registry, m.with_doc_ids)
        src_table = load_embeddings(m.src_embeddings, m.src_lang)
        tgt_table = load_embeddings(m.tgt_embeddings, m.tgt_lang)
        mine = mine_documents if m.with_doc_ids else mine_pairs
        mined = mine(srcs, src_table, tgts, tgt_table, m.threshold, m.mutual)
        mined = renumber_pairs(mined, _next_id(self.universe))
        logger.info(f"[mine] {len(mined)} mined pairs join {len(pairs)} input pairs")
        return StageOutcome(pairs=pairs + mined, report=FilterReport(), added=mined)

    def stage_heuristics(self, pairs: List[SentencePair]) -> StageOutcome:
        return StageOutcome(*run_heuristics(pairs, self.config.heuristics))

    def _split_mined(self, pairs: List[SentencePair]) -> Tuple[List[SentencePair], List[SentencePair]]:
        """Input-corpus pairs and mined pairs; their sentence ids index different tables."""
        corpus = [pair for pair in pairs if pair.id not in self.mined_ids]
        mined = [pair for pair in pairs if pair.id in self.mined_ids]
        return corpus, mined

    def stage_lid(self, pairs: List[SentencePair]) -> StageOutcome:
        cfg = self.config.lid
        backend = make_lid_backend(cfg.backend)
        tgt_backend = make_lid_backend(cfg.tgt_backend) if cfg.tgt_backend else None
        corpus, mined = self._split_mined(pairs)
        kept, report = lid_filter_corpus(corpus, backend, cfg.threshold, tgt_backend)
        if not mined:
            return StageOutcome(kept, report)

        m = self.config.mining
        mined_src = make_lid_backend(m.lid_backend) if m.lid_backend else _text_scoring(backend)
        mined_tgt = make_lid_backend(m.tgt_lid_backend) if m.tgt_lid_backend else _text_scoring(tgt_backend or backend)
        if mined_src is None and mined_tgt is None:
            logger.warning(f"[lid] No LID backend fits the {len(mined)} mined pairs; they pass unchecked")
            mined_kept, mined_report = [pair.accept() for pair in mined], FilterReport()
            mined_report.start_stage("lid", len(mined))
            mined_report.bump("lid", "mined_unchecked", len(mined))
        else:
            mined_kept, mined_report = lid_filter_corpus(
                mined, mined_src, cfg.threshold, mined_tgt, check_tgt=mined_tgt is not None
            )
        return StageOutcome(_in_order(pairs, kept + mined_kept), report.accumulate(mined_report))

    def stage_margin(self, pairs: List[SentencePair]) -> StageOutcome:
        cfg = self.config.margin
        src_table = load_embeddings(cfg.src_embeddings)
        tgt_table = load_embeddings(cfg.tgt_embeddings)
        corpus, mined = self._split_mined(pairs)
        kept, report = filter_by_margin(corpus, src_table, tgt_table, cfg.threshold, cfg.k)
        if not mined:
            return StageOutcome(kept, report)

        # mined pairs are scored inside the pools they were mined from
        m = self.config.mining
        mined_kept, mined_report = filter_by_margin(
            mined,
            load_embeddings(m.src_embeddings, m.src_lang),
            load_embeddings(m.tgt_embeddings, m.tgt_lang),
            cfg.threshold,
            cfg.k,
        )
        return StageOutcome(_in_order(pairs, kept + mined_kept), report.accumulate(mined_report))

    def stage_cleaner(self, pairs: List[SentencePair]) -> StageOutcome:
        return StageOutcome(*self.cleaner()(pairs))

    def stage_backtranslation(self, pairs: List[SentencePair]) -> StageOutcome:
        cfg = self.config
        b = cfg.backtranslation
        mono = read_sentences(b.mono, b.mono_lang, b.origin, self.registry)
        lid = make_lid_backend(b.lid_backend) if b.lid_backend else None
        generated_lid = make_lid_backend(b.generated_lid_backend) if b.generated_lid_backend else None
        selected, selection = select_monolingual(mono, cfg.heuristics, lid, cfg.lid.threshold, b.sample_n, cfg.seed)
        synthetic, translation = backtranslate(
            selected, self.translator(), self.registry.tag(b.src_lang), b.chunk_size, b.concurrency
        )
        synthetic = renumber_pairs(synthetic, _next_id(self.universe))

        chain = SyntheticFilterChain(
            heuristics=cfg.heuristics,
            lid_backend=lid,
            generated_lid_backend=generated_lid,
            lid_threshold=cfg.lid.threshold,
        )
        if b.src_embeddings is not None and b.tgt_embeddings is not None:
            chain.src_table = load_embeddings(b.src_embeddings)
            chain.tgt_table = load_embeddings(b.tgt_embeddings)
            chain.margin_threshold = cfg.margin.threshold
            chain.k = cfg.margin.k
        if b.clean and "cleaner" in cfg.stages:
            chain.cleaner = self.cleaner()
        kept, refilter = build_synthetic_corpus(synthetic, chain)

        report = sentence_stage_counts(selection, translation).merge(refilter)
        return StageOutcome(pairs=pairs + kept, report=report, added=synthetic)

    # checkpoints

    def _paths(self, stage: str) -> Dict[str, Path]:
        stem = f"{STAGE_ORDER.index(stage):02d}-{stage}"
        return {
            "pairs": self.checkpoint_dir / f"{stem}.jsonl",
            "report": self.checkpoint_dir / f"{stem}.report.json",
            "added": self.checkpoint_dir / f"{stem}.added.jsonl",
        }

    def _load_manifest(self) -> Manifest:
        path = self.output_dir / "manifest.json"
        fingerprint = self.config.fingerprint()
        if path.exists():
            manifest = Manifest.model_validate_json(path.read_text(encoding="utf-8"))
            if manifest.fingerprint == fingerprint:
                return manifest
            logger.warning("[pipeline] Config changed since the last run; existing checkpoints are ignored")
        return Manifest(fingerprint=fingerprint)

    def _save_manifest(self, manifest: Manifest) -> None:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        with open(self.output_dir / "manifest.json", "w", encoding="utf-8") as f:
            json.dump(manifest.model_dump(), f, indent=2)
            f.write("\n")

    def _load_checkpoint(self, stage: str) -> Optional[StageOutcome]:
        paths = self._paths(stage)
        if not paths["pairs"].exists() or not paths["report"].exists():
            return None
        added = read_corpus(paths["added"], registry=self.registry) if paths["added"].exists() else []
        return StageOutcome(
            pairs=read_corpus(paths["pairs"], registry=self.registry),
            report=FilterReport.read(paths["report"]),
            added=added,
        )

    def _save_checkpoint(self, stage: str, outcome: StageOutcome) -> None:
        paths = self._paths(stage)
        write_corpus(outcome.pairs, paths["pairs"])
        outcome.report.write(paths["report"])
        if outcome.added:
            write_corpus(outcome.added, paths["added"])

    # run

    def run(self, resume: bool = True) -> PipelineResult:
        cfg = self.config
        self.output_dir.mkdir(parents=True, exist_ok=True)
        manifest = self._load_manifest() if resume else Manifest(fingerprint=cfg.fingerprint())

        inputs = read_corpus(cfg.input.corpus, cfg.input.format, self.registry) if cfg.input.corpus else []
        self.universe = list(inputs)
        pairs = [pair for pair in inputs if not pair.is_rejected]
        report = FilterReport()
        resuming = True

        for stage in cfg.ordered_stages:
            if stage not in CORPUS_STAGES:
                continue
            outcome = self._load_checkpoint(stage) if resuming and stage in manifest.completed else None
            if outcome is not None:
                logger.info(f"[pipeline] {stage}: resumed from checkpoint ({len(outcome.pairs)} pairs)")
            else:
                resuming = False
                manifest.completed = [s for s in manifest.completed if STAGE_ORDER.index(s) < STAGE_ORDER.index(stage)]
                logger.info(f"[pipeline] {stage}: running on {len(pairs)} pairs")
                try:
                    outcome = getattr(self, f"stage_{stage}")(pairs)
                except ConfigError:
                    raise
                except Exception as e:
                    self._save_manifest(manifest)
                    raise StageError(stage, f"{type(e).__name__}: {e}") from e
                self._save_checkpoint(stage, outcome)
                manifest.completed.append(stage)
                self._save_manifest(manifest)
            self.universe.extend(outcome.added)
            if stage == "mine":
                self.mined_ids = {pair.id for pair in outcome.added}
            report.merge(outcome.report)
            pairs = outcome.pairs

        write_corpus(pairs, self.output_dir / "corpus.jsonl")
        provenance_path = self.write_provenance(pairs, report)
        stats = self.write_stats(pairs, report)
        report.write(self.output_dir / "report.json")

        split = None
        if "split" in cfg.stages:
            try:
                split = split_dataset(pairs, cfg.seed, cfg.split.validation_ratio, cfg.split.test_ratio)
            except ConfigError as e:
                raise StageError("split", str(e)) from e
            with open(self.output_dir / "split.json", "w", encoding="utf-8") as f:
                json.dump(split.to_json(), f)
                f.write("\n")
        if "emission" in cfg.stages and split is not None:
            emit_sft(expand_directions(pairs, self.registry), split, self.output_dir / cfg.emission.subdir)

        logger.info(f"[pipeline] done: {len(pairs)}/{len(self.universe)} pairs kept, outputs in {self.output_dir}")
        return PipelineResult(corpus=pairs, stats=stats, report=report, provenance_path=provenance_path, split=split)

    def write_provenance(self, survivors: List[SentencePair], report: FilterReport) -> Path:
        """One line per pair that entered the pipeline: final status, or the rejecting stage and reason."""
        kept = {pair.id: pair for pair in survivors}
        rejected = report.rejected_ids()

        path = self.output_dir / "provenance.jsonl"
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for pair in sorted(self.universe, key=lambda p: p.id):
                entry = {"id": pair.id, "origin": pair.origin, "lang_pair": pair.lang_pair}
                if pair.id in kept:
                    entry["status"] = kept[pair.id].status
                elif pair.is_rejected:
                    entry.update(status="rejected", stage=pair.rejection.stage, reason=pair.rejection.reason)
                elif pair.id in rejected:
                    entry.update(status="rejected", stage=rejected[pair.id].stage, reason=rejected[pair.id].reason)
                else:
                    raise StageError("provenance", f"pair {pair.id} neither survived nor was rejected")
                f.write(json.dumps(entry, ensure_ascii=False) + "\n")
        return path

    def write_stats(self, survivors: List[SentencePair], report: FilterReport) -> PipelineStats:
        stats = stats_report(self.universe, survivors, "dataset")
        stats = stats.model_copy(update={
            "stages": {k: v for k, v in report.stages.items() if not _is_synthetic_chain(k)},
            "synthetic_stages": {k: v for k, v in report.stages.items() if _is_synthetic_chain(k)},
        })
        stats.write(self.output_dir / "stats.json", self.output_dir / "stats.txt")
        return stats


def _is_synthetic_chain(stage: str) -> bool:
    return stage.startswith((SYNTHETIC_PREFIX, "mono_")) or stage == "backtranslate"


def run_pipeline(
    config: PipelineConfig,
    chat_backend: Optional[ChatBackend] = None,
    translator: Optional[TranslatorBackend] = None,
    resume: bool = True,
) -> PipelineResult:
    return Pipeline(config, chat_backend, translator).run(resume)
