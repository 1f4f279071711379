"""
LLM-based cleaning and alignment verification with batch prompting.

Each batch of pairs is rendered into one cleaner prompt; the response holds
one blank-line-separated block per pair: ``False``, or ``True`` followed by
the cleaned source and target lines.
"""
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, model_validator
from tqdm import tqdm

from utils.backends import ChatBackend
from utils.cache import ResponseCache, get_batch_hash
from utils.corpus import LanguageRegistry, SentencePair
from utils.errors import ParseError
from utils.prompts import (
    CLEANER_TEMPLATE,
    CLEANER_TEMPLATE_VERSION,
    DEFAULT_FEW_SHOTS,
    get_answer_block,
    get_cleaner_prompt,
    get_few_shot_section,
    get_pair_block,
)
from utils.report import FilterReport

logger = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 8
DEFAULT_RETRIES = 2
DEFAULT_CONCURRENCY = 4
RETRY_DELAYS = (1.0, 4.0)
STAGE = "cleaner"


class CleanerVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    aligned: bool
    cleaned_src: Optional[str] = None
    cleaned_tgt: Optional[str] = None

    @model_validator(mode="after")
    def _check_texts(self) -> "CleanerVerdict":
        if self.aligned:
            if not (self.cleaned_src and self.cleaned_src.strip() and self.cleaned_tgt and self.cleaned_tgt.strip()):
                raise ValueError("aligned verdicts carry non-empty cleaned texts")
        elif self.cleaned_src is not None or self.cleaned_tgt is not None:
            raise ValueError("misaligned verdicts carry no cleaned texts")
        return self


class FewShotExample(BaseModel):
    model_config = ConfigDict(frozen=True)

    src_lang: str
    tgt_lang: str
    src_text: str
    tgt_text: str
    verdict: CleanerVerdict

    @classmethod
    def from_dict(cls, data: dict) -> "FewShotExample":
        return cls(
            src_lang=data["src_lang"],
            tgt_lang=data["tgt_lang"],
            src_text=data["src_text"],
            tgt_text=data["tgt_text"],
            verdict=CleanerVerdict(
                aligned=data["aligned"],
                cleaned_src=data.get("cleaned_src"),
                cleaned_tgt=data.get("cleaned_tgt"),
            ),
        )


def default_few_shots() -> List[FewShotExample]:
    return [FewShotExample.from_dict(d) for d in DEFAULT_FEW_SHOTS]


def format_verdict(verdict: CleanerVerdict, src_name: str, tgt_name: str) -> str:
    return get_answer_block(verdict.aligned, src_name, verdict.cleaned_src or "", tgt_name, verdict.cleaned_tgt or "")


class CleanerPromptTemplate:
    """Cleaner instructions plus a fixed list of worked examples."""

    def __init__(self, few_shots: Optional[Sequence[FewShotExample]] = None,
                 registry: Optional[LanguageRegistry] = None):
        self.few_shots = list(default_few_shots() if few_shots is None else few_shots)
        self.registry = registry or LanguageRegistry()
        self.few_shot_section = self._render_few_shots()
        self.version = f"{CLEANER_TEMPLATE_VERSION}:{get_batch_hash(CLEANER_TEMPLATE, self.few_shot_section)[:12]}"

    def _render_few_shots(self) -> str:
        name = self.registry.display_name
        pair_blocks = [
            get_pair_block(name(e.src_lang), e.src_text, name(e.tgt_lang), e.tgt_text) for e in self.few_shots
        ]
        answer_blocks = [format_verdict(e.verdict, name(e.src_lang), name(e.tgt_lang)) for e in self.few_shots]
        return get_few_shot_section(pair_blocks, answer_blocks)

    def render_batch(self, batch: Sequence[SentencePair]) -> str:
        name = self.registry.display_name
        return "\n\n".join(
            get_pair_block(name(p.src.lang.code), p.src.text, name(p.tgt.lang.code), p.tgt.text) for p in batch
        )

    def render(self, batch: Sequence[SentencePair], max_batch_size: Optional[int] = None) -> str:
        if not batch:
            raise ValueError("cannot render an empty cleaner batch")
        if max_batch_size is not None and len(batch) > max_batch_size:
            raise ValueError(f"batch of {len(batch)} exceeds batch size {max_batch_size}")
        return get_cleaner_prompt(self.few_shot_section, self.render_batch(batch))

    def cache_key(self, batch: Sequence[SentencePair]) -> str:
        texts = [[p.src.lang.code, p.tgt.lang.code, p.src.text, p.tgt.text] for p in batch]
        return get_batch_hash(self.version, texts)


def render_cleaner_prompt(
    batch: Sequence[SentencePair],
    few_shots: Optional[Sequence[FewShotExample]] = None,
    lang_names: Optional[LanguageRegistry] = None,
    max_batch_size: int = DEFAULT_BATCH_SIZE,
) -> str:
    return CleanerPromptTemplate(few_shots, lang_names).render(batch, max_batch_size)


def _prefix_pattern(lang_names: Iterable[str]) -> re.Pattern:
    names = sorted(set(lang_names), key=len, reverse=True)
    if not names:
        return re.compile(r"(?!x)x")
    return re.compile(r"^(?:%s)\s*:\s*" % "|".join(re.escape(n) for n in names))


def parse_cleaner_response(text: str, batch_size: int, lang_names: Iterable[str]) -> List[CleanerVerdict]:
    prefix = _prefix_pattern(lang_names)
    body = text.replace("\r\n", "\n").strip()
    blocks = [b for b in re.split(r"\n\s*\n", body) if b.strip()] if body else []
    if len(blocks) != batch_size:
        raise ParseError(f"expected {batch_size} blocks, got {len(blocks)}")

    verdicts = []
    for index, block in enumerate(blocks, start=1):
        lines = [line.strip() for line in block.split("\n") if line.strip()]
        head = lines[0].split()[0].strip("*.:,").lower()
        if head == "false":
            verdicts.append(CleanerVerdict(aligned=False))
        elif head == "true":
            if len(lines) != 3:
                raise ParseError(f"block {index}: 'True' must be followed by exactly two sentence lines")
            cleaned = [prefix.sub("", line, count=1).strip() for line in lines[1:]]
            if not all(cleaned):
                raise ParseError(f"block {index}: empty cleaned sentence")
            verdicts.append(CleanerVerdict(aligned=True, cleaned_src=cleaned[0], cleaned_tgt=cleaned[1]))
        else:
            raise ParseError(f"block {index}: expected True or False, got {lines[0]!r}")
    return verdicts


class _BatchOutcome(BaseModel):
    verdicts: Optional[List[CleanerVerdict]] = None
    error: Optional[str] = None
    cache_hit: bool = False
    calls: int = 0
    prompt_chars: int = 0


def _batches(pairs: List[SentencePair], size: int) -> List[List[SentencePair]]:
    return [pairs[i:i + size] for i in range(0, len(pairs), size)]


def clean_corpus(
    pairs: List[SentencePair],
    backend: Optional[ChatBackend],
    batch_size: int = DEFAULT_BATCH_SIZE,
    retries: int = DEFAULT_RETRIES,
    registry: Optional[LanguageRegistry] = None,
    few_shots: Optional[Sequence[FewShotExample]] = None,
    concurrency: int = DEFAULT_CONCURRENCY,
    strict: bool = False,
    cache: Optional[ResponseCache] = None,
    retry_delays: Sequence[float] = RETRY_DELAYS,
    sleep: Callable[[float], None] = time.sleep,
) -> Tuple[List[SentencePair], FilterReport]:
    """Send batches to the cleaner and apply its verdicts in input order.

    Misaligned pairs are rejected. Batches that still fail after ``retries``
    keep their pairs as ``unverified`` (rejected under ``strict``).
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    template = CleanerPromptTemplate(few_shots, registry)
    lang_names = template.registry.names()
    report = FilterReport()
    report.start_stage(STAGE, len(pairs))
    batches = _batches(pairs, batch_size)

    def process(indexed: Tuple[int, List[SentencePair]]) -> _BatchOutcome:
        index, batch = indexed
        key = template.cache_key(batch)
        cached = cache.get(key) if cache is not None else None
        if cached is not None:
            try:
                return _BatchOutcome(verdicts=parse_cleaner_response(cached, len(batch), lang_names), cache_hit=True)
            except ParseError as e:
                logger.warning(f"[{STAGE}] Ignoring unparseable cached response for batch {index}: {e}")

        prompt = template.render(batch, batch_size)
        outcome = _BatchOutcome()
        for attempt in range(retries + 1):
            if backend is None:
                outcome.error = "no cleaner backend configured"
                break
            outcome.calls += 1
            outcome.prompt_chars += len(prompt)
            try:
                response = backend.complete(prompt)
                outcome.verdicts = parse_cleaner_response(response, len(batch), lang_names)
                if cache is not None:
                    cache.put(key, response)
                outcome.error = None
                return outcome
            except Exception as e:
                outcome.error = f"{type(e).__name__}: {e}"
                if attempt < retries:
                    delay = retry_delays[min(attempt, len(retry_delays) - 1)] if retry_delays else 0
                    logger.warning(
                        f"[{STAGE}] batch {index} attempt {attempt + 1}/{retries + 1} failed: {outcome.error}. "
                        f"Retrying in {delay:.1f}s"
                    )
                    sleep(delay)
        logger.error(f"[{STAGE}] batch {index} failed after {retries + 1} attempts: {outcome.error}")
        return outcome

    with ThreadPoolExecutor(max_workers=max(1, concurrency), thread_name_prefix="cleaner") as executor:
        outcomes = list(tqdm(
            executor.map(process, enumerate(batches)),
            total=len(batches), desc="cleaning", unit="batch", disable=None,
        ))

    survivors: List[SentencePair] = []
    for index, (batch, outcome) in enumerate(zip(batches, outcomes)):
        report.bump(STAGE, "backend_calls", outcome.calls)
        report.bump(STAGE, "cache_hits", int(outcome.cache_hit))
        report.bump(STAGE, "prompt_chars", outcome.prompt_chars)
        if outcome.verdicts is None:
            report.errors.append(f"batch {index}: {outcome.error}")
            for pair in batch:
                if strict:
                    report.record_rejection(pair.id, STAGE, "cleaner_unverified")
                else:
                    report.bump(STAGE, "unverified")
                    survivors.append(pair if pair.is_synthetic else pair.with_status("unverified"))
            continue
        for pair, verdict in zip(batch, outcome.verdicts):
            if not verdict.aligned:
                report.record_rejection(pair.id, STAGE, "cleaner_misaligned")
                continue
            report.bump(STAGE, "cleaned")
            cleaned = pair.with_texts(verdict.cleaned_src, verdict.cleaned_tgt)
            survivors.append(cleaned if pair.is_synthetic else cleaned.with_status("cleaned"))

    logger.info(
        f"[{STAGE}] {len(survivors)}/{len(pairs)} pairs kept "
        f"({report.stages[STAGE].extra.get('cleaned', 0):.0f} cleaned, "
        f"{report.stages[STAGE].extra.get('unverified', 0):.0f} unverified)"
    )
    return survivors, report
