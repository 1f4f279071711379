"""
Rule-based corpus filters: dedup, character length, word-count ratio,
word length and punctuation/digit content.

Each filter returns the rejection reason, or None to accept.
"""
import logging
import unicodedata
from typing import Callable, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, model_validator

from utils.corpus import SentencePair
from utils.report import FilterReport

logger = logging.getLogger(__name__)


class HeuristicConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    min_chars: int = 15
    max_chars: int = 500
    max_length_ratio: float = 2.0
    max_word_len: int = 20
    punct_digit_threshold: float = 0.20

    @model_validator(mode="after")
    def _check_ranges(self) -> "HeuristicConfig":
        if not 0 <= self.min_chars < self.max_chars:
            raise ValueError("need 0 <= min_chars < max_chars")
        if self.max_length_ratio < 1:
            raise ValueError("max_length_ratio must be >= 1")
        if self.max_word_len < 1:
            raise ValueError("max_word_len must be >= 1")
        if not 0 < self.punct_digit_threshold <= 1:
            raise ValueError("punct_digit_threshold must be in (0, 1]")
        return self


def normalize_key(text: str) -> str:
    return " ".join(unicodedata.normalize("NFC", text).split())


# single-side checks

def sentence_length_reason(text: str, cfg: HeuristicConfig) -> Optional[str]:
    if len(text) < cfg.min_chars:
        return "too_short"
    if len(text) > cfg.max_chars:
        return "too_long"
    return None


def sentence_word_length_reason(text: str, cfg: HeuristicConfig) -> Optional[str]:
    if any(len(token) > cfg.max_word_len for token in text.split()):
        return "long_word"
    return None


def sentence_punct_digit_reason(text: str, cfg: HeuristicConfig) -> Optional[str]:
    chars = [c for c in text if not c.isspace()]
    if not chars:
        return None
    categories = [unicodedata.category(c) for c in chars]
    punct = sum(1 for cat in categories if cat.startswith("P")) / len(chars)
    digits = sum(1 for cat in categories if cat == "Nd") / len(chars)
    if punct > cfg.punct_digit_threshold:
        return "punct"
    if digits > cfg.punct_digit_threshold:
        return "digits"
    return None


def check_sentence(text: str, cfg: HeuristicConfig) -> Optional[Tuple[str, str]]:
    """Single-side length, word-length and punct/digit checks; returns (filter, reason)."""
    for name, check in (
        ("length", sentence_length_reason),
        ("word_length", sentence_word_length_reason),
        ("punct_digit", sentence_punct_digit_reason),
    ):
        reason = check(text, cfg)
        if reason:
            return name, reason
    return None


# pair filters

def length_filter(pair: SentencePair, cfg: HeuristicConfig) -> Optional[str]:
    return sentence_length_reason(pair.src.text, cfg) or sentence_length_reason(pair.tgt.text, cfg)


def length_ratio_filter(pair: SentencePair, cfg: HeuristicConfig) -> Optional[str]:
    ws, wt = len(pair.src.text.split()), len(pair.tgt.text.split())
    if ws == 0 or wt == 0:
        return "empty_side"
    if max(ws, wt) / min(ws, wt) > cfg.max_length_ratio:
        return "length_ratio"
    return None


def word_length_filter(pair: SentencePair, cfg: HeuristicConfig) -> Optional[str]:
    return sentence_word_length_reason(pair.src.text, cfg) or sentence_word_length_reason(pair.tgt.text, cfg)


def punct_digit_filter(pair: SentencePair, cfg: HeuristicConfig) -> Optional[str]:
    return sentence_punct_digit_reason(pair.src.text, cfg) or sentence_punct_digit_reason(pair.tgt.text, cfg)


PAIR_FILTERS: Dict[str, Callable[[SentencePair, HeuristicConfig], Optional[str]]] = {
    "length": length_filter,
    "length_ratio": length_ratio_filter,
    "word_length": word_length_filter,
    "punct_digit": punct_digit_filter,
}


def dedup(pairs: List[SentencePair]) -> List[SentencePair]:
    """Keep the first pair of every (normalized src, normalized tgt) key."""
    seen = set()
    kept = []
    for pair in pairs:
        key = (normalize_key(pair.src.text), normalize_key(pair.tgt.text))
        if key in seen:
            continue
        seen.add(key)
        kept.append(pair)
    return kept


def apply_pair_filter(
    pairs: List[SentencePair],
    stage: str,
    check: Callable[[SentencePair], Optional[str]],
    report: FilterReport,
) -> List[SentencePair]:
    """Run one accept/reject check over a corpus, recording rejections under ``stage``."""
    report.start_stage(stage, len(pairs))
    survivors = []
    for pair in pairs:
        reason = check(pair)
        if reason:
            report.record_rejection(pair.id, stage, reason)
        else:
            survivors.append(pair.accept())
    return survivors


def run_heuristics(
    pairs: List[SentencePair], cfg: Optional[HeuristicConfig] = None
) -> Tuple[List[SentencePair], FilterReport]:
    """Dedup, then length, length ratio, word length and punct/digit, in that order."""
    cfg = cfg or HeuristicConfig()
    report = FilterReport()
    live = [pair for pair in pairs if not pair.is_rejected]

    report.start_stage("dedup", len(live))
    kept = dedup(live)
    kept_ids = {pair.id for pair in kept}
    for pair in live:
        if pair.id not in kept_ids:
            report.record_rejection(pair.id, "dedup", "duplicate")

    survivors = kept
    for stage, check in PAIR_FILTERS.items():
        survivors = apply_pair_filter(survivors, stage, lambda p, c=check: c(p, cfg), report)

    logger.info(f"[heuristics] {len(survivors)}/{len(live)} pairs survive")
    return survivors, report
