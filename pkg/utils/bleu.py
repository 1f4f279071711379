"""
Corpus-level BLEU over token streams.

spBLEU is BLEU over SentencePiece tokens; those arrive as pre-tokenized
sidecar files, one segment per line.
"""
import logging
import math
from collections import Counter
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, field_validator

from utils.errors import CorpusFormatError

logger = logging.getLogger(__name__)

Smoothing = Literal["none", "add1_for_n_ge_2"]
DEFAULT_SMOOTHING: Smoothing = "add1_for_n_ge_2"
MAX_N = 4


class TokenStream(BaseModel):
    model_config = ConfigDict(frozen=True)

    tokens: List[List[str]]
    tokenizer_id: str = "whitespace"

    @field_validator("tokens")
    @classmethod
    def _check_tokens(cls, value: List[List[str]]) -> List[List[str]]:
        for segment in value:
            if any(not token for token in segment):
                raise ValueError("tokens must be non-empty strings")
        return value

    def __len__(self) -> int:
        return len(self.tokens)


class BleuScore(BaseModel):
    model_config = ConfigDict(frozen=True)

    score: float
    precisions: List[float]
    brevity_penalty: float
    hyp_len: int
    ref_len: int

    def to_json(self) -> dict:
        return {
            "score": self.score,
            "precisions": list(self.precisions),
            "bp": self.brevity_penalty,
            "hyp_len": self.hyp_len,
            "ref_len": self.ref_len,
        }


def tokenize_whitespace(texts: Sequence[str]) -> TokenStream:
    return TokenStream(tokens=[text.split() for text in texts], tokenizer_id="whitespace")


def _check_count(path: Path, found: int, expected: Optional[int]) -> None:
    if expected is not None and found != expected:
        raise CorpusFormatError(f"segment count mismatch: {path.name} has {found} segments, expected {expected}")


def load_token_sidecar(path, expected_segments: Optional[int] = None) -> TokenStream:
    """One segment per line, tokens separated by single spaces and kept verbatim."""
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as f:
        segments = [[t for t in line.rstrip("\r\n").split(" ") if t] for line in f]
    _check_count(path, len(segments), expected_segments)
    return TokenStream(tokens=segments, tokenizer_id=f"external:{path.name}")


def load_text_segments(path, expected_segments: Optional[int] = None) -> TokenStream:
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as f:
        texts = [line.rstrip("\r\n") for line in f]
    _check_count(path, len(texts), expected_segments)
    return tokenize_whitespace(texts)


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_stats(hyp: TokenStream, ref: TokenStream, max_n: int = MAX_N) -> Tuple[List[int], List[int], int, int]:
    """Clipped n-gram matches and hypothesis n-gram totals per order, plus lengths."""
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for h, r in zip(hyp.tokens, ref.tokens):
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            h_counts = ngram_counts(h, n)
            r_counts = ngram_counts(r, n)
            matches[n - 1] += sum(min(c, r_counts[g]) for g, c in h_counts.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    return matches, totals, hyp_len, ref_len


def bleu(
    hyp: TokenStream, ref: TokenStream, max_n: int = MAX_N, smoothing: Smoothing = DEFAULT_SMOOTHING
) -> BleuScore:
    if len(hyp) != len(ref):
        raise CorpusFormatError(f"segment count mismatch: {len(hyp)} hypotheses vs {len(ref)} references")
    if len(hyp) == 0:
        raise CorpusFormatError("cannot score zero segments")
    if smoothing not in ("none", "add1_for_n_ge_2"):
        raise ValueError(f"unknown smoothing {smoothing!r}")
    if hyp.tokenizer_id != ref.tokenizer_id:
        logger.warning(f"[bleu] tokenizer mismatch: hyp={hyp.tokenizer_id} ref={ref.tokenizer_id}")

    matches, totals, hyp_len, ref_len = corpus_stats(hyp, ref, max_n)
    if hyp_len == 0:
        return BleuScore(score=0.0, precisions=[0.0] * max_n, brevity_penalty=0.0, hyp_len=0, ref_len=ref_len)

    precisions = []
    for n, (m, t) in enumerate(zip(matches, totals), start=1):
        if smoothing == "add1_for_n_ge_2" and n >= 2 and m == 0:
            m, t = m + 1, t + 1
        precisions.append(m / t if t else 0.0)

    bp = 1.0 if hyp_len >= ref_len else math.exp(1 - ref_len / hyp_len)
    if min(precisions) <= 0:
        score = 0.0
    else:
        score = bp * math.exp(sum(math.log(p) for p in precisions) / max_n) * 100
    return BleuScore(
        score=min(score, 100.0),
        precisions=precisions,
        brevity_penalty=bp,
        hyp_len=hyp_len,
        ref_len=ref_len,
    )
