"""
Language-identification gating over pluggable scorer backends.

Production scores arrive through sidecar tables produced by an external LID
model; the character n-gram backend keeps everything runnable offline.
"""
import json
import logging
import math
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Protocol, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, field_validator

from utils.corpus import Sentence, SentencePair
from utils.errors import BackendError, ConfigError, CorpusFormatError
from utils.report import FilterReport

logger = logging.getLogger(__name__)

DEFAULT_LID_THRESHOLD = 0.9
MIN_LANGUAGES = 2
MIN_EXAMPLES_PER_LANGUAGE = 50


class LanguageScore(BaseModel):
    model_config = ConfigDict(frozen=True)

    lang: str
    prob: float

    @field_validator("prob")
    @classmethod
    def _check_prob(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"probability {value} outside [0, 1]")
        return value


class LidBackend(Protocol):
    def score(self, sentence: Sentence) -> List[LanguageScore]:
        """Language distribution for a sentence, descending by probability."""
        ...


class SidecarLidBackend:
    """Answers from a precomputed ``sentence_id<TAB>lang<TAB>prob`` table."""

    # rows are addressed by sentence id, so the table only fits the sentences it was built for
    keyed_by_id = True

    def __init__(self, table: Dict[int, LanguageScore], source: str = "<memory>"):
        self._table = dict(table)
        self.source = source

    def score(self, sentence: Sentence) -> List[LanguageScore]:
        try:
            return [self._table[sentence.id]]
        except KeyError:
            raise BackendError(f"no LID score for sentence {sentence.id}") from None

    def __len__(self) -> int:
        return len(self._table)


def sidecar_backend(path) -> SidecarLidBackend:
    path = Path(path)
    table: Dict[int, LanguageScore] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw_line in enumerate(f, start=1):
            line = raw_line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise CorpusFormatError(f"expected 3 fields, got {len(fields)}", line_no)
            try:
                sentence_id = int(fields[0])
                entry = LanguageScore(lang=fields[1], prob=float(fields[2]))
            except ValueError as e:
                raise CorpusFormatError(f"malformed LID record: {e}", line_no) from e
            if sentence_id in table:
                raise CorpusFormatError(f"duplicate sentence id {sentence_id}", line_no)
            table[sentence_id] = entry
    logger.info(f"[lid] Loaded {len(table)} sidecar scores from {path}")
    return SidecarLidBackend(table, source=str(path))


def char_ngrams(text: str, n_max: int = 3) -> Counter:
    padded = f" {' '.join(text.lower().split())} "
    grams: Counter = Counter()
    for n in range(1, n_max + 1):
        for i in range(len(padded) - n + 1):
            grams[padded[i:i + n]] += 1
    return grams


class NgramLidBackend:
    """Multinomial naive Bayes over character 1..3-grams with add-one smoothing."""

    keyed_by_id = False

    def __init__(self, counts: Dict[str, Dict[str, int]], docs: Dict[str, int], n_max: int = 3):
        self.n_max = n_max
        self._counts = {lang: dict(c) for lang, c in counts.items()}
        self._docs = dict(docs)
        self._totals = {lang: sum(c.values()) for lang, c in self._counts.items()}
        vocab = set()
        for c in self._counts.values():
            vocab.update(c)
        self._vocab_size = len(vocab)
        total_docs = sum(self._docs.values())
        self._log_priors = {lang: math.log(n / total_docs) for lang, n in self._docs.items()}

    @property
    def languages(self) -> List[str]:
        return sorted(self._counts)

    def score_text(self, text: str) -> List[LanguageScore]:
        grams = char_ngrams(text, self.n_max)
        log_posts = {}
        for lang in self.languages:
            counts = self._counts[lang]
            denom = math.log(self._totals[lang] + self._vocab_size)
            log_posts[lang] = self._log_priors[lang] + sum(
                k * (math.log(counts.get(g, 0) + 1) - denom) for g, k in grams.items()
            )
        top = max(log_posts.values())
        weights = {lang: math.exp(lp - top) for lang, lp in log_posts.items()}
        z = sum(weights.values())
        scores = [LanguageScore(lang=lang, prob=min(1.0, w / z)) for lang, w in weights.items()]
        return sorted(scores, key=lambda s: (-s.prob, s.lang))

    def score(self, sentence: Sentence) -> List[LanguageScore]:
        return self.score_text(sentence.text)

    def to_json(self) -> dict:
        return {"n_max": self.n_max, "docs": self._docs, "counts": self._counts}

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, ensure_ascii=False, sort_keys=True)


def ngram_backend(training_corpus: Iterable[Tuple[str, str]], n_max: int = 3) -> NgramLidBackend:
    counts: Dict[str, Counter] = {}
    docs: Counter = Counter()
    for text, lang in training_corpus:
        counts.setdefault(lang, Counter()).update(char_ngrams(text, n_max))
        docs[lang] += 1
    if len(docs) < MIN_LANGUAGES:
        raise ConfigError(f"n-gram LID needs at least {MIN_LANGUAGES} languages, got {len(docs)}")
    short = sorted(lang for lang, n in docs.items() if n < MIN_EXAMPLES_PER_LANGUAGE)
    if short:
        raise ConfigError(
            f"n-gram LID needs at least {MIN_EXAMPLES_PER_LANGUAGE} examples per language; too few for {short}"
        )
    logger.info(f"[lid] Trained n-gram backend on {sum(docs.values())} examples, languages={sorted(docs)}")
    return NgramLidBackend(counts, dict(docs), n_max)


def read_lid_training(path) -> List[Tuple[str, str]]:
    """``text<TAB>lang`` lines as (text, lang) tuples."""
    examples = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw_line in enumerate(f, start=1):
            line = raw_line.rstrip("\r\n")
            if not line.strip():
                continue
            text, sep, lang = line.rpartition("\t")
            if not sep or not text.strip():
                raise CorpusFormatError("expected text<TAB>lang", line_no)
            examples.append((text, lang))
    return examples


def load_ngram_backend(path) -> NgramLidBackend:
    """Load a saved JSON model, or train from a ``text<TAB>lang`` file."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return NgramLidBackend(data["counts"], data["docs"], data.get("n_max", 3))
    return ngram_backend(read_lid_training(path))


def declared_prob(scores: Sequence[LanguageScore], code: str) -> float:
    return next((s.prob for s in scores if s.lang == code), 0.0)


def scores_any_text(backend: Optional[LidBackend]) -> bool:
    """True when the backend scores text itself rather than looking rows up by sentence id."""
    return backend is not None and not getattr(backend, "keyed_by_id", False)


def _score_side(backend: LidBackend, sentence: Sentence, pair_id: int) -> float:
    try:
        return declared_prob(backend.score(sentence), sentence.lang.code)
    except BackendError as e:
        raise BackendError(f"pair {pair_id}: {e}") from e


def lid_filter(
    pair: SentencePair,
    backend: Optional[LidBackend],
    threshold: float = DEFAULT_LID_THRESHOLD,
    tgt_backend: Optional[LidBackend] = None,
    check_tgt: bool = True,
) -> Tuple[SentencePair, Optional[str]]:
    """Gate on the probability of each side's declared language (>= threshold).

    ``backend`` scores the source side and, unless ``tgt_backend`` is given, the
    target side too. A side with no backend (``backend=None`` for the source,
    ``check_tgt=False`` for the target) is not checked and gets no score.
    """
    tgt_backend = (tgt_backend or backend) if check_tgt else None
    if backend is None and tgt_backend is None:
        raise ValueError("lid_filter needs a backend for at least one side")
    scores = {}
    if backend is not None:
        scores["lid_src"] = _score_side(backend, pair.src, pair.id)
    if tgt_backend is not None:
        scores["lid_tgt"] = _score_side(tgt_backend, pair.tgt, pair.id)
    scored = pair.with_scores(**scores)
    for side in ("lid_src", "lid_tgt"):
        if side in scores and scores[side] < threshold:
            return scored, side
    return scored, None


def lid_filter_corpus(
    pairs: List[SentencePair],
    backend: Optional[LidBackend],
    threshold: float = DEFAULT_LID_THRESHOLD,
    tgt_backend: Optional[LidBackend] = None,
    check_tgt: bool = True,
) -> Tuple[List[SentencePair], FilterReport]:
    report = FilterReport()
    report.start_stage("lid", len(pairs))
    survivors = []
    for pair in pairs:
        scored, reason = lid_filter(pair, backend, threshold, tgt_backend, check_tgt)
        if reason:
            report.record_rejection(pair.id, "lid", reason)
        else:
            survivors.append(scored.accept())
    logger.info(f"[lid] {len(survivors)}/{len(pairs)} pairs pass threshold {threshold}")
    return survivors, report


def lid_accepts_sentence(
    sentence: Sentence, backend: LidBackend, threshold: float = DEFAULT_LID_THRESHOLD
) -> Tuple[float, bool]:
    prob = declared_prob(backend.score(sentence), sentence.lang.code)
    return prob, prob >= threshold
