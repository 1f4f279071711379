"""
Corpus records, corpus file IO and dataset splitting.

Every stage passes around immutable ``SentencePair`` values. JSON Lines is the
canonical interchange format; TSV is accepted for ingestion.
"""
import json
import logging
import math
import random
import re
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Literal, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from utils.errors import ConfigError, CorpusFormatError

logger = logging.getLogger(__name__)

DEFAULT_LANGUAGES: Dict[str, str] = {
    "en": "English",
    "id": "Indonesian",
    "ban": "Balinese",
    "min": "Minangkabau",
}

TSV_FIELDS = ("src_lang", "tgt_lang", "src_text", "tgt_text", "origin")
REQUIRED_FIELDS = ("src_text", "tgt_text", "src_lang", "tgt_lang", "origin")

Status = Literal["raw", "passed", "rejected", "cleaned", "unverified", "synthetic"]

_CODE_RE = re.compile(r"^[a-z0-9_-]+$")


class LanguageTag(BaseModel):
    model_config = ConfigDict(frozen=True)

    code: str
    display_name: str

    @field_validator("code")
    @classmethod
    def _check_code(cls, value: str) -> str:
        if not _CODE_RE.match(value):
            raise ValueError(f"language code must be non-empty lowercase ASCII, got {value!r}")
        return value

    @field_validator("display_name")
    @classmethod
    def _check_name(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("display_name must be non-empty")
        return value


class LanguageRegistry:
    """Bijective code -> display name map used for prompts and validation."""

    def __init__(self, names: Optional[Mapping[str, str]] = None):
        names = dict(DEFAULT_LANGUAGES if names is None else names)
        self._tags: Dict[str, LanguageTag] = {}
        self._by_name: Dict[str, LanguageTag] = {}
        for code, display_name in names.items():
            try:
                tag = LanguageTag(code=code, display_name=display_name)
            except ValidationError as e:
                raise ConfigError(f"invalid language {code!r}: {e.errors()[0]['msg']}") from e
            if display_name in self._by_name:
                raise ConfigError(
                    f"display name {display_name!r} used by both "
                    f"{self._by_name[display_name].code!r} and {code!r}"
                )
            self._tags[code] = tag
            self._by_name[display_name] = tag

    def tag(self, code: str) -> LanguageTag:
        try:
            return self._tags[code]
        except KeyError:
            raise ConfigError(f"unknown language code {code!r}") from None

    def display_name(self, code: str) -> str:
        return self.tag(code).display_name

    def by_name(self, display_name: str) -> LanguageTag:
        try:
            return self._by_name[display_name]
        except KeyError:
            raise ConfigError(f"unknown language name {display_name!r}") from None

    def names(self) -> List[str]:
        return [tag.display_name for tag in self._tags.values()]

    def codes(self) -> List[str]:
        return list(self._tags)

    def __contains__(self, code: object) -> bool:
        return code in self._tags


class Sentence(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int
    text: str
    lang: LanguageTag
    origin: str
    doc_id: Optional[str] = None

    @field_validator("text")
    @classmethod
    def _check_text(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("sentence text is empty")
        return value


class Rejection(BaseModel):
    model_config = ConfigDict(frozen=True)

    stage: str
    reason: str


class SentencePair(BaseModel):
    """A source/target pair with per-stage scores and a pipeline status.

    ``synthetic_direction`` is set on backtranslated pairs as
    ``"<authentic lang>-<generated lang>"``: the direction the translator ran in.
    """

    model_config = ConfigDict(frozen=True)

    id: int
    src: Sentence
    tgt: Sentence
    scores: Dict[str, float] = {}
    status: Status = "raw"
    rejection: Optional[Rejection] = None
    synthetic_direction: Optional[str] = None

    @model_validator(mode="after")
    def _check_invariants(self) -> "SentencePair":
        if self.src.lang.code == self.tgt.lang.code:
            raise ValueError(f"source and target share language {self.src.lang.code!r}")
        if (self.status == "rejected") != (self.rejection is not None):
            raise ValueError("a rejected pair records exactly one (stage, reason)")
        if self.synthetic_direction is not None:
            expected = f"{self.tgt.lang.code}-{self.src.lang.code}"
            if self.synthetic_direction != expected:
                raise ValueError(f"synthetic direction must be {expected!r}, got {self.synthetic_direction!r}")
        elif self.status == "synthetic":
            raise ValueError("synthetic status requires a generation direction")
        return self

    @property
    def origin(self) -> str:
        return self.src.origin

    @property
    def is_synthetic(self) -> bool:
        return self.synthetic_direction is not None

    @property
    def is_rejected(self) -> bool:
        return self.status == "rejected"

    @property
    def lang_pair(self) -> str:
        """Direction-free language pair label, e.g. ``ban↔en``."""
        a, b = sorted((self.src.lang.code, self.tgt.lang.code))
        return f"{a}↔{b}"

    def with_status(self, status: Status, rejection: Optional[Rejection] = None) -> "SentencePair":
        if self.status == "rejected":
            raise ValueError(f"pair {self.id} is rejected and cannot become {status!r}")
        if status == "raw" and self.status != "raw":
            raise ValueError(f"pair {self.id} cannot return to raw from {self.status!r}")
        if status == "synthetic" and not self.is_synthetic:
            raise ValueError(f"pair {self.id} is authentic and cannot become synthetic")
        return self.model_copy(update={"status": status, "rejection": rejection})

    def reject(self, stage: str, reason: str) -> "SentencePair":
        return self.with_status("rejected", Rejection(stage=stage, reason=reason))

    def accept(self) -> "SentencePair":
        """Promote a raw pair to passed; other statuses are kept as they are."""
        if self.status == "raw":
            return self.with_status("passed")
        if self.status == "rejected":
            raise ValueError(f"pair {self.id} is rejected and cannot be accepted")
        return self

    def with_scores(self, **scores: float) -> "SentencePair":
        return self.model_copy(update={"scores": {**self.scores, **scores}})

    def with_texts(self, src_text: str, tgt_text: str) -> "SentencePair":
        return self.model_copy(
            update={
                "src": self.src.model_copy(update={"text": src_text}),
                "tgt": self.tgt.model_copy(update={"text": tgt_text}),
            }
        )


class SplitAssignment(BaseModel):
    model_config = ConfigDict(frozen=True)

    train: FrozenSet[int]
    validation: FrozenSet[int]
    test: FrozenSet[int]
    seed: int

    @model_validator(mode="after")
    def _check_disjoint(self) -> "SplitAssignment":
        if self.train & self.validation or self.train & self.test or self.validation & self.test:
            raise ValueError("split sets overlap")
        return self

    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)

    def split_of(self, pair_id: int) -> str:
        for name in ("train", "validation", "test"):
            if pair_id in getattr(self, name):
                return name
        raise KeyError(f"pair {pair_id} is not in the split")

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "train": sorted(self.train),
            "validation": sorted(self.validation),
            "test": sorted(self.test),
        }

    @classmethod
    def from_json(cls, data: dict) -> "SplitAssignment":
        return cls(
            seed=data["seed"],
            train=frozenset(data["train"]),
            validation=frozenset(data["validation"]),
            test=frozenset(data["test"]),
        )


def _infer_format(path: Path, fmt: Optional[str]) -> str:
    if fmt is None:
        fmt = "tsv" if path.suffix.lower() == ".tsv" else "jsonl"
    if fmt not in ("jsonl", "tsv"):
        raise ConfigError(f"unsupported corpus format {fmt!r}")
    return fmt


def escape_tsv(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n").replace("\r", "\\r")


_UNESCAPES = {"t": "\t", "n": "\n", "r": "\r", "\\": "\\"}


def unescape_tsv(text: str) -> str:
    return re.sub(r"\\(.)", lambda m: _UNESCAPES.get(m.group(1), m.group(0)), text, flags=re.DOTALL)


def _build_pair(record: dict, default_id: Optional[int], registry: LanguageRegistry, line: int) -> SentencePair:
    for name in REQUIRED_FIELDS:
        if name not in record:
            raise CorpusFormatError(f"missing field {name!r}", line)
    try:
        src_lang = registry.tag(record["src_lang"])
        tgt_lang = registry.tag(record["tgt_lang"])
    except ConfigError as e:
        raise CorpusFormatError(str(e), line) from e

    pair_id = record.get("id", default_id)
    status = record.get("status", "raw")
    rejection = record.get("rejection")
    try:
        return SentencePair(
            id=pair_id,
            src=Sentence(
                id=record.get("src_id", pair_id), text=record["src_text"], lang=src_lang, origin=record["origin"]
            ),
            tgt=Sentence(
                id=record.get("tgt_id", pair_id), text=record["tgt_text"], lang=tgt_lang, origin=record["origin"]
            ),
            scores=record.get("scores") or {},
            status=status,
            rejection=Rejection(**rejection) if rejection else None,
            synthetic_direction=record.get("synthetic_direction"),
        )
    except (ValidationError, TypeError) as e:
        message = e.errors()[0]["msg"] if isinstance(e, ValidationError) else str(e)
        raise CorpusFormatError(message, line) from e


def pair_to_record(pair: SentencePair) -> dict:
    record = {
        "id": pair.id,
        "src_lang": pair.src.lang.code,
        "tgt_lang": pair.tgt.lang.code,
        "src_text": pair.src.text,
        "tgt_text": pair.tgt.text,
        "origin": pair.origin,
        "scores": dict(pair.scores),
        "status": pair.status,
    }
    if pair.src.id != pair.id:
        record["src_id"] = pair.src.id
    if pair.tgt.id != pair.id:
        record["tgt_id"] = pair.tgt.id
    if pair.rejection is not None:
        record["rejection"] = {"stage": pair.rejection.stage, "reason": pair.rejection.reason}
    if pair.synthetic_direction is not None:
        record["synthetic_direction"] = pair.synthetic_direction
    return record


def read_corpus(
    path, format: Optional[str] = None, registry: Optional[LanguageRegistry] = None
) -> List[SentencePair]:
    """Read a JSONL or TSV corpus.

    Records without an ``id`` are numbered in file order, starting after the
    largest explicit id in the file.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    registry = registry or LanguageRegistry()

    records: List[Tuple[int, dict]] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for line_no, raw_line in enumerate(f, start=1):
            line = raw_line.rstrip("\r\n")
            if not line.strip():
                continue
            if fmt == "jsonl":
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as e:
                    raise CorpusFormatError(f"invalid JSON: {e.msg}", line_no) from e
                if not isinstance(record, dict):
                    raise CorpusFormatError("record is not a JSON object", line_no)
            else:
                fields = line.split("\t")
                if len(fields) != len(TSV_FIELDS):
                    raise CorpusFormatError(f"expected {len(TSV_FIELDS)} fields, got {len(fields)}", line_no)
                record = {name: unescape_tsv(value) for name, value in zip(TSV_FIELDS, fields)}
            records.append((line_no, record))

    explicit = [r["id"] for _, r in records if isinstance(r.get("id"), int) and not isinstance(r["id"], bool)]
    next_id = max(explicit, default=-1) + 1
    pairs: List[SentencePair] = []
    seen_ids = set()
    for line_no, record in records:
        default_id = None
        if "id" not in record:
            default_id, next_id = next_id, next_id + 1
        pair = _build_pair(record, default_id, registry, line_no)
        if pair.id in seen_ids:
            raise CorpusFormatError(f"duplicate pair id {pair.id}", line_no)
        seen_ids.add(pair.id)
        pairs.append(pair)

    logger.info(f"[corpus] Read {len(pairs)} pairs from {path}")
    return pairs


def write_corpus(pairs: Iterable[SentencePair], path, format: Optional[str] = None) -> None:
    path = Path(path)
    fmt = _infer_format(path, format)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for pair in pairs:
            if fmt == "jsonl":
                f.write(json.dumps(pair_to_record(pair), ensure_ascii=False) + "\n")
            else:
                values = (pair.src.lang.code, pair.tgt.lang.code, pair.src.text, pair.tgt.text, pair.origin)
                f.write("\t".join(escape_tsv(v) for v in values) + "\n")
            count += 1
    logger.info(f"[corpus] Wrote {count} pairs to {path}")


def read_sentences(
    path,
    lang: str,
    origin: str,
    registry: Optional[LanguageRegistry] = None,
    with_doc_ids: bool = False,
) -> List[Sentence]:
    """Read one sentence per line (optionally ``doc_id<TAB>text``); ids are line indices."""
    path = Path(path)
    registry = registry or LanguageRegistry()
    try:
        tag = registry.tag(lang)
    except ConfigError as e:
        raise CorpusFormatError(str(e)) from e

    sentences: List[Sentence] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for line_no, raw_line in enumerate(f, start=1):
            line = raw_line.rstrip("\r\n")
            doc_id = None
            if with_doc_ids:
                doc_id, sep, line = line.partition("\t")
                if not sep:
                    raise CorpusFormatError("expected doc_id<TAB>text", line_no)
            text = unescape_tsv(line)
            if not text.strip():
                raise CorpusFormatError("empty sentence", line_no)
            sentences.append(Sentence(id=len(sentences), text=text, lang=tag, origin=origin, doc_id=doc_id))
    return sentences


def write_sentences(sentences: Iterable[Sentence], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for sentence in sentences:
            f.write(escape_tsv(sentence.text) + "\n")


def renumber_pairs(pairs: Iterable[SentencePair], start_id: int) -> List[SentencePair]:
    """Fresh consecutive pair ids from start_id; sentence ids (embedding rows) are kept."""
    return [pair.model_copy(update={"id": start_id + n}) for n, pair in enumerate(pairs)]


def split_dataset(
    pairs: List[SentencePair],
    seed: int,
    validation_ratio: float = 0.05,
    test_ratio: float = 0.05,
) -> SplitAssignment:
    """Random pair-level split: floor(n * ratio) for validation and test, the rest to train."""
    ids = [pair.id for pair in pairs]
    if len(ids) < 20:
        raise ConfigError(f"split needs at least 20 pairs, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ConfigError("split input has duplicate pair ids")

    shuffled = sorted(ids)
    random.Random(seed).shuffle(shuffled)

    n = len(shuffled)
    n_validation = math.floor(n * validation_ratio + 1e-9)
    n_test = math.floor(n * test_ratio + 1e-9)
    assignment = SplitAssignment(
        validation=frozenset(shuffled[:n_validation]),
        test=frozenset(shuffled[n_validation:n_validation + n_test]),
        train=frozenset(shuffled[n_validation + n_test:]),
        seed=seed,
    )
    logger.info(f"[split] seed={seed} sizes (train, validation, test) = {assignment.sizes()}")
    return assignment
