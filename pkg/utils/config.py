"""
Pipeline configuration (TOML) and backend construction.

Endpoints and secrets come from the environment (``.env`` is loaded by the
CLI); everything else lives in the TOML file, one table per stage. Relative
paths are resolved against the working directory.
"""
import hashlib
import json
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Annotated, Dict, List, Literal, Optional

from pydantic import AfterValidator, BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from utils.backends import (
    ChatBackend,
    ChatTranslatorBackend,
    GeminiChatBackend,
    HttpChatBackend,
    HttpTranslatorBackend,
    RecordingChatBackend,
    ReplayChatBackend,
    ReplayTranslatorBackend,
    TranslatorBackend,
)
from utils.corpus import DEFAULT_LANGUAGES, LanguageRegistry
from utils.errors import ConfigError
from utils.heuristics import HeuristicConfig
from utils.lid import DEFAULT_LID_THRESHOLD, LidBackend, load_ngram_backend, sidecar_backend

logger = logging.getLogger(__name__)

DEFAULT_CLEANER_MODEL = "gpt-4o-mini"
DEFAULT_GEMINI_MODEL = "gemini-2.0-flash"

STAGE_ORDER = ("mine", "heuristics", "lid", "margin", "cleaner", "backtranslation", "split", "emission")
StageName = Literal["mine", "heuristics", "lid", "margin", "cleaner", "backtranslation", "split", "emission"]


def _spec_path(spec: str) -> Optional[Path]:
    """The file named by a ``kind:<path>`` backend spec, if it names one."""
    kind, sep, rest = spec.partition(":")
    if not sep:
        return None
    if kind == "chat":
        return _spec_path(rest)
    return Path(rest)


def _check_file(path: Path) -> Path:
    if not path.exists():
        raise ValueError(f"file not found: {path}")
    return path


def _check_spec(spec: str) -> str:
    path = _spec_path(spec)
    if path is not None:
        _check_file(path)
    return spec


ExistingPath = Annotated[Path, AfterValidator(_check_file)]
BackendSpec = Annotated[str, AfterValidator(_check_spec)]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class InputConfig(_Section):
    corpus: Optional[ExistingPath] = None
    format: Optional[Literal["jsonl", "tsv"]] = None


class LidConfig(_Section):
    backend: Optional[BackendSpec] = None
    tgt_backend: Optional[BackendSpec] = None
    threshold: float = Field(DEFAULT_LID_THRESHOLD, ge=0.0, le=1.0)


class MarginConfig(_Section):
    src_embeddings: Optional[ExistingPath] = None
    tgt_embeddings: Optional[ExistingPath] = None
    threshold: float = Field(1.09, gt=0.0)
    k: int = Field(3, ge=1)


class MiningConfig(_Section):
    src_sentences: Optional[ExistingPath] = None
    tgt_sentences: Optional[ExistingPath] = None
    src_lang: Optional[str] = None
    tgt_lang: Optional[str] = None
    src_embeddings: Optional[ExistingPath] = None
    tgt_embeddings: Optional[ExistingPath] = None
    threshold: float = Field(0.7, ge=-1.0, le=1.0)
    mutual: bool = False
    with_doc_ids: bool = False
    origin: str = "mined"
    # LID for mined pairs; sidecars here are keyed by line number in src_sentences / tgt_sentences
    lid_backend: Optional[BackendSpec] = None
    tgt_lid_backend: Optional[BackendSpec] = None


class CleanerConfig(_Section):
    backend: Optional[BackendSpec] = None
    batch_size: int = Field(8, ge=1)
    retries: int = Field(2, ge=0)
    concurrency: int = Field(4, ge=1)
    strict: bool = False
    use_cache: bool = True
    record_to: Optional[Path] = None


class BacktranslationConfig(_Section):
    mono: Optional[ExistingPath] = None
    mono_lang: Optional[str] = None
    src_lang: Optional[str] = None
    translator: Optional[BackendSpec] = None
    chunk_size: int = Field(32, ge=1)
    concurrency: int = Field(2, ge=1)
    sample_n: Optional[int] = Field(None, ge=1)
    lid_backend: Optional[BackendSpec] = None
    # generated side of synthetic pairs; a sidecar here is keyed by line number in mono
    generated_lid_backend: Optional[BackendSpec] = None
    src_embeddings: Optional[ExistingPath] = None
    tgt_embeddings: Optional[ExistingPath] = None
    clean: bool = True
    origin: str = "backtranslation"


class SplitConfig(_Section):
    validation_ratio: float = Field(0.05, ge=0.0, lt=1.0)
    test_ratio: float = Field(0.05, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check_sum(self) -> "SplitConfig":
        if self.validation_ratio + self.test_ratio >= 1.0:
            raise ValueError("validation_ratio + test_ratio must be < 1")
        return self


class EmissionConfig(_Section):
    subdir: str = "sft"


class PipelineConfig(_Section):
    seed: int = 42
    output_dir: Path = Path("output")
    stages: List[StageName] = list(STAGE_ORDER)
    languages: Dict[str, str] = dict(DEFAULT_LANGUAGES)
    input: InputConfig = InputConfig()
    heuristics: HeuristicConfig = HeuristicConfig()
    lid: LidConfig = LidConfig()
    margin: MarginConfig = MarginConfig()
    mining: MiningConfig = MiningConfig()
    cleaner: CleanerConfig = CleanerConfig()
    backtranslation: BacktranslationConfig = BacktranslationConfig()
    split: SplitConfig = SplitConfig()
    emission: EmissionConfig = EmissionConfig()

    @field_validator("stages")
    @classmethod
    def _unique_stages(cls, value: List[str]) -> List[str]:
        if len(set(value)) != len(value):
            raise ValueError("stages are listed more than once")
        return value

    @model_validator(mode="after")
    def _check_stage_inputs(self) -> "PipelineConfig":
        enabled = set(self.stages)
        if self.input.corpus is None and "mine" not in enabled:
            raise ValueError("input.corpus is required unless the mine stage runs")
        if "lid" in enabled and self.lid.backend is None:
            raise ValueError("lid stage needs lid.backend")
        if "margin" in enabled and (self.margin.src_embeddings is None or self.margin.tgt_embeddings is None):
            raise ValueError("margin stage needs margin.src_embeddings and margin.tgt_embeddings")
        if "mine" in enabled:
            m = self.mining
            if None in (m.src_sentences, m.tgt_sentences, m.src_lang, m.tgt_lang, m.src_embeddings, m.tgt_embeddings):
                raise ValueError("mine stage needs sentences, languages and embeddings for both sides")
        if "backtranslation" in enabled:
            b = self.backtranslation
            if None in (b.mono, b.mono_lang, b.src_lang, b.translator):
                raise ValueError("backtranslation stage needs mono, mono_lang, src_lang and translator")
        if "emission" in enabled and "split" not in enabled:
            raise ValueError("emission stage needs the split stage")
        LanguageRegistry(self.languages)
        return self

    @property
    def ordered_stages(self) -> List[str]:
        return [stage for stage in STAGE_ORDER if stage in self.stages]

    def registry(self) -> LanguageRegistry:
        return LanguageRegistry(self.languages)

    def fingerprint(self) -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _first_error(e: ValidationError) -> str:
    err = e.errors()[0]
    where = ".".join(str(part) for part in err["loc"]) or "config"
    return f"{where}: {err['msg']}"


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML in {path}: {e}") from e
    try:
        config = PipelineConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid config {path}: {_first_error(e)}") from e
    logger.info(f"Loaded pipeline config from {path} (stages: {', '.join(config.ordered_stages)})")
    return config


# Backends

def make_chat_backend(spec: str, record_to: Optional[Path] = None) -> ChatBackend:
    """``http`` | ``gemini`` | ``replay:<path>``."""
    kind, _, rest = spec.partition(":")
    if kind == "http":
        url = os.getenv("CLEANER_API_URL")
        if not url:
            raise ConfigError("CLEANER_API_URL is not set")
        backend: ChatBackend = HttpChatBackend(
            url, os.getenv("CLEANER_API_KEY"), os.getenv("CLEANER_MODEL", DEFAULT_CLEANER_MODEL)
        )
    elif kind == "gemini":
        api_key = os.getenv("GOOGLE_API_KEY")
        if not api_key:
            raise ConfigError("GOOGLE_API_KEY is not set")
        backend = GeminiChatBackend(api_key, os.getenv("GEMINI_MODEL", DEFAULT_GEMINI_MODEL))
    elif kind == "replay" and rest:
        backend = ReplayChatBackend.from_file(rest)
    else:
        raise ConfigError(f"unknown chat backend {spec!r} (expected http, gemini or replay:<path>)")
    if record_to is not None:
        backend = RecordingChatBackend(backend, record_to)
    return backend


def make_translator_backend(spec: str) -> TranslatorBackend:
    """``http`` | ``replay:<path>`` | ``chat:<chat backend spec>``."""
    kind, _, rest = spec.partition(":")
    if kind == "http":
        url = os.getenv("TRANSLATOR_API_URL")
        if not url:
            raise ConfigError("TRANSLATOR_API_URL is not set")
        return HttpTranslatorBackend(url)
    if kind == "replay" and rest:
        return ReplayTranslatorBackend.from_file(rest)
    if kind == "chat" and rest:
        return ChatTranslatorBackend(make_chat_backend(rest))
    raise ConfigError(f"unknown translator backend {spec!r} (expected http, replay:<path> or chat:<backend>)")


def make_lid_backend(spec: str) -> LidBackend:
    """``sidecar:<path>`` | ``ngram:<path>``."""
    kind, _, rest = spec.partition(":")
    if not rest:
        raise ConfigError(f"LID backend {spec!r} needs a path")
    if kind == "sidecar":
        return sidecar_backend(rest)
    if kind == "ngram":
        return load_ngram_backend(rest)
    raise ConfigError(f"unknown LID backend {spec!r} (expected sidecar:<path> or ngram:<path>)")
