"""
Shared pytest fixtures: language registry, pair factories and mock backends.
"""
import threading
from pathlib import Path
from typing import Callable, List, Optional

import pytest

from utils.corpus import LanguageRegistry, Sentence, SentencePair
from utils.errors import BackendError
from utils.prompts import BATCH_SLOT, CLEANER_TEMPLATE, FEW_SHOT_SLOT

GOLDEN_DIR = Path(__file__).parent / "fixtures" / "golden"
# text between the few-shot section and the batch
BATCH_LEAD = CLEANER_TEMPLATE.split(FEW_SHOT_SLOT)[1].split(BATCH_SLOT)[0]
MISALIGNED_MARKER = "MISALIGNED"


@pytest.fixture
def registry() -> LanguageRegistry:
    return LanguageRegistry()


@pytest.fixture
def golden() -> Callable[[str], str]:
    def read(name: str) -> str:
        return (GOLDEN_DIR / name).read_text(encoding="utf-8")

    return read


@pytest.fixture
def make_pair(registry) -> Callable[..., SentencePair]:
    def build(
        pair_id: int,
        src_text: str,
        tgt_text: str,
        src_lang: str = "id",
        tgt_lang: str = "ban",
        origin: str = "test",
        **fields,
    ) -> SentencePair:
        return SentencePair(
            id=pair_id,
            src=Sentence(id=pair_id, text=src_text, lang=registry.tag(src_lang), origin=origin),
            tgt=Sentence(id=pair_id, text=tgt_text, lang=registry.tag(tgt_lang), origin=origin),
            **fields,
        )

    return build


@pytest.fixture
def make_sentences(registry) -> Callable[..., List[Sentence]]:
    def build(texts: List[str], lang: str = "ban", origin: str = "mono") -> List[Sentence]:
        return [Sentence(id=i, text=t, lang=registry.tag(lang), origin=origin) for i, t in enumerate(texts)]

    return build


class IdentityCleanerBackend:
    """Answers every batch with ``True`` and the pair unchanged; blocks containing
    MISALIGNED_MARKER get ``False``. Counts calls."""

    def __init__(self):
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, prompt_text: str) -> str:
        with self._lock:
            self.calls += 1
        batch = prompt_text.rpartition(BATCH_LEAD)[2]
        answers = []
        for block in batch.split("\n\n"):
            answers.append("False" if MISALIGNED_MARKER in block else f"True\n{block}")
        return "\n\n".join(answers)


class FailingBackend:
    def __init__(self, error: Optional[Exception] = None):
        self.calls = 0
        self.error = error or BackendError("backend is down")
        self._lock = threading.Lock()

    def complete(self, prompt_text: str) -> str:
        with self._lock:
            self.calls += 1
        raise self.error


class FunctionTranslator:
    """Applies ``fn`` to each text; chunks containing ``fail_on`` raise."""

    def __init__(self, fn: Callable[[str], str], fail_on: Optional[str] = None):
        self.fn = fn
        self.fail_on = fail_on
        self.calls = 0

    def translate(self, texts, src, tgt):
        self.calls += 1
        if self.fail_on is not None and any(self.fail_on in t for t in texts):
            raise BackendError("translator timed out")
        return [self.fn(t) for t in texts]


@pytest.fixture
def identity_cleaner() -> IdentityCleanerBackend:
    return IdentityCleanerBackend()


@pytest.fixture
def failing_backend() -> FailingBackend:
    return FailingBackend()


@pytest.fixture
def make_translator() -> Callable[..., FunctionTranslator]:
    return FunctionTranslator
