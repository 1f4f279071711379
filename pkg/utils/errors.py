"""
Exception types shared by every nusacorpus stage.
"""
from typing import Optional


class NusaCorpusError(Exception):
    """Base class for all nusacorpus errors."""


class CorpusFormatError(NusaCorpusError, ValueError):
    """A corpus, sidecar or token file could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ConfigError(NusaCorpusError, ValueError):
    """Invalid configuration or arguments."""


class EmbeddingError(NusaCorpusError, ValueError):
    """Bad embedding table or vector."""


class ParseError(NusaCorpusError):
    """An LLM response did not follow the expected layout."""


class BackendError(NusaCorpusError):
    """A chat, translator or LID backend failed to answer."""


class StageError(NusaCorpusError):
    """A pipeline stage failed; completed stages are checkpointed."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {message}")
