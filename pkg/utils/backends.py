"""
Chat-completion and translator backends.

HTTP backends speak plain JSON over ``requests``; the Gemini backend uses the
google-genai client; replay backends answer from recorded files so tests and
reruns never touch the network.
"""
import hashlib
import json
import logging
import threading
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import requests

from utils.corpus import LanguageTag
from utils.errors import BackendError, CorpusFormatError
from utils.prompts import get_translation_prompt

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 120


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ChatBackend(Protocol):
    def complete(self, prompt_text: str) -> str:
        ...


class TranslatorBackend(Protocol):
    def translate(self, texts: Sequence[str], src: LanguageTag, tgt: LanguageTag) -> List[str]:
        """Same length and order as ``texts``."""
        ...


def _read_jsonl(path: Path) -> List[Tuple[int, dict]]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append((line_no, json.loads(line)))
            except json.JSONDecodeError as e:
                raise CorpusFormatError(f"invalid JSON: {e.msg}", line_no) from e
    return records


class HttpChatBackend:
    """OpenAI-compatible chat-completion endpoint."""

    def __init__(self, url: str, api_key: Optional[str], model: str, timeout: float = DEFAULT_TIMEOUT):
        self.url = url
        self.api_key = api_key
        self.model = model
        self.timeout = timeout

    def complete(self, prompt_text: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {"model": self.model, "messages": [{"role": "user", "content": prompt_text}]}
        try:
            response = requests.post(self.url, json=payload, headers=headers, timeout=self.timeout)
            response.raise_for_status()
            return response.json()["choices"][0]["message"]["content"] or ""
        except requests.RequestException as e:
            raise BackendError(f"chat request to {self.url} failed: {e}") from e
        except (KeyError, IndexError, TypeError, ValueError) as e:
            raise BackendError(f"unexpected chat response shape from {self.url}: {e}") from e


class GeminiChatBackend:
    """Gemini through the google-genai client."""

    def __init__(self, api_key: str, model: str):
        from google import genai

        self.model = model
        self.client = genai.Client(api_key=api_key)
        logger.info(f"Initialized Gemini chat backend with model: {model}")

    def complete(self, prompt_text: str) -> str:
        try:
            response = self.client.models.generate_content(model=self.model, contents=prompt_text)
        except Exception as e:
            raise BackendError(f"Gemini request failed: {e}") from e
        return response.text if getattr(response, "text", None) else ""


class ReplayChatBackend:
    """Serves responses recorded as ``{"prompt" | "prompt_sha256", "response"}`` lines."""

    def __init__(self, responses: Dict[str, str]):
        self._responses = dict(responses)

    @classmethod
    def from_file(cls, path) -> "ReplayChatBackend":
        responses = {}
        for line_no, record in _read_jsonl(Path(path)):
            if "response" not in record:
                raise CorpusFormatError("replay record needs 'response'", line_no)
            if "prompt_sha256" in record:
                key = record["prompt_sha256"]
            elif "prompt" in record:
                key = prompt_hash(record["prompt"])
            else:
                raise CorpusFormatError("replay record needs 'prompt' or 'prompt_sha256'", line_no)
            responses[key] = record["response"]
        logger.info(f"Loaded {len(responses)} recorded chat responses from {path}")
        return cls(responses)

    def complete(self, prompt_text: str) -> str:
        key = prompt_hash(prompt_text)
        try:
            return self._responses[key]
        except KeyError:
            raise BackendError(f"no recorded response for prompt {key[:16]}...") from None


class RecordingChatBackend:
    """Wraps a backend and appends every exchange to a replay file."""

    def __init__(self, inner: ChatBackend, path):
        self.inner = inner
        self.path = Path(path)
        self._lock = threading.Lock()

    def complete(self, prompt_text: str) -> str:
        response = self.inner.complete(prompt_text)
        record = {"prompt_sha256": prompt_hash(prompt_text), "prompt": prompt_text, "response": response}
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record, ensure_ascii=False) + "\n")
        return response


class HttpTranslatorBackend:
    """``{"src_lang", "tgt_lang", "texts"}`` -> ``{"translations"}`` over HTTP."""

    def __init__(self, url: str, timeout: float = DEFAULT_TIMEOUT):
        self.url = url
        self.timeout = timeout

    def translate(self, texts: Sequence[str], src: LanguageTag, tgt: LanguageTag) -> List[str]:
        payload = {"src_lang": src.code, "tgt_lang": tgt.code, "texts": list(texts)}
        try:
            response = requests.post(self.url, json=payload, timeout=self.timeout)
            response.raise_for_status()
            translations = response.json()["translations"]
        except requests.RequestException as e:
            raise BackendError(f"translation request to {self.url} failed: {e}") from e
        except (KeyError, TypeError, ValueError) as e:
            raise BackendError(f"unexpected translator response from {self.url}: {e}") from e
        if not isinstance(translations, list):
            raise BackendError("translator response 'translations' is not a list")
        if len(translations) != len(texts):
            raise BackendError(f"translator returned {len(translations)} texts for {len(texts)} inputs")
        return [str(t) for t in translations]


class ReplayTranslatorBackend:
    """Serves ``{"src_lang", "tgt_lang", "text", "translation"}`` records."""

    def __init__(self, table: Dict[Tuple[str, str, str], str]):
        self._table = dict(table)

    @classmethod
    def from_file(cls, path) -> "ReplayTranslatorBackend":
        table = {}
        for line_no, record in _read_jsonl(Path(path)):
            try:
                table[(record["src_lang"], record["tgt_lang"], record["text"])] = record["translation"]
            except (KeyError, TypeError) as e:
                raise CorpusFormatError(f"replay translation record missing {e}", line_no) from e
        logger.info(f"Loaded {len(table)} recorded translations from {path}")
        return cls(table)

    def translate(self, texts: Sequence[str], src: LanguageTag, tgt: LanguageTag) -> List[str]:
        out = []
        for text in texts:
            try:
                out.append(self._table[(src.code, tgt.code, text)])
            except KeyError:
                raise BackendError(f"no recorded {src.code}->{tgt.code} translation for {text[:40]!r}") from None
        return out


class ChatTranslatorBackend:
    """Translates one sentence per call with the SFT translation prompt."""

    def __init__(self, chat: ChatBackend):
        self.chat = chat

    def translate(self, texts: Sequence[str], src: LanguageTag, tgt: LanguageTag) -> List[str]:
        out = []
        for text in texts:
            prompt = get_translation_prompt(src.display_name, tgt.display_name, text)
            response = self.chat.complete(prompt)
            out.append(extract_completion(response, tgt.display_name))
        return out


def extract_completion(response: str, tgt_name: str) -> str:
    """First non-empty line of a completion, minus an echoed ``<Tgt>:`` header."""
    for line in response.splitlines():
        line = line.strip()
        if line.startswith(f"{tgt_name}:"):
            line = line[len(tgt_name) + 1:].strip()
        if line:
            return line
    raise BackendError("empty translation completion")
