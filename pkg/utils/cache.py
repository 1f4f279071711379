"""
On-disk cache of LLM responses, one JSON object per line.
"""
import hashlib
import json
import logging
import os
import threading
from pathlib import Path
from typing import Dict, Optional

logger = logging.getLogger(__name__)

CACHE_DIR = Path(os.getenv("CACHE_DIR", "cache"))


def get_batch_hash(*parts) -> str:
    """sha256 over a canonical JSON encoding of the key parts."""
    payload = json.dumps(parts, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def default_cache_path(name: str = "cleaner_responses.jsonl") -> Path:
    return CACHE_DIR / name


class ResponseCache:
    """Append-only JSONL cache, safe for concurrent readers and writers in one process."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: Dict[str, str] = {}
        self._load()

    def _load(self) -> None:
        if not self.path.exists():
            return
        with open(self.path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    entry = json.loads(line)
                    self._entries[entry["key"]] = entry["response"]
                except (json.JSONDecodeError, KeyError, TypeError) as e:
                    logger.warning(f"Skipping unreadable cache line {line_no} in {self.path}: {e}")
        logger.info(f"Loaded {len(self._entries)} cached responses from {self.path}")

    def get(self, key: str) -> Optional[str]:
        with self._lock:
            response = self._entries.get(key)
        if response is not None:
            logger.info(f"Cache hit for batch hash: {key[:16]}...")
        return response

    def put(self, key: str, response: str) -> None:
        with self._lock:
            if self._entries.get(key) == response:
                return
            self._entries[key] = response
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(json.dumps({"key": key, "response": response}, ensure_ascii=False) + "\n")
            except OSError as e:
                logger.warning(f"Failed to save cache: {e}")
                return
        logger.info(f"Cached response for batch hash: {key[:16]}...")

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)
