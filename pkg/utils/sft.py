"""
Supervised fine-tuning records in the translation prompt format.

Every record's training text is ``prompt + completion``; the loss covers the
completion only, starting at ``loss_mask_offset`` (a character index).
"""
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, model_validator

from utils.corpus import LanguageRegistry, SentencePair, SplitAssignment
from utils.errors import ConfigError
from utils.prompts import get_translation_prompt

logger = logging.getLogger(__name__)

SPLIT_FILES = ("train", "validation", "test")


class SftRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    pair_id: int
    prompt: str
    completion: str
    direction: str
    origin: str
    synthetic: bool
    loss_mask_offset: int

    @model_validator(mode="after")
    def _check_offset(self) -> "SftRecord":
        if self.loss_mask_offset != len(self.prompt):
            raise ValueError("loss_mask_offset must equal len(prompt)")
        return self

    @property
    def text(self) -> str:
        return self.prompt + self.completion

    def to_json(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "prompt": self.prompt,
            "completion": self.completion,
            "direction": self.direction,
            "origin": self.origin,
            "synthetic": self.synthetic,
            "loss_mask_offset": self.loss_mask_offset,
        }


def render_translation_prompt(
    pair: SentencePair, direction: Tuple[str, str], lang_names: Optional[LanguageRegistry] = None
) -> SftRecord:
    """Render one direction of a pair; ``direction`` is (source code, target code)."""
    registry = lang_names or LanguageRegistry()
    src_code, tgt_code = direction
    sides = {pair.src.lang.code: pair.src, pair.tgt.lang.code: pair.tgt}
    if set(direction) != set(sides) or src_code == tgt_code:
        raise ConfigError(f"direction {src_code}-{tgt_code} does not match pair {pair.id} ({pair.lang_pair})")

    src_name = registry.display_name(src_code)
    tgt_name = registry.display_name(tgt_code)
    prompt = get_translation_prompt(src_name, tgt_name, sides[src_code].text)
    return SftRecord(
        pair_id=pair.id,
        prompt=prompt,
        completion=f" {sides[tgt_code].text}",
        direction=f"{src_code}-{tgt_code}",
        origin=pair.origin,
        synthetic=pair.is_synthetic,
        loss_mask_offset=len(prompt),
    )


def directions_for(pair: SentencePair) -> List[Tuple[str, str]]:
    """Both directions for authentic pairs; generated -> authentic only for synthetic ones."""
    src, tgt = pair.src.lang.code, pair.tgt.lang.code
    if pair.is_synthetic:
        return [(src, tgt)]
    return [(src, tgt), (tgt, src)]


def expand_directions(
    pairs: Iterable[SentencePair], lang_names: Optional[LanguageRegistry] = None
) -> List[SftRecord]:
    registry = lang_names or LanguageRegistry()
    return [
        render_translation_prompt(pair, direction, registry)
        for pair in pairs
        if not pair.is_rejected
        for direction in directions_for(pair)
    ]


def emit_sft(records: Iterable[SftRecord], split: SplitAssignment, out_dir) -> Dict[str, Path]:
    """Write train/validation/test JSONL files; a pair's records all land in its split."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_split: Dict[str, List[SftRecord]] = {name: [] for name in SPLIT_FILES}
    for record in records:
        by_split[split.split_of(record.pair_id)].append(record)

    paths = {}
    for name in SPLIT_FILES:
        path = out_dir / f"{name}.jsonl"
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for record in by_split[name]:
                f.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")
        paths[name] = path
        logger.info(f"[sft] Wrote {len(by_split[name])} {name} records to {path}")
    return paths
