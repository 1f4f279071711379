"""
Before/after pair counts per dataset and language pair, with a TOTAL row.
"""
import json
import logging
from pathlib import Path
from typing import Callable, Dict, List, Literal, Sequence

import pandas as pd
from pydantic import BaseModel

from utils.corpus import SentencePair
from utils.errors import CorpusFormatError
from utils.report import StageCounts

logger = logging.getLogger(__name__)

GroupBy = Literal["dataset", "lang_pair"]
TOTAL = "TOTAL"


def _dataset(pair: SentencePair) -> str:
    return pair.origin


def _lang_pair(pair: SentencePair) -> str:
    return pair.lang_pair


_KEYS: Dict[str, Callable[[SentencePair], str]] = {"dataset": _dataset, "lang_pair": _lang_pair}


class PipelineStats(BaseModel):
    """Count tables keyed ``row -> column -> count``; rows follow ``group_by``."""

    group_by: GroupBy = "dataset"
    rows: List[str] = []
    columns: List[str] = []
    before: Dict[str, Dict[str, int]] = {}
    after: Dict[str, Dict[str, int]] = {}
    stages: Dict[str, StageCounts] = {}
    synthetic_stages: Dict[str, StageCounts] = {}

    def _table(self, counts: Dict[str, Dict[str, int]]) -> pd.DataFrame:
        table = pd.DataFrame.from_dict(counts, orient="index")
        return table.reindex(index=self.rows, columns=self.columns, fill_value=0)

    def to_frame(self) -> pd.DataFrame:
        """Columns are (column key, Before/After); the last row is TOTAL."""
        frame = pd.concat({"Before": self._table(self.before), "After": self._table(self.after)}, axis=1)
        frame = frame.swaplevel(axis=1).reindex(
            columns=pd.MultiIndex.from_product([self.columns, ["Before", "After"]])
        )
        frame.loc[TOTAL] = frame.sum(axis=0)
        frame.index.name = self.group_by
        return frame.fillna(0).astype(int)

    def render(self) -> str:
        if not self.rows:
            return "(no pairs)\n"
        return self.to_frame().to_string() + "\n"

    def totals(self) -> Dict[str, int]:
        return {
            "before": sum(sum(cols.values()) for cols in self.before.values()),
            "after": sum(sum(cols.values()) for cols in self.after.values()),
        }

    def to_json(self) -> dict:
        return self.model_dump()

    def write(self, json_path, text_path=None) -> None:
        json_path = Path(json_path)
        json_path.parent.mkdir(parents=True, exist_ok=True)
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=2, ensure_ascii=False)
            f.write("\n")
        if text_path is not None:
            with open(text_path, "w", encoding="utf-8") as f:
                f.write(self.render())


def _count(pairs: Sequence[SentencePair], row_of, col_of, rows, columns) -> Dict[str, Dict[str, int]]:
    if not pairs:
        return {row: {col: 0 for col in columns} for row in rows}
    frame = pd.DataFrame({"row": [row_of(p) for p in pairs], "col": [col_of(p) for p in pairs]})
    table = pd.crosstab(frame["row"], frame["col"]).reindex(index=rows, columns=columns, fill_value=0)
    return {row: {col: int(table.at[row, col]) for col in columns} for row in rows}


def stats_report(
    corpus_before: Sequence[SentencePair],
    corpus_after: Sequence[SentencePair],
    group_by: GroupBy = "dataset",
) -> PipelineStats:
    """Count both corpora; every pair id after must exist before."""
    if group_by not in _KEYS:
        raise ValueError(f"unknown group_by {group_by!r}")
    before_by_id = {pair.id: pair for pair in corpus_before}
    missing = sorted(pair.id for pair in corpus_after if pair.id not in before_by_id)
    if missing:
        raise CorpusFormatError(
            f"after-corpus has {len(missing)} pair ids missing from the before-corpus (first: {missing[:5]})"
        )

    row_of = _KEYS[group_by]
    col_of = _KEYS["lang_pair" if group_by == "dataset" else "dataset"]
    # groups come from the before-corpus record
    after = [before_by_id[pair.id] for pair in corpus_after]
    rows = sorted({row_of(p) for p in corpus_before})
    columns = sorted({col_of(p) for p in corpus_before})
    stats = PipelineStats(
        group_by=group_by,
        rows=rows,
        columns=columns,
        before=_count(list(corpus_before), row_of, col_of, rows, columns),
        after=_count(after, row_of, col_of, rows, columns),
    )
    totals = stats.totals()
    logger.info(f"[stats] {totals['after']}/{totals['before']} pairs kept across {len(rows)} {group_by} groups")
    return stats
