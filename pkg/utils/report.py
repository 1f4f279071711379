"""
Per-stage accept/reject bookkeeping shared by every filter and cleaning pass.
"""
import json
from pathlib import Path
from typing import Dict, List

from pydantic import BaseModel


class StageCounts(BaseModel):
    input_count: int = 0
    rejected_count: int = 0
    extra: Dict[str, float] = {}

    @property
    def output_count(self) -> int:
        return self.input_count - self.rejected_count


class RejectionRecord(BaseModel):
    pair_id: int
    stage: str
    reason: str


class FilterReport(BaseModel):
    """Stage counts in execution order plus one record per rejected pair."""

    stages: Dict[str, StageCounts] = {}
    rejections: List[RejectionRecord] = []
    errors: List[str] = []

    def start_stage(self, stage: str, input_count: int) -> StageCounts:
        counts = StageCounts(input_count=input_count)
        self.stages[stage] = counts
        return counts

    def record_rejection(self, pair_id: int, stage: str, reason: str) -> None:
        self.stages.setdefault(stage, StageCounts()).rejected_count += 1
        self.rejections.append(RejectionRecord(pair_id=pair_id, stage=stage, reason=reason))

    def bump(self, stage: str, key: str, amount: float = 1) -> None:
        counts = self.stages.setdefault(stage, StageCounts())
        counts.extra[key] = counts.extra.get(key, 0) + amount

    def merge(self, other: "FilterReport") -> "FilterReport":
        for stage, counts in other.stages.items():
            self.stages[stage] = counts.model_copy(deep=True)
        self.rejections.extend(other.rejections)
        self.errors.extend(other.errors)
        return self

    def accumulate(self, other: "FilterReport") -> "FilterReport":
        """Add counts stage by stage; for one stage run separately over disjoint pairs."""
        for stage, counts in other.stages.items():
            total = self.stages.setdefault(stage, StageCounts())
            total.input_count += counts.input_count
            total.rejected_count += counts.rejected_count
            for key, value in counts.extra.items():
                total.extra[key] = total.extra.get(key, 0) + value
        self.rejections.extend(other.rejections)
        self.errors.extend(other.errors)
        return self

    def prefixed(self, prefix: str) -> "FilterReport":
        """Copy with every stage name (and rejection stage) prefixed, e.g. ``synthetic:length``."""
        return FilterReport(
            stages={f"{prefix}{stage}": counts.model_copy(deep=True) for stage, counts in self.stages.items()},
            rejections=[r.model_copy(update={"stage": f"{prefix}{r.stage}"}) for r in self.rejections],
            errors=list(self.errors),
        )

    def rejected_ids(self) -> Dict[int, RejectionRecord]:
        return {record.pair_id: record for record in self.rejections}

    def is_consistent(self) -> bool:
        """Output of every stage equals the input of the next one."""
        counts = list(self.stages.values())
        return all(a.output_count == b.input_count for a, b in zip(counts, counts[1:]))

    def to_json(self) -> dict:
        return self.model_dump()

    def write(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=2, ensure_ascii=False)
            f.write("\n")

    @classmethod
    def read(cls, path) -> "FilterReport":
        with open(path, "r", encoding="utf-8") as f:
            return cls.model_validate(json.load(f))
