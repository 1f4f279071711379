"""
Exact cosine kNN, ratio-margin scoring, margin filtering and nearest-neighbour
bitext mining over embedding tables.

score(x, y) = cos(x, y) / (sum_{z in NN_k(x)} cos(x, z) / 2k + sum_{z in NN_k(y)} cos(y, z) / 2k)

NN_k(x) is taken over the whole opposite-language table, so it includes the
candidate y itself.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from utils.corpus import Sentence, SentencePair
from utils.embeddings import EmbeddingTable
from utils.errors import EmbeddingError
from utils.report import FilterReport

logger = logging.getLogger(__name__)

DEFAULT_K = 3
DEFAULT_MARGIN_THRESHOLD = 1.09
DEFAULT_MINE_THRESHOLD = 0.7
DEGENERATE_EPS = 1e-9
BLOCK_ROWS = 1024


class NeighborSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    query_id: int
    neighbors: List[Tuple[int, float]]
    k: int = DEFAULT_K

    @property
    def ids(self) -> List[int]:
        return [cid for cid, _ in self.neighbors]

    @property
    def cosine_sum(self) -> float:
        return float(sum(cos for _, cos in self.neighbors))


class MarginScore(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: Optional[float]
    cos_xy: float
    denom: float

    @property
    def defined(self) -> bool:
        return self.value is not None


def cosine(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise EmbeddingError(f"dimension mismatch: {x.shape} vs {y.shape}")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise EmbeddingError("zero_vector")
    return float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))


def _check_dims(a: EmbeddingTable, b: EmbeddingTable) -> None:
    if a.dim != b.dim:
        raise EmbeddingError(f"dimension mismatch: {a.dim} vs {b.dim}")


def _ranked(sims: np.ndarray, candidate_ids: np.ndarray, k: int) -> List[Tuple[int, float]]:
    # cosine descending, then candidate id ascending
    order = np.lexsort((candidate_ids, -sims))[:k]
    return [(int(candidate_ids[i]), float(sims[i])) for i in order]


def knn(query_id: int, query_table: EmbeddingTable, candidate_table: EmbeddingTable, k: int = DEFAULT_K) -> NeighborSet:
    """Exact top-k candidates by cosine, ties broken by ascending id."""
    _check_dims(query_table, candidate_table)
    if len(candidate_table) == 0:
        raise EmbeddingError("candidate pool is empty")
    query = query_table.normalized[_row_index(query_table, query_id)]
    sims = np.clip(candidate_table.normalized @ query, -1.0, 1.0)
    return NeighborSet(
        query_id=query_id,
        neighbors=_ranked(sims, np.arange(len(candidate_table)), k),
        k=k,
    )


def _row_index(table: EmbeddingTable, sentence_id: int) -> int:
    if not 0 <= sentence_id < len(table):
        raise EmbeddingError(f"no embedding row for sentence {sentence_id} (table has {len(table)} rows)")
    return sentence_id


def _margin(cos_xy: float, x_sum: float, x_n: int, y_sum: float, y_n: int) -> MarginScore:
    denom = x_sum / (2 * x_n) + y_sum / (2 * y_n)
    value = cos_xy / denom if denom > DEGENERATE_EPS else None
    return MarginScore(value=value, cos_xy=cos_xy, denom=float(denom))


def margin_score(
    x_id: int, y_id: int, x_table: EmbeddingTable, y_table: EmbeddingTable, k: int = DEFAULT_K
) -> MarginScore:
    x_nn = knn(x_id, x_table, y_table, k)
    y_nn = knn(y_id, y_table, x_table, k)
    cos_xy = cosine(x_table.row(x_id), y_table.row(y_id))
    return _margin(cos_xy, x_nn.cosine_sum, len(x_nn.neighbors), y_nn.cosine_sum, len(y_nn.neighbors))


def topk_cosine_sums(queries: np.ndarray, pool: np.ndarray, k: int) -> np.ndarray:
    """Sum of the k largest cosines of each (unit) query row against a (unit) pool."""
    k = min(k, pool.shape[0])
    sums = np.empty(queries.shape[0], dtype=np.float64)
    for start in range(0, queries.shape[0], BLOCK_ROWS):
        sims = np.clip(queries[start:start + BLOCK_ROWS] @ pool.T, -1.0, 1.0)
        if k < sims.shape[1]:
            sims = np.partition(sims, sims.shape[1] - k, axis=1)[:, -k:]
        sums[start:start + BLOCK_ROWS] = sims.sum(axis=1)
    return sums


def score_pairs(
    pairs: Sequence[SentencePair], src_table: EmbeddingTable, tgt_table: EmbeddingTable, k: int = DEFAULT_K
) -> List[MarginScore]:
    """Margin scores for a batch of pairs, rows addressed by sentence id."""
    _check_dims(src_table, tgt_table)
    if not pairs:
        return []
    src_rows, tgt_rows = [], []
    for pair in pairs:
        try:
            src_rows.append(_row_index(src_table, pair.src.id))
            tgt_rows.append(_row_index(tgt_table, pair.tgt.id))
        except EmbeddingError as e:
            raise EmbeddingError(f"pair {pair.id}: {e}") from e

    xs = src_table.normalized[src_rows]
    ys = tgt_table.normalized[tgt_rows]
    x_sums = topk_cosine_sums(xs, tgt_table.normalized, k)
    y_sums = topk_cosine_sums(ys, src_table.normalized, k)
    cos_xy = np.clip(np.einsum("ij,ij->i", xs, ys), -1.0, 1.0)
    x_n, y_n = min(k, len(tgt_table)), min(k, len(src_table))
    return [
        _margin(float(c), float(xsum), x_n, float(ysum), y_n)
        for c, xsum, ysum in zip(cos_xy, x_sums, y_sums)
    ]


def filter_by_margin(
    pairs: List[SentencePair],
    src_table: EmbeddingTable,
    tgt_table: EmbeddingTable,
    threshold: float = DEFAULT_MARGIN_THRESHOLD,
    k: int = DEFAULT_K,
) -> Tuple[List[SentencePair], FilterReport]:
    """Keep pairs whose defined margin score is >= threshold."""
    report = FilterReport()
    report.start_stage("margin", len(pairs))
    survivors = []
    for pair, score in zip(pairs, score_pairs(pairs, src_table, tgt_table, k)):
        if not score.defined:
            report.record_rejection(pair.id, "margin", "degenerate_margin")
        elif score.value < threshold:
            report.record_rejection(pair.id, "margin", "low_margin")
        else:
            survivors.append(pair.with_scores(margin=score.value).accept())
    logger.info(f"[margin] {len(survivors)}/{len(pairs)} pairs score >= {threshold} (k={k})")
    return survivors, report


def mine_pairs(
    src_sentences: Sequence[Sentence],
    src_table: EmbeddingTable,
    tgt_sentences: Sequence[Sentence],
    tgt_table: EmbeddingTable,
    sim_threshold: float = DEFAULT_MINE_THRESHOLD,
    mutual: bool = False,
    start_id: int = 0,
) -> List[SentencePair]:
    """Pair each source sentence with its nearest target when cosine >= sim_threshold.

    A target claimed by several sources goes to the highest cosine (lowest
    source id on ties). ``mutual`` also requires the source to be the target's
    nearest neighbour.
    """
    if not src_sentences or not tgt_sentences:
        return []
    _check_dims(src_table, tgt_table)
    srcs = sorted(src_sentences, key=lambda s: s.id)
    tgts = sorted(tgt_sentences, key=lambda s: s.id)
    xs = src_table.normalized[[_row_index(src_table, s.id) for s in srcs]]
    ys = tgt_table.normalized[[_row_index(tgt_table, s.id) for s in tgts]]
    sims = np.clip(xs @ ys.T, -1.0, 1.0)

    best_tgt = np.argmax(sims, axis=1).tolist()
    best_src = np.argmax(sims, axis=0).tolist()
    claims: Dict[int, Tuple[int, float]] = {}
    for i, j in enumerate(best_tgt):
        cos = float(sims[i, j])
        if cos < sim_threshold:
            continue
        if mutual and best_src[j] != i:
            continue
        if j not in claims or cos > claims[j][1]:
            claims[j] = (i, cos)

    kept = sorted((i, j, cos) for j, (i, cos) in claims.items())
    return [
        SentencePair(
            id=start_id + n,
            src=srcs[i],
            tgt=tgts[j],
            scores={"mine_cos": cos},
        )
        for n, (i, j, cos) in enumerate(kept)
    ]


def mine_documents(
    src_sentences: Sequence[Sentence],
    src_table: EmbeddingTable,
    tgt_sentences: Sequence[Sentence],
    tgt_table: EmbeddingTable,
    sim_threshold: float = DEFAULT_MINE_THRESHOLD,
    mutual: bool = False,
) -> List[SentencePair]:
    """Mine each comparable document separately; documents are matched by doc_id."""
    tgt_by_doc: Dict[Optional[str], List[Sentence]] = {}
    for sentence in tgt_sentences:
        tgt_by_doc.setdefault(sentence.doc_id, []).append(sentence)
    src_by_doc: Dict[Optional[str], List[Sentence]] = {}
    for sentence in src_sentences:
        src_by_doc.setdefault(sentence.doc_id, []).append(sentence)

    mined: List[SentencePair] = []
    for doc_id, srcs in src_by_doc.items():
        found = mine_pairs(
            srcs, src_table, tgt_by_doc.get(doc_id, []), tgt_table, sim_threshold, mutual, start_id=len(mined)
        )
        mined.extend(found)
    logger.info(f"[mine] {len(mined)} pairs mined from {len(src_by_doc)} documents at cos >= {sim_threshold}")
    return mined
