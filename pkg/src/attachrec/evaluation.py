"""Rank metrics, paired significance tests and run reports."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as sps

from .corpus import Instance
from .io import dumps_json
from .retrieval import DEFAULT_ITEM_LIMIT, DEFAULT_MESSAGE_LIMIT, Index, ItemRanking, UnanswerableQuery, rank_items

METRICS = ("rr", "ndcg", "p5")


def _check_relevant(relevant) -> set[str]:
    relevant = set(relevant)
    if not relevant:
        raise ValueError("empty relevant set")
    return relevant


def reciprocal_rank(ranking: Sequence[str], relevant: Iterable[str]) -> float:
    relevant = _check_relevant(relevant)
    for pos, iid in enumerate(ranking, start=1):
        if iid in relevant:
            return 1.0 / pos
    return 0.0


def ndcg(ranking: Sequence[str], relevant: Iterable[str], limit: int = DEFAULT_ITEM_LIMIT) -> float:
    """Binary-gain NDCG over the whole (truncated) ranking."""
    relevant = _check_relevant(relevant)
    dcg = sum(1.0 / math.log2(pos + 1)
              for pos, iid in enumerate(ranking[:limit], start=1) if iid in relevant)
    ideal = sum(1.0 / math.log2(pos + 1) for pos in range(1, min(len(relevant), limit) + 1))
    return dcg / ideal


def precision_at_5(ranking: Sequence[str], relevant: Iterable[str]) -> float:
    relevant = _check_relevant(relevant)
    return sum(1 for iid in ranking[:5] if iid in relevant) / 5.0


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sided paired Student t-test.

    Zero-variance differences give ``(nan, 1.0)`` when their mean is 0 and
    ``(±inf, 0.0)`` otherwise.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("samples must have equal length")
    n = a.size
    if n < 2:
        raise ValueError("need at least two paired observations")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        if mean == 0:
            return math.nan, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / (sd / math.sqrt(n))
    p = 2.0 * sps.t.sf(abs(t), df=n - 1)
    return float(t), float(p)


@dataclass
class RunRow:
    instance_id: str
    method: str
    query: list[str]
    rr: float
    ndcg: float
    p5: float
    error: str | None = None

    @property
    def query_length(self) -> int:
        return len(self.query)

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["query_length"] = self.query_length
        return rec


@dataclass
class RunReport:
    rows: list[RunRow]
    reference: str | None = None
    config: dict = field(default_factory=dict)

    def methods(self) -> list[str]:
        return list(dict.fromkeys(r.method for r in self.rows))

    def rows_for(self, method: str) -> list[RunRow]:
        return sorted((r for r in self.rows if r.method == method), key=lambda r: r.instance_id)

    def values(self, method: str, metric: str) -> np.ndarray:
        return np.array([getattr(r, metric) for r in self.rows_for(method)])

    def aggregates(self, method: str) -> dict[str, float]:
        rows = self.rows_for(method)
        return {
            "mrr": float(np.mean([r.rr for r in rows])) if rows else 0.0,
            "ndcg": float(np.mean([r.ndcg for r in rows])) if rows else 0.0,
            "p5": float(np.mean([r.p5 for r in rows])) if rows else 0.0,
            "n": len(rows),
            "errors": sum(1 for r in rows if r.error),
        }

    def rr_deltas(self, method: str, reference: str | None = None) -> np.ndarray:
        reference = reference or self.reference
        return self.values(method, "rr") - self.values(reference, "rr")

    def length_distribution(self, method: str) -> dict[int, int]:
        return dict(sorted(Counter(r.query_length for r in self.rows_for(method)).items()))

    def significance(self, method: str, reference: str | None = None) -> dict[str, dict[str, float]]:
        reference = reference or self.reference
        out = {}
        for metric in METRICS:
            a, b = self.values(method, metric), self.values(reference, metric)
            if len(a) < 2:
                continue
            t, p = paired_t_test(a, b)
            out[metric] = {"t": t, "p": p}
        return out

    def summary(self) -> dict:
        summary = {"reference": self.reference, "config": self.config, "methods": {}}
        for m in self.methods():
            entry = {"aggregates": self.aggregates(m), "query_lengths": self.length_distribution(m)}
            if self.reference and m != self.reference and self.reference in self.methods():
                entry["vs_reference"] = self.significance(m)
            summary["methods"][m] = entry
        return summary

    def write(self, path: str | Path) -> None:
        """Per-instance rows followed by one summary line."""
        with open(path, "w", encoding="utf-8") as fh:
            for r in sorted(self.rows, key=lambda r: (r.method, r.instance_id)):
                fh.write(dumps_json(r.to_record()) + "\n")
            fh.write(dumps_json({"summary": _jsonable(self.summary())}) + "\n")


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


Formulator = Callable[[Instance], list[str]]


def evaluate_instance(index: Index, instance: Instance, query: Sequence[str], method: str,
                      msg_limit: int = DEFAULT_MESSAGE_LIMIT,
                      item_limit: int = DEFAULT_ITEM_LIMIT) -> tuple[RunRow, ItemRanking]:
    error = None
    ranking = ItemRanking((), item_limit)
    if not query:
        error = "empty query"
    else:
        try:
            ranking = rank_items(index, query, instance.t_prime, msg_limit, item_limit)
        except UnanswerableQuery as exc:
            error = str(exc)
    ids = ranking.item_ids()
    rel = instance.relevant_items
    row = RunRow(instance.instance_id, method, list(query), reciprocal_rank(ids, rel),
                 ndcg(ids, rel, item_limit), precision_at_5(ids, rel), error)
    return row, ranking


def evaluate_run(instances: Sequence[Instance], formulators: Mapping[str, Formulator],
                 index_for: Callable[[Instance], Index], reference: str | None = None,
                 msg_limit: int = DEFAULT_MESSAGE_LIMIT, item_limit: int = DEFAULT_ITEM_LIMIT,
                 rankings: dict | None = None) -> RunReport:
    """Formulate, retrieve and score every instance with every method.

    ``index_for`` maps an instance to the replier's mailbox index.  When a
    ``rankings`` dict is passed it is filled with ``{method: {instance_id:
    ItemRanking}}`` for TREC export.
    """
    rows = []
    for inst in sorted(instances, key=lambda i: i.instance_id):
        index = index_for(inst)
        for method, formulate in formulators.items():
            row, ranking = evaluate_instance(index, inst, formulate(inst), method, msg_limit, item_limit)
            rows.append(row)
            if rankings is not None:
                rankings.setdefault(method, {})[inst.instance_id] = ranking
    return RunReport(rows, reference)


def write_trec_run(path: str | Path, rankings: Mapping[str, ItemRanking], tag: str) -> None:
    """TREC run file.

    Scores are written at single precision and made strictly decreasing,
    because evaluation tools compare them as floats and break ties by docno;
    the exported order is therefore exactly ours.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(rankings):
            prev = np.float32(np.inf)
            for rank, (iid, score) in enumerate(rankings[qid].entries, start=1):
                value = np.float32(score)
                if value >= prev:
                    value = np.nextafter(prev, np.float32(-np.inf))
                prev = value
                fh.write(f"{qid} Q0 {iid} {rank} {float(value)!r} {tag}\n")


def write_qrels(path: str | Path, instances: Iterable[Instance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in sorted(instances, key=lambda i: i.instance_id):
            for iid in inst.relevant_items:
                fh.write(f"{inst.instance_id} 0 {iid} 1\n")


def relative_mrr_delta(ablated: float, full: float) -> float:
    return (ablated - full) / full if full else 0.0


def ablation_run(categories: Sequence[str], run_mrr: Callable[[tuple[str, ...]], float]) -> dict[str, float]:
    """Relative MRR change when each feature category is left out.

    ``run_mrr`` trains and evaluates a model with the given categories
    ablated and returns its MRR; ``()`` is the full-feature run.
    """
    full = run_mrr(())
    out = {}
    for cat in categories:
        out[cat] = relative_mrr_delta(run_mrr((cat,)), full)
    return out
