"""Ranking evaluation: filtered MRR/Hit@k, alignment cosine ranking, AUC-PR.

Ranks use the pessimistic tie rule throughout: the target is placed below
every equal-scoring competitor, so constant models cannot score well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cell import single_step_outputs
from .genotype import Genotype
from .params import ParameterStore
from .training import TrainConfig, path_loss
from . import autodiff as ad

from .kg import (TASK_COUNTRIES, TASK_ENTITY_ALIGNMENT, TASK_LINK_PREDICTION)


@dataclass(frozen=True)
class RankReport:
    mrr: float
    hit1: float
    hit10: float
    n_queries: int

    def __post_init__(self):
        if self.n_queries <= 0:
            raise ValueError("RankReport requires n_queries > 0")
        if not (0.0 < self.mrr <= 1.0 and 0.0 <= self.hit1 <= self.hit10 <= 1.0
                and self.mrr >= self.hit1):
            raise ValueError(f"inconsistent rank report: {self}")


def _report_from_ranks(ranks: np.ndarray) -> RankReport:
    ranks = np.asarray(ranks, dtype=np.float64)
    return RankReport(mrr=float((1.0 / ranks).mean()),
                      hit1=float((ranks <= 1).mean()),
                      hit10=float((ranks <= 10).mean()),
                      n_queries=len(ranks))


def pessimistic_rank(scores: np.ndarray, target_idx: int,
                     exclude: np.ndarray | None = None) -> int:
    """1 + (#strictly greater) + (#ties other than the target), skipping
    excluded candidate positions."""
    t = scores[target_idx]
    greater = scores > t
    equal = scores == t
    if exclude is not None and len(exclude):
        greater[exclude] = False
        equal[exclude] = False
    return int(1 + greater.sum() + equal.sum() - bool(equal[target_idx]))


def lp_rank(g: Genotype, store: ParameterStore, queries: np.ndarray,
            filters: dict[tuple[int, int], set[int]],
            candidates: np.ndarray | None = None) -> RankReport:
    """Filtered object ranking for (s, r, o) queries.

    Scores come from a single cell step (h0 = s) dotted against the entity
    table; other known-true objects of (s, r) are removed before ranking.
    Head-side queries must be supplied pre-inverted (o, r_inv, s).
    """
    queries = np.asarray(queries, dtype=np.int64).reshape(-1, 3)
    if len(queries) == 0:
        raise ValueError("no queries")
    if queries[:, [0, 2]].max() >= store.n_entities or \
            queries[:, 1].max() >= store.pad_relation_id:
        raise ValueError("query ids outside the vocabulary")
    vs = single_step_outputs(g, store, queries[:, 0], queries[:, 1])
    ent = store["entities"]
    cand = (np.arange(store.n_entities) if candidates is None
            else np.asarray(candidates, dtype=np.int64))
    cand_pos = {int(e): i for i, e in enumerate(cand)}
    scores = vs @ ent[cand].T
    ranks = np.empty(len(queries), dtype=np.int64)
    for i, (s, r, o) in enumerate(queries):
        known = filters.get((int(s), int(r)), set())
        excl = np.asarray([cand_pos[e] for e in known
                           if e != o and e in cand_pos], dtype=np.int64)
        ranks[i] = pessimistic_rank(scores[i], cand_pos[int(o)], excl)
    return _report_from_ranks(ranks)


def ea_rank(store: ParameterStore, pairs: np.ndarray, candidates: np.ndarray,
            gold_pairs: np.ndarray | None = None) -> RankReport:
    """Cosine ranking of each pair's right entity among the KG2 candidates,
    filtered by the other gold counterparts of the left entity."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    candidates = np.asarray(candidates, dtype=np.int64)
    if len(candidates) == 0:
        raise ValueError("empty candidate set")
    if len(pairs) == 0:
        raise ValueError("no pairs")
    gold: dict[int, set[int]] = {}
    src = pairs if gold_pairs is None else \
        np.asarray(gold_pairs, dtype=np.int64).reshape(-1, 2)
    for a, b in src:
        gold.setdefault(int(a), set()).add(int(b))
    ent = store["entities"]

    def unit(x: np.ndarray) -> np.ndarray:
        n = np.linalg.norm(x, axis=-1, keepdims=True)
        return x / np.maximum(n, 1e-300)

    left = unit(ent[pairs[:, 0]])
    cand_emb = unit(ent[candidates])
    cand_pos = {int(e): i for i, e in enumerate(candidates)}
    scores = left @ cand_emb.T
    ranks = np.empty(len(pairs), dtype=np.int64)
    for i, (a, b) in enumerate(pairs):
        excl = np.asarray([cand_pos[e] for e in gold.get(int(a), ())
                           if e != b and e in cand_pos], dtype=np.int64)
        ranks[i] = pessimistic_rank(scores[i], cand_pos[int(b)], excl)
    return _report_from_ranks(ranks)


def auc_pr(scores, labels) -> float:
    """Area under the precision-recall curve via the average-precision
    (step-interpolation) estimator, with score ties merged into one block."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("auc_pr requires at least one positive label")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order].astype(np.float64)
    block_end = np.ones(len(s), dtype=bool)
    block_end[:-1] = s[:-1] != s[1:]
    tp = np.cumsum(y)[block_end]
    pp = (np.arange(len(s)) + 1)[block_end]
    precision = tp / pp
    recall = tp / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev_recall) * precision).sum())


def countries_auc(g: Genotype, store: ParameterStore, split: np.ndarray,
                  candidates: np.ndarray) -> float:
    """Pooled AUC-PR of (country, locatedin, ?) queries over the candidate
    regions; labels come from the evaluated split."""
    split = np.asarray(split, dtype=np.int64).reshape(-1, 3)
    keys = np.unique(split[:, :2], axis=0)
    gold: dict[tuple[int, int], set[int]] = {}
    for s, r, o in split:
        gold.setdefault((int(s), int(r)), set()).add(int(o))
    vs = single_step_outputs(g, store, keys[:, 0], keys[:, 1])
    scores = vs @ store["entities"][candidates].T
    labels = np.zeros_like(scores, dtype=bool)
    for i, (s, r) in enumerate(keys):
        true = gold[(int(s), int(r))]
        labels[i] = np.fromiter((int(c) in true for c in candidates),
                                dtype=bool, count=len(candidates))
    return auc_pr(scores.ravel(), labels.ravel())


def search_measurement(task_kind: str, g: Genotype, store: ParameterStore,
                       *, batch: np.ndarray | None = None,
                       cfg: TrainConfig | None = None,
                       pad_relation: int | None = None,
                       queries: np.ndarray | None = None,
                       filters: dict | None = None,
                       candidates: np.ndarray | None = None,
                       metric: str = "hit1") -> float:
    """Scalar reward feeding the architecture controller.

    Entity alignment: negative path loss on a training mini-batch (alignment
    pairs are not paths, so the loss stands in for the metric). Link
    prediction: Hit@1 (or MRR) over a validation mini-batch of triplets.
    Countries: AUC-PR over the validation queries.
    """
    if task_kind == TASK_ENTITY_ALIGNMENT:
        leaves = {k: _const(v) for k, v in store.tensors.items()}
        tape = ad.Tape()
        loss = path_loss(g, leaves, batch, cfg, tape, pad_relation)
        return -float(loss.value)
    if task_kind == TASK_LINK_PREDICTION:
        report = lp_rank(g, store, queries, filters, candidates)
        return report.hit1 if metric == "hit1" else report.mrr
    if task_kind == TASK_COUNTRIES:
        return countries_auc(g, store, queries, candidates)
    raise ValueError(f"unknown task_kind {task_kind!r}")


def _const(arr: np.ndarray) -> ad.Tensor:
    t = ad.Tensor.__new__(ad.Tensor)
    t.value = arr
    t.grad = None
    t.requires_grad = False
    t.name = ""
    return t
