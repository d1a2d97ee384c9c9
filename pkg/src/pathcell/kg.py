"""Knowledge-graph loading, indexing, and dataset bundles.

Graphs are immutable after construction: vocabularies are first-appearance
ordered, triplets are deduplicated, and the out-adjacency index groups the
triplets by subject. Inverse relations and alignment bridges are added by
derivation functions that build a new graph rather than mutating.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

INVERSE_SUFFIX = "⁻¹"  # appended to a relation label for its inverse
ALIGN_RELATION = "__aligned__"   # reserved bridge relation for seed pairs

TASK_LINK_PREDICTION = "link-prediction"
TASK_ENTITY_ALIGNMENT = "entity-alignment"
TASK_COUNTRIES = "countries"


class KGFormatError(ValueError):
    """Malformed input file; message carries the offending line number."""


class VocabError(KeyError):
    """A label was not found in (or conflicts with) an existing vocabulary."""


class PartitionError(ValueError):
    """An alignment pair does not span the two graph partitions."""


class IntegrityWarning(UserWarning):
    pass


class KnowledgeGraph:
    """Entity/relation vocabularies plus a deduplicated triplet store."""

    def __init__(self, entities: list[str], relations: list[str],
                 triplets: np.ndarray, kg_tag: str | None = None,
                 partition_of: np.ndarray | None = None,
                 duplicate_count: int = 0):
        if len(set(entities)) != len(entities):
            raise VocabError("duplicate entity labels")
        if len(set(relations)) != len(relations):
            raise VocabError("duplicate relation labels")
        self.entities = list(entities)
        self.relations = list(relations)
        self.entity_id = {e: i for i, e in enumerate(self.entities)}
        self.relation_id = {r: i for i, r in enumerate(self.relations)}
        triplets = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
        uniq, first = np.unique(triplets, axis=0, return_index=True)
        if len(uniq) != len(triplets):
            raise ValueError("duplicate triplets passed to KnowledgeGraph")
        if len(triplets):
            if triplets[:, [0, 2]].max(initial=-1) >= len(self.entities):
                raise VocabError("entity id out of range")
            if triplets[:, 1].max(initial=-1) >= len(self.relations):
                raise VocabError("relation id out of range")
        self.triplets = triplets
        self.kg_tag = kg_tag
        self.partition_of = (np.asarray(partition_of, dtype=np.int8)
                             if partition_of is not None else None)
        self.duplicate_count = duplicate_count
        self.out_adjacency = self._build_adjacency()
        self._und_neighbors: list[set[int]] | None = None

    def _build_adjacency(self) -> list[np.ndarray]:
        adj: list[list[tuple[int, int]]] = [[] for _ in self.entities]
        for s, r, o in self.triplets:
            adj[s].append((r, o))
        empty = np.empty((0, 2), dtype=np.int64)
        return [np.asarray(a, dtype=np.int64) if a else empty for a in adj]

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_triplets(self) -> int:
        return len(self.triplets)

    def und_neighbors(self, e: int) -> set[int]:
        """Neighbors of e on the undirected skeleton (either edge direction)."""
        if self._und_neighbors is None:
            nbrs: list[set[int]] = [set() for _ in self.entities]
            for s, _, o in self.triplets:
                nbrs[s].add(o)
                nbrs[o].add(s)
            self._und_neighbors = nbrs
        return self._und_neighbors[e]

    def triplet_set(self) -> set[tuple[int, int, int]]:
        return set(map(tuple, self.triplets.tolist()))


def _parse_lines(path, n_fields: int):
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.split("\n"), start=1):
        if line == "":
            continue
        fields = line.split("\t")
        if len(fields) != n_fields:
            raise KGFormatError(
                f"{path}:{lineno}: expected {n_fields} tab-separated fields, "
                f"got {len(fields)}")
        yield fields


def load_triplets(path, vocab_mode: str = "build",
                  vocab: tuple[list[str], list[str]] | None = None,
                  kg_tag: str | None = None) -> KnowledgeGraph:
    """Read a tab-separated triplet file into a graph.

    vocab_mode "build" grows vocabularies in first-appearance order;
    "reuse" requires every label to exist in the supplied vocab. Duplicate
    lines are dropped with a counted warning.
    """
    if vocab_mode not in ("build", "reuse"):
        raise ValueError(f"unknown vocab_mode {vocab_mode!r}")
    if vocab_mode == "reuse":
        if vocab is None:
            raise ValueError("vocab_mode='reuse' requires a vocab")
        entities, relations = list(vocab[0]), list(vocab[1])
    else:
        entities, relations = list(vocab[0]) if vocab else [], \
                              list(vocab[1]) if vocab else []
    ent_id = {e: i for i, e in enumerate(entities)}
    rel_id = {r: i for i, r in enumerate(relations)}

    def ent(label: str) -> int:
        if label not in ent_id:
            if vocab_mode == "reuse":
                raise VocabError(f"{path}: unknown entity label {label!r}")
            ent_id[label] = len(entities)
            entities.append(label)
        return ent_id[label]

    def rel(label: str) -> int:
        if label not in rel_id:
            if vocab_mode == "reuse":
                raise VocabError(f"{path}: unknown relation label {label!r}")
            rel_id[label] = len(relations)
            relations.append(label)
        return rel_id[label]

    seen: set[tuple[int, int, int]] = set()
    rows: list[tuple[int, int, int]] = []
    dups = 0
    for s, r, o in _parse_lines(path, 3):
        t = (ent(s), rel(r), ent(o))
        if t in seen:
            dups += 1
        else:
            seen.add(t)
            rows.append(t)
    if dups:
        warnings.warn(f"{path}: dropped {dups} duplicate triplet line(s)",
                      IntegrityWarning)
    triplets = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
    return KnowledgeGraph(entities, relations, triplets, kg_tag=kg_tag,
                          duplicate_count=dups)


def add_inverse_relations(graph: KnowledgeGraph) -> KnowledgeGraph:
    """Append an inverse relation per base relation and the mirrored triplets.

    Used for link-prediction graphs so walks traverse edges in both directions
    and head queries reduce to tail queries on the inverse relation.
    """
    n_rel = graph.n_relations
    relations = graph.relations + [r + INVERSE_SUFFIX for r in graph.relations]
    fwd = graph.triplets
    inv = np.stack([fwd[:, 2], fwd[:, 1] + n_rel, fwd[:, 0]], axis=1)
    both = np.concatenate([fwd, inv], axis=0)
    both = _stable_unique(both)  # self-loops can mirror onto themselves
    return KnowledgeGraph(graph.entities, relations, both, kg_tag=graph.kg_tag,
                          partition_of=graph.partition_of)


def _stable_unique(triplets: np.ndarray) -> np.ndarray:
    _, first = np.unique(triplets, axis=0, return_index=True)
    return triplets[np.sort(first)]


def merge_graphs(g1: KnowledgeGraph, g2: KnowledgeGraph) -> KnowledgeGraph:
    """Disjoint union of two graphs with per-entity partition ids 0 and 1."""
    overlap = set(g1.entities) & set(g2.entities)
    if overlap:
        raise VocabError(f"entity labels shared across partitions: "
                         f"{sorted(overlap)[:3]}...")
    entities = g1.entities + g2.entities
    relations = g1.relations + g2.relations
    e_off, r_off = g1.n_entities, g1.n_relations
    t2 = g2.triplets + np.asarray([e_off, r_off, e_off], dtype=np.int64)
    triplets = np.concatenate([g1.triplets, t2], axis=0)
    partition = np.concatenate([np.zeros(g1.n_entities, dtype=np.int8),
                                np.ones(g2.n_entities, dtype=np.int8)])
    return KnowledgeGraph(entities, relations, triplets,
                          kg_tag=f"{g1.kg_tag or 'kg1'}+{g2.kg_tag or 'kg2'}",
                          partition_of=partition)


def add_alignment_bridges(graph: KnowledgeGraph,
                          pairs: np.ndarray) -> KnowledgeGraph:
    """Connect seed-aligned entities in both directions via a reserved
    relation, so walks can cross between the partitions."""
    relations = graph.relations + [ALIGN_RELATION]
    rid = len(graph.relations)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    bridges = np.concatenate([
        np.stack([pairs[:, 0], np.full(len(pairs), rid), pairs[:, 1]], axis=1),
        np.stack([pairs[:, 1], np.full(len(pairs), rid), pairs[:, 0]], axis=1),
    ], axis=0)
    triplets = np.concatenate([graph.triplets, bridges], axis=0)
    return KnowledgeGraph(graph.entities, relations, triplets,
                          kg_tag=graph.kg_tag, partition_of=graph.partition_of)


def load_alignment_pairs(path, graph: KnowledgeGraph) -> np.ndarray:
    """Read two-column entity-label pairs; output ids ordered (partition 0,
    partition 1). A pair inside a single partition is an error."""
    if graph.partition_of is None:
        raise PartitionError("graph has no partition information")
    out: list[tuple[int, int]] = []
    for a, b in _parse_lines(path, 2):
        for label in (a, b):
            if label not in graph.entity_id:
                raise VocabError(f"{path}: unknown entity label {label!r}")
        ia, ib = graph.entity_id[a], graph.entity_id[b]
        pa, pb = graph.partition_of[ia], graph.partition_of[ib]
        if pa == pb:
            raise PartitionError(
                f"{path}: pair ({a!r}, {b!r}) lies within one partition")
        out.append((ia, ib) if pa == 0 else (ib, ia))
    return np.asarray(out, dtype=np.int64).reshape(-1, 2)


def filter_sets(splits: list[np.ndarray]) -> dict[tuple[int, int], set[int]]:
    """(subject, relation) -> all true objects across the given splits."""
    filt: dict[tuple[int, int], set[int]] = {}
    for split in splits:
        for s, r, o in np.asarray(split, dtype=np.int64).reshape(-1, 3):
            filt.setdefault((int(s), int(r)), set()).add(int(o))
    return filt


@dataclass
class DatasetBundle:
    """A task-ready dataset: the training graph plus evaluation splits.

    For link prediction and countries, the graph holds the training triplets
    with inverse relations added; splits keep base (non-inverse) triplets.
    For entity alignment, the graph is the bridged union of the two KGs and
    the splits are aligned entity-id pairs.
    """
    graph: KnowledgeGraph
    task_kind: str
    n_base_relations: int
    train_triplets: np.ndarray | None = None
    valid_triplets: np.ndarray | None = None
    test_triplets: np.ndarray | None = None
    train_pairs: np.ndarray | None = None
    valid_pairs: np.ndarray | None = None
    test_pairs: np.ndarray | None = None
    candidates: np.ndarray | None = None  # countries: candidate region ids

    def __post_init__(self):
        if self.task_kind not in (TASK_LINK_PREDICTION, TASK_ENTITY_ALIGNMENT,
                                  TASK_COUNTRIES):
            raise ValueError(f"unknown task_kind {self.task_kind!r}")
        splits = (self.splits_as_pairs() if self.task_kind ==
                  TASK_ENTITY_ALIGNMENT else self.splits_as_triplets())
        seen: set[tuple] = set()
        for name, arr in splits:
            rows = set(map(tuple, arr.tolist()))
            if rows & seen:
                raise ValueError(f"split {name} overlaps an earlier split")
            seen |= rows

    def splits_as_triplets(self):
        return [(n, a) for n, a in (("train", self.train_triplets),
                                    ("valid", self.valid_triplets),
                                    ("test", self.test_triplets))
                if a is not None]

    def splits_as_pairs(self):
        return [(n, a) for n, a in (("train", self.train_pairs),
                                    ("valid", self.valid_pairs),
                                    ("test", self.test_pairs))
                if a is not None]

    def eval_filters(self) -> dict[tuple[int, int], set[int]]:
        """Filtered-ranking index over every split, both query directions."""
        arrs = [a for _, a in self.splits_as_triplets()]
        arrs += [invert_queries(a, self.n_base_relations) for a in arrs]
        return filter_sets(arrs)


def invert_queries(triplets: np.ndarray, n_base_relations: int) -> np.ndarray:
    """(s, r, o) -> (o, r_inverse, s) for head-side evaluation."""
    t = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    return np.stack([t[:, 2], t[:, 1] + n_base_relations, t[:, 0]], axis=1)


def _read_split_triplets(directory: Path):
    """Parse train/valid/test triplet files with one shared growing vocab."""
    entities: list[str] = []
    relations: list[str] = []
    ent_id: dict[str, int] = {}
    rel_id: dict[str, int] = {}
    splits = {}
    for name in ("train", "valid", "test"):
        f = directory / f"{name}.txt"
        if not f.exists():
            raise FileNotFoundError(f"missing split file {f}")
        rows = []
        for s, r, o in _parse_lines(f, 3):
            for lbl in (s, o):
                if lbl not in ent_id:
                    ent_id[lbl] = len(entities)
                    entities.append(lbl)
            if r not in rel_id:
                rel_id[r] = len(relations)
                relations.append(r)
            rows.append((ent_id[s], rel_id[r], ent_id[o]))
        splits[name] = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
    return entities, relations, splits


def load_lp_dataset(directory) -> DatasetBundle:
    """Directory with train.txt / valid.txt / test.txt triplet files."""
    directory = Path(directory)
    entities, relations, splits = _read_split_triplets(directory)
    train = _stable_unique(splits["train"])
    graph = KnowledgeGraph(entities, relations, train)
    graph = add_inverse_relations(graph)
    return DatasetBundle(graph=graph, task_kind=TASK_LINK_PREDICTION,
                         n_base_relations=len(relations),
                         train_triplets=train,
                         valid_triplets=splits["valid"],
                         test_triplets=splits["test"])


def load_countries(directory, task: str) -> DatasetBundle:
    """Countries S1/S2/S3 split files; evaluation asks (country, locatedin, ?)
    over the candidate regions (the objects seen in valid/test)."""
    if task not in ("S1", "S2", "S3"):
        raise ValueError(f"unknown Countries task {task!r}")
    directory = Path(directory)
    for cand in (directory / task, directory / f"countries_{task}", directory):
        if (cand / "train.txt").exists():
            directory = cand
            break
    else:
        raise FileNotFoundError(
            f"no Countries split files for task {task} under {directory}")
    entities, relations, splits = _read_split_triplets(directory)
    if len(entities) != 271:
        warnings.warn(
            f"{directory}: expected 271 entities, found {len(entities)} "
            f"(dataset variant?)", IntegrityWarning)
    train = _stable_unique(splits["train"])
    graph = KnowledgeGraph(entities, relations, train)
    graph = add_inverse_relations(graph)
    eval_objs = np.concatenate([splits["valid"][:, 2], splits["test"][:, 2]])
    candidates = np.unique(eval_objs)
    return DatasetBundle(graph=graph, task_kind=TASK_COUNTRIES,
                         n_base_relations=len(relations),
                         train_triplets=train,
                         valid_triplets=splits["valid"],
                         test_triplets=splits["test"],
                         candidates=candidates)


def load_ea_dataset(directory) -> DatasetBundle:
    """Two-KG alignment directory: triples_1.txt, triples_2.txt and
    train/valid/test_pairs.txt; seed pairs become bridge edges."""
    directory = Path(directory)
    g1 = load_triplets(directory / "triples_1.txt", kg_tag="kg1")
    g2 = load_triplets(directory / "triples_2.txt", kg_tag="kg2")
    merged = merge_graphs(g1, g2)
    train_pairs = load_alignment_pairs(directory / "train_pairs.txt", merged)
    graph = add_alignment_bridges(merged, train_pairs)
    valid_pairs = load_alignment_pairs(directory / "valid_pairs.txt", graph)
    test_pairs = load_alignment_pairs(directory / "test_pairs.txt", graph)
    return DatasetBundle(graph=graph, task_kind=TASK_ENTITY_ALIGNMENT,
                         n_base_relations=graph.n_relations,
                         train_pairs=train_pairs, valid_pairs=valid_pairs,
                         test_pairs=test_pairs)


def save_graph(directory, graph: KnowledgeGraph) -> None:
    """Serialize to entities.txt / relations.txt / triples.tsv (ids)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "entities.txt").write_text(
        "".join(e + "\n" for e in graph.entities), encoding="utf-8")
    (directory / "relations.txt").write_text(
        "".join(r + "\n" for r in graph.relations), encoding="utf-8")
    (directory / "triples.tsv").write_text(
        "".join(f"{s}\t{r}\t{o}\n" for s, r, o in graph.triplets),
        encoding="utf-8")
    if graph.partition_of is not None:
        (directory / "partition.txt").write_text(
            "".join(f"{p}\n" for p in graph.partition_of), encoding="utf-8")


def load_graph(directory) -> KnowledgeGraph:
    directory = Path(directory)
    entities = (directory / "entities.txt").read_text(
        encoding="utf-8").splitlines()
    relations = (directory / "relations.txt").read_text(
        encoding="utf-8").splitlines()
    rows = [tuple(int(x) for x in fields)
            for fields in _parse_lines(directory / "triples.tsv", 3)]
    partition = None
    pfile = directory / "partition.txt"
    if pfile.exists():
        partition = np.asarray([int(x) for x in
                                pfile.read_text(encoding="utf-8").split()],
                               dtype=np.int8)
    return KnowledgeGraph(entities, relations,
                          np.asarray(rows, dtype=np.int64).reshape(-1, 3),
                          partition_of=partition)
