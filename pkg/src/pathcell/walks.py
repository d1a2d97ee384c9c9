"""Biased random walks over a knowledge graph and the path corpus format.

Walks start at training triplets and are extended with a depth bias (prefer
neighbors two undirected hops from the previous entity) and, on two-partition
alignment graphs, a cross-partition bias. Each seed triplet owns a derived RNG
stream, so the corpus is reproducible and order-stable however the sampling
is scheduled.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kg import KnowledgeGraph

MAX_WALK_RETRIES = 5

_MAGIC = b"PCLPATH1"
_VERSION = 1


class DeadEndError(RuntimeError):
    """Current entity has no out-edges; the walk must restart."""


class CorpusFormatError(RuntimeError):
    pass


@dataclass(frozen=True)
class WalkConfig:
    depth_bias: float
    path_length: int
    paths_per_triplet: int = 2
    cross_kg_bias: float | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.5 < self.depth_bias < 1.0:
            raise ValueError(f"depth_bias must be in (0.5, 1), "
                             f"got {self.depth_bias}")
        if self.cross_kg_bias is not None and not 0.5 < self.cross_kg_bias < 1.0:
            raise ValueError(f"cross_kg_bias must be in (0.5, 1), "
                             f"got {self.cross_kg_bias}")
        if self.path_length < 1:
            raise ValueError("path_length must be >= 1")
        if self.paths_per_triplet < 1:
            raise ValueError("paths_per_triplet must be >= 1")

    @classmethod
    def link_prediction_default(cls, rng_seed: int = 0) -> "WalkConfig":
        return cls(depth_bias=0.7, path_length=3, rng_seed=rng_seed)

    @classmethod
    def entity_alignment_default(cls, rng_seed: int = 0) -> "WalkConfig":
        return cls(depth_bias=0.9, path_length=7, cross_kg_bias=0.9,
                   rng_seed=rng_seed)


def step_distribution(graph: KnowledgeGraph, prev_entity: int | None,
                      cur_entity: int, cfg: WalkConfig) -> np.ndarray:
    """Transition probabilities over graph.out_adjacency[cur_entity].

    An out-edge to e' weighs depth_bias when e' is not within one undirected
    hop of the previous entity (the walk "goes deeper"), else 1 - depth_bias;
    uniform when there is no previous entity. On partitioned graphs the weight
    is further multiplied by cross_kg_bias when e' lies in the other partition
    than the current entity, else 1 - cross_kg_bias.
    """
    edges = graph.out_adjacency[cur_entity]
    if len(edges) == 0:
        raise DeadEndError(f"entity {cur_entity} has no out-edges")
    objs = edges[:, 1]
    w = np.ones(len(edges), dtype=np.float64)
    if prev_entity is not None:
        shallow = graph.und_neighbors(prev_entity) | {prev_entity}
        deeper = np.fromiter((o not in shallow for o in objs), dtype=bool,
                             count=len(objs))
        w *= np.where(deeper, cfg.depth_bias, 1.0 - cfg.depth_bias)
    if cfg.cross_kg_bias is not None and graph.partition_of is not None:
        crossing = graph.partition_of[objs] != graph.partition_of[cur_entity]
        w *= np.where(crossing, cfg.cross_kg_bias, 1.0 - cfg.cross_kg_bias)
    return w / w.sum()


@dataclass
class PathCorpus:
    """Fixed-length paths stored as flat id rows s1, r1, o1(=s2), r2, ..., oL."""
    paths: np.ndarray  # (n, 1 + 2L) int64
    cfg: WalkConfig
    pad_relation: int

    @property
    def path_length(self) -> int:
        return (self.paths.shape[1] - 1) // 2

    def __len__(self) -> int:
        return len(self.paths)


def _walk_once(graph: KnowledgeGraph, seed: np.ndarray, cfg: WalkConfig,
               rng: np.random.Generator, pad_relation: int) -> list[int]:
    s, r, o = int(seed[0]), int(seed[1]), int(seed[2])
    for attempt in range(MAX_WALK_RETRIES + 1):
        row = [s, r, o]
        prev, cur = s, o
        ok = True
        for _ in range(cfg.path_length - 1):
            edges = graph.out_adjacency[cur]
            if len(edges) == 0:
                ok = False
                break
            probs = step_distribution(graph, prev, cur, cfg)
            pick = int(np.searchsorted(np.cumsum(probs), rng.random(),
                                       side="right"))
            pick = min(pick, len(edges) - 1)
            rel, nxt = int(edges[pick, 0]), int(edges[pick, 1])
            row.extend((rel, nxt))
            prev, cur = cur, nxt
        if ok:
            return row
    # retries exhausted: pad the tail with self-transitions on the last entity
    while len(row) < 1 + 2 * cfg.path_length:
        row.extend((pad_relation, cur))
    return row


def sample_paths(graph: KnowledgeGraph, cfg: WalkConfig,
                 seed_triplets: np.ndarray | None = None) -> PathCorpus:
    """paths_per_triplet walks per training triplet, the triplet as step 1."""
    if graph.n_triplets == 0:
        raise ValueError("cannot sample paths from an empty graph")
    seeds = graph.triplets if seed_triplets is None else \
        np.asarray(seed_triplets, dtype=np.int64).reshape(-1, 3)
    pad_relation = graph.n_relations
    width = 1 + 2 * cfg.path_length
    out = np.empty((len(seeds) * cfg.paths_per_triplet, width), dtype=np.int64)
    for idx, seed in enumerate(seeds):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((cfg.rng_seed, idx))))
        for k in range(cfg.paths_per_triplet):
            out[idx * cfg.paths_per_triplet + k] = _walk_once(
                graph, seed, cfg, rng, pad_relation)
    return PathCorpus(paths=out, cfg=cfg, pad_relation=pad_relation)


def write_paths(path, corpus: PathCorpus) -> None:
    cfg = corpus.cfg
    cross = cfg.cross_kg_bias if cfg.cross_kg_bias is not None else float("nan")
    header = struct.pack(
        "<IddIIQQI", _VERSION, cfg.depth_bias, cross, cfg.path_length,
        cfg.paths_per_triplet, cfg.rng_seed, len(corpus.paths),
        corpus.pad_relation)
    payload = corpus.paths.astype("<i8").tobytes()
    body = header + payload
    crc = zlib.crc32(body) & 0xFFFFFFFF
    Path(path).write_bytes(_MAGIC + body + struct.pack("<I", crc))


def read_paths(path, expect_cfg: WalkConfig | None = None) -> PathCorpus:
    raw = Path(path).read_bytes()
    if len(raw) < len(_MAGIC) + 4 or not raw.startswith(_MAGIC):
        raise CorpusFormatError(f"{path}: not a path corpus file")
    body, stored_crc = raw[len(_MAGIC):-4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise CorpusFormatError(f"{path}: checksum mismatch")
    hsize = struct.calcsize("<IddIIQQI")
    version, depth, cross, length, per_triplet, seed, n, pad = struct.unpack(
        "<IddIIQQI", body[:hsize])
    if version != _VERSION:
        raise CorpusFormatError(f"{path}: unsupported corpus version {version}")
    cfg = WalkConfig(depth_bias=depth, path_length=length,
                     paths_per_triplet=per_triplet,
                     cross_kg_bias=None if np.isnan(cross) else cross,
                     rng_seed=seed)
    if expect_cfg is not None and cfg != expect_cfg:
        raise CorpusFormatError(
            f"{path}: corpus header {cfg} does not match requested {expect_cfg}")
    paths = np.frombuffer(body[hsize:], dtype="<i8").astype(np.int64)
    if paths.size != n * (1 + 2 * length):
        raise CorpusFormatError(f"{path}: truncated payload")
    return PathCorpus(paths=paths.reshape(n, 1 + 2 * length), cfg=cfg,
                      pad_relation=pad)


def write_paths_tsv(path, corpus: PathCorpus) -> None:
    """Human-readable debug dump of the corpus."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in corpus.paths:
            fh.write("\t".join(map(str, row)) + "\n")
