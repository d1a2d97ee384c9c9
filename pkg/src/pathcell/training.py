"""Training loop: unrolled path loss, Adam updates, lr decay, early stopping."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .cell import forward_cell, required_weights
from .genotype import Genotype
from .params import ParameterStore, adam_step, collect_grads
from .walks import PathCorpus

EARLY_STOP_PATIENCE = 5

BATCH_SIZE_CHOICES = (128, 256, 512, 1024, 2048)


class TrainingFault(RuntimeError):
    """Training hit a non-finite loss; carries the genotype and batch index."""

    def __init__(self, genotype_str: str, batch_index: int, cause: str):
        super().__init__(f"training fault on genotype {genotype_str} "
                         f"at batch {batch_index}: {cause}")
        self.genotype_str = genotype_str
        self.batch_index = batch_index


@dataclass(frozen=True)
class TrainConfig:
    lr: float
    l2: float
    decay: float
    batch_size: int
    dropout: float
    dim: int
    epochs: int
    rng_seed: int = 0

    def __post_init__(self):
        if self.dim % 2 != 0 or self.dim <= 0:
            raise ValueError(f"dim must be a positive even integer, "
                             f"got {self.dim}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.lr < 0 or self.l2 < 0 or self.decay < 0 or self.epochs < 0:
            raise ValueError("lr, l2, decay, epochs must be non-negative")


def validate_tuning_ranges(cfg: TrainConfig) -> None:
    """Enforce the published hyper-parameter search ranges, naming the field.

    Degenerate values (e.g. lr=0 in unit tests) are legal for direct training,
    but tuner samples and run configs must stay inside these ranges.
    """
    checks = (
        ("lr", 1e-5 <= cfg.lr <= 1e-3),
        ("l2", 1e-5 <= cfg.l2 <= 1e-2),
        ("decay", 0.98 <= cfg.decay <= 1.0),
        ("batch_size", cfg.batch_size in BATCH_SIZE_CHOICES),
        ("dropout", 0.0 <= cfg.dropout <= 0.6),
    )
    for field_name, ok in checks:
        if not ok:
            raise ValueError(f"{field_name}={getattr(cfg, field_name)} is "
                             f"outside the allowed tuning range")


def path_loss(g: Genotype, leaves: dict[str, ad.Tensor], batch: np.ndarray,
              cfg: TrainConfig, tape: ad.Tape, pad_relation: int,
              dropout_rng: np.random.Generator | None = None) -> ad.Tensor:
    """Mean multi-class log-loss over every step of every path in the batch.

    Per step t the cell output v_t scores all entities and the true object is
    the class label; the sum is normalized by (batch * length). Steps whose
    relation is the reserved pad id carry zero weight. Dropout (if any)
    applies to the input embeddings s_t and r_t only.
    """
    batch = np.asarray(batch)
    if batch.ndim != 2 or batch.shape[1] < 3 or batch.shape[1] % 2 == 0:
        raise ValueError(f"batch must be (n, 1 + 2L) path rows, "
                         f"got shape {batch.shape}")
    if len(batch) == 0:
        raise ValueError("empty batch")
    n, length = batch.shape[0], (batch.shape[1] - 1) // 2
    rate = cfg.dropout
    if rate > 0.0 and dropout_rng is None:
        raise ValueError("dropout requires an RNG")

    def drop(x: ad.Tensor) -> ad.Tensor:
        return ad.dropout(tape, x, rate, dropout_rng) if rate > 0.0 else x

    ent, rel = leaves["entities"], leaves["relations"]
    h = drop(ad.embedding_lookup(tape, ent, batch[:, 0]))
    s_t = h  # h0 = s1
    total: ad.Tensor | None = None
    for t in range(length):
        if t > 0:
            s_t = drop(ad.embedding_lookup(tape, ent, batch[:, 2 * t]))
        r_ids = batch[:, 2 * t + 1]
        r_t = drop(ad.embedding_lookup(tape, rel, r_ids))
        v_t, h = forward_cell(g, leaves, s_t, r_t, h, tape)
        logits = ad.dot_scores(tape, v_t, ent)
        weights = (r_ids != pad_relation).astype(v_t.value.dtype)
        step_loss = ad.softmax_cross_entropy(tape, logits, batch[:, 2 * t + 2],
                                             weights)
        total = step_loss if total is None else ad.add(tape, total, step_loss)
    return ad.affine(tape, total, 1.0 / (n * length))


def step_once(g: Genotype, store: ParameterStore, batch: np.ndarray,
              cfg: TrainConfig, pad_relation: int,
              dropout_rng: np.random.Generator | None = None,
              lr: float | None = None) -> float:
    """One forward/backward/Adam cycle on the given batch; returns the loss."""
    leaves = store.leaves()
    tape = ad.Tape()
    loss = path_loss(g, leaves, batch, cfg, tape, pad_relation, dropout_rng)
    tape.backward(loss)
    grads, touched = collect_grads(leaves, tape)
    adam_step(store, grads, lr if lr is not None else cfg.lr, cfg.l2, touched)
    return float(loss.value)


def fit(g: Genotype, corpus: PathCorpus, cfg: TrainConfig, n_entities: int,
        valid_hook=None, shuffle: bool = True,
        patience: int = EARLY_STOP_PATIENCE,
        store: ParameterStore | None = None):
    """Train a genotype on a path corpus.

    Embeddings are freshly initialized unless a store is supplied. Mini-batches
    are reshuffled each epoch from the seeded stream, lr multiplies by cfg.decay
    after each epoch, and training stops early when the validation hook fails
    to improve for `patience` consecutive evaluations. Returns the
    best-validation parameter store and the per-epoch history records.
    """
    seqs = np.random.SeedSequence(cfg.rng_seed).spawn(3)
    init_rng, shuffle_rng, dropout_rng = (np.random.Generator(np.random.PCG64(s))
                                          for s in seqs)
    if store is None:
        store = ParameterStore.allocate(n_entities, corpus.pad_relation,
                                        cfg.dim, init_rng,
                                        weight_names=required_weights(g))
    history: list[dict] = []
    best_store = store
    best_metric = -np.inf
    stale = 0
    lr = cfg.lr
    n = len(corpus.paths)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n) if shuffle else np.arange(n)
        losses = []
        for bi, lo in enumerate(range(0, n, cfg.batch_size)):
            batch = corpus.paths[order[lo:lo + cfg.batch_size]]
            try:
                losses.append(step_once(g, store, batch, cfg,
                                        corpus.pad_relation, dropout_rng,
                                        lr=lr))
            except ad.NonFiniteError as exc:
                raise TrainingFault(g.encode(), bi, str(exc)) from exc
        lr *= cfg.decay
        metric = float(valid_hook(store)) if valid_hook is not None else None
        history.append({"epoch": epoch, "mean_loss": float(np.mean(losses)),
                        "lr": lr, "val_metric": metric,
                        "wall_time": time.perf_counter() - t0})
        if valid_hook is not None:
            if metric > best_metric:
                best_metric = metric
                best_store = store.clone()
                stale = 0
            else:
                stale += 1
                if stale >= patience:
                    break
    if valid_hook is None:
        best_store = store
    return best_store, history
