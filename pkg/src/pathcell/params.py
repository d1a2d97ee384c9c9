"""Parameter containers, the Adam optimizer, and checkpoint files."""

from __future__ import annotations

import hashlib
import json
import zlib
from pathlib import Path

import numpy as np

from . import autodiff
from .autodiff import NonFiniteError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Six per-link transforms plus a private gate pair for each combinator site.
LINK_WEIGHT_NAMES = tuple(f"W{i}" for i in range(1, 7))
GATE_WEIGHT_NAMES = ("Wa_s", "Wb_s", "Wa_r", "Wb_r", "Wa_v", "Wb_v")
ALL_WEIGHT_NAMES = LINK_WEIGHT_NAMES + GATE_WEIGHT_NAMES


def glorot_bound(dim: int) -> float:
    return float(np.sqrt(6.0 / (2.0 * dim)))


class ParameterStore:
    """Named dense parameters with per-parameter Adam moments.

    Holds the entity/relation embedding matrices and the d x d cell weights.
    The relation table carries one extra row at the end: the reserved pad
    relation used to complete dead-ended walks (its loss rows are masked, so
    it never receives gradient).
    """

    def __init__(self, tensors: dict[str, np.ndarray], dim: int):
        if dim % 2 != 0:
            raise ValueError(f"embedding dimension must be even, got {dim}")
        self.tensors = tensors
        self.dim = dim
        self.adam_m = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.adam_v = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.adam_t = 0

    @classmethod
    def allocate(cls, n_entities: int, n_relations: int, dim: int,
                 rng: np.random.Generator,
                 weight_names=ALL_WEIGHT_NAMES) -> "ParameterStore":
        """Uniform(-b, b) init with b = sqrt(6 / (2 d)); pad relation row included."""
        b = glorot_bound(dim)
        dt = autodiff.default_dtype()
        tensors = {
            "entities": rng.uniform(-b, b, size=(n_entities, dim)).astype(dt),
            "relations": rng.uniform(-b, b, size=(n_relations + 1, dim)).astype(dt),
        }
        for name in weight_names:
            if name not in ALL_WEIGHT_NAMES:
                raise KeyError(f"unknown weight matrix {name}")
            tensors[name] = rng.uniform(-b, b, size=(dim, dim)).astype(dt)
        return cls(tensors, dim)

    @property
    def n_entities(self) -> int:
        return self.tensors["entities"].shape[0]

    @property
    def pad_relation_id(self) -> int:
        return self.tensors["relations"].shape[0] - 1

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def clone(self) -> "ParameterStore":
        dup = ParameterStore({k: v.copy() for k, v in self.tensors.items()}, self.dim)
        dup.adam_m = {k: v.copy() for k, v in self.adam_m.items()}
        dup.adam_v = {k: v.copy() for k, v in self.adam_v.items()}
        dup.adam_t = self.adam_t
        return dup

    def leaves(self) -> dict[str, autodiff.Tensor]:
        """Wrap every parameter as a gradient-carrying leaf sharing storage."""
        return {k: _leaf(v, k) for k, v in self.tensors.items()}


def _leaf(arr: np.ndarray, name: str) -> autodiff.Tensor:
    t = autodiff.Tensor.__new__(autodiff.Tensor)
    t.value = arr
    t.grad = None
    t.requires_grad = True
    t.name = name
    return t


def collect_grads(leaves: dict[str, autodiff.Tensor], tape: autodiff.Tape):
    """Gradients plus touched-row info after a backward pass.

    Returns (grads, touched): grads maps name -> dense gradient array for every
    leaf that received gradient; touched maps name -> sorted unique row ids for
    embedding tables that were only partially read, or "all".
    """
    grads: dict[str, np.ndarray] = {}
    touched: dict[str, object] = {}
    for name, leaf in leaves.items():
        if leaf.grad is None:
            continue
        grads[name] = leaf.grad
        rows = tape.touched(leaf)
        touched[name] = rows if rows is not None else "all"
    return grads, touched


def adam_step(store: ParameterStore, grads: dict[str, np.ndarray], lr: float,
              l2: float = 0.0, touched: dict[str, object] | None = None) -> None:
    """One Adam update. Only parameters present in `grads` move; embedding
    tables with sparse touch info update only their touched rows (stale
    moments stay put). The L2 penalty enters as a gradient addition l2*w
    before the Adam transform."""
    store.adam_t += 1
    t = store.adam_t
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    for name, g in grads.items():
        if name not in store.tensors:
            raise KeyError(f"gradient for unknown parameter {name}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"adam_step[{name}]")
        w = store.tensors[name]
        rows = touched.get(name, "all") if touched is not None else "all"
        m, v = store.adam_m[name], store.adam_v[name]
        if isinstance(rows, str) and rows == "all":
            ge = g + l2 * w
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * ge
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * ge * ge
            w -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        else:
            ge = g[rows] + l2 * w[rows]
            m[rows] = ADAM_BETA1 * m[rows] + (1.0 - ADAM_BETA1) * ge
            v[rows] = ADAM_BETA2 * v[rows] + (1.0 - ADAM_BETA2) * ge * ge
            w[rows] -= lr * (m[rows] / bc1) / (np.sqrt(v[rows] / bc2) + ADAM_EPS)


# --------------------------------------------------------------------------
# Checkpoint container: magic, JSON header, raw little-endian payload, crc32.

_CKPT_MAGIC = b"PCLCKPT1"


class CorruptCheckpointError(RuntimeError):
    pass


def genotype_hash(genotype_str: str) -> str:
    return hashlib.sha256(genotype_str.encode("utf-8")).hexdigest()[:16]


def save_checkpoint(path, store: ParameterStore, genotype_str: str,
                    extra: dict | None = None) -> None:
    names = sorted(store.tensors)
    entries = []
    blobs = []
    offset = 0
    payload_arrays = []
    for prefix, group in (("", store.tensors), ("adam.m.", store.adam_m),
                          ("adam.v.", store.adam_v)):
        for name in names:
            arr = np.ascontiguousarray(group[name])
            raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
            entries.append({"name": prefix + name, "shape": list(arr.shape),
                            "dtype": str(arr.dtype), "offset": offset,
                            "nbytes": len(raw)})
            payload_arrays.append(raw)
            offset += len(raw)
    header = {
        "dim": store.dim,
        "adam_t": store.adam_t,
        "genotype": genotype_str,
        "genotype_hash": genotype_hash(genotype_str),
        "tensors": entries,
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(payload_arrays)
    body = len(hbytes).to_bytes(4, "little") + hbytes + payload
    crc = zlib.crc32(body) & 0xFFFFFFFF
    Path(path).write_bytes(_CKPT_MAGIC + body + crc.to_bytes(4, "little"))


def load_checkpoint(path) -> tuple[ParameterStore, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < len(_CKPT_MAGIC) + 8 or not raw.startswith(_CKPT_MAGIC):
        raise CorruptCheckpointError(f"{path}: not a checkpoint file")
    body, stored_crc = raw[len(_CKPT_MAGIC):-4], int.from_bytes(raw[-4:], "little")
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise CorruptCheckpointError(f"{path}: checksum mismatch")
    hlen = int.from_bytes(body[:4], "little")
    header = json.loads(body[4:4 + hlen].decode("utf-8"))
    payload = body[4 + hlen:]
    groups: dict[str, dict[str, np.ndarray]] = {"": {}, "adam.m.": {}, "adam.v.": {}}
    for ent in header["tensors"]:
        arr = np.frombuffer(payload[ent["offset"]:ent["offset"] + ent["nbytes"]],
                            dtype=np.dtype(ent["dtype"]).newbyteorder("<"))
        arr = arr.reshape(ent["shape"]).astype(np.dtype(ent["dtype"]), copy=True)
        name = ent["name"]
        for prefix in ("adam.m.", "adam.v."):
            if name.startswith(prefix):
                groups[prefix][name[len(prefix):]] = arr
                break
        else:
            groups[""][name] = arr
    store = ParameterStore(groups[""], header["dim"])
    store.adam_m = groups["adam.m."]
    store.adam_v = groups["adam.v."]
    store.adam_t = header["adam_t"]
    return store, header
