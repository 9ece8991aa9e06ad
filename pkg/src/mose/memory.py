"""Synthetic linear associative memory.

A :class:`MemoryModel` plays the part of one feed-forward weight matrix: keys
are unit vectors, values are prototypes from a small codebook, and the
weight ``w0`` is a ridge least-squares fit of the key -> value map.  Retrieval
is nearest-codebook-column by cosine similarity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ConstructionError, DimensionError, DomainError
from .linalg import as_matrix

__all__ = [
    "UNDECODABLE",
    "EditBatch",
    "EvalSuite",
    "MemoryModel",
    "batch_from_dict",
    "batch_to_dict",
    "build_memory",
    "decode",
    "decode_many",
    "load_memory",
    "make_edit_stream",
    "make_eval_suite",
    "memory_from_dict",
    "memory_to_dict",
    "save_memory",
]

UNDECODABLE = -1

MAX_RETRIES = 1000


def _readonly(a):
    a = np.array(a, dtype=np.float64, order="C")
    a.flags.writeable = False
    return a


def _unit_columns(x):
    return x / np.linalg.norm(x, axis=0, keepdims=True)


@dataclass(frozen=True, eq=False)
class MemoryModel:
    """Ground-truth knowledge bank and the weight that stores it.

    Attributes
    ----------
    w0 : (d, p) ndarray
        Pre-edit weight.
    keys : (p, n) ndarray
        Unit-norm knowledge keys, one per column.
    value_ids : (n,) ndarray of int
        Codebook index stored under each key.
    codebook : (d, c) ndarray
        Unit-norm value prototypes.
    preserved_keys : (p, n0) ndarray
        Keys whose outputs editors try to keep fixed (the full bank).
    """

    w0: NDArray[np.float64]
    keys: NDArray[np.float64]
    value_ids: NDArray[np.int64]
    codebook: NDArray[np.float64]
    preserved_keys: NDArray[np.float64]

    def __post_init__(self):
        for name in ("w0", "keys", "codebook", "preserved_keys"):
            object.__setattr__(self, name, _readonly(as_matrix(getattr(self, name), name)))
        ids = np.array(self.value_ids, dtype=np.int64).reshape(-1)
        ids.flags.writeable = False
        object.__setattr__(self, "value_ids", ids)
        d, p = self.w0.shape
        if self.keys.shape[0] != p or self.preserved_keys.shape[0] != p:
            raise DimensionError(f"keys must have p={p} rows")
        if self.codebook.shape[0] != d:
            raise DimensionError(f"codebook must have d={d} rows")
        if ids.shape[0] != self.keys.shape[1]:
            raise DimensionError("one value id per knowledge key is required")
        if ids.size and not (0 <= ids.min() and ids.max() < self.codebook.shape[1]):
            raise DomainError("value id outside the codebook")

    @property
    def d(self) -> int:
        return self.w0.shape[0]

    @property
    def p(self) -> int:
        return self.w0.shape[1]

    @property
    def n_knowledge(self) -> int:
        return self.keys.shape[1]

    @property
    def knowledge(self) -> list[tuple[NDArray[np.float64], int]]:
        return [(self.keys[:, j], int(self.value_ids[j])) for j in range(self.n_knowledge)]


@dataclass(frozen=True, eq=False)
class EditBatch:
    """Keys ``K_E`` and target values ``V_E`` for one editing step.

    ``target_value_ids`` may be empty when the targets are not codebook
    prototypes (layer-level edits).
    """

    keys: NDArray[np.float64]
    values: NDArray[np.float64]
    target_value_ids: tuple = ()

    def __post_init__(self):
        keys = _readonly(as_matrix(self.keys, "keys"))
        values = _readonly(as_matrix(self.values, "values"))
        if keys.shape[1] != values.shape[1]:
            raise DimensionError(f"keys have {keys.shape[1]} columns but values have {values.shape[1]}")
        ids = tuple(int(i) for i in self.target_value_ids)
        if ids and len(ids) != keys.shape[1]:
            raise DimensionError("one target id per key is required")
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "target_value_ids", ids)

    @classmethod
    def from_ids(cls, keys: ArrayLike, ids: Sequence[int], codebook: ArrayLike) -> "EditBatch":
        codebook = np.asarray(codebook, dtype=np.float64)
        return cls(keys, codebook[:, list(ids)], tuple(ids))

    @property
    def size(self) -> int:
        return self.keys.shape[1]


@dataclass(frozen=True, eq=False)
class EvalSuite:
    """Keys and expected codebook ids for the three evaluation scopes.

    ``neighbor_source[i]`` is the index (into the in-scope columns) of the
    edit that neighbour ``i`` was perturbed from.
    """

    in_keys: NDArray[np.float64]
    in_ids: NDArray[np.int64]
    neighbor_keys: NDArray[np.float64]
    neighbor_ids: NDArray[np.int64]
    neighbor_source: NDArray[np.int64]
    out_keys: NDArray[np.float64]
    out_ids: NDArray[np.int64]
    rho: float = field(default=0.1)

    @property
    def in_scope(self):
        return list(zip(self.in_keys.T, self.in_ids.tolist()))

    @property
    def neighborhood(self):
        return list(zip(self.neighbor_keys.T, self.neighbor_ids.tolist()))

    @property
    def out_of_scope(self):
        return list(zip(self.out_keys.T, self.out_ids.tolist()))


def decode_many(w: ArrayLike, keys: ArrayLike, codebook: ArrayLike) -> NDArray[np.int64]:
    """Decode each key column: argmax cosine between ``w @ key`` and the codebook.

    Ties go to the lowest index; a zero output yields :data:`UNDECODABLE`.
    """
    w = np.asarray(w, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    codebook = np.asarray(codebook, dtype=np.float64)
    if keys.ndim == 1:
        keys = keys[:, None]
    if w.shape[1] != keys.shape[0] or w.shape[0] != codebook.shape[0]:
        raise DimensionError(f"cannot decode: w {w.shape}, keys {keys.shape}, codebook {codebook.shape}")
    if keys.shape[1] == 0:
        return np.zeros(0, dtype=np.int64)
    y = w @ keys
    # the positive per-column factor 1/||y|| cannot change the argmax, so only
    # the codebook norms enter the score
    scores = (codebook.T @ y) / np.linalg.norm(codebook, axis=0)[:, None]
    ids = np.argmax(scores, axis=0).astype(np.int64)
    ids[~np.any(y != 0.0, axis=0)] = UNDECODABLE
    return ids


def decode(w: ArrayLike, key: ArrayLike, codebook: ArrayLike) -> int:
    return int(decode_many(w, np.asarray(key, dtype=np.float64).reshape(-1, 1), codebook)[0])


def _coherent(k, others, limit):
    return others.shape[1] > 0 and np.max(np.abs(others.T @ k)) >= limit


def _fresh_keys(rng, p, n, existing, coherence):
    keys = np.empty((p, n))
    pool = existing
    for j in range(n):
        for _ in range(MAX_RETRIES):
            k = rng.standard_normal(p)
            k /= np.linalg.norm(k)
            if not _coherent(k, pool, coherence):
                break
        else:
            raise ConstructionError(f"could not draw key {j} with coherence < {coherence}")
        keys[:, j] = k
        pool = np.hstack([pool, k[:, None]])
    return keys


def build_memory(
    d: int,
    p: int,
    n_knowledge: int,
    c: int,
    seed: int,
    *,
    margin: float = 0.5,
    coherence: float = 0.9,
    ridge: float = 1e-3,
) -> MemoryModel:
    """Random knowledge bank with a ridge-fitted weight.

    Parameters
    ----------
    d, p : int
        Output and key dimensions, both at least 8.
    n_knowledge : int
        Number of stored pairs, at most ``p``.
    c : int
        Codebook size, at most ``d``.
    seed : int
        Seed for every random draw.
    margin : float
        Upper bound on pairwise |cosine| between codebook columns.
    coherence : float
        Upper bound on |cosine| between any two knowledge keys.
    ridge : float
        Ridge penalty of the least-squares fit of ``w0``.

    Raises
    ------
    ConstructionError
        If the codebook margin is not met after 1000 draws, or the fitted
        ``w0`` fails to decode its own knowledge bank.
    """
    if d < 8 or p < 8:
        raise DomainError(f"d and p must be >= 8, got d={d}, p={p}")
    if not 1 <= c <= d:
        raise DomainError(f"codebook size must satisfy 1 <= c <= d, got c={c}")
    if not 0 <= n_knowledge <= p:
        raise DomainError(f"n_knowledge must satisfy 0 <= n <= p, got {n_knowledge}")
    rng = np.random.default_rng(seed)

    for _ in range(MAX_RETRIES):
        codebook = _unit_columns(rng.standard_normal((d, c)))
        gram = np.abs(codebook.T @ codebook) - np.eye(c)
        if c == 1 or gram.max() < margin:
            break
    else:
        raise ConstructionError(f"no codebook with pairwise |cos| < {margin} after {MAX_RETRIES} draws (c={c}, d={d})")

    keys = _fresh_keys(rng, p, n_knowledge, np.zeros((p, 0)), coherence)
    value_ids = rng.integers(0, c, size=n_knowledge)
    values = codebook[:, value_ids]
    # w0 = V K^T (K K^T + ridge I)^-1, solved rather than inverted
    gram_k = keys @ keys.T + ridge * np.eye(p)
    w0 = np.linalg.solve(gram_k, keys @ values.T).T

    if n_knowledge and not np.array_equal(decode_many(w0, keys, codebook), value_ids):
        raise ConstructionError("ridge fit does not decode its own knowledge bank; lower the ridge penalty")
    return MemoryModel(w0=w0, keys=keys, value_ids=value_ids, codebook=codebook, preserved_keys=keys)


def make_edit_stream(
    mem: MemoryModel,
    n_edits: int,
    batch_size: int,
    seed: int,
    *,
    coherence: float = 0.9,
) -> list[EditBatch]:
    """New facts to insert, grouped into batches.

    Each key is a fresh unit vector with |cosine| below ``coherence`` against
    the knowledge bank and every earlier edit key.  The target id is drawn
    uniformly from the codebook minus the id the key decodes to under ``w0``.
    """
    if batch_size < 1:
        raise DomainError(f"batch_size must be >= 1, got {batch_size}")
    if n_edits < 0:
        raise DomainError(f"n_edits must be >= 0, got {n_edits}")
    c = mem.codebook.shape[1]
    if c < 2 and n_edits:
        raise DomainError("edits need a codebook with at least two entries")
    rng = np.random.default_rng(seed)
    keys = _fresh_keys(rng, mem.p, n_edits, np.asarray(mem.keys), coherence)
    pre = decode_many(mem.w0, keys, mem.codebook)
    targets = []
    for before in pre:
        choices = [i for i in range(c) if i != before]
        targets.append(choices[int(rng.integers(len(choices)))])
    return [
        EditBatch.from_ids(keys[:, i : i + batch_size], targets[i : i + batch_size], mem.codebook)
        for i in range(0, n_edits, batch_size)
    ]


def make_eval_suite(
    mem: MemoryModel,
    applied: Sequence[EditBatch],
    rho: float = 0.1,
    m_neighbors: int = 4,
    seed: int = 0,
) -> EvalSuite:
    """Evaluation keys for the edits applied so far.

    Neighbours of edit ``j`` are ``(k + rho * g / ||g||)`` renormalised, with
    ``g`` standard Gaussian drawn from a generator keyed on ``(seed, j)`` so a
    given edit always gets the same neighbours however many edits precede the
    evaluation.
    """
    if not 0 < rho <= 0.5:
        raise DomainError(f"rho must lie in (0, 0.5], got {rho}")
    if m_neighbors < 1:
        raise DomainError(f"m_neighbors must be >= 1, got {m_neighbors}")
    p = mem.p
    if applied:
        in_keys = np.hstack([b.keys for b in applied])
        in_ids = np.array([i for b in applied for i in b.target_value_ids], dtype=np.int64)
    else:
        in_keys, in_ids = np.zeros((p, 0)), np.zeros(0, dtype=np.int64)
    n_in = in_keys.shape[1]
    nbr = np.empty((p, n_in * m_neighbors))
    for j in range(n_in):
        rng = np.random.default_rng([seed, j])
        g = rng.standard_normal((p, m_neighbors))
        g *= rho / np.linalg.norm(g, axis=0, keepdims=True)
        nbr[:, j * m_neighbors : (j + 1) * m_neighbors] = _unit_columns(in_keys[:, [j]] + g)
    source = np.repeat(np.arange(n_in, dtype=np.int64), m_neighbors)
    return EvalSuite(
        in_keys=in_keys,
        in_ids=in_ids,
        neighbor_keys=nbr,
        neighbor_ids=in_ids[source],
        neighbor_source=source,
        out_keys=np.asarray(mem.keys),
        out_ids=np.asarray(mem.value_ids),
        rho=rho,
    )


# -- JSON layout --------------------------------------------------------------


def memory_to_dict(mem: MemoryModel) -> dict:
    return {
        "w0": mem.w0.tolist(),
        "knowledge": [{"key": k.tolist(), "value_id": v} for k, v in mem.knowledge],
        "codebook": mem.codebook.tolist(),
        "preserved_keys": mem.preserved_keys.tolist(),
    }


def memory_from_dict(data: dict) -> MemoryModel:
    w0 = np.array(data["w0"], dtype=np.float64)
    p = w0.shape[1]
    knowledge = data["knowledge"]
    keys = np.array([e["key"] for e in knowledge], dtype=np.float64).T if knowledge else np.zeros((p, 0))
    pk = np.array(data["preserved_keys"], dtype=np.float64)
    return MemoryModel(
        w0=w0,
        keys=keys.reshape(p, -1),
        value_ids=[e["value_id"] for e in knowledge],
        codebook=np.array(data["codebook"], dtype=np.float64),
        preserved_keys=pk.reshape(p, -1),
    )


def batch_to_dict(batch: EditBatch) -> dict:
    return {"keys": batch.keys.tolist(), "target_value_ids": list(batch.target_value_ids)}


def batch_from_dict(data: dict, codebook: ArrayLike) -> EditBatch:
    return EditBatch.from_ids(np.array(data["keys"], dtype=np.float64), data["target_value_ids"], codebook)


def save_memory(mem: MemoryModel, path, stream: Sequence[EditBatch] = ()) -> None:
    doc = memory_to_dict(mem)
    if stream:
        doc["stream"] = [batch_to_dict(b) for b in stream]
    Path(path).write_text(json.dumps(doc))


def load_memory(path) -> tuple[MemoryModel, list[EditBatch]]:
    doc = json.loads(Path(path).read_text())
    mem = memory_from_dict(doc)
    return mem, [batch_from_dict(b, mem.codebook) for b in doc.get("stream", [])]
