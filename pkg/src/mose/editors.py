"""Editing paradigms behind a common interface, and the sequential runner.

``mose`` left-multiplies the weight by the orthogonal Procrustes solution of
the editing objective; ``additive`` adds the unconstrained minimiser of the
same objective.  ``random_orthogonal`` and ``random_additive`` ignore the
edit batch and act as stress models for the two paradigms.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DomainError, NumericalError
from .linalg import as_matrix, nearest_orthogonal, pseudo_inverse, random_orthogonal
from .memory import EditBatch, MemoryModel
from .procrustes import EditConfig, assemble, solve

__all__ = [
    "EDITORS",
    "EditStep",
    "EditorSpec",
    "RunError",
    "RunResult",
    "additive_edit",
    "edit_objective",
    "identity_edit",
    "mose_edit",
    "random_additive_edit",
    "random_orthogonal_edit",
    "run_sequential",
    "step_log_line",
    "write_steps_jsonl",
]

log = logging.getLogger(__name__)

MULTIPLICATIVE = "multiplicative"
ADDITIVE = "additive"
IDENTITY = "identity"

EDITORS = ("mose", "additive", "random_orthogonal", "random_additive", "identity")


@dataclass(frozen=True, eq=False)
class EditStep:
    """One applied update.

    ``update`` is the orthogonal ``R`` for multiplicative steps
    (``w_after = R @ w_before``), ``Delta W`` for additive ones
    (``w_after = w_before + Delta W``) and the identity for no-ops.
    """

    step_index: int
    update_kind: str
    update: NDArray[np.float64]
    w_after: NDArray[np.float64]


def mose_edit(
    w: ArrayLike,
    k0: ArrayLike,
    batch: EditBatch,
    cfg: EditConfig = EditConfig(),
    *,
    anchor: Optional[ArrayLike] = None,
    step_index: int = 0,
) -> EditStep:
    """Multiplicative orthogonal edit ``w -> R w``.

    ``R`` solves the Procrustes problem assembled from ``anchor`` (the
    current ``w`` when omitted).
    """
    w = as_matrix(w, "w")
    base = w if anchor is None else as_matrix(anchor, "anchor")
    r = solve(assemble(base, k0, batch.keys, batch.values, cfg), cfg.rank_tol).matrix
    return EditStep(step_index, MULTIPLICATIVE, r, r @ w)


def additive_edit(
    w: ArrayLike,
    k0: ArrayLike,
    batch: EditBatch,
    cfg: EditConfig = EditConfig(),
    *,
    step_index: int = 0,
) -> EditStep:
    """Additive ridge edit: the unconstrained minimiser of the editing objective.

    ``Delta W = (V_E - W K_E) K_E^T (lam K0 K0^T + K_E K_E^T)^+``, which equals
    ``(lam W K0 K0^T + V_E K_E^T) N^-1 - W`` whenever the normal matrix ``N``
    is invertible and is the minimum-norm minimiser when it is not.
    """
    w = as_matrix(w, "w")
    k0 = as_matrix(k0, "k0")
    ke, ve = batch.keys, batch.values
    normal = cfg.lam * (k0 @ k0.T) + ke @ ke.T
    delta = (ve - w @ ke) @ ke.T @ pseudo_inverse(normal, cfg.rank_tol)
    return EditStep(step_index, ADDITIVE, delta, w + delta)


def random_orthogonal_edit(w: ArrayLike, seed, *, step_index: int = 0) -> EditStep:
    w = as_matrix(w, "w")
    r = random_orthogonal(w.shape[0], seed).matrix
    return EditStep(step_index, MULTIPLICATIVE, r, r @ w)


def random_additive_edit(w: ArrayLike, scale: float, seed, *, step_index: int = 0) -> EditStep:
    """Gaussian ``Delta W`` with ``||Delta W||_F = scale * ||w||_F``."""
    if not scale > 0:
        raise DomainError(f"scale must be > 0, got {scale}")
    w = as_matrix(w, "w")
    g = np.random.default_rng(seed).standard_normal(w.shape)
    delta = g * (scale * np.linalg.norm(w) / np.linalg.norm(g))
    return EditStep(step_index, ADDITIVE, delta, w + delta)


def identity_edit(w: ArrayLike, *, step_index: int = 0) -> EditStep:
    w = as_matrix(w, "w")
    return EditStep(step_index, IDENTITY, np.eye(w.shape[0]), w)


def edit_objective(w_new: ArrayLike, w_ref: ArrayLike, k0: ArrayLike, batch: EditBatch, lam: float) -> float:
    """``lam ||W K0 - W_ref K0||^2 + ||W K_E - V_E||^2``."""
    w_new, w_ref, k0 = (np.asarray(x, dtype=np.float64) for x in (w_new, w_ref, k0))
    keep = np.sum(np.square((w_new - w_ref) @ k0))
    fit = np.sum(np.square(w_new @ batch.keys - batch.values))
    return float(lam * keep + fit)


# -- sequential runner ----------------------------------------------------------


@dataclass(frozen=True)
class EditorSpec:
    """Editor name plus everything needed to apply it step after step.

    Attributes
    ----------
    name : str
        One of :data:`EDITORS`.
    config : EditConfig
        ``lam`` and ``rank_tol`` for the objective-based editors.
    seed : int
        Editor seed; step ``i`` of a random editor draws from ``(seed, i)``.
    scale : float
        Relative step size of ``random_additive``.
    anchor : str
        ``"current"`` solves each MOSE step against the current weight,
        ``"w0"`` against the pre-edit weight.
    refresh_k0 : bool
        Append every applied batch's keys to the preserved set.
    reortho_interval : int
        Re-project the accumulated rotation onto O(d) every this many
        multiplicative steps (0 disables).
    """

    name: str
    config: EditConfig = EditConfig()
    seed: int = 0
    scale: float = 0.05
    anchor: str = "current"
    refresh_k0: bool = False
    reortho_interval: int = 100

    def __post_init__(self):
        if self.name not in EDITORS:
            raise DomainError(f"unknown editor {self.name!r}; expected one of {EDITORS}")
        if self.anchor not in ("current", "w0"):
            raise DomainError(f"anchor must be 'current' or 'w0', got {self.anchor!r}")
        if self.reortho_interval < 0:
            raise DomainError("reortho_interval must be >= 0")

    def apply(self, w, w0, k0, batch: EditBatch, step_index: int) -> EditStep:
        if self.name == "mose":
            anchor = w0 if self.anchor == "w0" else None
            return mose_edit(w, k0, batch, self.config, anchor=anchor, step_index=step_index)
        if self.name == "additive":
            return additive_edit(w, k0, batch, self.config, step_index=step_index)
        if self.name == "random_orthogonal":
            return random_orthogonal_edit(w, (self.seed, step_index), step_index=step_index)
        if self.name == "random_additive":
            return random_additive_edit(w, self.scale, (self.seed, step_index), step_index=step_index)
        return identity_edit(w, step_index=step_index)


@dataclass(frozen=True)
class RunError:
    step: int
    message: str


@dataclass
class RunResult:
    final_w: NDArray[np.float64]
    steps: list = field(default_factory=list)
    records: dict = field(default_factory=dict)
    error: Optional[RunError] = None
    # accumulated R_n ... R_1 of a multiplicative run
    rotation: Optional[NDArray[np.float64]] = None


Recorder = Callable[[int, NDArray[np.float64], Optional[EditStep], Sequence[EditBatch]], object]


def run_sequential(
    spec: EditorSpec,
    mem: MemoryModel,
    stream: Sequence[EditBatch],
    recorders: Optional[Mapping[str, Recorder]] = None,
) -> RunResult:
    """Fold an editor over an edit stream.

    Every recorder is called as ``rec(step, w, edit_step, applied)`` once
    before the first edit (``step=0``, ``edit_step=None``) and after each
    edit; non-``None`` return values are collected under the recorder's name.

    Multiplicative runs keep the product of all rotations and rebuild the
    weight as ``R_total @ w0``, re-projecting ``R_total`` onto the orthogonal
    group every ``spec.reortho_interval`` steps.

    The first numerical failure stops the run; the partial result carries a
    :class:`RunError`.
    """
    if not stream:
        raise DomainError("edit stream is empty")
    recorders = dict(recorders or {})
    records = {name: [] for name in recorders}

    def notify(i, w, step, applied):
        for name, rec in recorders.items():
            out = rec(i, w, step, applied)
            if out is not None:
                records[name].append(out)

    w0 = np.array(mem.w0, order="C")
    w = w0.copy()
    k0 = np.asarray(mem.preserved_keys)
    r_total = np.eye(mem.d)
    multiplicative = False
    steps = []
    applied = []
    notify(0, w, None, applied)
    for i, batch in enumerate(stream, start=1):
        try:
            step = spec.apply(w, w0, k0, batch, i)
        except (NumericalError, np.linalg.LinAlgError) as exc:
            log.error("editor %s failed at step %d: %s", spec.name, i, exc)
            rotation = r_total if multiplicative else None
            return RunResult(w, steps, records, RunError(i, str(exc)), rotation)
        if step.update_kind == MULTIPLICATIVE:
            multiplicative = True
            r_total = step.update @ r_total
            if spec.reortho_interval and i % spec.reortho_interval == 0:
                r_total = nearest_orthogonal(r_total)
            w = r_total @ w0
            step = EditStep(i, MULTIPLICATIVE, step.update, w)
        else:
            w = step.w_after
        if spec.refresh_k0:
            k0 = np.hstack([k0, batch.keys])
        steps.append(step)
        applied.append(batch)
        notify(i, w, step, applied)
    return RunResult(w, steps, records, rotation=r_total if multiplicative else None)


def step_log_line(step: int, kind: str, record, reliability: Optional[float] = None) -> dict:
    """One ``steps.jsonl`` row from a stability record."""
    row = {
        "step": step,
        "kind": kind,
        "norm": record.frob_norm,
        "cond": record.cond_number,
        "deviation": record.deviation,
    }
    if reliability is not None:
        row["reliability"] = reliability
    return row


def write_steps_jsonl(path, rows: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=False) + "\n")
