"""Representation drift between single-update and cumulative-update outputs.

For every edit ``j`` two output vectors are compared on edit ``j``'s key:
the one produced by ``w0`` carrying only edit ``j``'s own update, and the one
produced by the final matrix of the whole chain.  Both clouds are projected
jointly onto their leading principal components.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .editors import ADDITIVE, MULTIPLICATIVE, EditStep
from .errors import DimensionError
from .linalg import pca_project
from .memory import EditBatch, MemoryModel
from .stability import fmt

__all__ = ["DriftResult", "drift_analysis", "read_drift_csv", "separation", "write_drift_csv"]


@dataclass(frozen=True, eq=False)
class DriftResult:
    current: NDArray[np.float64]  # (d, n) single-update outputs
    cumulative: NDArray[np.float64]  # (d, n) final-matrix outputs
    projected: NDArray[np.float64]  # (k, 2n): current columns first
    separation: float


def _single_update(step: EditStep, w0):
    if step.update_kind == MULTIPLICATIVE:
        return step.update @ w0
    if step.update_kind == ADDITIVE:
        return w0 + step.update
    return w0


def separation(projected, n: int) -> float:
    """Centroid distance of the two clouds over their pooled mean radius.

    The first ``n`` columns of ``projected`` are one cloud, the rest the other.
    """
    # contiguous copies so both clouds reduce in the same summation order
    a, b = np.array(projected[:, :n]), np.array(projected[:, n:])
    ca, cb = a.mean(axis=1), b.mean(axis=1)
    gap = float(np.linalg.norm(ca - cb))
    radius = 0.5 * (
        float(np.mean(np.linalg.norm(a - ca[:, None], axis=0)))
        + float(np.mean(np.linalg.norm(b - cb[:, None], axis=0)))
    )
    if radius == 0.0:
        return 0.0 if gap == 0.0 else math.inf
    return gap / radius


def drift_analysis(
    mem: MemoryModel,
    steps: Sequence[EditStep],
    stream: Sequence[EditBatch],
    k: int = 2,
    n_samples: Optional[int] = 200,
) -> DriftResult:
    """Compare single-update and cumulative outputs for the first ``n_samples`` edits.

    ``steps[i]`` must be the step that applied ``stream[i]``.  For a
    multiplicative step the single update is its own rotation applied to
    ``w0`` (not the partial product up to that step).
    """
    if len(steps) != len(stream) or not steps:
        raise DimensionError(f"{len(steps)} steps do not align with {len(stream)} batches")
    w0 = np.asarray(mem.w0)
    final = steps[-1].w_after
    current, cumulative = [], []
    for step, batch in zip(steps, stream):
        if step.w_after.shape != w0.shape:
            raise DimensionError(f"step {step.step_index} has shape {step.w_after.shape}, w0 has {w0.shape}")
        current.append(_single_update(step, w0) @ batch.keys)
        cumulative.append(final @ batch.keys)
    current, cumulative = np.hstack(current), np.hstack(cumulative)
    if n_samples is not None:
        current, cumulative = current[:, :n_samples], cumulative[:, :n_samples]
    n = current.shape[1]
    projected = pca_project(np.hstack([current, cumulative]), min(k, w0.shape[0], 2 * n))
    return DriftResult(current, cumulative, projected, separation(projected, n))


def write_drift_csv(path, result: DriftResult, editor: Optional[str] = None, append: bool = False) -> None:
    """``edit_index,regime,pc1,pc2[,...]`` with regime in {current, cumulative}."""
    proj = result.projected
    n = result.current.shape[1]
    pcs = [f"pc{i + 1}" for i in range(proj.shape[0])]
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        lead = ["editor"] if editor is not None else []
        if not append:
            out.writerow(lead + ["edit_index", "regime"] + pcs)
        for regime, offset in (("current", 0), ("cumulative", n)):
            for j in range(n):
                row = [str(j), regime] + [fmt(v) for v in proj[:, offset + j]]
                out.writerow(([editor] if editor is not None else []) + row)


def read_drift_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["edit_index"] = int(row["edit_index"])
        for key in list(row):
            if key.startswith("pc"):
                row[key] = float(row[key])
    return rows
