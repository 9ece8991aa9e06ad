"""Per-step numerical-stability diagnostics of an edited weight."""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy.stats import spearmanr

from .errors import DimensionError, DomainError
from .linalg import as_matrix, rank_threshold, svd

__all__ = [
    "CSV_HEADER",
    "RANK_TOL",
    "StabilityRecord",
    "fmt",
    "read_stability_csv",
    "record",
    "summarize",
    "trend",
    "write_stability_csv",
]

CSV_HEADER = ("step", "frob_norm", "spectral_norm", "cond_number", "deviation")

# singular values below this fraction of the largest count as zero; the
# default LAPACK-style cutoff lets roundoff of a rank-deficient weight through
RANK_TOL = 1e-10


@dataclass(frozen=True)
class StabilityRecord:
    step: int
    frob_norm: float
    spectral_norm: float
    cond_number: float
    deviation: float


def record(step: int, w: ArrayLike, w0: ArrayLike, rank_tol: float = RANK_TOL) -> StabilityRecord:
    """Frobenius norm, spectral norm, condition number and ``||w - w0||_F``.

    All four come from one full SVD of ``w``.  The condition number is taken
    over singular values above ``rank_tol * sigma_max``; the zero matrix gets
    ``+inf``.
    """
    w = as_matrix(w, "w")
    w0 = as_matrix(w0, "w0")
    if w.shape != w0.shape:
        raise DimensionError(f"w {w.shape} and w0 {w0.shape} differ in shape")
    s = svd(w).singular_values
    if s[0] == 0.0:
        cond = math.inf
    else:
        kept = s[s > rank_threshold(s, w.shape, rank_tol)]
        cond = float(s[0] / kept[-1])
    frob = float(np.sqrt(np.sum(np.square(w))))
    dev = float(np.sqrt(np.sum(np.square(w - w0))))
    return StabilityRecord(step, frob, float(s[0]), cond, dev)


def summarize(records: Sequence[StabilityRecord]) -> dict:
    """Min / max / initial / final per field and final-over-initial ratios.

    Ratios with a zero or infinite initial value are reported as ``None``.
    """
    if not records:
        raise DomainError("cannot summarize an empty record list")
    out = {}
    for name in CSV_HEADER[1:]:
        vals = [getattr(r, name) for r in records]
        first, last = vals[0], vals[-1]
        ratio = last / first if first not in (0.0, math.inf) and math.isfinite(last) else None
        out[name] = {"min": min(vals), "max": max(vals), "initial": first, "final": last, "ratio": ratio}
    out["steps"] = len(records)
    return out


def trend(records: Sequence[StabilityRecord], field: str = "cond_number") -> float:
    """Spearman rank correlation between step index and ``field``."""
    steps = [r.step for r in records]
    vals = [getattr(r, field) for r in records]
    if len(set(vals)) < 2:
        return 0.0
    return float(spearmanr(steps, vals).statistic)


def fmt(x) -> str:
    """17 significant digits: enough to round-trip any float64."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_stability_csv(path, records: Iterable[StabilityRecord], editor: Optional[str] = None, append=False):
    """Write records under :data:`CSV_HEADER`, optionally prefixed by an ``editor`` column."""
    mode = "a" if append else "w"
    with open(path, mode, newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        if not append:
            out.writerow((("editor",) if editor is not None else ()) + CSV_HEADER)
        for r in records:
            row = [fmt(v) for v in astuple(r)]
            out.writerow(([editor] if editor is not None else []) + row)


def read_stability_csv(path) -> list:
    """Parse a stability CSV back into records (``(editor, record)`` pairs if merged)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        rec = StabilityRecord(
            int(row["step"]),
            float(row["frob_norm"]),
            float(row["spectral_norm"]),
            float(row["cond_number"]),
            float(row["deviation"]),
        )
        out.append((row["editor"], rec) if "editor" in row else rec)
    return out
