"""Reliability, generalization and locality of an edited memory.

Success is decided by retrieval: a key counts as correct when its output
decodes to the expected codebook id.  Locality compares post-edit retrieval
with pre-edit retrieval rather than with the ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike

from .memory import UNDECODABLE, EvalSuite, decode_many

__all__ = ["MetricsReport", "evaluate"]


@dataclass(frozen=True)
class MetricsReport:
    """Scores in [0, 1]; ``None`` marks a scope with no entries."""

    reliability: Optional[float]
    generalization: Optional[float]
    locality: Optional[float]
    counts: tuple  # (n_in, n_nbr, n_out)
    successes: tuple = (0, 0, 0)

    def to_dict(self) -> dict:
        n_in, n_nbr, n_out = self.counts
        return {
            "reliability": self.reliability,
            "generalization": self.generalization,
            "locality": self.locality,
            "counts": {"in_scope": n_in, "neighborhood": n_nbr, "out_of_scope": n_out},
        }


def _score(hits: np.ndarray) -> tuple[Optional[float], int]:
    n = int(hits.size)
    k = int(np.count_nonzero(hits))
    return (k / n if n else None), k


def evaluate(w: ArrayLike, w_pre: ArrayLike, suite: EvalSuite, codebook: ArrayLike) -> MetricsReport:
    """Score ``w`` on a suite; ``w_pre`` is the reference for locality."""
    got_in = decode_many(w, suite.in_keys, codebook)
    got_nbr = decode_many(w, suite.neighbor_keys, codebook)
    got_out = decode_many(w, suite.out_keys, codebook)
    ref_out = decode_many(w_pre, suite.out_keys, codebook)
    rel, s_in = _score(got_in == suite.in_ids)
    gen, s_nbr = _score(got_nbr == suite.neighbor_ids)
    # an undecodable post-edit output is a failure even if the reference was too
    loc, s_out = _score((got_out == ref_out) & (got_out != UNDECODABLE))
    return MetricsReport(
        reliability=rel,
        generalization=gen,
        locality=loc,
        counts=(got_in.size, got_nbr.size, got_out.size),
        successes=(s_in, s_nbr, s_out),
    )
