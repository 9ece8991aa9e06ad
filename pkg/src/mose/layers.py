"""Toy feed-forward stack and layer selection for editing.

Each layer is a two-matrix block ``x -> w_proj @ act(w_fc @ x)``.  The layer
to edit is chosen by the normalised residual

    ||V - W0 K||_F / (||W0||_2 * ||act(w_fc @ x_l)||_2),

lowest score wins, and the edit is then spread to the adjacent layers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .editors import mose_edit
from .errors import DimensionError, DomainError, LayerSelectionError
from .linalg import as_matrix, spectral_norm
from .memory import EditBatch
from .procrustes import EditConfig

__all__ = [
    "ACTIVATIONS",
    "Layer",
    "LayerScore",
    "LayerStack",
    "edit_layers",
    "layer_scores",
    "load_stack",
    "neighbors",
    "planted_stack",
    "save_stack",
    "score_activations",
    "select_layer",
    "stack_from_dict",
    "stack_to_dict",
]

ACTIVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "relu": lambda z: np.maximum(z, 0.0),
    "tanh": np.tanh,
    "identity": lambda z: z,
}


@dataclass(frozen=True, eq=False)
class Layer:
    w_fc: NDArray[np.float64]  # (h, p_in)
    w_proj: NDArray[np.float64]  # (d, h)

    def __post_init__(self):
        w_fc, w_proj = as_matrix(self.w_fc, "w_fc"), as_matrix(self.w_proj, "w_proj")
        if w_proj.shape[1] != w_fc.shape[0]:
            raise DimensionError(f"w_proj {w_proj.shape} does not compose with w_fc {w_fc.shape}")
        for name, m in (("w_fc", w_fc), ("w_proj", w_proj)):
            m = m.copy()
            m.flags.writeable = False
            object.__setattr__(self, name, m)


@dataclass(frozen=True, eq=False)
class LayerStack:
    """Ordered layers; ``propagate=False`` feeds the raw input to every layer."""

    layers: tuple
    activation: str = "relu"
    propagate: bool = True

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.layers) < 3:
            raise DomainError(f"a stack needs depth >= 3, got {len(self.layers)}")
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")
        for i, (prev, nxt) in enumerate(zip(self.layers, self.layers[1:])):
            if self.propagate and prev.w_proj.shape[0] != nxt.w_fc.shape[1]:
                raise DimensionError(f"layer {i} outputs {prev.w_proj.shape[0]} dims, layer {i + 1} takes {nxt.w_fc.shape[1]}")
        if not self.propagate and len({l.w_fc.shape[1] for l in self.layers}) != 1:
            raise DimensionError("without propagation every layer must take the same input size")

    @property
    def depth(self) -> int:
        return len(self.layers)

    def act(self, z):
        return ACTIVATIONS[self.activation](z)

    def hidden(self, x: ArrayLike) -> list[NDArray[np.float64]]:
        """Per-layer hidden activations ``act(w_fc @ x_l)`` for one input."""
        x = np.asarray(x, dtype=np.float64)
        out = []
        cur = x
        for layer in self.layers:
            a = self.act(layer.w_fc @ (cur if self.propagate else x))
            out.append(a)
            cur = layer.w_proj @ a
        return out

    def replace(self, updates: Mapping[int, NDArray[np.float64]]) -> "LayerStack":
        """New stack with ``w_proj`` of the given layers swapped out."""
        layers = list(self.layers)
        for i, w in updates.items():
            layers[i] = Layer(layers[i].w_fc, w)
        return LayerStack(tuple(layers), self.activation, self.propagate)


@dataclass(frozen=True)
class LayerScore:
    layer_index: int
    activation_norm: float
    normalized_residual: Optional[float] = None


def _check_input(x) -> NDArray[np.float64]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or not np.all(np.isfinite(x)):
        raise DomainError("x must be a finite vector")
    if not np.any(x):
        raise DomainError("x must be nonzero")
    return x


def score_activations(stack: LayerStack, x: ArrayLike) -> list[LayerScore]:
    """Activation strength ``||act(w_fc @ x_l)||_2`` of every layer."""
    x = _check_input(x)
    return [LayerScore(i, float(np.linalg.norm(a))) for i, a in enumerate(stack.hidden(x))]


def layer_scores(
    stack: LayerStack, x: ArrayLike, per_layer_edits: Sequence[tuple[ArrayLike, ArrayLike]]
) -> tuple[list[LayerScore], bool]:
    """Normalised residual of every layer.

    Returns the scores and a flag that is ``True`` when every activation was
    zero and the activation factor was dropped from the denominator.  Layers
    with a zero denominator get ``normalized_residual=None``.
    """
    if len(per_layer_edits) != stack.depth:
        raise DimensionError(f"expected {stack.depth} per-layer edits, got {len(per_layer_edits)}")
    scores = score_activations(stack, x)
    fallback = all(s.activation_norm == 0.0 for s in scores)
    out = []
    for s, layer, (ke, ve) in zip(scores, stack.layers, per_layer_edits):
        ke, ve = as_matrix(ke, "ke"), as_matrix(ve, "ve")
        w0 = layer.w_proj
        if ke.shape[0] != w0.shape[1] or ve.shape != (w0.shape[0], ke.shape[1]):
            raise DimensionError(f"layer {s.layer_index}: edit shapes {ke.shape}, {ve.shape} do not fit {w0.shape}")
        denom = spectral_norm(w0) * (1.0 if fallback else s.activation_norm)
        value = None
        if denom > 0.0:
            value = float(np.linalg.norm((ve - w0 @ ke) / denom))
        out.append(LayerScore(s.layer_index, s.activation_norm, value))
    return out, fallback


def select_layer(stack: LayerStack, x: ArrayLike, per_layer_edits: Sequence[tuple[ArrayLike, ArrayLike]]) -> int:
    """Index of the layer with the smallest normalised residual (lowest index on ties)."""
    scores, _ = layer_scores(stack, x, per_layer_edits)
    live = [s for s in scores if s.normalized_residual is not None]
    if not live:
        raise LayerSelectionError("every layer has a zero denominator")
    return min(live, key=lambda s: (s.normalized_residual, s.layer_index)).layer_index


def neighbors(l_star: int, depth: int) -> list[int]:
    """``l_star`` and its adjacent layers, clamped to ``[0, depth)``."""
    if not 0 <= l_star < depth:
        raise DomainError(f"layer {l_star} outside [0, {depth})")
    return [i for i in (l_star - 1, l_star, l_star + 1) if 0 <= i < depth]


def edit_layers(
    stack: LayerStack,
    targets: Sequence[int],
    batches: Sequence[EditBatch],
    cfg: EditConfig = EditConfig(),
    preserved: Optional[Mapping[int, ArrayLike]] = None,
) -> LayerStack:
    """Apply an independent MOSE edit to ``w_proj`` of every target layer.

    ``batches[i]`` is the edit for ``targets[i]``, with keys in that layer's
    hidden space.  ``preserved`` maps a layer to its preserved keys (none by
    default).  Layers not targeted are carried over unchanged.
    """
    if len(targets) != len(batches):
        raise DimensionError(f"{len(targets)} targets but {len(batches)} batches")
    if len(set(targets)) != len(targets):
        raise DomainError("targets must be distinct")
    preserved = preserved or {}
    updates = {}
    for t, batch in zip(targets, batches):
        if not 0 <= t < stack.depth:
            raise DomainError(f"target layer {t} outside [0, {stack.depth})")
        w = stack.layers[t].w_proj
        k0 = preserved.get(t, np.zeros((w.shape[1], 0)))
        updates[t] = mose_edit(w, k0, batch, cfg).w_after
    if not updates:
        return stack
    return stack.replace(updates)


def planted_stack(depth: int, d: int, h: int, planted: int, seed: int, noise: float = 0.5):
    """Random stack whose layer ``planted`` already roughly stores a fact.

    A random input ``x`` and a target ``v`` are drawn; ``w_proj`` of the
    planted layer is nudged so it maps its hidden activation to ``v`` up to a
    relative error ``noise``.  Every layer is then asked to map its own
    activation for ``x`` to ``v``.

    Returns
    -------
    stack : LayerStack
    x : (d,) ndarray
    per_layer_edits : list of (keys (h, 1), values (d, 1))
    """
    if not 0 <= planted < depth:
        raise DomainError(f"planted layer {planted} outside [0, {depth})")
    rng = np.random.default_rng(seed)
    layers = [
        Layer(rng.standard_normal((h, d)) / math.sqrt(d), rng.standard_normal((d, h)) / math.sqrt(h))
        for _ in range(depth)
    ]
    x = rng.standard_normal(d)
    x /= np.linalg.norm(x)
    stack = LayerStack(tuple(layers))
    a = stack.hidden(x)[planted]
    w = stack.layers[planted].w_proj
    scale = np.linalg.norm(w @ a)
    v = rng.standard_normal(d)
    v *= scale / np.linalg.norm(v)
    g = rng.standard_normal(d)
    aim = v + noise * scale * g / np.linalg.norm(g)
    stack = stack.replace({planted: w + np.outer(aim - w @ a, a) / (a @ a)})
    edits = [(hid[:, None], v[:, None].copy()) for hid in stack.hidden(x)]
    return stack, x, edits


# -- JSON layout ----------------------------------------------------------------


def stack_to_dict(stack: LayerStack) -> dict:
    return {
        "activation": stack.activation,
        "propagate": stack.propagate,
        "layers": [{"w_fc": l.w_fc.tolist(), "w_proj": l.w_proj.tolist()} for l in stack.layers],
    }


def stack_from_dict(data: dict) -> LayerStack:
    layers = tuple(
        Layer(np.array(l["w_fc"], dtype=np.float64), np.array(l["w_proj"], dtype=np.float64)) for l in data["layers"]
    )
    return LayerStack(layers, data.get("activation", "relu"), data.get("propagate", True))


def save_stack(stack: LayerStack, path) -> None:
    Path(path).write_text(json.dumps(stack_to_dict(stack)))


def load_stack(path) -> LayerStack:
    return stack_from_dict(json.loads(Path(path).read_text()))
