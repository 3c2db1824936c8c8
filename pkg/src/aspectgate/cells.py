"""Gated recurrent cells and deep-transition sequence encoders.

A deep-transition block processes one time step through a stack of
cells: an input-consuming first cell followed by ``depth - 1`` transition
cells that refine the state without seeing the token. The first cell
comes in two flavors: an aspect-gated one, whose candidate state is
modulated by a relu gate computed from the aspect vector and the previous
state, and an aspect-free one that keeps the gated linear bypass but no
aspect conditioning. A conventional stacked GRU is provided as the
baseline encoder.

All step functions take column-major batches: inputs are (d, B) with one
column per sequence. Per-instance wrappers reshape vectors through the
B = 1 path so there is a single implementation of the math.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import (
    TRAIN_DTYPE,
    ShapeError,
    Tensor,
    concat,
    matmul,
    relu,
    reshape,
    sigmoid,
    tanh,
)


def glorot(rng: np.random.Generator, rows: int, cols: int, dtype=TRAIN_DTYPE) -> Tensor:
    """Glorot-uniform weight matrix, a trainable leaf."""
    limit = np.sqrt(6.0 / (rows + cols))
    data = rng.uniform(-limit, limit, size=(rows, cols)).astype(dtype)
    return Tensor(data, requires_grad=True)


def _zeros_bias(rows: int, dtype) -> Tensor:
    return Tensor(np.zeros((rows, 1), dtype=dtype), requires_grad=True)


def affine(w: Tensor, x: Tensor, b: Tensor | None) -> Tensor:
    """w @ x, plus a column bias tiled across the batch when enabled."""
    out = matmul(w, x)
    if b is None:
        return out
    ones = Tensor(np.ones((1, out.shape[1]), dtype=out.dtype))
    return out + matmul(b, ones)


def _check_cols(name: str, t: Tensor, rows: int) -> None:
    if t.ndim != 2 or t.shape[0] != rows:
        raise ShapeError(f"{name}: expected ({rows}, B), got {t.shape}")


# -- parameter containers -----------------------------------------------------


@dataclass
class AspectGruParams:
    """Weights of the aspect-gated input cell.

    Twelve matrices: four input-to-hidden (candidate, reset, update,
    linear gates), five hidden-to-hidden (same four plus the aspect
    gate's recurrent term), the aspect projection, and two linear
    transformations of the token embedding, one added through the linear
    gate and one through the aspect gate. Optional column biases cover
    the four sigmoid/relu gates and the candidate.
    """

    w_xh: Tensor
    w_xr: Tensor
    w_xz: Tensor
    w_xl: Tensor
    w_hh: Tensor
    w_hr: Tensor
    w_hz: Tensor
    w_hl: Tensor
    w_hg: Tensor
    w_a: Tensor
    w_lin1: Tensor
    w_lin2: Tensor
    b_r: Tensor | None = None
    b_z: Tensor | None = None
    b_l: Tensor | None = None
    b_g: Tensor | None = None
    b_h: Tensor | None = None

    @classmethod
    def init(cls, d_h: int, d_x: int, d_a: int, rng, dtype=TRAIN_DTYPE, bias=False):
        hx = lambda: glorot(rng, d_h, d_x, dtype)
        hh = lambda: glorot(rng, d_h, d_h, dtype)
        p = cls(
            w_xh=hx(), w_xr=hx(), w_xz=hx(), w_xl=hx(),
            w_hh=hh(), w_hr=hh(), w_hz=hh(), w_hl=hh(), w_hg=hh(),
            w_a=glorot(rng, d_h, d_a, dtype),
            w_lin1=hx(), w_lin2=hx(),
        )
        if bias:
            p.b_r, p.b_z, p.b_l, p.b_g, p.b_h = (
                _zeros_bias(d_h, dtype) for _ in range(5)
            )
        return p

    @property
    def d_h(self) -> int:
        return self.w_hh.shape[0]

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for name in ("w_xh", "w_xr", "w_xz", "w_xl", "w_hh", "w_hr", "w_hz",
                     "w_hl", "w_hg", "w_a", "w_lin1", "w_lin2",
                     "b_r", "b_z", "b_l", "b_g", "b_h"):
            t = getattr(self, name)
            if t is not None:
                out[f"{prefix}{name}"] = t
        return out


@dataclass
class DtGruParams:
    """Weights of the aspect-free input cell (gated linear bypass, no aspect)."""

    w_xh: Tensor
    w_xr: Tensor
    w_xz: Tensor
    w_xl: Tensor
    w_hh: Tensor
    w_hr: Tensor
    w_hz: Tensor
    w_hl: Tensor
    w_lin1: Tensor
    b_r: Tensor | None = None
    b_z: Tensor | None = None
    b_l: Tensor | None = None
    b_h: Tensor | None = None

    @classmethod
    def init(cls, d_h: int, d_x: int, rng, dtype=TRAIN_DTYPE, bias=False):
        hx = lambda: glorot(rng, d_h, d_x, dtype)
        hh = lambda: glorot(rng, d_h, d_h, dtype)
        p = cls(
            w_xh=hx(), w_xr=hx(), w_xz=hx(), w_xl=hx(),
            w_hh=hh(), w_hr=hh(), w_hz=hh(), w_hl=hh(),
            w_lin1=hx(),
        )
        if bias:
            p.b_r, p.b_z, p.b_l, p.b_h = (_zeros_bias(d_h, dtype) for _ in range(4))
        return p

    @property
    def d_h(self) -> int:
        return self.w_hh.shape[0]

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for name in ("w_xh", "w_xr", "w_xz", "w_xl", "w_hh", "w_hr", "w_hz",
                     "w_hl", "w_lin1", "b_r", "b_z", "b_l", "b_h"):
            t = getattr(self, name)
            if t is not None:
                out[f"{prefix}{name}"] = t
        return out


@dataclass
class TransitionGruParams:
    """Weights of one transition cell: state in, state out, no token input."""

    w_h: Tensor
    w_r: Tensor
    w_z: Tensor
    b_r: Tensor | None = None
    b_z: Tensor | None = None

    @classmethod
    def init(cls, d_h: int, rng, dtype=TRAIN_DTYPE, bias=False):
        p = cls(
            w_h=glorot(rng, d_h, d_h, dtype),
            w_r=glorot(rng, d_h, d_h, dtype),
            w_z=glorot(rng, d_h, d_h, dtype),
        )
        if bias:
            p.b_r, p.b_z = _zeros_bias(d_h, dtype), _zeros_bias(d_h, dtype)
        return p

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}w_h": self.w_h, f"{prefix}w_r": self.w_r, f"{prefix}w_z": self.w_z}
        if self.b_r is not None:
            out[f"{prefix}b_r"] = self.b_r
            out[f"{prefix}b_z"] = self.b_z
        return out


@dataclass
class GruParams:
    """Weights of a conventional GRU cell, for the stacked baseline."""

    w_xh: Tensor
    w_xr: Tensor
    w_xz: Tensor
    w_hh: Tensor
    w_hr: Tensor
    w_hz: Tensor
    b_r: Tensor | None = None
    b_z: Tensor | None = None
    b_h: Tensor | None = None

    @classmethod
    def init(cls, d_h: int, d_x: int, rng, dtype=TRAIN_DTYPE, bias=False):
        hx = lambda: glorot(rng, d_h, d_x, dtype)
        hh = lambda: glorot(rng, d_h, d_h, dtype)
        p = cls(w_xh=hx(), w_xr=hx(), w_xz=hx(), w_hh=hh(), w_hr=hh(), w_hz=hh())
        if bias:
            p.b_r, p.b_z, p.b_h = (_zeros_bias(d_h, dtype) for _ in range(3))
        return p

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for name in ("w_xh", "w_xr", "w_xz", "w_hh", "w_hr", "w_hz", "b_r", "b_z", "b_h"):
            t = getattr(self, name)
            if t is not None:
                out[f"{prefix}{name}"] = t
        return out


# -- step functions -----------------------------------------------------------


def aspect_gru_step(
    p: AspectGruParams,
    x: Tensor,
    aspect: Tensor,
    h_prev: Tensor,
    a_proj: Tensor | None = None,
) -> tuple[Tensor, Tensor]:
    """One aspect-gated step; returns (new state, relu gate activations).

    x: (d_x, B), aspect: (d_a, B), h_prev: (d_h, B). ``a_proj`` lets the
    caller hoist w_a @ aspect out of the time loop; the aspect is
    constant across a sequence, so the projection is too.
    """
    d_h = p.d_h
    _check_cols("aspect_gru_step: h_prev", h_prev, d_h)
    if x.shape[1] != h_prev.shape[1]:
        raise ShapeError(
            f"aspect_gru_step: batch width differs, x {x.shape} vs h {h_prev.shape}"
        )
    if a_proj is None:
        a_proj = matmul(p.w_a, aspect)
    r = sigmoid(affine(p.w_xr, x, None) + affine(p.w_hr, h_prev, p.b_r))
    z = sigmoid(affine(p.w_xz, x, None) + affine(p.w_hz, h_prev, p.b_z))
    l = sigmoid(affine(p.w_xl, x, None) + affine(p.w_hl, h_prev, p.b_l))
    g = relu(a_proj + affine(p.w_hg, h_prev, p.b_g))
    cand = tanh(g * matmul(p.w_xh, x) + r * affine(p.w_hh, h_prev, p.b_h))
    cand = cand + l * matmul(p.w_lin1, x) + g * matmul(p.w_lin2, x)
    h = (1.0 - z) * h_prev + z * cand
    return h, g


def dt_gru_step(p: DtGruParams, x: Tensor, h_prev: Tensor) -> Tensor:
    """Aspect-free input cell: ungated nonlinear path plus gated bypass."""
    _check_cols("dt_gru_step: h_prev", h_prev, p.d_h)
    r = sigmoid(affine(p.w_xr, x, None) + affine(p.w_hr, h_prev, p.b_r))
    z = sigmoid(affine(p.w_xz, x, None) + affine(p.w_hz, h_prev, p.b_z))
    l = sigmoid(affine(p.w_xl, x, None) + affine(p.w_hl, h_prev, p.b_l))
    cand = tanh(matmul(p.w_xh, x) + r * affine(p.w_hh, h_prev, p.b_h))
    cand = cand + l * matmul(p.w_lin1, x)
    return (1.0 - z) * h_prev + z * cand


def transition_gru_step(p: TransitionGruParams, h_prev: Tensor) -> Tensor:
    """One transition refinement; candidate is tanh(r * (w_h @ h))."""
    z = sigmoid(affine(p.w_z, h_prev, p.b_z))
    r = sigmoid(affine(p.w_r, h_prev, p.b_r))
    cand = tanh(r * matmul(p.w_h, h_prev))
    return (1.0 - z) * h_prev + z * cand


def gru_step(p: GruParams, x: Tensor, h_prev: Tensor) -> Tensor:
    """Conventional GRU step for the stacked baseline."""
    r = sigmoid(affine(p.w_xr, x, None) + affine(p.w_hr, h_prev, p.b_r))
    z = sigmoid(affine(p.w_xz, x, None) + affine(p.w_hz, h_prev, p.b_z))
    cand = tanh(affine(p.w_xh, x, None) + r * affine(p.w_hh, h_prev, p.b_h))
    return (1.0 - z) * h_prev + z * cand


# -- deep-transition block ------------------------------------------------------


@dataclass
class DeepTransitionBlock:
    """One input cell plus transition cells, applied once per time step."""

    first: AspectGruParams | DtGruParams
    transitions: tuple[TransitionGruParams, ...]

    @classmethod
    def init(cls, d_h, d_x, d_a, depth, rng, dtype=TRAIN_DTYPE, aspect_gated=True, bias=False):
        if depth < 1:
            raise ValueError(f"depth must be >= 1, got {depth}")
        if aspect_gated:
            first = AspectGruParams.init(d_h, d_x, d_a, rng, dtype, bias)
        else:
            first = DtGruParams.init(d_h, d_x, rng, dtype, bias)
        trans = tuple(
            TransitionGruParams.init(d_h, rng, dtype, bias) for _ in range(depth - 1)
        )
        return cls(first=first, transitions=trans)

    @property
    def depth(self) -> int:
        return 1 + len(self.transitions)

    @property
    def aspect_gated(self) -> bool:
        return isinstance(self.first, AspectGruParams)

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        out = self.first.tensors(f"{prefix}c0/")
        for i, t in enumerate(self.transitions):
            out.update(t.tensors(f"{prefix}c{i + 1}/"))
        return out


def block_step(
    block: DeepTransitionBlock,
    x: Tensor,
    aspect: Tensor | None,
    h_prev: Tensor,
    a_proj: Tensor | None = None,
) -> tuple[Tensor, Tensor | None]:
    """Run one time step through all cells; returns (state, gate or None)."""
    if block.aspect_gated:
        if aspect is None and a_proj is None:
            raise ValueError("block_step: aspect-gated block needs an aspect")
        h, g = aspect_gru_step(block.first, x, aspect, h_prev, a_proj)
    else:
        h, g = dt_gru_step(block.first, x, h_prev), None
    for cell in block.transitions:
        h = transition_gru_step(cell, h)
    return h, g


# -- sequence encoders -----------------------------------------------------------


@dataclass
class GateTrace:
    """Aspect-gate activations per time step; None where masked out."""

    steps: list[np.ndarray | None] = field(default_factory=list)

    def mean_per_step(self) -> list[float | None]:
        return [None if g is None else float(g.mean()) for g in self.steps]


def mask_tensor(col: np.ndarray, d_h: int, dtype) -> Tensor:
    # tile a (B,) 0/1 step mask to the full (d_h, B) state shape
    tiled = np.ascontiguousarray(
        np.broadcast_to(col.astype(dtype), (d_h, col.shape[0]))
    )
    return Tensor(tiled)


def _validate_mask(mask: np.ndarray, B: int, T: int) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.shape != (B, T):
        raise ShapeError(f"mask shape {mask.shape} does not match batch ({B}, {T})")
    vals = np.unique(mask)
    if not np.all(np.isin(vals, (0, 1))):
        raise ValueError("mask entries must be 0 or 1")
    # real tokens must form a prefix of each row
    diffs = np.diff(mask.astype(np.int8), axis=1)
    if np.any(diffs > 0):
        raise ValueError("mask must be monotone: padding only as a suffix")
    return mask


def run_block_batch(
    block: DeepTransitionBlock,
    steps: Sequence[Tensor],
    aspect: Tensor | None,
    mask: np.ndarray,
    h0: Tensor | None = None,
) -> tuple[list[Tensor], list[Tensor | None]]:
    """Encode a column batch through a deep-transition block.

    ``steps[t]`` is the (d_x, B) input at time t, ``mask`` is (B, T) with
    real tokens as a prefix. Masked positions carry the previous state
    through unchanged, so the final state of every column is its state at
    its own last real token. Returns per-step states and gate tensors.
    """
    d_h = block.first.d_h
    if not steps:
        return [], []
    B = steps[0].shape[1]
    mask = _validate_mask(mask, B, len(steps))
    dtype = steps[0].dtype
    if h0 is None:
        h = Tensor(np.zeros((d_h, B), dtype=dtype))
    else:
        _check_cols("run_block_batch: h0", h0, d_h)
        h = h0
    a_proj = None
    if block.aspect_gated:
        if aspect is None:
            raise ValueError("run_block_batch: aspect-gated block needs an aspect")
        a_proj = matmul(block.first.w_a, aspect)
    states: list[Tensor] = []
    gates: list[Tensor | None] = []
    for t, x in enumerate(steps):
        h_new, g = block_step(block, x, aspect, h, a_proj)
        col = mask[:, t]
        if col.all():
            h = h_new
        else:
            m = mask_tensor(col, d_h, dtype)
            h = m * h_new + (1.0 - m) * h
        states.append(h)
        gates.append(g)
    return states, gates


def run_gru_batch(
    layers: Sequence[GruParams],
    steps: Sequence[Tensor],
    mask: np.ndarray,
    h0: Tensor | None = None,
) -> list[Tensor]:
    """Encode a column batch through stacked GRU layers; returns top states."""
    if not layers:
        raise ValueError("run_gru_batch: needs at least one layer")
    if not steps:
        return []
    B = steps[0].shape[1]
    mask = _validate_mask(mask, B, len(steps))
    dtype = steps[0].dtype
    current = list(steps)
    for layer in layers:
        d_h = layer.w_hh.shape[0]
        h = h0 if h0 is not None else Tensor(np.zeros((d_h, B), dtype=dtype))
        outputs: list[Tensor] = []
        for t, x in enumerate(current):
            h_new = gru_step(layer, x, h)
            col = mask[:, t]
            if col.all():
                h = h_new
            else:
                m = mask_tensor(col, d_h, dtype)
                h = m * h_new + (1.0 - m) * h
            outputs.append(h)
        current = outputs
    return current


# -- per-instance wrappers (single sequence, B = 1) -------------------------------


def _as_column_steps(embedded, dtype) -> list[Tensor]:
    arr = embedded.data if isinstance(embedded, Tensor) else np.asarray(embedded, dtype=dtype)
    if arr.ndim != 2:
        raise ShapeError(f"embedded sequence must be (T, d_x), got {arr.shape}")
    return [Tensor(np.ascontiguousarray(arr[t : t + 1].T)) for t in range(arr.shape[0])]


def encode_sequence(
    block: DeepTransitionBlock,
    embedded,
    aspect,
    mask=None,
    h0=None,
) -> tuple[list[Tensor], GateTrace]:
    """Encode one sequence; returns per-step (d_h,) states and a gate trace.

    ``embedded`` is (T, d_x) with one row per token, ``aspect`` a (d_a,)
    vector, ``mask`` an optional (T,) 0/1 array (default all real).
    """
    d_h = block.first.d_h
    steps = _as_column_steps(embedded, TRAIN_DTYPE)
    T = len(steps)
    dtype = steps[0].dtype if steps else TRAIN_DTYPE
    if mask is None:
        mask = np.ones(T)
    mask = np.asarray(mask).reshape(1, -1)
    a_col = None
    if block.aspect_gated:
        a_arr = aspect.data if isinstance(aspect, Tensor) else np.asarray(aspect, dtype=dtype)
        a_col = Tensor(np.ascontiguousarray(a_arr.reshape(-1, 1)))
    h0_col = None
    if h0 is not None:
        h0_arr = h0.data if isinstance(h0, Tensor) else np.asarray(h0, dtype=dtype)
        h0_col = Tensor(h0_arr.reshape(-1, 1))
    states, gates = run_block_batch(block, steps, a_col, mask, h0_col)
    flat = [reshape(s, (d_h,)) for s in states]
    trace = GateTrace(
        steps=[
            None if g is None or mask[0, t] == 0 else np.asarray(g.data[:, 0])
            for t, g in enumerate(gates)
        ]
    )
    return flat, trace


def gru_encode(layers: Sequence[GruParams], embedded, mask=None, h0=None) -> list[Tensor]:
    """Encode one sequence through stacked GRUs; returns per-step states."""
    steps = _as_column_steps(embedded, TRAIN_DTYPE)
    T = len(steps)
    if mask is None:
        mask = np.ones(T)
    mask = np.asarray(mask).reshape(1, -1)
    h0_col = None
    if h0 is not None:
        h0_arr = h0.data if isinstance(h0, Tensor) else np.asarray(h0)
        h0_col = Tensor(h0_arr.reshape(-1, 1))
    states = run_gru_batch(layers, steps, mask, h0_col)
    d_h = layers[-1].w_hh.shape[0]
    return [reshape(s, (d_h,)) for s in states]
