"""Model assembly: encoder, pooling, heads, and the joint objective.

The model classifies the sentiment of one (sentence, aspect) pair and is
additionally trained to reconstruct the aspect from the pooled sentence
representation, which forces the encoder to keep aspect-relevant
information in the state it hands to the classifier. Both heads read the
same pooled representation; only the classifier sees the aspect vector,
and only when aspect concatenation is enabled.

Embeddings are frozen: the table is a plain numpy array and never enters
the tape, so no gradient can touch it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cells import (
    DeepTransitionBlock,
    GruParams,
    affine,
    glorot,
    mask_tensor,
    run_block_batch,
    run_gru_batch,
)
from .tensor import (
    TRAIN_DTYPE,
    ShapeError,
    Tensor,
    concat,
    dropout,
    matmul,
    maximum,
    reshape,
    sigmoid_xent_logits,
    softmax_xent_logits,
    transpose,
)

ENCODERS = ("aspect-dt", "plain-dt", "gru")
POOLING_MODES = ("last", "max", "mean")
TASKS = ("category", "term")


class CapabilityError(RuntimeError):
    """The requested operation needs a capability this model was built without."""


@dataclass
class ModelConfig:
    """Architecture and objective settings; serializable as a flat dict.

    ``encoder`` selects the sentence encoder: "aspect-dt" is the full
    aspect-gated deep-transition stack, "plain-dt" keeps deep transitions
    but drops aspect conditioning, and "gru" is the stacked baseline
    (``depth`` layers). ``aspect_concat`` feeds the aspect vector to the
    classifier; ``reconstruct`` keeps the weighted reconstruction term in
    the objective.
    """

    hidden_size: int = 300
    embed_size: int = 300
    depth: int = 4
    num_labels: int = 4
    num_recon_targets: int = 1
    task: str = "category"
    lam: float = 0.4
    encoder: str = "aspect-dt"
    aspect_concat: bool = True
    reconstruct: bool = True
    dropout_input: float = 0.5
    dropout_hidden: float = 0.3
    pooling: str = "last"
    bidirectional: bool = False
    use_bias: bool = False

    def __post_init__(self):
        problems = []
        if self.hidden_size < 1:
            problems.append(f"hidden_size must be >= 1, got {self.hidden_size}")
        if self.embed_size < 1:
            problems.append(f"embed_size must be >= 1, got {self.embed_size}")
        if self.depth < 1:
            problems.append(f"depth must be >= 1, got {self.depth}")
        if self.num_labels < 2:
            problems.append(f"num_labels must be >= 2, got {self.num_labels}")
        if self.num_recon_targets < 1:
            problems.append(
                f"num_recon_targets must be >= 1, got {self.num_recon_targets}"
            )
        if self.task not in TASKS:
            problems.append(f"task must be one of {TASKS}, got {self.task!r}")
        if self.lam < 0:
            problems.append(f"lam must be >= 0, got {self.lam}")
        if self.encoder not in ENCODERS:
            problems.append(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if not 0.0 <= self.dropout_input < 1.0:
            problems.append(f"dropout_input must be in [0, 1), got {self.dropout_input}")
        if not 0.0 <= self.dropout_hidden < 1.0:
            problems.append(
                f"dropout_hidden must be in [0, 1), got {self.dropout_hidden}"
            )
        if self.pooling not in POOLING_MODES:
            problems.append(
                f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}"
            )
        if problems:
            raise ValueError("invalid model config: " + "; ".join(problems))

    @property
    def rep_size(self) -> int:
        return self.hidden_size * (2 if self.bidirectional else 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**dict(d))


@dataclass
class ForwardResult:
    """One batch forward: logits are (B, C); pooled is (rep, B)."""

    sent_logits: Tensor
    recon_logits: Tensor
    pooled: Tensor
    gates: list | None
    mask: np.ndarray


# -- aspect embedding -----------------------------------------------------------


def embed_aspect(tokens: Sequence[str], vocab) -> np.ndarray:
    """Average the embeddings of the aspect's tokens; frozen, off the tape.

    ``vocab`` needs ``lookup(token) -> id`` and an ``embedding`` array.
    Unknown tokens fall back to the unknown-word row.
    """
    tokens = list(tokens)
    if not tokens:
        raise ValueError("embed_aspect: aspect has no tokens")
    ids = [vocab.lookup(t) for t in tokens]
    return vocab.embedding[ids].mean(axis=0)


def aspect_matrix(aspect_token_lists: Sequence[Sequence[str]], vocab) -> np.ndarray:
    """Stack per-instance aspect vectors into a (B, d) array."""
    return np.stack([embed_aspect(toks, vocab) for toks in aspect_token_lists])


# -- pooling ----------------------------------------------------------------------


def _identity(t: Tensor) -> Tensor:
    return t


def _pool_columns(states, mask: np.ndarray, mode: str, dropfn=_identity) -> Tensor:
    """Pool per-step (d, B) states into one (d, B) representation.

    ``dropfn`` applies per-step hidden dropout before pooling; masked
    steps are exact no-ops for every mode, so extra padding can never
    change the result. States at masked steps already carry the previous
    state through (the encoder guarantees it), which makes "last" the
    state at each sequence's own final real token.
    """
    if not states:
        raise ValueError("pool: empty sequence")
    if mode not in POOLING_MODES:
        raise ValueError(f"pool: unknown mode {mode!r}")
    lengths = mask.sum(axis=1)
    if np.any(lengths == 0):
        raise ValueError("pool: a sequence in the batch has no real tokens")
    d = states[0].shape[0]
    dtype = states[0].dtype
    if mode == "last":
        # per-column select of the state at each sequence's last real step;
        # for encoder outputs this replays the carry-through, so values match
        acc = states[0]
        for t in range(1, len(states)):
            col = mask[:, t]
            if col.all():
                acc = states[t]
            elif col.any():
                m = mask_tensor(col, d, dtype)
                acc = m * states[t] + (1.0 - m) * acc
        return dropfn(acc)
    if mode == "max":
        acc = dropfn(states[0])  # step 0 is all-real under a monotone mask
        for t in range(1, len(states)):
            col = mask[:, t]
            if not col.any():
                continue
            cand = dropfn(states[t])
            if not col.all():
                m = mask_tensor(col, d, dtype)
                cand = m * cand + (1.0 - m) * acc
            acc = maximum(acc, cand)
        return acc
    # mean: masked sum scaled by one over true length
    acc = None
    for t in range(len(states)):
        col = mask[:, t]
        if not col.any():
            continue
        term = dropfn(states[t])
        if not col.all():
            term = mask_tensor(col, d, dtype) * term
        acc = term if acc is None else acc + term
    recip = np.ascontiguousarray(
        np.broadcast_to((1.0 / lengths).astype(dtype), (d, mask.shape[0]))
    )
    return acc * Tensor(recip)


def pool(states, mask=None, mode: str = "last") -> Tensor:
    """Pool one sequence's per-step states into a single vector.

    ``states`` is a list of (d,) tensors or a (T, d) array; ``mask`` an
    optional (T,) 0/1 array with real tokens as a prefix.
    """
    if isinstance(states, (list, tuple)):
        cols = [reshape(s, (s.shape[0], 1)) for s in states]
    else:
        arr = states.data if isinstance(states, Tensor) else np.asarray(states)
        if arr.ndim != 2:
            raise ShapeError(f"pool: states must be (T, d), got {arr.shape}")
        cols = [Tensor(np.ascontiguousarray(arr[t : t + 1].T)) for t in range(arr.shape[0])]
    T = len(cols)
    mask = np.ones(T) if mask is None else np.asarray(mask)
    if mask.shape != (T,):
        raise ShapeError(f"pool: mask shape {mask.shape} does not match T={T}")
    out = _pool_columns(cols, mask.reshape(1, -1), mode)
    return reshape(out, (out.shape[0],))


# -- the model ----------------------------------------------------------------------


class SentimentModel:
    """Aspect-conditioned sentence classifier with a reconstruction head.

    The embedding table is shared, frozen, and indexed by token id; row 0
    is the all-zero padding row. Both heads are always built, so ablation
    runs keep identical parameter counts and rng draw order; when the
    reconstruction term is disabled its head simply receives no gradient.
    """

    def __init__(self, config: ModelConfig, embedding: np.ndarray, rng: np.random.Generator):
        embedding = np.asarray(embedding)
        if embedding.ndim != 2:
            raise ShapeError(f"embedding table must be 2-d, got {embedding.shape}")
        if embedding.shape[1] != config.embed_size:
            raise ShapeError(
                f"embedding width {embedding.shape[1]} does not match "
                f"config embed_size {config.embed_size}"
            )
        self.config = config
        self.dtype = embedding.dtype if embedding.dtype in (np.dtype(np.float64), np.dtype(np.longdouble)) else TRAIN_DTYPE
        self.embedding = embedding.astype(self.dtype, copy=True)
        self.embedding.setflags(write=False)
        d_h, d_x = config.hidden_size, config.embed_size
        bias = config.use_bias
        self.gru_layers: list[GruParams] | None = None
        self.gru_layers_rev: list[GruParams] | None = None
        self.block: DeepTransitionBlock | None = None
        self.block_rev: DeepTransitionBlock | None = None
        if config.encoder == "gru":
            self.gru_layers = self._make_gru_stack(rng, bias)
            if config.bidirectional:
                self.gru_layers_rev = self._make_gru_stack(rng, bias)
        else:
            gated = config.encoder == "aspect-dt"
            self.block = DeepTransitionBlock.init(
                d_h, d_x, d_x, config.depth, rng, self.dtype, aspect_gated=gated, bias=bias
            )
            if config.bidirectional:
                self.block_rev = DeepTransitionBlock.init(
                    d_h, d_x, d_x, config.depth, rng, self.dtype, aspect_gated=gated, bias=bias
                )
        rep = config.rep_size
        self.w_recon = glorot(rng, config.num_recon_targets, rep, self.dtype)
        self.w_cls = glorot(
            rng, config.num_labels, rep + (d_x if config.aspect_concat else 0), self.dtype
        )
        self.b_recon = None
        self.b_cls = None
        if bias:
            self.b_recon = Tensor(
                np.zeros((config.num_recon_targets, 1), dtype=self.dtype), requires_grad=True
            )
            self.b_cls = Tensor(
                np.zeros((config.num_labels, 1), dtype=self.dtype), requires_grad=True
            )

    def _make_gru_stack(self, rng, bias) -> list[GruParams]:
        c = self.config
        return [
            GruParams.init(
                c.hidden_size,
                c.embed_size if i == 0 else c.hidden_size,
                rng,
                self.dtype,
                bias,
            )
            for i in range(c.depth)
        ]

    # -- parameters ------------------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        if self.gru_layers is not None:
            for i, layer in enumerate(self.gru_layers):
                out.update(layer.tensors(f"enc/l{i}/"))
            if self.gru_layers_rev is not None:
                for i, layer in enumerate(self.gru_layers_rev):
                    out.update(layer.tensors(f"enc_rev/l{i}/"))
        else:
            out.update(self.block.tensors("enc/"))
            if self.block_rev is not None:
                out.update(self.block_rev.tensors("enc_rev/"))
        out["head/recon"] = self.w_recon
        out["head/cls"] = self.w_cls
        if self.b_recon is not None:
            out["head/recon_b"] = self.b_recon
            out["head/cls_b"] = self.b_cls
        return out

    # -- forward -----------------------------------------------------------------

    def _embed_steps(self, token_ids: np.ndarray, reverse_lengths=None) -> np.ndarray:
        emb = self.embedding[token_ids]  # (B, T, d)
        if reverse_lengths is not None:
            rev = np.zeros_like(emb)
            for i, L in enumerate(reverse_lengths):
                rev[i, :L] = emb[i, L - 1 :: -1]
            emb = rev
        return emb

    def _encode(self, emb, aspects_t, mask, training, rng, reverse: bool):
        c = self.config
        B, T, _ = emb.shape
        steps = [
            Tensor(np.ascontiguousarray(emb[:, t, :].T)) for t in range(T)
        ]
        if training and c.dropout_input > 0:
            steps = [dropout(s, c.dropout_input, True, rng) for s in steps]
        if self.gru_layers is not None:
            layers = self.gru_layers_rev if reverse else self.gru_layers
            states = run_gru_batch(layers, steps, mask)
            gates = None
        else:
            block = self.block_rev if reverse else self.block
            aspect = aspects_t if block.aspect_gated else None
            states, gates = run_block_batch(block, steps, aspect, mask)
        return states, gates

    def forward(
        self,
        token_ids: np.ndarray,
        mask: np.ndarray,
        aspect_vecs: np.ndarray,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> ForwardResult:
        """Run one column batch through encoder, pooling, and both heads.

        token_ids: (B, T) int ids into the embedding table; mask: (B, T)
        0/1 with real tokens as a prefix; aspect_vecs: (B, d) frozen
        aspect embeddings. In training mode an rng must be supplied for
        the dropout masks.
        """
        c = self.config
        token_ids = np.asarray(token_ids, dtype=np.int64)
        if token_ids.ndim != 2:
            raise ShapeError(f"token_ids must be (B, T), got {token_ids.shape}")
        B, T = token_ids.shape
        if token_ids.size and (token_ids.min() < 0 or token_ids.max() >= self.embedding.shape[0]):
            raise IndexError("token id out of range for the embedding table")
        mask = np.asarray(mask)
        if mask.shape != (B, T):
            raise ShapeError(f"mask shape {mask.shape} does not match ({B}, {T})")
        aspect_vecs = np.asarray(aspect_vecs, dtype=self.dtype)
        if aspect_vecs.shape != (B, c.embed_size):
            raise ShapeError(
                f"aspect_vecs shape {aspect_vecs.shape} does not match ({B}, {c.embed_size})"
            )
        if training and rng is None and (c.dropout_input > 0 or c.dropout_hidden > 0):
            raise ValueError("forward: training mode needs an rng for dropout")
        aspects_t = Tensor(np.ascontiguousarray(aspect_vecs.T))
        emb = self._embed_steps(token_ids)
        states, gates = self._encode(emb, aspects_t, mask, training, rng, reverse=False)

        def dropfn(t: Tensor) -> Tensor:
            return dropout(t, c.dropout_hidden, training, rng) if training else t

        pooled = _pool_columns(states, mask, c.pooling, dropfn)
        if c.bidirectional:
            lengths = mask.sum(axis=1).astype(int)
            emb_rev = self._embed_steps(token_ids, reverse_lengths=lengths)
            states_r, _ = self._encode(emb_rev, aspects_t, mask, training, rng, reverse=True)
            pooled_r = _pool_columns(states_r, mask, c.pooling, dropfn)
            pooled = concat(pooled, pooled_r, axis=0)
        recon_logits = transpose(affine(self.w_recon, pooled, self.b_recon))
        cls_in = concat(pooled, aspects_t, axis=0) if c.aspect_concat else pooled
        sent_logits = transpose(affine(self.w_cls, cls_in, self.b_cls))
        return ForwardResult(
            sent_logits=sent_logits,
            recon_logits=recon_logits,
            pooled=pooled,
            gates=gates,
            mask=mask,
        )

    def forward_one(
        self, token_ids: Sequence[int], aspect_vec: np.ndarray, training=False, rng=None
    ) -> ForwardResult:
        """Single-sequence convenience wrapper around ``forward``."""
        ids = np.asarray(token_ids, dtype=np.int64).reshape(1, -1)
        mask = np.ones_like(ids)
        return self.forward(ids, mask, np.asarray(aspect_vec).reshape(1, -1), training, rng)


# -- losses ------------------------------------------------------------------------


def _onehot_rows(ids: np.ndarray, width: int, dtype) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= width):
        raise ValueError(f"target id out of range [0, {width})")
    out = np.zeros((ids.shape[0], width), dtype=dtype)
    out[np.arange(ids.shape[0]), ids] = 1
    return out


def loss_category_reconstruction(recon_logits: Tensor, gold_index: int) -> Tensor:
    """Softmax cross-entropy against the single gold category."""
    if recon_logits.ndim != 1:
        raise ShapeError(f"expected (C,) logits, got {recon_logits.shape}")
    onehot = np.zeros(recon_logits.shape[0], dtype=recon_logits.dtype)
    if not 0 <= gold_index < recon_logits.shape[0]:
        raise ValueError(f"gold category {gold_index} out of range")
    onehot[gold_index] = 1
    return softmax_xent_logits(recon_logits, Tensor(onehot))


def loss_term_reconstruction(recon_logits: Tensor, gold_ids: Iterable[int]) -> Tensor:
    """Multi-label sigmoid cross-entropy, summed over the term vocabulary."""
    if recon_logits.ndim != 1:
        raise ShapeError(f"expected (C,) logits, got {recon_logits.shape}")
    multi = np.zeros(recon_logits.shape[0], dtype=recon_logits.dtype)
    for i in gold_ids:
        if not 0 <= i < recon_logits.shape[0]:
            raise ValueError(f"gold term id {i} out of range")
        multi[i] = 1
    return sigmoid_xent_logits(recon_logits, Tensor(multi))


def joint_loss(
    sent_logits: Tensor, gold_label: int, recon_loss: Tensor | None, config: ModelConfig
) -> Tensor:
    """Per-instance objective: classification plus weighted reconstruction."""
    if sent_logits.ndim != 1:
        raise ShapeError(f"expected (C,) logits, got {sent_logits.shape}")
    onehot = np.zeros(sent_logits.shape[0], dtype=sent_logits.dtype)
    if not 0 <= gold_label < sent_logits.shape[0]:
        raise ValueError(f"gold label {gold_label} out of range")
    onehot[gold_label] = 1
    ce = softmax_xent_logits(sent_logits, Tensor(onehot))
    if not config.reconstruct:
        return ce
    if recon_loss is None:
        raise ValueError("joint_loss: reconstruction enabled but no recon loss given")
    return ce + config.lam * recon_loss


def batch_joint_loss(
    result: ForwardResult,
    label_ids: np.ndarray,
    recon_targets,
    config: ModelConfig,
) -> tuple[Tensor, float, float]:
    """Mean objective over a batch; returns (loss, ce part, recon part).

    ``recon_targets`` is a (B,) array of category ids for the category
    task, or a sequence of id collections for the term task. The parts
    are float diagnostics of the already-reduced means.
    """
    z = result.sent_logits
    B = z.shape[0]
    onehot = Tensor(_onehot_rows(label_ids, z.shape[1], z.dtype))
    ce = softmax_xent_logits(z, onehot).mean()
    if not config.reconstruct:
        return ce, ce.item(), 0.0
    rz = result.recon_logits
    if config.task == "category":
        targets = Tensor(_onehot_rows(recon_targets, rz.shape[1], rz.dtype))
        recon = softmax_xent_logits(rz, targets).mean()
    else:
        multi = np.zeros(rz.shape, dtype=rz.dtype)
        if len(recon_targets) != B:
            raise ValueError("term targets do not match batch size")
        for row, ids in enumerate(recon_targets):
            for i in ids:
                if not 0 <= i < rz.shape[1]:
                    raise ValueError(f"gold term id {i} out of range")
                multi[row, i] = 1
        recon = sigmoid_xent_logits(rz, Tensor(multi)).mean()
    total = ce + config.lam * recon
    return total, ce.item(), recon.item()


# -- prediction -----------------------------------------------------------------


def predict(logits) -> int | np.ndarray:
    """Argmax over the last axis; ties resolve to the lowest index."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if arr.ndim == 1:
        return int(np.argmax(arr))
    if arr.ndim == 2:
        return np.argmax(arr, axis=1).astype(np.int64)
    raise ShapeError(f"predict: logits must be 1-d or 2-d, got {arr.shape}")


def reconstruct_aspect(recon_logits, task: str, threshold: float = 0.5):
    """Decode the reconstruction head: category index or set of term ids."""
    arr = recon_logits.data if isinstance(recon_logits, Tensor) else np.asarray(recon_logits)
    if arr.ndim != 1:
        raise ShapeError(f"reconstruct_aspect: expected (C,), got {arr.shape}")
    if task == "category":
        return int(np.argmax(arr))
    if task == "term":
        if not 0.0 < threshold < 1.0:
            raise ValueError(f"threshold must be in (0, 1), got {threshold}")
        cut = np.log(threshold / (1.0 - threshold))
        return {int(i) for i in np.nonzero(arr >= cut)[0]}
    raise ValueError(f"unknown task {task!r}")
