"""Adam training loop, evaluation metrics, and multi-seed experiment drivers."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import (
    Instance,
    TaskSpaces,
    Vocab,
    assemble_vocab,
    make_batches,
    scan_embedding_file,
    vocab_token_lists,
)
from .model import (
    CapabilityError,
    ModelConfig,
    SentimentModel,
    aspect_matrix,
    batch_joint_loss,
    embed_aspect,
    predict,
    reconstruct_aspect,
)
from .tensor import backward


class TrainingDiverged(RuntimeError):
    """Raised when the objective turns non-finite mid-run."""


@dataclass
class TrainConfig:
    """Optimization settings; defaults are the library-wide training recipe."""

    epochs: int = 20
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    token_budget: int = 4096
    patience: int | None = None  # early stop on dev accuracy; None trains all epochs

    def __post_init__(self):
        problems = []
        if self.epochs < 1:
            problems.append(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            problems.append(f"lr must be positive, got {self.lr}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                problems.append(f"{name} must be in [0, 1), got {v}")
        if not self.eps > 0:
            problems.append(f"eps must be positive, got {self.eps}")
        if not self.clip_norm > 0:
            problems.append(f"clip_norm must be positive, got {self.clip_norm}")
        if self.token_budget < 1:
            problems.append(f"token_budget must be >= 1, got {self.token_budget}")
        if self.patience is not None and self.patience < 1:
            problems.append(f"patience must be >= 1 or None, got {self.patience}")
        if problems:
            raise ValueError("bad training config: " + "; ".join(problems))

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "clip_norm": self.clip_norm,
            "token_budget": self.token_budget,
            "patience": self.patience,
        }


# -- optimizer --------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment buffers plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: Mapping[str, "object"]) -> "AdamState":
        return cls(
            m={n: np.zeros_like(t.data) for n, t in params.items()},
            v={n: np.zeros_like(t.data) for n, t in params.items()},
        )


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their joint norm is <= max_norm.

    Returns the pre-clip norm.
    """
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def adam_step(
    params: Mapping[str, "object"],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    tc: TrainConfig,
) -> None:
    """One bias-corrected Adam update, applied to params in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - tc.beta1**t
    c2 = 1.0 - tc.beta2**t
    for name, tensor in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= tc.beta1
        m += (1.0 - tc.beta1) * g
        v *= tc.beta2
        v += (1.0 - tc.beta2) * (g * g)
        tensor.data -= tc.lr * (m / c1) / (np.sqrt(v / c2) + tc.eps)


# -- training loop -----------------------------------------------------------------


def _recon_targets(batch, task: str):
    return batch.recon_category if task == "category" else batch.recon_terms


def train_batch(
    model: SentimentModel,
    batch,
    vocab: Vocab,
    state: AdamState,
    tc: TrainConfig,
    rng: np.random.Generator,
) -> tuple[float, float, float]:
    """Forward, backward, clip, and update on one batch.

    Returns (joint, classification, reconstruction) loss values.
    """
    aspects = aspect_matrix(batch.aspect_tokens, vocab)
    result = model.forward(batch.token_ids, batch.mask, aspects, training=True, rng=rng)
    loss, ce, recon = batch_joint_loss(
        result, batch.label_ids, _recon_targets(batch, model.config.task), model.config
    )
    if not np.isfinite(loss.item()):
        raise TrainingDiverged("non-finite loss")
    params = model.parameters()
    gmap = backward(loss, list(params.values()))
    grads = {n: gmap[t] for n, t in params.items()}
    clip_global_norm(grads, tc.clip_norm)
    adam_step(params, grads, state, tc)
    return loss.item(), ce, recon


@dataclass
class TrainResult:
    """Per-epoch traces from one training run."""

    epoch_losses: list[float] = field(default_factory=list)
    dev_accuracy: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False
    wall_seconds: float = 0.0


def train(
    model: SentimentModel,
    instances: Sequence[Instance],
    vocab: Vocab,
    spaces: TaskSpaces,
    tc: TrainConfig,
    rng: np.random.Generator,
    dev_instances: Sequence[Instance] | None = None,
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Run the full optimization; batches are re-shuffled each epoch.

    With dev_instances and a patience setting, training stops once dev
    accuracy has not improved for that many epochs and the best-epoch
    weights are restored.
    """
    state = AdamState.for_params(model.parameters())
    result = TrainResult()
    best_snapshot = None
    best_acc = -1.0
    t0 = time.perf_counter()
    for epoch in range(tc.epochs):
        batches = make_batches(instances, vocab, spaces, tc.token_budget, rng, shuffle=True)
        total, seen = 0.0, 0
        for b_idx, batch in enumerate(batches):
            try:
                loss, _, _ = train_batch(model, batch, vocab, state, tc, rng)
            except TrainingDiverged as e:
                raise TrainingDiverged(f"{e} at epoch {epoch + 1}, batch {b_idx + 1}") from None
            total += loss * batch.size
            seen += batch.size
        result.epoch_losses.append(total / max(seen, 1))
        if dev_instances is not None:
            acc = evaluate_accuracy(model, dev_instances, vocab, spaces, tc.token_budget)
            result.dev_accuracy.append(acc)
            if acc > best_acc:
                best_acc = acc
                result.best_epoch = epoch
                if tc.patience is not None:
                    best_snapshot = {
                        n: t.data.copy() for n, t in model.parameters().items()
                    }
            elif tc.patience is not None and epoch - result.best_epoch >= tc.patience:
                result.stopped_early = True
                break
        if log is not None:
            dev = f" dev={result.dev_accuracy[-1]:.4f}" if dev_instances is not None else ""
            log(f"epoch {epoch + 1}/{tc.epochs} loss={result.epoch_losses[-1]:.6f}{dev}")
    if best_snapshot is not None:
        for n, t in model.parameters().items():
            t.data[...] = best_snapshot[n]
    result.wall_seconds = time.perf_counter() - t0
    return result


# -- evaluation ----------------------------------------------------------------------


def evaluate_accuracy(
    model: SentimentModel,
    instances: Sequence[Instance],
    vocab: Vocab,
    spaces: TaskSpaces,
    token_budget: int = 4096,
) -> float:
    """Fraction of instances whose sentiment label is predicted exactly."""
    if not instances:
        raise ValueError("evaluate_accuracy: no instances")
    correct = 0
    for batch in make_batches(instances, vocab, spaces, token_budget, shuffle=False):
        aspects = aspect_matrix(batch.aspect_tokens, vocab)
        result = model.forward(batch.token_ids, batch.mask, aspects)
        correct += int(np.sum(predict(result.sent_logits) == batch.label_ids))
    return correct / len(instances)


def evaluate_reconstruction(
    model: SentimentModel,
    instances: Sequence[Instance],
    vocab: Vocab,
    spaces: TaskSpaces,
    token_budget: int = 4096,
    threshold: float = 0.5,
) -> float:
    """Fraction of instances whose aspect the model reconstructs.

    Category task: the argmax category must match. Term task: every gold
    word id must clear the threshold, and an aspect containing words
    outside the term vocabulary counts as wrong outright.
    """
    if not instances:
        raise ValueError("evaluate_reconstruction: no instances")
    correct = 0
    for batch in make_batches(instances, vocab, spaces, token_budget, shuffle=False):
        aspects = aspect_matrix(batch.aspect_tokens, vocab)
        result = model.forward(batch.token_ids, batch.mask, aspects)
        logits = result.recon_logits.data
        if model.config.task == "category":
            correct += int(np.sum(np.argmax(logits, axis=1) == batch.recon_category))
        else:
            for r in range(batch.size):
                if batch.term_oov[r]:
                    continue
                decoded = reconstruct_aspect(logits[r], "term", threshold)
                if set(batch.recon_terms[r]) <= decoded:
                    correct += 1
    return correct / len(instances)


# -- multi-seed experiments ------------------------------------------------------------


@dataclass
class MetricsReport:
    """Per-seed metric table with mean/std aggregation."""

    per_seed: dict[int, dict[str, float]]

    def metric_names(self) -> list[str]:
        names: dict[str, None] = {}
        for row in self.per_seed.values():
            for k in row:
                names.setdefault(k, None)
        return list(names)

    def values(self, name: str) -> list[float]:
        return [row[name] for row in self.per_seed.values() if name in row]

    def mean(self, name: str) -> float:
        vals = self.values(name)
        if not vals:
            raise KeyError(name)
        return float(np.mean(vals))

    def std(self, name: str) -> float | None:
        """Sample standard deviation; None when fewer than two seeds."""
        vals = self.values(name)
        if not vals:
            raise KeyError(name)
        if len(vals) < 2:
            return None
        return float(np.std(vals, ddof=1))

    def to_dict(self) -> dict:
        return {
            "seeds": {str(s): dict(row) for s, row in self.per_seed.items()},
            "mean": {n: self.mean(n) for n in self.metric_names()},
            "std": {n: self.std(n) for n in self.metric_names()},
        }


@dataclass
class SeedRun:
    """Artifacts from one seed of an experiment."""

    seed: int
    model: SentimentModel
    vocab: Vocab
    train_result: TrainResult
    metrics: dict[str, float]


def run_experiment(
    train_instances: Sequence[Instance],
    eval_sets: Mapping[str, Sequence[Instance]],
    embedding_path,
    config: ModelConfig,
    tc: TrainConfig,
    spaces: TaskSpaces,
    seeds: Sequence[int],
    dev_instances: Sequence[Instance] | None = None,
    log: Callable[[str], None] | None = None,
) -> tuple[MetricsReport, list[SeedRun]]:
    """Train one model per seed and measure it on every eval set.

    The embedding file is scanned once; each seed assembles its own
    vocabulary (fresh rows for uncovered tokens), model init, and batch
    order from that seed alone, so runs are reproducible one by one.
    """
    if not seeds:
        raise ValueError("run_experiment: need at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ValueError(f"run_experiment: duplicate seeds in {list(seeds)}")
    all_eval = [i for insts in eval_sets.values() for i in insts]
    if dev_instances:
        all_eval += list(dev_instances)
    train_tokens, test_tokens = vocab_token_lists(train_instances, all_eval)
    found, dim = scan_embedding_file(embedding_path, set(train_tokens) | set(test_tokens))
    if dim != config.embed_size:
        raise ValueError(
            f"embedding file has {dim}-dim vectors, config expects {config.embed_size}"
        )
    per_seed: dict[int, dict[str, float]] = {}
    runs: list[SeedRun] = []
    for seed in seeds:
        init_rng, train_rng = [
            np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)
        ]
        vocab = assemble_vocab(train_tokens, test_tokens, found, dim, seed=seed)
        model = SentimentModel(config, vocab.embedding, init_rng)
        if log is not None:
            log(f"seed {seed}: {len(train_instances)} train instances, vocab {len(vocab)}")
        tr = train(
            model, train_instances, vocab, spaces, tc, train_rng, dev_instances, log=log
        )
        row: dict[str, float] = {"train_loss": tr.epoch_losses[-1]}
        for name, insts in eval_sets.items():
            row[f"acc_{name}"] = evaluate_accuracy(
                model, insts, vocab, spaces, tc.token_budget
            )
            if config.reconstruct:
                row[f"recon_{name}"] = evaluate_reconstruction(
                    model, insts, vocab, spaces, tc.token_budget
                )
        per_seed[seed] = row
        runs.append(SeedRun(seed, model, vocab, tr, row))
        if log is not None:
            shown = ", ".join(f"{k}={v:.4f}" for k, v in row.items())
            log(f"seed {seed}: {shown}")
    return MetricsReport(per_seed), runs


# -- hyperparameter sweeps --------------------------------------------------------------


SWEEP_AXES = ("depth", "lam")


def split_dev(
    instances: Sequence[Instance], fraction: float, rng: np.random.Generator
) -> tuple[list[Instance], list[Instance]]:
    """Random (train, dev) partition; dev gets round(fraction * n), at least 1."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"dev fraction must be in (0, 1), got {fraction}")
    if len(instances) < 2:
        raise ValueError("need at least two instances to carve a dev split")
    order = rng.permutation(len(instances))
    n_dev = min(max(1, round(fraction * len(instances))), len(instances) - 1)
    dev_idx = set(order[:n_dev].tolist())
    train = [inst for i, inst in enumerate(instances) if i not in dev_idx]
    dev = [inst for i, inst in enumerate(instances) if i in dev_idx]
    return train, dev


def sweep(
    axis: str,
    values: Sequence,
    train_instances: Sequence[Instance],
    embedding_path,
    config: ModelConfig,
    tc: TrainConfig,
    spaces: TaskSpaces,
    seeds: Sequence[int],
    dev_fraction: float = 0.1,
    split_seed: int = 0,
    log: Callable[[str], None] | None = None,
) -> dict:
    """Grid search one config axis against a held-out dev split.

    The split is carved once (from split_seed) and shared by every
    value, so the comparison is apples to apples. Returns the per-value
    reports plus the value with the best mean dev accuracy; ties go to
    the earlier value in the list.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not values:
        raise ValueError("sweep: no values given")
    if len(set(values)) != len(values):
        raise ValueError(f"sweep: duplicate values in {list(values)}")
    sub_train, dev = split_dev(
        train_instances, dev_fraction, np.random.default_rng(split_seed)
    )
    results: dict = {"axis": axis, "dev_size": len(dev), "values": {}}
    best_value, best_acc = None, -1.0
    for value in values:
        cfg = replace(config, **{axis: value})
        if log is not None:
            log(f"sweep {axis}={value}")
        report, _ = run_experiment(
            sub_train,
            {"dev": dev},
            embedding_path,
            cfg,
            tc,
            spaces,
            seeds,
            log=log,
        )
        acc = report.mean("acc_dev")
        results["values"][value] = report
        if acc > best_acc:
            best_value, best_acc = value, acc
    results["best"] = best_value
    results["best_acc_dev"] = best_acc
    return results


# -- gate inspection ---------------------------------------------------------------------


def inspect_gates(
    model: SentimentModel,
    vocab: Vocab,
    tokens: Sequence[str],
    aspect_tokens: Sequence[str],
) -> list[dict]:
    """Per-token aspect-gate statistics for one sentence.

    Only the aspect-gated encoder exposes gates; for bidirectional
    models the records cover the forward direction. Each record carries
    the token, its position, and summary statistics of the gate vector.
    """
    if model.config.encoder != "aspect-dt":
        raise CapabilityError(
            f"encoder {model.config.encoder!r} has no aspect gates to inspect"
        )
    if not tokens:
        raise ValueError("inspect_gates: empty sentence")
    ids = vocab.ids(tokens)
    aspect = embed_aspect(aspect_tokens, vocab)
    result = model.forward_one(ids, aspect)
    records = []
    for t, tok in enumerate(tokens):
        g = result.gates[t].data[:, 0]
        records.append(
            {
                "position": t,
                "token": tok,
                "gate_mean": float(g.mean()),
                "gate_min": float(g.min()),
                "gate_max": float(g.max()),
                "gate_active": float(np.mean(g > 0)),
            }
        )
    return records
