"""Command-line workflow: prepare, train, eval, sweep, inspect.

Every command resolves its configuration from defaults, an optional
key=value config file, and CLI flags (flags win), validates everything
up front, and only then touches the filesystem. Outputs are written
atomically. Exit codes: 0 success, 1 validation error, 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .corpus import (
    HDS_RULES,
    CorpusError,
    RawSentence,
    TaskSpaces,
    count_stats,
    expand,
    hds_qualifies,
    load_jsonl,
    parse_semeval_opinions_xml,
    parse_semeval_xml,
    strip_conflict_sentences,
    to_jsonl,
    tokenize,
    tokenize_category,
)
from .ioutil import canonical_json, write_atomic_json, write_atomic_text
from .model import ENCODERS, POOLING_MODES, CapabilityError, ModelConfig
from .trainer import (
    TrainConfig,
    TrainingDiverged,
    evaluate_accuracy,
    evaluate_reconstruction,
    inspect_gates,
    run_experiment,
)
from .trainer import sweep as run_sweep


@dataclass(frozen=True)
class DatasetInfo:
    name: str
    task: str
    lam: float
    schema: str  # flat | opinions


DATASETS = {
    "restaurant-14": DatasetInfo("restaurant-14", "category", 0.4, "flat"),
    "restaurant-large": DatasetInfo("restaurant-large", "category", 0.4, "opinions"),
    "restaurant-term": DatasetInfo("restaurant-term", "term", 0.2, "flat"),
    "laptop-term": DatasetInfo("laptop-term", "term", 0.5, "flat"),
}

VIEWS = ("ds", "hds", "nc")
ABLATIONS = ("ac", "ag", "ar")
SWEEP_AXIS_FLAGS = {"depth": "depth", "lambda": "lam"}
DEFAULT_DEPTH_VALUES = (1, 2, 3, 4, 5, 6)
DEFAULT_LAMBDA_VALUES = tuple(round(0.1 * i, 1) for i in range(11))


@dataclass
class RunConfig:
    """Union of model/training knobs, file paths, and dataset identity."""

    dataset: str = "restaurant-14"
    data_dir: str = "data"
    embeddings: str = ""
    out: str = "out"
    checkpoint: str = ""
    view: str = "ds"
    hds_rule: str = HDS_RULES[0]
    nc: bool = False
    seeds: tuple = (1, 2, 3, 4, 5)
    hidden: int = 300
    embed_dim: int = 300
    depth: int = 4
    lam: float | None = None  # None picks the dataset default
    encoder: str = ""  # empty = aspect-dt unless ablated
    ablate: tuple = ()
    pool: str = "last"
    bidirectional: bool = False
    use_bias: bool = False
    epochs: int = 20
    lr: float = 0.01
    clip: float = 5.0
    token_budget: int = 4096
    dropout_input: float = 0.5
    dropout_hidden: float = 0.3
    patience: int | None = None
    dev_fraction: float = 0.1
    threshold: float = 0.5
    axis: str = "depth"
    values: tuple = ()

    def resolved_lam(self) -> float:
        if self.lam is not None:
            return self.lam
        return DATASETS[self.dataset].lam if self.dataset in DATASETS else 0.0

    def effective_encoder(self) -> str:
        if "ag" in self.ablate:
            return self.encoder if self.encoder in ("plain-dt", "gru") else "gru"
        return self.encoder or "aspect-dt"


# paths are machine-local; everything else defines the experiment
_PATH_FIELDS = ("data_dir", "embeddings", "out", "checkpoint")


def config_digest(rc: RunConfig) -> str:
    """Stable hash of the semantic config (paths excluded)."""
    d = {f.name: getattr(rc, f.name) for f in fields(rc) if f.name not in _PATH_FIELDS}
    d["lam"] = rc.resolved_lam()
    d["encoder"] = rc.effective_encoder()
    d["seeds"] = list(rc.seeds)
    d["ablate"] = sorted(rc.ablate)
    d["values"] = list(rc.values)
    return hashlib.sha256(canonical_json(d).encode("utf-8")).hexdigest()[:16]


def data_digest(paths) -> str:
    """Fingerprint of the prepared files a run reads (names + bytes)."""
    h = hashlib.sha256()
    for p in paths:
        p = Path(p)
        h.update(p.name.encode("utf-8"))
        h.update(b"\0")
        h.update(p.read_bytes())
        h.update(b"\0")
    return h.hexdigest()[:16]


# -- config resolution -----------------------------------------------------------


def parse_config_file(path) -> dict[str, str]:
    """Flat key=value lines; blank lines and # comments ignored."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise CorpusError(f"{path}: line {lineno}: expected key=value, got {line!r}")
        key, _, value = body.partition("=")
        out[key.strip()] = value.strip()
    return out


def _parse_seeds(raw: str) -> tuple:
    return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)


def _parse_values(raw: str) -> tuple:
    vals = []
    for x in raw.replace(" ", "").split(","):
        if not x:
            continue
        vals.append(int(x) if x.lstrip("+-").isdigit() else float(x))
    return tuple(vals)


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


_FILE_PARSERS = {
    "seeds": _parse_seeds,
    "values": _parse_values,
    "ablate": lambda raw: tuple(x for x in raw.replace(" ", "").split(",") if x),
    "nc": _parse_bool,
    "bidirectional": _parse_bool,
    "use_bias": _parse_bool,
    "lam": lambda raw: None if raw.lower() == "none" else float(raw),
    "patience": lambda raw: None if raw.lower() == "none" else int(raw),
}


def resolve_config(args: argparse.Namespace, problems: list[str]) -> RunConfig:
    """defaults < config file < CLI flags."""
    rc = RunConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            problems.append(f"config file not found: {path}")
            return rc
        known = {f.name: f.type for f in fields(rc)}
        for key, raw in parse_config_file(path).items():
            if key not in known:
                problems.append(f"{path}: unknown config key {key!r}")
                continue
            parser = _FILE_PARSERS.get(key)
            try:
                if parser is not None:
                    value = parser(raw)
                elif isinstance(getattr(rc, key), bool):
                    value = _parse_bool(raw)
                elif isinstance(getattr(rc, key), int):
                    value = int(raw)
                elif isinstance(getattr(rc, key), float):
                    value = float(raw)
                else:
                    value = raw
            except ValueError as e:
                problems.append(f"{path}: bad value for {key}: {e}")
                continue
            setattr(rc, key, value)
    for f in fields(rc):
        flag_value = getattr(args, f.name, None)
        if flag_value is not None:
            setattr(rc, f.name, flag_value)
    if isinstance(rc.seeds, str):
        try:
            rc.seeds = _parse_seeds(rc.seeds)
        except ValueError:
            problems.append(f"bad seeds value: {rc.seeds!r} (want e.g. 1,2,3)")
            rc.seeds = ()
    if isinstance(rc.values, str):
        try:
            rc.values = _parse_values(rc.values)
        except ValueError:
            problems.append(f"bad values list: {rc.values!r} (want e.g. 1,2,3)")
            rc.values = ()
    rc.ablate = tuple(dict.fromkeys(rc.ablate))
    return rc


def validate_common(rc: RunConfig, problems: list[str]) -> None:
    if rc.dataset not in DATASETS:
        problems.append(f"unknown dataset {rc.dataset!r}; choose from {sorted(DATASETS)}")
    if rc.view not in VIEWS:
        problems.append(f"view must be one of {VIEWS}, got {rc.view!r}")
    if rc.hds_rule not in HDS_RULES:
        problems.append(f"hds-rule must be one of {HDS_RULES}, got {rc.hds_rule!r}")
    for a in rc.ablate:
        if a not in ABLATIONS:
            problems.append(f"unknown ablation {a!r}; choose from {ABLATIONS}")
    if rc.encoder and rc.encoder not in ENCODERS:
        problems.append(f"encoder must be one of {ENCODERS}, got {rc.encoder!r}")
    if "ag" in rc.ablate and rc.encoder == "aspect-dt":
        problems.append("--ablate ag contradicts --encoder aspect-dt")
    if rc.pool not in POOLING_MODES:
        problems.append(f"pool must be one of {POOLING_MODES}, got {rc.pool!r}")
    if not rc.seeds:
        problems.append("need at least one seed")
    elif len(set(rc.seeds)) != len(rc.seeds):
        problems.append(f"duplicate seeds in {list(rc.seeds)}")
    if not 0.0 < rc.threshold < 1.0:
        problems.append(f"threshold must be in (0, 1), got {rc.threshold}")
    if rc.token_budget < 1:
        problems.append(f"token-budget must be >= 1, got {rc.token_budget}")
    for name, value in (("hidden", rc.hidden), ("embed-dim", rc.embed_dim), ("depth", rc.depth)):
        if value < 1:
            problems.append(f"{name} must be >= 1, got {value}")
    for name, value in (
        ("dropout-input", rc.dropout_input),
        ("dropout-hidden", rc.dropout_hidden),
    ):
        if not 0.0 <= value < 1.0:
            problems.append(f"{name} must be in [0, 1), got {value}")
    if rc.lam is not None and rc.lam < 0:
        problems.append(f"lambda must be >= 0, got {rc.lam}")


def _model_config(rc: RunConfig, spaces: TaskSpaces, problems: list[str]) -> ModelConfig | None:
    try:
        return ModelConfig(
            hidden_size=rc.hidden,
            embed_size=rc.embed_dim,
            depth=rc.depth,
            num_labels=spaces.num_labels,
            num_recon_targets=spaces.num_recon_targets,
            task=DATASETS[rc.dataset].task,
            lam=rc.resolved_lam(),
            encoder=rc.effective_encoder(),
            aspect_concat="ac" not in rc.ablate,
            reconstruct="ar" not in rc.ablate,
            dropout_input=rc.dropout_input,
            dropout_hidden=rc.dropout_hidden,
            pooling=rc.pool,
            bidirectional=rc.bidirectional,
            use_bias=rc.use_bias,
        )
    except ValueError as e:
        problems.append(str(e))
        return None


def _train_config(rc: RunConfig, problems: list[str]) -> TrainConfig | None:
    try:
        return TrainConfig(
            epochs=rc.epochs,
            lr=rc.lr,
            clip_norm=rc.clip,
            token_budget=rc.token_budget,
            patience=rc.patience,
        )
    except ValueError as e:
        problems.append(str(e))
        return None


# -- prepared-data access -----------------------------------------------------------


def _view_file(data_dir, split: str, view: str) -> Path:
    return Path(data_dir) / f"{split}.{view}.jsonl"


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# -- prepare -----------------------------------------------------------------------


def _read_raw(path: Path, info: DatasetInfo) -> list[RawSentence]:
    text = path.read_text()
    if path.suffix == ".jsonl":
        return load_jsonl(text)
    if info.schema == "opinions":
        return parse_semeval_opinions_xml(text)
    return parse_semeval_xml(text, info.task)


def cmd_prepare(rc: RunConfig, args) -> int:
    problems: list[str] = []
    validate_common(rc, problems)
    raw = {"train": getattr(args, "train", None), "test": getattr(args, "test", None)}
    for split, p in raw.items():
        if not p:
            problems.append(f"--{split} file is required")
        elif not Path(p).is_file():
            problems.append(f"--{split} file not found: {p}")
        elif Path(p).suffix not in (".xml", ".jsonl"):
            problems.append(f"--{split} must be .xml or .jsonl, got {p}")
    if problems:
        return _report(problems)
    info = DATASETS[rc.dataset]
    out = Path(rc.out)
    splits: dict[str, dict] = {}
    for split, p in raw.items():
        sentences = _read_raw(Path(p), info)
        hds = [s for s in sentences if hds_qualifies(s, rc.hds_rule)]
        write_atomic_text(_view_file(out, split, "ds"), to_jsonl(sentences))
        write_atomic_text(_view_file(out, split, "hds"), to_jsonl(hds))
        stats = {"ds": count_stats(expand(sentences)), "hds": count_stats(expand(hds))}
        if rc.nc:
            ncs = strip_conflict_sentences(sentences)
            write_atomic_text(_view_file(out, split, "nc"), to_jsonl(ncs))
            stats["nc"] = count_stats(expand(ncs))
        splits[split] = stats
    report = {
        "dataset": info.name,
        "task": info.task,
        "hds_rule": rc.hds_rule,
        "tokenizer": "lowercase alphanumeric runs and single punctuation marks",
        "config_digest": config_digest(rc),
        "splits": splits,
    }
    write_atomic_json(out / "stats.json", report)
    for split, stats in splits.items():
        shown = ", ".join(f"{view}={s['total']}" for view, s in stats.items())
        print(f"{split}: {shown}")
    print(f"wrote {out}/stats.json")
    return 0


# -- train -------------------------------------------------------------------------


def _train_inputs(rc: RunConfig, problems: list[str]):
    """Resolve and check every file a training run will read."""
    train_file = _view_file(rc.data_dir, "train", rc.view)
    eval_views = ("ds", "hds") if rc.view == "ds" else (rc.view,)
    test_files = [_view_file(rc.data_dir, "test", v) for v in eval_views]
    for p in [train_file, *test_files]:
        if not p.is_file():
            problems.append(f"prepared file not found: {p} (run prepare first)")
    if not rc.embeddings:
        problems.append("--embeddings file is required")
    elif not Path(rc.embeddings).is_file():
        problems.append(f"embeddings file not found: {rc.embeddings}")
    return train_file, eval_views, test_files


def cmd_train(rc: RunConfig, args) -> int:
    problems: list[str] = []
    validate_common(rc, problems)
    tc = _train_config(rc, problems)
    train_file, eval_views, test_files = _train_inputs(rc, problems)
    if problems:
        return _report(problems)
    train_inst = expand(load_jsonl(train_file.read_text()))
    if not train_inst:
        return _report([f"{train_file}: no instances"])
    include_conflict = rc.view != "nc"
    spaces = TaskSpaces.build(DATASETS[rc.dataset].task, train_inst, include_conflict)
    cfg = _model_config(rc, spaces, problems)
    if problems:
        return _report(problems)
    eval_sets = {
        v: expand(load_jsonl(f.read_text())) for v, f in zip(eval_views, test_files)
    }
    digest = config_digest(rc)
    files = [train_file, *test_files]
    ddigest = data_digest(files)
    report, runs = run_experiment(
        train_inst, eval_sets, rc.embeddings, cfg, tc, spaces, rc.seeds, log=_log
    )
    out = Path(rc.out)
    ckpt_names = []
    for run in runs:
        name = f"model-seed{run.seed}.ckpt"
        meta = {
            "dataset": rc.dataset,
            "view": rc.view,
            "seed": run.seed,
            "config_digest": digest,
            "data_digest": ddigest,
            "data_files": [f.name for f in files],
            "spaces": spaces.to_dict(),
            "train": tc.to_dict(),
        }
        save_checkpoint(out / name, run.model, run.vocab, meta)
        ckpt_names.append(name)
    metrics = {
        "dataset": rc.dataset,
        "view": rc.view,
        "task": DATASETS[rc.dataset].task,
        "config_digest": digest,
        "data_digest": ddigest,
        "model_config": cfg.to_dict(),
        "train_config": tc.to_dict(),
        "seeds": list(rc.seeds),
        "metrics": report.to_dict(),
        "epoch_losses": {str(r.seed): r.train_result.epoch_losses for r in runs},
        "checkpoints": ckpt_names,
    }
    write_atomic_json(out / "metrics.json", metrics)
    for name in report.metric_names():
        std = report.std(name)
        spread = "" if std is None else f" ± {std:.4f}"
        print(f"{name}: {report.mean(name):.4f}{spread}")
    print(f"wrote {out}/metrics.json and {len(ckpt_names)} checkpoint(s)")
    return 0


# -- eval --------------------------------------------------------------------------


def cmd_eval(rc: RunConfig, args) -> int:
    problems: list[str] = []
    if not rc.checkpoint:
        problems.append("--checkpoint is required")
    elif not Path(rc.checkpoint).is_file():
        problems.append(f"checkpoint not found: {rc.checkpoint}")
    if problems:
        return _report(problems)
    model, vocab, meta = load_checkpoint(rc.checkpoint)
    view = args.view if getattr(args, "view", None) else meta.get("view", "ds")
    if view not in VIEWS:
        return _report([f"view must be one of {VIEWS}, got {view!r}"])
    stored = meta.get("data_digest", "")
    names = meta.get("data_files", [])
    paths = [Path(rc.data_dir) / n for n in names]
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        return _report([f"cannot verify data digest, missing: {m}" for m in missing])
    recomputed = data_digest(paths)
    if recomputed != stored:
        return _report(
            [
                "data does not match the checkpoint's training data: "
                f"stored digest {stored}, recomputed {recomputed}"
            ]
        )
    test_file = _view_file(rc.data_dir, "test", view)
    if not test_file.is_file():
        return _report([f"prepared file not found: {test_file}"])
    instances = expand(load_jsonl(test_file.read_text()))
    spaces = TaskSpaces.from_dict(meta["spaces"])
    result = {
        "checkpoint": Path(rc.checkpoint).name,
        "dataset": meta.get("dataset"),
        "seed": meta.get("seed"),
        "view": view,
        "config_digest": meta.get("config_digest"),
        "count": len(instances),
        "accuracy": evaluate_accuracy(model, instances, vocab, spaces, rc.token_budget),
    }
    if model.config.reconstruct:
        result["reconstruction"] = evaluate_reconstruction(
            model, instances, vocab, spaces, rc.token_budget, rc.threshold
        )
    print(canonical_json(result, indent=2))
    if getattr(args, "out", None):
        write_atomic_json(Path(rc.out) / "eval.json", result)
    return 0


# -- sweep -------------------------------------------------------------------------


def cmd_sweep(rc: RunConfig, args) -> int:
    problems: list[str] = []
    validate_common(rc, problems)
    tc = _train_config(rc, problems)
    if rc.axis not in SWEEP_AXIS_FLAGS:
        problems.append(f"axis must be one of {sorted(SWEEP_AXIS_FLAGS)}, got {rc.axis!r}")
        return _report(problems)
    if not 0.0 < rc.dev_fraction < 1.0:
        problems.append(f"dev-fraction must be in (0, 1), got {rc.dev_fraction}")
    values = rc.values or (
        DEFAULT_DEPTH_VALUES if rc.axis == "depth" else DEFAULT_LAMBDA_VALUES
    )
    if rc.axis == "depth" and not all(isinstance(v, int) for v in values):
        problems.append(f"depth values must be integers, got {list(values)}")
    train_file = _view_file(rc.data_dir, "train", rc.view)
    if not train_file.is_file():
        problems.append(f"prepared file not found: {train_file} (run prepare first)")
    if not rc.embeddings:
        problems.append("--embeddings file is required")
    elif not Path(rc.embeddings).is_file():
        problems.append(f"embeddings file not found: {rc.embeddings}")
    if problems:
        return _report(problems)
    train_inst = expand(load_jsonl(train_file.read_text()))
    spaces = TaskSpaces.build(DATASETS[rc.dataset].task, train_inst, rc.view != "nc")
    cfg = _model_config(rc, spaces, problems)
    if problems:
        return _report(problems)
    out = run_sweep(
        SWEEP_AXIS_FLAGS[rc.axis],
        values,
        train_inst,
        rc.embeddings,
        cfg,
        tc,
        spaces,
        rc.seeds,
        dev_fraction=rc.dev_fraction,
        log=_log,
    )
    rows = []
    for value, report in out["values"].items():
        std = report.std("acc_dev")
        rows.append(
            {
                "value": value,
                "acc_dev_mean": report.mean("acc_dev"),
                "acc_dev_std": std,
                "seeds": report.to_dict()["seeds"],
            }
        )
        spread = "" if std is None else f" ± {std:.4f}"
        print(f"{rc.axis}={value}: dev accuracy {report.mean('acc_dev'):.4f}{spread}")
    table = {
        "axis": rc.axis,
        "view": rc.view,
        "pool": rc.pool,
        "dev_size": out["dev_size"],
        "dev_fraction": rc.dev_fraction,
        "config_digest": config_digest(rc),
        "rows": rows,
        "best": out["best"],
    }
    path = Path(rc.out) / f"sweep-{rc.axis}.json"
    write_atomic_json(path, table)
    print(f"best {rc.axis}={out['best']}; wrote {path}")
    return 0


# -- inspect -----------------------------------------------------------------------


def cmd_inspect(rc: RunConfig, args) -> int:
    problems: list[str] = []
    if not rc.checkpoint:
        problems.append("--checkpoint is required")
    elif not Path(rc.checkpoint).is_file():
        problems.append(f"checkpoint not found: {rc.checkpoint}")
    sentence = getattr(args, "sentence", None)
    aspect = getattr(args, "aspect", None)
    if not sentence:
        problems.append("--sentence is required")
    if not aspect:
        problems.append("--aspect is required")
    if problems:
        return _report(problems)
    model, vocab, meta = load_checkpoint(rc.checkpoint)
    tokens = tokenize(sentence)
    if not tokens:
        return _report([f"sentence has no tokens: {sentence!r}"])
    if model.config.task == "category":
        aspect_tokens = tokenize_category(aspect)
    else:
        aspect_tokens = tokenize(aspect)
    records = inspect_gates(model, vocab, tokens, aspect_tokens)
    lines = []
    for rec in records:
        rec = {"aspect": aspect, **rec}
        lines.append(canonical_json(rec))
        print(lines[-1])
    if getattr(args, "out", None):
        write_atomic_text(Path(rc.out) / "gates.jsonl", "\n".join(lines) + "\n")
    return 0


# -- argument parsing ----------------------------------------------------------------


class CliUsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we want exit 1
        raise CliUsageError(message)


def _add_config_flags(p: argparse.ArgumentParser, *names: str) -> None:
    flags = {
        "dataset": dict(choices=sorted(DATASETS)),
        "data_dir": dict(metavar="DIR"),
        "embeddings": dict(metavar="FILE"),
        "out": dict(metavar="DIR"),
        "checkpoint": dict(metavar="FILE"),
        "view": dict(choices=VIEWS),
        "hds_rule": dict(choices=HDS_RULES),
        "nc": dict(action="store_true", default=None),
        "seeds": dict(metavar="N,N,..."),
        "hidden": dict(type=int),
        "embed_dim": dict(type=int),
        "depth": dict(type=int),
        "lam": dict(type=float, metavar="LAMBDA"),
        "encoder": dict(choices=ENCODERS),
        "ablate": dict(action="append", choices=ABLATIONS),
        "pool": dict(choices=POOLING_MODES),
        "bidirectional": dict(action="store_true", default=None),
        "use_bias": dict(action="store_true", default=None),
        "epochs": dict(type=int),
        "lr": dict(type=float),
        "clip": dict(type=float),
        "token_budget": dict(type=int),
        "dropout_input": dict(type=float),
        "dropout_hidden": dict(type=float),
        "patience": dict(type=int),
        "dev_fraction": dict(type=float),
        "threshold": dict(type=float),
        "axis": dict(choices=sorted(SWEEP_AXIS_FLAGS)),
        "values": dict(metavar="V,V,..."),
    }
    for name in names:
        kw = dict(flags[name])
        flag = "--" + name.replace("_", "-")
        aliases = [flag]
        if name == "lam":
            aliases = ["--lambda", "--lam"]
        p.add_argument(*aliases, dest=name, default=kw.pop("default", None), **kw)


_MODEL_TRAIN_FLAGS = (
    "dataset",
    "data_dir",
    "embeddings",
    "out",
    "view",
    "seeds",
    "hidden",
    "embed_dim",
    "depth",
    "lam",
    "encoder",
    "ablate",
    "pool",
    "bidirectional",
    "use_bias",
    "epochs",
    "lr",
    "clip",
    "token_budget",
    "dropout_input",
    "dropout_hidden",
    "patience",
    "threshold",
)


def build_parser() -> _Parser:
    parser = _Parser(prog="aspectgate", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="parse raw data into canonical JSONL views")
    p.add_argument("--config", metavar="FILE")
    p.add_argument("--train", metavar="FILE", help="raw train split (.xml or .jsonl)")
    p.add_argument("--test", metavar="FILE", help="raw test split (.xml or .jsonl)")
    _add_config_flags(p, "dataset", "out", "hds_rule", "nc")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one model per seed and report metrics")
    p.add_argument("--config", metavar="FILE")
    _add_config_flags(p, *_MODEL_TRAIN_FLAGS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="measure a checkpoint on a prepared test view")
    p.add_argument("--config", metavar="FILE")
    _add_config_flags(p, "checkpoint", "data_dir", "out", "view", "token_budget", "threshold")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid-search depth or lambda against a dev split")
    p.add_argument("--config", metavar="FILE")
    _add_config_flags(p, *_MODEL_TRAIN_FLAGS, "axis", "values", "dev_fraction")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("inspect", help="emit per-token aspect-gate records for a sentence")
    p.add_argument("--config", metavar="FILE")
    p.add_argument("--sentence", metavar="TEXT")
    p.add_argument("--aspect", metavar="TEXT")
    _add_config_flags(p, "checkpoint", "out")
    p.set_defaults(func=cmd_inspect)
    return parser


def _report(problems: list[str]) -> int:
    for p in problems:
        print(f"error: {p}", file=sys.stderr)
    return 1


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliUsageError as e:
        return _report([str(e)])
    problems: list[str] = []
    rc = resolve_config(args, problems)
    if problems:
        return _report(problems)
    try:
        return args.func(rc, args)
    except (
        CorpusError,
        CheckpointError,
        CapabilityError,
        TrainingDiverged,
        OSError,
        ValueError,
    ) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
