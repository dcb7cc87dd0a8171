"""Mini-batch Adam training with learning-rate halving and early stopping."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, CheckpointError
from .embeddings import EmbeddingTable
from .model import ModelConfig, ModelParams, batch_from_instances, batch_loss, forward, init_params, predict

log = logging.getLogger(__name__)

PRECISIONS = {"double": np.float64, "single": np.float32}


class NumericalError(RuntimeError):
    """NaN/Inf gradients or losses."""


@dataclass
class TrainConfig:
    model: str = "pf"
    task: str = "three_way"
    l2: float = 0.001
    batch_size: int = 25
    lr: float = 0.001
    lr_window: int = 3
    patience: int = 5
    max_epochs: int = 100
    dropout: dict = field(default_factory=lambda: {"vanilla": 0.5, "pf": 0.0, "pg": 0.3})
    early_stop_metric: str = "loss"  # or "accuracy"
    seed: int = 0
    precision: str = "double"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    widths: tuple = (1, 2, 3, 4)
    maps_per_width: int = 100
    aspect_widths: tuple = (1, 2, 3, 4)
    tie_gate_bias: bool = False
    pg_concat_general: bool = False
    init_scale: float = 0.01

    def __post_init__(self):
        self.widths = tuple(self.widths)
        self.aspect_widths = tuple(self.aspect_widths)
        self.dropout = {**{"vanilla": 0.5, "pf": 0.0, "pg": 0.3}, **dict(self.dropout)}
        self.validate()

    def validate(self):
        if self.model not in ("vanilla", "pf", "pg"):
            raise ValueError(f"model must be vanilla, pf or pg (got {self.model!r})")
        if self.task not in ("three_way", "binary"):
            raise ValueError(f"task must be three_way or binary (got {self.task!r})")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1 or self.lr_window < 1:
            raise ValueError("batch_size, max_epochs and lr_window must be >= 1")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")
        if self.early_stop_metric not in ("loss", "accuracy"):
            raise ValueError("early_stop_metric must be loss or accuracy")
        for kind, rate in self.dropout.items():
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"dropout[{kind}] must be in [0, 1)")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    @property
    def dropout_rate(self) -> float:
        return self.dropout[self.model]

    @property
    def stop_metric(self) -> str:
        return self.early_stop_metric

    def model_config(self, embed_dim: int) -> ModelConfig:
        return ModelConfig(kind=self.model, embed_dim=embed_dim, widths=self.widths,
                           maps_per_width=self.maps_per_width, aspect_widths=self.aspect_widths,
                           n_classes=3 if self.task == "three_way" else 2,
                           tie_gate_bias=self.tie_gate_bias, pg_concat_general=self.pg_concat_general,
                           init_scale=self.init_scale)

    def to_dict(self):
        d = asdict(self)
        d["widths"], d["aspect_widths"] = list(self.widths), list(self.aspect_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


# -- optimizer ---------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, arrays: dict, **kw) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in arrays.items()},
                   {k: np.zeros_like(a) for k, a in arrays.items()}, **kw)


def adam_step(params: dict, grads: dict, state: AdamState):
    """Bias-corrected Adam update, in place. Only keys in ``params`` move."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in {name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)


# -- schedule ----------------------------------------------------------------------


def lr_schedule(history, lr: float, window: int = 3) -> float:
    """Learning rate for the next epoch given the per-epoch train losses so far.

    Checks happen after epochs 1+window, 1+2*window, ...: if the best loss of
    the last ``window`` epochs is no lower than the best loss before them,
    the rate is halved.
    """
    if not history:
        raise ValueError("empty loss history")
    n = len(history)
    if n <= window or (n - 1) % window:
        return lr
    if min(history[-window:]) >= min(history[:-window]):
        return lr / 2.0
    return lr


def early_stop(history, patience: int):
    """``(stop, best_epoch)`` for a lower-is-better history; epochs count from 1."""
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if not history:
        return False, 0
    best = int(np.argmin(history)) + 1
    return len(history) - best >= patience, best


# -- training ----------------------------------------------------------------------


@dataclass
class TrainReport:
    config: dict
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    dev_accuracy: float | None = None
    test_accuracy: float | None = None
    param_count: int = 0

    @property
    def learning_rates(self):
        return [e["lr"] for e in self.epochs]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "TrainReport":
        with open(path) as fh:
            return cls(**json.load(fh))


def evaluate(params: ModelParams, instances, table) -> float:
    """Fraction of ``instances`` whose eval-mode prediction equals the gold label."""
    if not instances:
        raise ValueError("cannot evaluate on an empty set")
    gold = np.array([inst.label for inst in instances])
    return float((predict(instances, params, table) == gold).mean())


def dataset_loss(params: ModelParams, instances, table, lam: float, chunk=64):
    """(mean per-instance cross-entropy + lam*||p||^2, accuracy) in eval mode."""
    ce, correct = 0.0, 0
    for i in range(0, len(instances), chunk):
        part = instances[i:i + chunk]
        batch = batch_from_instances(part, table, params.config)
        probs = forward(params, batch)
        ce += T.cross_entropy(probs, batch.labels).item()
        correct += int((probs.data.argmax(axis=1) == batch.labels).sum())
    return ce / len(instances) + lam * params.sq_norm(), correct / len(instances)


class Trainer:
    """Owns one parameter set and its optimizer; one call to :meth:`epoch` per pass."""

    def __init__(self, config: TrainConfig, table, train, dev):
        if not train:
            raise ValueError("empty training set")
        self.config = config
        if isinstance(table, np.ndarray):
            table = EmbeddingTable(table)
        self.table = table.astype(config.dtype)
        self.train, self.dev = list(train), list(dev)
        embed_dim = self.table.vectors.shape[1]
        self.model_config = config.model_config(embed_dim)
        self.rng_shuffle = T.RngStream(config.seed, "shuffle")
        self.rng_dropout = T.RngStream(config.seed, "dropout")
        self.params = init_params(self.model_config, T.RngStream(config.seed, "init"), config.dtype)
        self.adam = AdamState.zeros_like(self.params.arrays, lr=config.lr, beta1=config.beta1,
                                         beta2=config.beta2, eps=config.eps)
        self.history = []
        self.best_params = self.params.copy()
        self.best_epoch = 0
        self.stopped_early = False

    @property
    def epoch_count(self):
        return len(self.history)

    def run_epoch(self) -> float:
        """One shuffled pass; returns mean per-instance CE plus the mean L2 term."""
        cfg, n = self.config, len(self.train)
        order = self.rng_shuffle.permutation(n)
        ce_total, l2_total, steps = 0.0, 0.0, 0
        for start in range(0, n, cfg.batch_size):
            part = [self.train[i] for i in order[start:start + cfg.batch_size]]
            batch = batch_from_instances(part, self.table, self.model_config)
            leaves = self.params.leaves()
            probs = forward(leaves, batch, cfg.dropout_rate, self.rng_dropout, True,
                            config=self.model_config)
            ce = T.cross_entropy(probs, batch.labels)
            total = T.add(ce, T.mul(T.sum_squares(list(leaves.values())), cfg.l2)) if cfg.l2 else ce
            if not np.isfinite(total.item()):
                raise NumericalError(f"loss diverged at epoch {self.epoch_count + 1}")
            T.backward(total)
            grads = {k: t.grad for k, t in leaves.items() if t.grad is not None}
            adam_step(self.params.arrays, grads, self.adam)
            ce_total += ce.item()
            l2_total += total.item() - ce.item()
            steps += 1
        return ce_total / n + l2_total / steps

    def epoch(self) -> dict:
        lr = self.adam.lr
        train_loss = self.run_epoch()
        if self.dev:
            dev_loss, dev_acc = dataset_loss(self.params, self.dev, self.table, self.config.l2)
        else:
            dev_loss, dev_acc = train_loss, float("nan")
        rec = {"epoch": self.epoch_count + 1, "train_loss": train_loss, "dev_loss": dev_loss,
               "dev_accuracy": dev_acc, "lr": lr}
        self.history.append(rec)
        stop, best = early_stop(self._stop_signal(), self.config.patience)
        if best == rec["epoch"]:
            self.best_params = self.params.copy()
            self.best_epoch = best
        self.stopped_early = stop
        self.adam.lr = lr_schedule([r["train_loss"] for r in self.history], lr, self.config.lr_window)
        return rec

    def _stop_signal(self):
        if self.config.stop_metric == "accuracy":
            return [-r["dev_accuracy"] for r in self.history]
        return [r["dev_loss"] for r in self.history]

    def fit(self, test=None) -> TrainReport:
        while self.epoch_count < self.config.max_epochs and not self.stopped_early:
            rec = self.epoch()
            log.info("epoch %d train %.4f dev %.4f acc %.4f lr %g", rec["epoch"], rec["train_loss"],
                     rec["dev_loss"], rec["dev_accuracy"], rec["lr"])
        return self.report(test)

    def report(self, test=None) -> TrainReport:
        best = self.history[self.best_epoch - 1] if self.best_epoch else None
        return TrainReport(
            config=self.config.to_dict(), epochs=list(self.history), best_epoch=self.best_epoch,
            stopped_early=self.stopped_early,
            dev_accuracy=best["dev_accuracy"] if best and self.dev else None,
            test_accuracy=evaluate(self.best_params, test, self.table) if test else None,
            param_count=self.params.count())

    # -- persistence --

    def checkpoint(self, vocab_hash="", embedding_hash="", extra=None) -> Checkpoint:
        meta = {
            "config": self.config.to_dict(), "model": self.model_config.to_dict(),
            "vocab_hash": vocab_hash, "embedding_hash": embedding_hash,
            "optimizer": {"step": self.adam.step, "lr": self.adam.lr},
            "rng": {"shuffle": self.rng_shuffle.get_state(), "dropout": self.rng_dropout.get_state()},
            "history": self.history, "best_epoch": self.best_epoch, "stopped_early": self.stopped_early,
            **(extra or {}),
        }
        tensors = {}
        for group, arrays in (("params", self.best_params.arrays), ("current", self.params.arrays),
                              ("adam_m", self.adam.m), ("adam_v", self.adam.v)):
            for k, a in arrays.items():
                tensors[f"{group}/{k}"] = a
        return Checkpoint(meta, tensors)

    @classmethod
    def resume(cls, ckpt: Checkpoint, table, train, dev, config: TrainConfig | None = None) -> "Trainer":
        """Continue from ``ckpt``; ``config`` may raise max_epochs but must otherwise match."""
        saved = TrainConfig.from_dict(ckpt.meta["config"])
        config = config or saved
        if {**config.to_dict(), "max_epochs": 0} != {**saved.to_dict(), "max_epochs": 0}:
            raise CheckpointError("config differs from the checkpoint's (only max_epochs may change)")
        tr = cls(config, table, train, dev)
        if tr.model_config.to_dict() != ckpt.meta["model"]:
            raise CheckpointError("model config mismatch")
        for group, target in (("current", tr.params.arrays), ("adam_m", tr.adam.m), ("adam_v", tr.adam.v)):
            src = ckpt.group(group)
            for k in target:
                target[k][...] = src[k]
        tr.best_params = ModelParams(tr.model_config, {k: v.copy() for k, v in ckpt.group("params").items()})
        tr.adam.step = ckpt.meta["optimizer"]["step"]
        tr.adam.lr = ckpt.meta["optimizer"]["lr"]
        tr.rng_shuffle.set_state(ckpt.meta["rng"]["shuffle"])
        tr.rng_dropout.set_state(ckpt.meta["rng"]["dropout"])
        tr.history = list(ckpt.meta["history"])
        tr.best_epoch = ckpt.meta["best_epoch"]
        tr.stopped_early = ckpt.meta["stopped_early"]
        return tr


def params_from_checkpoint(ckpt: Checkpoint) -> ModelParams:
    cfg = ModelConfig(**ckpt.meta["model"])
    return ModelParams(cfg, {k: np.array(v) for k, v in ckpt.group("params").items()})


def train(config: TrainConfig, table, train_set, dev_set, test_set=None):
    """Fit from scratch; returns ``(trainer, report)`` with the best-dev parameters in ``trainer.best_params``."""
    trainer = Trainer(config, table, train_set, dev_set)
    return trainer, trainer.fit(test_set)
