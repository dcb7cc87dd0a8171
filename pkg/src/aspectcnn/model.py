"""Vanilla CNN, parameterized-filter CNN (PF) and parameterized-gate CNN (PG).

All three share a bank of general sentence filters (widths 1-4 by default).
PF and PG add an aspect extractor: for every sentence-filter slot j of width
h_s it holds h_s*k scalar-output filters over the aspect words, whose
average-pooled ReLU responses form an h_s x k matrix. PF slides that matrix
over the sentence as an extra filter (sigmoid, max-pooled) and concatenates
the result after the general features; PG uses it as a sigmoid gate on the
general filter's linear response.

Feature order is width-ascending, then slot-ascending, everywhere.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

KINDS = ("vanilla", "pf", "pg")


@dataclass
class ModelConfig:
    kind: str = "pf"
    embed_dim: int = 300
    widths: tuple = (1, 2, 3, 4)
    maps_per_width: int = 100
    aspect_widths: tuple = (1, 2, 3, 4)
    n_classes: int = 3
    tie_gate_bias: bool = False
    pg_concat_general: bool = False
    init_scale: float = 0.01

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.aspect_widths = tuple(int(w) for w in self.aspect_widths)
        if self.kind not in KINDS:
            raise ValueError(f"model kind must be one of {KINDS}, got {self.kind!r}")
        if not self.widths or min(self.widths) < 1 or not self.aspect_widths or min(self.aspect_widths) < 1:
            raise ValueError("filter widths must be positive")
        if self.maps_per_width < 1 or self.embed_dim < 1 or self.n_classes < 2:
            raise ValueError("maps_per_width, embed_dim must be >= 1 and n_classes >= 2")

    @property
    def n_filters(self) -> int:
        return self.maps_per_width * len(self.widths)

    @property
    def feature_dim(self) -> int:
        if self.kind == "pf" or (self.kind == "pg" and self.pg_concat_general):
            return 2 * self.n_filters
        return self.n_filters

    def slot_groups(self):
        """(aspect width, first slot, slot count) triples; slots split evenly over aspect widths."""
        key = (self.maps_per_width, self.aspect_widths)
        cached = self.__dict__.get("_slots")
        if cached and cached[0] == key:
            return cached[1]
        sizes = [len(a) for a in np.array_split(np.arange(self.maps_per_width), len(self.aspect_widths))]
        out, start = [], 0
        for ht, count in zip(self.aspect_widths, sizes):
            if count:
                out.append((ht, start, count))
            start += count
        self.__dict__["_slots"] = (key, out)
        return out

    def to_dict(self):
        d = asdict(self)
        d["widths"], d["aspect_widths"] = list(self.widths), list(self.aspect_widths)
        return d


@dataclass
class ModelParams:
    """Named parameter arrays; every entry belongs to the regularized set."""

    config: ModelConfig
    arrays: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.arrays[name]

    @property
    def dtype(self):
        return next(iter(self.arrays.values())).dtype

    def count(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.arrays.items()})

    def leaves(self, requires_grad=True):
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.arrays.items()}

    def sq_norm(self) -> float:
        return float(sum(np.vdot(a, a) for a in self.arrays.values()))


def param_shapes(config: ModelConfig):
    k, d, shapes = config.embed_dim, config.maps_per_width, {}
    for h in config.widths:
        shapes[f"conv{h}.w"] = (d, h * k)
        shapes[f"conv{h}.b"] = (d,)
    if config.kind in ("pf", "pg"):
        for h in config.widths:
            for ht, _, count in config.slot_groups():
                shapes[f"{config.kind}{h}.aspect{ht}.w"] = (count * h * k, ht * k)
                shapes[f"{config.kind}{h}.aspect{ht}.b"] = (count * h * k,)
            if config.kind == "pf" or not config.tie_gate_bias:
                shapes[f"{config.kind}{h}.b"] = (d,)
    shapes["out.w"] = (config.n_classes, config.feature_dim)
    shapes["out.b"] = (config.n_classes,)
    return shapes


def init_params(config: ModelConfig, rng: T.RngStream, dtype=np.float64) -> ModelParams:
    """Weights uniform on (-init_scale, init_scale), biases zero."""
    arrays = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".w"):
            arrays[name] = rng.uniform(-config.init_scale, config.init_scale, shape, dtype=dtype)
        else:
            arrays[name] = np.zeros(shape, dtype=dtype)
    return ModelParams(config, arrays)


def zero_params(config: ModelConfig, dtype=np.float64) -> ModelParams:
    return ModelParams(config, {n: np.zeros(s, dtype=dtype) for n, s in param_shapes(config).items()})


# -- batching ----------------------------------------------------------------------


@dataclass
class Batch:
    sent_win: dict   # width -> (B, W, h*k) windows of the PAD-extended sentence
    sent_mask: dict  # width -> (B, W) bool, windows that are part of the canonical map
    asp_win: dict
    asp_mask: dict
    labels: np.ndarray | None = None

    @property
    def size(self):
        return next(iter(self.sent_win.values())).shape[0]


def _stack(mats, length, dim, dtype):
    out = np.zeros((len(mats), length, dim), dtype=dtype)
    for i, m in enumerate(mats):
        out[i, :len(m)] = m
    return out


def make_batch(sentences, aspects, config: ModelConfig, labels=None, dtype=None) -> Batch:
    """Batch from per-instance sentence (n x k) and aspect (m x k) matrices.

    A sentence shorter than the widest filter is treated as padded with zero
    rows up to that width, and only windows containing at least one real
    token are pooled. Aspects are padded up to each aspect-window width. The
    extra batch padding never enters a pooled window, so outputs do not depend
    on what else is in the batch.
    """
    k = config.embed_dim
    dtype = dtype or np.asarray(sentences[0]).dtype
    lens = np.array([len(s) for s in sentences])
    if (lens < 1).any():
        raise ValueError("empty sentence")
    maxw = max(config.widths)
    S = _stack(sentences, max(lens.max(), maxw), k, dtype)
    canon = np.maximum(lens, maxw)
    sent_win, sent_mask = {}, {}
    for h in config.widths:
        sent_win[h] = np.ascontiguousarray(T.windows(S, h))
        pos = np.arange(sent_win[h].shape[1])[None, :]
        sent_mask[h] = (pos <= (canon - h)[:, None]) & (pos <= (lens - 1)[:, None])
    asp_win, asp_mask = {}, {}
    if config.kind != "vanilla":
        alens = np.array([len(a) for a in aspects])
        if (alens < 1).any():
            raise ValueError("empty aspect")
        A = _stack(aspects, max(alens.max(), max(config.aspect_widths)), k, dtype)
        for ht in config.aspect_widths:
            asp_win[ht] = np.ascontiguousarray(T.windows(A, ht))
            pos = np.arange(asp_win[ht].shape[1])[None, :]
            asp_mask[ht] = pos <= (np.maximum(alens, ht) - ht)[:, None]
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
    return Batch(sent_win, sent_mask, asp_win, asp_mask, labels)


def _strip_pad(ids):
    # Trailing PAD ids are padding, not words; dropping them keeps outputs padding-neutral.
    ids = np.asarray(ids)
    real = np.flatnonzero(ids != 0)
    return ids[:real[-1] + 1] if real.size else ids[:0]


def batch_from_instances(instances, table, config: ModelConfig, with_labels=True) -> Batch:
    vecs = table.vectors if hasattr(table, "vectors") else np.asarray(table)
    sents = [vecs[_strip_pad(inst.token_ids)] for inst in instances]
    asps = [vecs[inst.aspect_ids] for inst in instances]
    labels = [inst.label for inst in instances] if with_labels else None
    return make_batch(sents, asps, config, labels, dtype=vecs.dtype)


# -- forward -----------------------------------------------------------------------


def _linear(x: np.ndarray, w: Tensor, b: Tensor | None) -> Tensor:
    """x (..., in) constant times w^T (in, out), plus b."""
    lead = x.shape[:-1]
    y = T.matmul(x.reshape(-1, x.shape[-1]), T.swapaxes(w, 0, 1))
    y = T.reshape(y, lead + (w.shape[0],))
    return y if b is None else y + b


def aspect_filters(p: dict, batch: Batch, config: ModelConfig, h: int) -> Tensor:
    """Per-instance matrices for every slot of width ``h``: shape (B, slots, h*k)."""
    B = batch.size
    blocks = []
    for ht, _, count in config.slot_groups():
        pre = _linear(batch.asp_win[ht], p[f"{config.kind}{h}.aspect{ht}.w"],
                      p[f"{config.kind}{h}.aspect{ht}.b"])
        pooled = T.masked_mean(T.relu(pre), batch.asp_mask[ht][:, :, None], axis=1)
        blocks.append(T.reshape(pooled, (B, count, h * config.embed_dim)))
    return blocks[0] if len(blocks) == 1 else T.concat(blocks, axis=1)


def features(p: dict, batch: Batch, config: ModelConfig) -> Tensor:
    """Final classification features, shape (B, feature_dim)."""
    general, extra = [], []
    for h in config.widths:
        X, mask = batch.sent_win[h], batch.sent_mask[h][:, :, None]
        lin = _linear(X, p[f"conv{h}.w"], p[f"conv{h}.b"])
        if config.kind == "pg":
            theta_t = aspect_filters(p, batch, config, h)
            gate_b = p[f"conv{h}.b"] if config.tie_gate_bias else p[f"pg{h}.b"]
            gate = T.sigmoid(T.matmul(X, T.swapaxes(theta_t, 1, 2)) + gate_b)
            extra.append(T.masked_max(lin * gate, mask, axis=1))
            if config.pg_concat_general:
                general.append(T.masked_max(T.relu(lin), mask, axis=1))
            continue
        general.append(T.masked_max(T.relu(lin), mask, axis=1))
        if config.kind == "pf":
            theta_t = aspect_filters(p, batch, config, h)
            resp = T.sigmoid(T.matmul(X, T.swapaxes(theta_t, 1, 2)) + p[f"pf{h}.b"])
            extra.append(T.masked_max(resp, mask, axis=1))
    return T.concat(general + extra, axis=1)


def classify_t(theta: Tensor, p: dict, rate=0.0, rng=None, training=False) -> Tensor:
    if theta.shape[-1] != p["out.w"].shape[1]:
        raise ValueError(f"feature width {theta.shape[-1]} != classifier input {p['out.w'].shape[1]}")
    theta = T.dropout(theta, rate, rng, training)
    return T.softmax(T.matmul(theta, T.swapaxes(p["out.w"], 0, 1)) + p["out.b"])


def forward(params, batch: Batch, rate=0.0, rng=None, training=False, config=None) -> Tensor:
    """Class probabilities (B, C). ``params`` is ModelParams or a dict of leaf Tensors."""
    if isinstance(params, ModelParams):
        config, p = params.config, {k: Tensor(v) for k, v in params.arrays.items()}
    else:
        p = params
    return classify_t(features(p, batch, config), p, rate, rng, training)


def batch_loss(p: dict, batch: Batch, config: ModelConfig, lam: float,
               rate=0.0, rng=None, training=False) -> Tensor:
    probs = forward(p, batch, rate, rng, training, config=config)
    return T.loss(probs, batch.labels, p, lam)


# -- per-instance views --------------------------------------------------------------


def _single(sentence, aspect, config):
    sentence = np.atleast_2d(np.asarray(sentence, dtype=float))
    aspect = sentence[:1] if aspect is None else np.atleast_2d(np.asarray(aspect, dtype=float))
    return make_batch([sentence], [aspect], config)


def general_cnn_forward(sentence, params: ModelParams) -> np.ndarray:
    """Max-pooled ReLU responses of the general filter bank (length d)."""
    cfg = params.config
    batch = _single(sentence, None, ModelConfig(**{**cfg.to_dict(), "kind": "vanilla"}))
    p = {k: Tensor(v) for k, v in params.arrays.items()}
    return np.concatenate([
        T.masked_max(T.relu(_linear(batch.sent_win[h], p[f"conv{h}.w"], p[f"conv{h}.b"])),
                     batch.sent_mask[h][:, :, None], axis=1).data[0]
        for h in cfg.widths])


def aspect_filter_matrix(aspect, params: ModelParams, width: int, slot: int) -> np.ndarray:
    """The h_s x k matrix generated from ``aspect`` for sentence-filter ``slot`` of ``width``."""
    cfg = params.config
    if cfg.kind == "vanilla":
        raise ValueError("vanilla model has no aspect extractor")
    aspect = np.atleast_2d(np.asarray(aspect, dtype=float))
    batch = _single(aspect, aspect, cfg)
    theta = aspect_filters({k: Tensor(v) for k, v in params.arrays.items()}, batch, cfg, width)
    return theta.data[0, slot].reshape(width, cfg.embed_dim)


def instance_features(instance, params: ModelParams, table) -> np.ndarray:
    batch = batch_from_instances([instance], table, params.config, with_labels=False)
    return features({k: Tensor(v) for k, v in params.arrays.items()}, batch, params.config).data[0]


def pf_forward(instance, params: ModelParams, table) -> np.ndarray:
    if params.config.kind != "pf":
        raise ValueError("pf_forward needs PF parameters")
    return instance_features(instance, params, table)


def pg_forward(instance, params: ModelParams, table) -> np.ndarray:
    if params.config.kind != "pg":
        raise ValueError("pg_forward needs PG parameters")
    return instance_features(instance, params, table)


def classify(theta, params: ModelParams, rate=0.0, rng=None, training=False) -> np.ndarray:
    p = {k: Tensor(v) for k, v in params.arrays.items()}
    return classify_t(T.as_tensor(theta), p, rate, rng, training).data


def predict_proba(instances, params: ModelParams, table, chunk=64) -> np.ndarray:
    out = []
    for i in range(0, len(instances), chunk):
        batch = batch_from_instances(instances[i:i + chunk], table, params.config, with_labels=False)
        out.append(forward(params, batch).data)
    return np.concatenate(out) if out else np.zeros((0, params.config.n_classes))


def predict(instances, params: ModelParams, table) -> np.ndarray:
    """Eval-mode argmax; ties go to the lowest class index."""
    return predict_proba(instances, params, table).argmax(axis=1)
