"""Small generated corpora and problems for tests, demos and ``gradcheck``."""
from __future__ import annotations

import numpy as np

from . import model as M
from . import tensor as T
from .data import EncodedInstance, Instance, encode_instances
from .embeddings import EmbeddingTable, Vocabulary

ASPECTS = ["food", "service", "staff", "pizza", "wine", "decor", "price", "menu",
           "ambience", "dessert", "waiter", "music", "coffee", "pasta", "bar", "view"]
POSITIVE = ["great", "excellent", "delicious", "friendly", "amazing", "superb", "lovely", "fantastic"]
NEGATIVE = ["awful", "terrible", "slow", "rude", "bland", "horrible", "dreadful", "disappointing"]

TRAIN_TEMPLATES = [
    "the {a} was {s} but the {b} was {t}",
    "{a} is {s} , however the {b} is {t}",
    "i thought the {a} was {s} while the {b} was {t} .",
    "{s} {a} and {t} {b}",
    "our {a} seemed {s} though our {b} seemed {t}",
    "really {s} {a} , sadly {t} {b} .",
    "the {a} is {s} and the {b} is {t} too",
    "we had {s} {a} with {t} {b}",
    "{a} felt {s} ; {b} felt {t}",
    "overall {s} {a} although {t} {b} .",
    "their {a} was {s} , their {b} was {t}",
    "found the {a} {s} but the {b} {t}",
]
TEST_TEMPLATES = [
    "honestly the {a} was {s} , whereas the {b} was {t} !",
    "a {s} {a} but a {t} {b}",
    "my {a} looked {s} yet my {b} looked {t}",
    "such {s} {a} , such {t} {b}",
]


def _fill(template, a, s, b, t):
    return template.format(a=a, s=s, b=b, t=t).split()


def contrastive_pairs(n_pairs, templates, rng: T.RngStream, aspects=ASPECTS):
    """Sentences naming two aspects with opposite polarity; two instances per sentence."""
    out = []
    for p in range(n_pairs):
        tpl = templates[rng.integers(len(templates))]
        a, b = (aspects[i] for i in rng.choice(len(aspects), 2))
        first_pos = bool(rng.integers(2))
        s = POSITIVE[rng.integers(len(POSITIVE))]
        t = NEGATIVE[rng.integers(len(NEGATIVE))]
        if not first_pos:
            s, t = t, s
        tokens = _fill(tpl, a, s, b, t)
        sid = f"pair{p}"
        la, lb = ("positive", "negative") if first_pos else ("negative", "positive")
        out.append(Instance(tokens, tokens.index(a), 1, la, sid))
        out.append(Instance(tokens, tokens.index(b), 1, lb, sid))
    return out


def sentiment_table(vocab: Vocabulary, dim: int, rng: T.RngStream, norm=5.0, polarity=2.0):
    """Random vectors of typical norm ``norm``, with positive/negative words pushed
    apart along one shared direction.

    Stands in for pretrained vectors, which have norms of about 5 and place
    sentiment words in separable regions.
    """
    vecs = rng.normal(0.0, norm / np.sqrt(dim), (len(vocab), dim))
    direction = rng.normal(0.0, 1.0, dim)
    direction *= polarity / np.linalg.norm(direction)
    for w in POSITIVE:
        if w in vocab:
            vecs[vocab.stoi[w]] += direction
    for w in NEGATIVE:
        if w in vocab:
            vecs[vocab.stoi[w]] -= direction
    vecs[0] = 0.0
    return EmbeddingTable(vecs)


def contrastive_corpus(seed=0, n_train=200, n_dev=25, n_test=50, dim=50, n_aspects=16, **table_kw):
    """Binary-task (train, dev, test, vocab, table); test templates never occur in train/dev."""
    rng = T.RngStream(seed, "contrastive")
    aspects = ASPECTS[:n_aspects]
    train = contrastive_pairs(n_train, TRAIN_TEMPLATES, rng, aspects)
    dev = contrastive_pairs(n_dev, TRAIN_TEMPLATES, rng, aspects)
    test = contrastive_pairs(n_test, TEST_TEMPLATES, rng, aspects)
    vocab = Vocabulary.build(inst.tokens for inst in train + dev + test)
    table = sentiment_table(vocab, dim, rng, **table_kw)
    enc = [encode_instances(x, vocab, "binary") for x in (train, dev, test)]
    return (*enc, vocab, table)


def random_corpus(n=24, n_classes=3, seed=0, dim=50, vocab_size=60, min_len=5, max_len=15):
    """``n`` random sentences with random aspect spans and balanced random labels."""
    rng = T.RngStream(seed, "random-corpus")
    table = EmbeddingTable(np.vstack([np.zeros((1, dim)), rng.normal(0.0, 0.3, (vocab_size - 1, dim))]))
    labels = np.arange(n) % n_classes
    out = []
    for i in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        ids = rng.integers(1, vocab_size, length)
        span = int(rng.integers(1, 3))
        start = int(rng.integers(0, length - span + 1))
        out.append(EncodedInstance(ids, start, span, int(labels[i]), f"s{i}"))
    return out, table


def tiny_problem(kind: str, seed: int = 0, k: int = 8, maps: int = 2, n: int = 12, m: int = 2,
                 n_classes: int = 3, batch: int = 2):
    """Randomized small model plus a fixed batch, for finite-difference checks.

    Every parameter (biases included) is drawn uniform on (-0.5, 0.5) so no
    ReLU or max sits exactly on a kink.
    """
    rng = T.RngStream(seed, f"tiny-{kind}")
    cfg = M.ModelConfig(kind=kind, embed_dim=k, maps_per_width=maps, n_classes=n_classes)
    params = M.init_params(cfg, rng)
    for arr in params.arrays.values():
        arr[...] = rng.uniform(-0.5, 0.5, arr.shape)
    emb = rng.normal(0.0, 1.0, (40, k))
    emb[0] = 0.0
    insts = [EncodedInstance(rng.integers(1, 40, n), int(rng.integers(0, n - m + 1)), m,
                             int(rng.integers(n_classes))) for _ in range(batch)]
    return params, M.batch_from_instances(insts, emb, cfg)


def tiny_grad_check(kind: str, seed: int = 0, lam: float = 0.001, fault: float = 0.0, **kw):
    params, batch = tiny_problem(kind, seed, **kw)
    cfg = params.config
    return T.grad_check(lambda p: M.batch_loss(p, batch, cfg, lam), params.arrays, fault=fault)
