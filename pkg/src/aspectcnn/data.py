"""SemEval-2014 Task 4 parsing, tokenization/alignment, dev splits and statistics."""
from __future__ import annotations

import json
import logging
import re
import xml.etree.ElementTree as ET
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .tensor import RngStream

log = logging.getLogger(__name__)

POLARITIES = ("positive", "negative", "neutral")
LABELS = {"three_way": POLARITIES, "binary": POLARITIES[:2]}
DEV_SIZE = 500

_TOKEN_RE = re.compile(r"\w+(?:['\-]\w+)*|[^\w\s]", re.UNICODE)


class DataError(Exception):
    """Unusable input data (malformed XML, bad split list, ...)."""


@dataclass(frozen=True)
class RawInstance:
    sentence: str
    term: str
    start: int
    end: int
    polarity: str
    sentence_id: str = ""


@dataclass
class Instance:
    """A tokenized (sentence, aspect) pair; the aspect is ``tokens[span_start:span_start+span_len]``."""

    tokens: list
    span_start: int
    span_len: int
    label: str
    sentence_id: str = ""

    @property
    def aspect(self):
        return self.tokens[self.span_start:self.span_start + self.span_len]

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "Instance":
        return cls(**json.loads(line))


@dataclass
class EncodedInstance:
    token_ids: np.ndarray
    span_start: int
    span_len: int
    label: int
    sentence_id: str = ""

    def __post_init__(self):
        n = len(self.token_ids)
        if not (1 <= self.span_len <= n and 0 <= self.span_start <= n - self.span_len):
            raise ValueError(f"aspect span ({self.span_start}, {self.span_len}) outside sentence of {n}")

    @property
    def aspect_ids(self):
        return self.token_ids[self.span_start:self.span_start + self.span_len]


@dataclass
class DatasetSplit:
    train: list
    dev: list
    test: list
    mode: str = "three_way"
    notes: list = field(default_factory=list)


@dataclass
class ParsedFile:
    instances: list
    conflict: int = 0
    misaligned: int = 0
    sentences: int = 0


# -- parsing -----------------------------------------------------------------------


def _norm_ws(text):
    return " ".join(text.split())


def parse_semeval(path) -> ParsedFile:
    """One RawInstance per ``aspectTerm``; "conflict" terms are dropped and counted."""
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        line, col = exc.position
        raise DataError(f"{path}:{line}:{col}: malformed XML ({exc})") from None
    out = ParsedFile([])
    for sent in root.iter("sentence"):
        out.sentences += 1
        text_el = sent.find("text")
        text = (text_el.text or "") if text_el is not None else ""
        sid = sent.get("id", str(out.sentences - 1))
        terms = sent.find("aspectTerms")
        if terms is None:
            continue
        for term in terms.findall("aspectTerm"):
            polarity = term.get("polarity")
            if polarity == "conflict":
                out.conflict += 1
                continue
            if polarity not in POLARITIES:
                raise DataError(f"{path}: sentence {sid}: unknown polarity {polarity!r}")
            start, end = int(term.get("from")), int(term.get("to"))
            surface = term.get("term", "")
            if _norm_ws(text[start:end]) != _norm_ws(surface):
                log.warning("%s: sentence %s: offsets %d-%d give %r, not %r; skipped",
                            path, sid, start, end, text[start:end], surface)
                out.misaligned += 1
                continue
            out.instances.append(RawInstance(text, surface, start, end, polarity, sid))
    return out


def write_semeval(instances, path):
    """Serialize RawInstances back to the SemEval XML layout (grouped by sentence)."""
    root = ET.Element("sentences")
    groups = {}
    for inst in instances:
        if inst.sentence_id not in groups:
            sent = ET.SubElement(root, "sentence", id=inst.sentence_id)
            ET.SubElement(sent, "text").text = inst.sentence
            groups[inst.sentence_id] = ET.SubElement(sent, "aspectTerms")
        ET.SubElement(groups[inst.sentence_id], "aspectTerm", term=inst.term,
                      polarity=inst.polarity, attrib={"from": str(inst.start), "to": str(inst.end)})
    ET.ElementTree(root).write(path, encoding="utf-8", xml_declaration=True)


# -- tokenization --------------------------------------------------------------------


def tokenize(text):
    """Lowercased word and punctuation tokens with their character offsets."""
    return [(m.group().lower(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def tokenize_align(raw: RawInstance) -> Instance | None:
    """Tokenize the sentence and find the smallest token range covering [start, end)."""
    toks = tokenize(raw.sentence)
    covered = [i for i, (_, s, e) in enumerate(toks) if s < raw.end and e > raw.start]
    if not covered:
        log.warning("sentence %s: aspect %r has no tokens; rejected", raw.sentence_id, raw.term)
        return None
    first, last = covered[0], covered[-1]
    return Instance([t for t, _, _ in toks], first, last - first + 1, raw.polarity, raw.sentence_id)


def align_all(raws):
    return [inst for inst in map(tokenize_align, raws) if inst is not None]


# -- splits --------------------------------------------------------------------------


def read_split_ids(path):
    return [int(line) for line in Path(path).read_text().split() if line.strip()]


def apply_dev_split(train, ids=None, rng: RngStream | None = None, size: int = DEV_SIZE):
    """Move the instances at ``ids`` (zero-based train indices) into dev.

    Without ``ids`` a seeded uniform draw of ``size`` indices is used instead.
    Returns ``(train, dev, used_fallback)``.
    """
    fallback = ids is None
    if fallback:
        if rng is None:
            raise ValueError("a seeded RngStream is required for the fallback dev split")
        if size > len(train):
            raise DataError(f"cannot draw {size} dev instances from {len(train)}")
        ids = sorted(int(i) for i in rng.choice(len(train), size))
    ids = list(ids)
    dupes = [i for i, c in Counter(ids).items() if c > 1]
    if dupes:
        raise DataError(f"duplicate dev ids: {dupes[:10]}")
    bad = [i for i in ids if not 0 <= i < len(train)]
    if bad:
        raise DataError(f"dev ids out of range for {len(train)} train instances: {bad[:10]}")
    chosen = set(ids)
    dev = [train[i] for i in ids]
    rest = [inst for i, inst in enumerate(train) if i not in chosen]
    return rest, dev, fallback


def to_task(split: DatasetSplit, mode: str) -> DatasetSplit:
    """``binary`` drops neutral instances everywhere; ``three_way`` keeps all."""
    if mode not in LABELS:
        raise ValueError(f"unknown task {mode!r}")
    if mode == "three_way":
        return replace(split, mode=mode)
    keep = LABELS[mode]

    def _f(xs):
        return [x for x in xs if x.label in keep]

    return replace(split, train=_f(split.train), dev=_f(split.dev), test=_f(split.test), mode=mode)


def label_index(label: str, mode: str) -> int:
    return LABELS[mode].index(label)


def encode_instances(instances, vocab, mode="three_way"):
    return [EncodedInstance(vocab.ids(inst.tokens), inst.span_start, inst.span_len,
                            label_index(inst.label, mode), inst.sentence_id)
            for inst in instances]


# -- statistics ----------------------------------------------------------------------


def polarity_counts(instances):
    def _pol(inst):
        if isinstance(inst, RawInstance):
            return inst.polarity
        return inst.label if isinstance(inst.label, str) else POLARITIES[inst.label]

    c = Counter(map(_pol, instances))
    return {p: c.get(p, 0) for p in ("positive", "neutral", "negative")}


def stats(split: DatasetSplit, domain: str = "") -> dict:
    prefix = f"{domain}-" if domain else ""
    return {f"{prefix}{name}": polarity_counts(getattr(split, name.lower()))
            for name in ("Train", "Dev", "Test")}


def format_stats(table: dict) -> str:
    rows = [f"{'Dataset':<18}{'Positive':>10}{'Neutral':>10}{'Negative':>10}"]
    for name, c in table.items():
        rows.append(f"{name:<18}{c['positive']:>10}{c['neutral']:>10}{c['negative']:>10}")
    return "\n".join(rows)


def majority_agreement(instances) -> dict:
    """How often an aspect label equals its sentence's majority aspect label.

    The sentence label is the unique most frequent aspect label. Sentences
    whose top count is shared by several labels have no majority; none of
    their instances agree and they are counted under ``tied``.
    """
    groups = defaultdict(list)
    for inst in instances:
        groups[inst.sentence_id].append(inst.label)
    agree = tied = 0
    for labels in groups.values():
        counts = Counter(labels).most_common()
        if len(counts) > 1 and counts[0][1] == counts[1][1]:
            tied += len(labels)
            continue
        agree += counts[0][1]
    total = len(instances)
    return {"agree": agree, "total": total, "tied": tied, "sentences": len(groups),
            "fraction": agree / total if total else float("nan")}


# -- prepared dataset files ------------------------------------------------------------


def write_jsonl(instances, path):
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(inst.to_json() + "\n")


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [Instance.from_json(line) for line in fh if line.strip()]
