import os

# Bit-identical reruns assume single-threaded BLAS; set before numpy loads.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

REVIEWS = [
    ("Great food but the service was dreadful!", [("food", "positive"), ("service", "negative")]),
    ("The battery life is long.", [("battery life", "positive")]),
    ("Service was ok.", [("Service", "neutral")]),
    ("The pizza was cold, the wine warm and the staff rude.",
     [("pizza", "negative"), ("wine", "negative"), ("staff", "negative")]),
    ("Nothing to say here.", []),
    ("Prices are fair but the decor is dated.", [("Prices", "positive"), ("decor", "conflict")]),
    ("I loved the pasta.", [("pasta", "positive")]),
    ("The menu was short; the dessert amazing.", [("menu", "neutral"), ("dessert", "positive")]),
]


def semeval_xml(reviews=REVIEWS, start_id=0):
    """A SemEval-2014-layout document with offsets computed from each term's first occurrence."""
    from xml.sax.saxutils import quoteattr, escape

    parts = ['<?xml version="1.0" encoding="UTF-8"?>', "<sentences>"]
    for i, (text, terms) in enumerate(reviews):
        parts.append(f'<sentence id="{start_id + i}"><text>{escape(text)}</text>')
        if terms:
            parts.append("<aspectTerms>")
            for term, pol in terms:
                s = text.index(term)
                parts.append(f'<aspectTerm term={quoteattr(term)} polarity="{pol}" '
                             f'from="{s}" to="{s + len(term)}"/>')
            parts.append("</aspectTerms>")
        parts.append("</sentence>")
    parts.append("</sentences>")
    return "\n".join(parts)


@pytest.fixture
def semeval_file(tmp_path):
    path = tmp_path / "reviews.xml"
    path.write_text(semeval_xml(), encoding="utf-8")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def review_corpus(n, seed=0):
    """``n`` generated reviews with one to two aspect terms each, all three polarities."""
    r = np.random.default_rng(seed)
    aspects = ["food", "service", "battery life", "screen", "wine list", "staff", "keyboard", "price"]
    words = {"positive": ["great", "excellent", "lovely"], "negative": ["awful", "slow", "broken"],
             "neutral": ["okay", "average", "standard"]}
    pols = list(words)
    out = []
    for _ in range(n):
        a, b = r.choice(len(aspects), 2, replace=False)
        pa, pb = pols[r.integers(3)], pols[r.integers(3)]
        wa, wb = words[pa][r.integers(3)], words[pb][r.integers(3)]
        if r.integers(2):
            out.append((f"The {aspects[a]} was {wa}, but the {aspects[b]} was {wb}.",
                        [(aspects[a], pa), (aspects[b], pb)]))
        else:
            out.append((f"Honestly the {aspects[a]} is {wa}!", [(aspects[a], pa)]))
    return out


# -- acceptance summary ------------------------------------------------------------

ACCEPTANCE = []


def record(criterion, status, detail):
    """Register one acceptance outcome; printed again in the terminal summary."""
    line = f"[criterion {criterion}] {status}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
