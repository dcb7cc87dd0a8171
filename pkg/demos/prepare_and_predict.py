"""End-to-end CLI run on a small hand-written SemEval-style file.

Writes into a temporary directory: prepare, train a PG model, evaluate and
query one sentence. With random word vectors and 24 training sentences the
accuracy is near chance; the point is the plumbing and the output files.
"""
import tempfile
from pathlib import Path

from aspectcnn.cli import main

SENTENCES = [
    ("The pasta was delicious but the waiter was rude.", [("pasta", "positive"), ("waiter", "negative")]),
    ("Great wine list.", [("wine list", "positive")]),
    ("The decor is plain.", [("decor", "neutral")]),
    ("Service was slow and the soup was cold.", [("Service", "negative"), ("soup", "negative")]),
    ("Lovely staff, awful coffee.", [("staff", "positive"), ("coffee", "negative")]),
    ("We ordered the fish.", [("fish", "neutral")]),
]


def write_xml(path, rows):
    out = ["<sentences>"]
    for i, (text, terms) in enumerate(rows):
        out.append(f'<sentence id="{i}"><text>{text}</text><aspectTerms>')
        for term, pol in terms:
            s = text.index(term)
            out.append(f'<aspectTerm term="{term}" polarity="{pol}" from="{s}" to="{s + len(term)}"/>')
        out.append("</aspectTerms></sentence>")
    out.append("</sentences>")
    Path(path).write_text("\n".join(out), encoding="utf-8")


with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    write_xml(tmp / "train.xml", SENTENCES * 4)
    write_xml(tmp / "test.xml", SENTENCES[:3])
    main(["prepare", "--train-xml", str(tmp / "train.xml"), "--test-xml", str(tmp / "test.xml"),
          "--out-dir", str(tmp / "data"), "--dim", "20", "--domain", "Toy"])
    main(["train", "--data-dir", str(tmp / "data"), "--model", "pg", "--maps", "4",
          "--epochs", "30", "--lr", "0.01", "--out-dir", str(tmp / "run")])
    main(["eval", "--checkpoint", str(tmp / "run" / "checkpoint.bin"), "--data-dir", str(tmp / "data")])
    main(["predict", "--checkpoint", str(tmp / "run" / "checkpoint.bin"),
          "--sentence", "The pasta was delicious but the waiter was rude.", "--aspect", "waiter"])
