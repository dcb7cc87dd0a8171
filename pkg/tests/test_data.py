import logging

import pytest
from hypothesis import given, settings, strategies as st

from aspectcnn import data as D
from aspectcnn.embeddings import Vocabulary
from aspectcnn.tensor import RngStream

from conftest import semeval_xml


def raw(sentence, term, polarity="positive", sid="0"):
    s = sentence.index(term)
    return D.RawInstance(sentence, term, s, s + len(term), polarity, sid)


def labelled(counts, prefix="x"):
    """Instances with the given {polarity: count}, one sentence each."""
    out = []
    for pol, n in counts.items():
        out += [D.Instance(["w"], 0, 1, pol, f"{prefix}{pol}{i}") for i in range(n)]
    return out


class TestParse:
    def test_counts(self, semeval_file):
        parsed = D.parse_semeval(semeval_file)
        assert parsed.sentences == 8
        assert parsed.conflict == 1
        assert len(parsed.instances) == 11
        assert D.polarity_counts(parsed.instances) == {"positive": 5, "neutral": 2, "negative": 4}

    def test_sentence_without_terms_contributes_nothing(self, semeval_file):
        parsed = D.parse_semeval(semeval_file)
        assert "4" not in {r.sentence_id for r in parsed.instances}

    def test_offsets_match_term(self, semeval_file):
        for r in D.parse_semeval(semeval_file).instances:
            assert r.sentence[r.start:r.end] == r.term

    def test_malformed_xml_reports_location(self, tmp_path):
        p = tmp_path / "bad.xml"
        p.write_text("<sentences>\n<sentence id='1'><text>x</text>\n</sentences>")
        with pytest.raises(D.DataError, match=r"bad.xml:3:"):
            D.parse_semeval(p)

    def test_offset_mismatch_skipped(self, tmp_path, caplog):
        p = tmp_path / "off.xml"
        p.write_text('<sentences><sentence id="9"><text>the food</text><aspectTerms>'
                     '<aspectTerm term="food" polarity="positive" from="0" to="3"/>'
                     '</aspectTerms></sentence></sentences>')
        with caplog.at_level(logging.WARNING):
            parsed = D.parse_semeval(p)
        assert parsed.instances == [] and parsed.misaligned == 1
        assert "sentence 9" in caplog.text

    def test_roundtrip_idempotent(self, semeval_file, tmp_path):
        first = D.parse_semeval(semeval_file).instances
        D.write_semeval(first, tmp_path / "again.xml")
        assert D.parse_semeval(tmp_path / "again.xml").instances == first


class TestTokenize:
    def test_two_aspect_sentence(self):
        inst = D.tokenize_align(raw("great food but the service was dreadful", "service"))
        assert inst.tokens == ["great", "food", "but", "the", "service", "was", "dreadful"]
        assert inst.aspect == ["service"]

    def test_sentence_start(self):
        inst = D.tokenize_align(raw("Food was bland.", "Food"))
        assert inst.span_start == 0 and inst.aspect == ["food"]

    def test_multiword(self):
        inst = D.tokenize_align(raw("The battery life is long.", "battery life"))
        assert inst.span_len == 2 and inst.aspect == ["battery", "life"]

    def test_punctuation_detached(self):
        toks = [t for t, _, _ in D.tokenize("Wow, the staff's pizza-oven rocks!")]
        assert toks == ["wow", ",", "the", "staff's", "pizza-oven", "rocks", "!"]

    def test_partial_token_offset_covers_token(self):
        inst = D.tokenize_align(D.RawInstance("The cheesecake rocks", "cheese", 4, 10, "positive"))
        assert inst.aspect == ["cheesecake"]

    def test_empty_span_rejected(self, caplog):
        with caplog.at_level(logging.WARNING):
            assert D.tokenize_align(D.RawInstance("a  b", " ", 1, 2, "neutral")) is None
        assert "rejected" in caplog.text

    @given(st.lists(st.sampled_from(["the", "Food", "was", "GREAT", ",", "wine-list", "don't", "!"]),
                    min_size=1, max_size=12), st.data())
    @settings(max_examples=60, deadline=None)
    def test_span_decodes_to_term(self, words, data):
        sentence = " ".join(words)
        i = data.draw(st.integers(0, len(words) - 1))
        j = data.draw(st.integers(i, len(words) - 1))
        start = len(" ".join(words[:i])) + (1 if i else 0)
        term = " ".join(words[i:j + 1])
        inst = D.tokenize_align(D.RawInstance(sentence, term, start, start + len(term), "neutral"))
        rebuilt = " ".join(inst.aspect)
        assert [t for t, _, _ in D.tokenize(term)] == inst.aspect
        assert rebuilt.replace(" ", "") == term.lower().replace(" ", "")


class TestDevSplit:
    def test_published_ids_reproduce_counts(self):
        # Laptop train file = Train + Dev rows; dev ids select exactly the Dev rows.
        pool = labelled({"positive": 767, "neutral": 373, "negative": 673}, "t") + \
            labelled({"positive": 220, "neutral": 87, "negative": 193}, "d")
        ids = [i for i, inst in enumerate(pool) if inst.sentence_id.startswith("d")]
        rest, dev, fallback = D.apply_dev_split(pool, ids)
        assert not fallback and len(dev) == 500
        assert D.polarity_counts(dev) == {"positive": 220, "neutral": 87, "negative": 193}
        assert D.polarity_counts(rest) == {"positive": 767, "neutral": 373, "negative": 673}

    def test_disjoint_and_complete(self):
        pool = labelled({"positive": 300, "neutral": 300, "negative": 300})
        rest, dev, fallback = D.apply_dev_split(pool, rng=RngStream(3, "split"))
        assert fallback and len(dev) == 500 and len(rest) == 400
        assert not {id(x) for x in rest} & {id(x) for x in dev}

    def test_fallback_deterministic(self):
        pool = labelled({"positive": 600})
        a = D.apply_dev_split(pool, rng=RngStream(3, "split"))[1]
        b = D.apply_dev_split(pool, rng=RngStream(3, "split"))[1]
        assert [x.sentence_id for x in a] == [x.sentence_id for x in b]

    @pytest.mark.parametrize("ids", [[0, 1, 1], [0, 700]])
    def test_bad_ids(self, ids):
        with pytest.raises(D.DataError):
            D.apply_dev_split(labelled({"positive": 600}), ids)

    def test_read_split_ids(self, tmp_path):
        (tmp_path / "ids.txt").write_text("4\n0\n\n2\n")
        assert D.read_split_ids(tmp_path / "ids.txt") == [4, 0, 2]


class TestTask:
    @pytest.mark.parametrize("counts,expected", [
        ({"positive": 341, "neutral": 169, "negative": 128}, 469),
        ({"positive": 728, "neutral": 196, "negative": 196}, 924),
    ])
    def test_binary_drops_neutral(self, counts, expected):
        split = D.DatasetSplit([], [], labelled(counts))
        assert len(D.to_task(split, "binary").test) == expected
        assert len(D.to_task(split, "three_way").test) == sum(counts.values())

    def test_label_indices(self):
        assert [D.label_index(p, "three_way") for p in D.POLARITIES] == [0, 1, 2]
        assert [D.label_index(p, "binary") for p in ("positive", "negative")] == [0, 1]
        with pytest.raises(ValueError):
            D.label_index("neutral", "binary")

    def test_encode_validates_span(self):
        with pytest.raises(ValueError):
            D.EncodedInstance([3, 4], 1, 2, 0)
        inst = D.Instance(["the", "food"], 1, 1, "negative", "s")
        enc = D.encode_instances([inst], Vocabulary(["the", "food"]))[0]
        assert enc.token_ids.tolist() == [2, 3] and enc.aspect_ids.tolist() == [3] and enc.label == 1


class TestMajority:
    def test_singletons(self):
        out = D.majority_agreement(labelled({"positive": 3, "negative": 2}))
        assert out["fraction"] == 1.0 and out["tied"] == 0

    def test_tie(self):
        pair = [D.Instance(["w"], 0, 1, "positive", "s"), D.Instance(["w"], 0, 1, "negative", "s")]
        out = D.majority_agreement(pair)
        assert (out["agree"], out["tied"], out["total"]) == (0, 2, 2)

    def test_majority_of_three(self):
        trio = [D.Instance(["w"], 0, 1, lab, "s") for lab in ("positive", "positive", "neutral")]
        assert D.majority_agreement(trio)["agree"] == 2


class TestStatsAndFiles:
    def test_stats_rows(self, semeval_file):
        insts = D.align_all(D.parse_semeval(semeval_file).instances)
        table = D.stats(D.DatasetSplit(insts[:6], insts[6:8], insts[8:]), "Restaurant")
        assert list(table) == ["Restaurant-Train", "Restaurant-Dev", "Restaurant-Test"]
        assert sum(sum(c.values()) for c in table.values()) == 11
        assert "Restaurant-Test" in D.format_stats(table)

    def test_jsonl_roundtrip(self, tmp_path):
        xml = tmp_path / "r.xml"
        xml.write_text(semeval_xml(), encoding="utf-8")
        insts = D.align_all(D.parse_semeval(xml).instances)
        D.write_jsonl(insts, tmp_path / "x.jsonl")
        assert D.read_jsonl(tmp_path / "x.jsonl") == insts
