from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from inquire.corpus import (
    CitationSpan,
    MaskedParagraph,
    Paragraph,
    build_title_index,
    mask_citations,
    mask_paragraph,
    mask_text,
    normalize_title,
    parse_structured_article,
    select_candidates,
)
from inquire.errors import DataError, EmptyArticleError, ParseError

HEADER = '<TEI xmlns="http://www.tei-c.org/ns/1.0"><teiHeader><fileDesc><titleStmt><title>T</title></titleStmt></fileDesc></teiHeader>'


def tei(body: str, bibl: str = "") -> bytes:
    back = f"<back><listBibl>{bibl}</listBibl></back>" if bibl else ""
    return f"{HEADER}<text><body>{body}</body>{back}</text></TEI>".encode()


ONE_REF = tei(
    '<div><head>Related Work</head><p>A <ref type="bibr" target="#b0">(Smith 2020)</ref> B</p></div>',
    '<biblStruct xml:id="b0"><analytic><title type="main">Some Title</title></analytic></biblStruct>',
)


class TestParse:
    def test_one_span(self):
        article = parse_structured_article(ONE_REF, "x")
        (span,) = article.citations
        para = article.sections[0].paragraphs[0]
        assert para.text == "A (Smith 2020) B"
        assert (span.start, span.end) == (2, 14)
        assert para.text[span.start:span.end] == span.text == "(Smith 2020)"
        assert span.targets == ("b0",)
        assert span.resolved_title == "Some Title"
        assert article.title == "T"

    def test_no_markers(self):
        article = parse_structured_article(tei("<div><head>Related Work</head><p>Nothing here.</p></div>"))
        assert article.citations == []

    def test_truncated(self):
        with pytest.raises(ParseError) as info:
            parse_structured_article(ONE_REF[:-30])
        assert info.value.offset is not None
        assert "byte offset" in str(info.value)

    def test_missing_body(self):
        with pytest.raises(EmptyArticleError):
            parse_structured_article(f"{HEADER}<text></text></TEI>".encode())

    def test_spans_track_collapsed_whitespace(self, fixtures):
        article = parse_structured_article(fixtures / "tei" / "acl-c.xml")
        para = article.sections[0].paragraphs[1]
        (span,) = para.citations
        assert para.text[span.start:span.end] == "( Smith et al., 2021 )"

    def test_multi_target_has_no_resolved_title(self, fixtures):
        article = parse_structured_article(fixtures / "tei" / "acl-b.xml")
        span = article.sections[0].paragraphs[0].citations[0]
        assert span.targets == ("b0", "b1")
        assert span.resolved_title is None


class TestMask:
    def test_single(self):
        assert mask_text("A (Smith 2020) B", [(2, 14)]) == "A [CITATION] B"

    def test_no_spans(self):
        assert mask_text("plain", []) == "plain"

    def test_two_spans_keep_order(self):
        assert mask_text("x [1] y [2] z", [(8, 11), (2, 5)], "<M>") == "x <M> y <M> z"

    def test_overlap(self):
        with pytest.raises(DataError):
            mask_text("abcdef", [(0, 3), (2, 5)])

    def test_out_of_range(self):
        with pytest.raises(DataError):
            mask_text("abc", [(1, 9)])

    def test_section_matcher(self):
        article = parse_structured_article(ONE_REF, "x")
        assert [m.text for m in mask_citations(article)] == ["A [CITATION] B"]
        assert mask_citations(article, section_matcher=r"^intro") == []
        assert len(mask_citations(article, section_matcher=lambda h: True, mask_token="@")) == 1

    @given(st.text(min_size=1, max_size=40), st.data())
    def test_length_change_and_idempotence(self, text, data):
        cuts = sorted(data.draw(st.lists(st.integers(0, len(text)), max_size=6, unique=True)))
        spans = list(zip(cuts[::2], cuts[1::2]))
        para = Paragraph(text, tuple(CitationSpan(0, 0, s, e, text[s:e]) for s, e in spans))
        once = mask_paragraph(para, "[M]")
        assert len(once.text) - len(text) == sum(3 - (e - s) for s, e in spans)
        assert mask_paragraph(once, "[M]") == once


def _masked(pid, *citations):
    return MaskedParagraph(pid, "art", "Related Work", "t [CITATION]", "t", tuple(citations))


def _cite(*titles):
    return CitationSpan(0, 0, 0, 1, "x", tuple(f"b{i}" for i in range(len(titles))), tuple(titles))


class TestSelect:
    INDEX = build_title_index([{"id": "D1", "title": "Known Paper"}, {"id": "D2", "title": "Other"}])

    def test_single_in_corpus(self):
        out = select_candidates([_masked("p", _cite("Known Paper"))], self.INDEX)
        assert [(d.paragraph_id, d.target_id) for d in out.datapoints] == [("p", "D1")]

    def test_two_targets_dropped(self):
        out = select_candidates([_masked("p", _cite("Known Paper", "Other"))], self.INDEX)
        assert out.datapoints == [] and out.dropped == {"multiple_targets": 1}

    def test_unknown_title_dropped(self):
        out = select_candidates([_masked("p", _cite("Unknown"))], self.INDEX)
        assert out.datapoints == [] and out.dropped == {"not_in_corpus": 1}

    def test_drop_counts_sum(self):
        paragraphs = [
            _masked("a", _cite("Known Paper")),
            _masked("b"),
            _masked("c", CitationSpan(0, 0, 0, 1, "x")),
            _masked("d", _cite("Unknown")),
        ]
        out = select_candidates(paragraphs, self.INDEX)
        assert len(out.datapoints) + sum(out.dropped.values()) == len(paragraphs)
        assert out.dropped == {"no_citation": 1, "unresolved": 1, "not_in_corpus": 1}
        assert all(d.target_id in self.INDEX.values() for d in out.datapoints)


class TestTitles:
    def test_normalize(self):
        assert normalize_title("  RANK-BIASED   Overlap: Revisited! ") == "rank biased overlap revisited"

    def test_ambiguous_titles_dropped(self):
        index = build_title_index([{"id": "A", "title": "Same."}, {"id": "B", "title": "same"}, {"id": "C", "title": "x"}])
        assert index == {"x": "C"}

    def test_repeated_same_id_is_fine(self):
        assert build_title_index([{"id": "A", "title": "t"}, {"id": "A", "title": "T"}]) == {"t": "A"}
