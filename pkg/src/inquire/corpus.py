"""Evaluation datapoints from GROBID-style TEI XML.

Related-work paragraphs are extracted, every citation span is replaced by a
mask token, and a paragraph is kept when one of its citations points at
exactly one bibliography entry whose title is found in the retrieval corpus.
"""

from __future__ import annotations

import json
import logging
import re
import unicodedata
import xml.etree.ElementTree as ET
from collections import Counter
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import BinaryIO, Union

from .errors import DataError, EmptyArticleError, ParseError

log = logging.getLogger(__name__)

TEI = "{http://www.tei-c.org/ns/1.0}"
XML_ID = "{http://www.w3.org/XML/1998/namespace}id"
DEFAULT_MASK = "[CITATION]"
DEFAULT_SECTION_PATTERN = r"related\s+works?|background"

XmlSource = Union[bytes, str, Path, BinaryIO]


@dataclass(frozen=True)
class CitationSpan:
    """A citation marker inside one paragraph.

    ``start``/``end`` are character offsets into the paragraph text.
    ``targets`` are bibliography entry ids and ``titles`` their titles
    (None when the entry has none). ``resolved_title`` is set only for
    single-target citations.
    """

    section: int
    paragraph: int
    start: int
    end: int
    text: str
    targets: tuple[str, ...] = ()
    titles: tuple[str | None, ...] = ()
    in_corpus: bool = False

    @property
    def resolved_title(self) -> str | None:
        return self.titles[0] if len(self.titles) == 1 else None


@dataclass(frozen=True)
class Paragraph:
    text: str
    citations: tuple[CitationSpan, ...] = ()


@dataclass(frozen=True)
class Section:
    header: str
    paragraphs: tuple[Paragraph, ...]


@dataclass(frozen=True)
class Article:
    article_id: str
    title: str
    abstract: str
    sections: tuple[Section, ...]

    @property
    def citations(self) -> list[CitationSpan]:
        return [c for s in self.sections for p in s.paragraphs for c in p.citations]


@dataclass(frozen=True)
class MaskedParagraph:
    paragraph_id: str
    article_id: str
    header: str
    text: str
    original_text: str
    citations: tuple[CitationSpan, ...]


@dataclass(frozen=True)
class Datapoint:
    paragraph_id: str
    masked_text: str
    target_id: str
    source_article_id: str
    context_window: str = ""

    def to_record(self) -> dict:
        return {
            "paragraph_id": self.paragraph_id,
            "masked_text": self.masked_text,
            "target_id": self.target_id,
            "source_article_id": self.source_article_id,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> Datapoint:
        return cls(rec["paragraph_id"], rec["masked_text"], rec["target_id"], rec["source_article_id"], rec["masked_text"])


@dataclass
class CandidateSelection:
    datapoints: list[Datapoint] = field(default_factory=list)
    dropped: Counter = field(default_factory=Counter)


# -- parsing ---------------------------------------------------------------


def _read_bytes(source: XmlSource) -> bytes:
    if isinstance(source, bytes):
        return source
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes()
    return source.read()


def _byte_offset(data: bytes, line: int, column: int) -> int:
    lines = data.split(b"\n")
    return sum(len(chunk) + 1 for chunk in lines[: line - 1]) + column


def _clean(text: str) -> str:
    return " ".join(text.split())


def _bibliography(root: ET.Element) -> dict[str, str | None]:
    titles: dict[str, str | None] = {}
    for bibl in root.iter(f"{TEI}biblStruct"):
        bid = bibl.get(XML_ID)
        if bid is None:
            continue
        title = None
        for path in (f"{TEI}analytic/{TEI}title[@type='main']", f"{TEI}analytic/{TEI}title", f"{TEI}monogr/{TEI}title"):
            el = bibl.find(path)
            if el is not None and _clean("".join(el.itertext())):
                title = _clean("".join(el.itertext()))
                break
        titles[bid] = title
    return titles


def _paragraph(p: ET.Element, section: int, index: int, bibliography: Mapping[str, str | None]) -> Paragraph:
    pieces: list[str] = []
    raw_spans: list[tuple[int, int, tuple[str, ...]]] = []
    length = 0

    def emit(text: str | None) -> None:
        nonlocal length
        if text:
            pieces.append(text)
            length += len(text)

    emit(p.text)
    for child in p:
        if child.tag == f"{TEI}ref" and child.get("type") == "bibr":
            start = length
            emit("".join(child.itertext()))
            targets = tuple(t.lstrip("#") for t in (child.get("target") or "").split())
            raw_spans.append((start, length, targets))
        else:
            emit("".join(child.itertext()))
        emit(child.tail)

    text, spans = _collapse_whitespace("".join(pieces), [(s, e) for s, e, _ in raw_spans])
    citations = tuple(
        CitationSpan(
            section=section,
            paragraph=index,
            start=s,
            end=e,
            text=text[s:e],
            targets=targets,
            titles=tuple(bibliography.get(t) for t in targets),
        )
        for (s, e), (_, _, targets) in zip(spans, raw_spans)
    )
    return Paragraph(text, citations)


def _collapse_whitespace(text: str, spans: Sequence[tuple[int, int]]) -> tuple[str, list[tuple[int, int]]]:
    """Collapse whitespace runs to one space and strip both ends, remapping span offsets."""
    out: list[str] = []
    new_pos = [0] * (len(text) + 1)
    pending_space = False
    for i, ch in enumerate(text):
        if ch.isspace():
            new_pos[i] = len(out)
            pending_space = bool(out)
            continue
        if pending_space:
            out.append(" ")
            pending_space = False
        new_pos[i] = len(out)
        out.append(ch)
    new_pos[len(text)] = len(out)
    mapped = []
    for s, e in spans:
        # trim whitespace at the span edges so offsets land on visible characters
        while s < e and text[s].isspace():
            s += 1
        while e > s and text[e - 1].isspace():
            e -= 1
        mapped.append((new_pos[s], new_pos[e - 1] + 1 if e > s else new_pos[s]))
    return "".join(out), mapped


def parse_structured_article(xml_source: XmlSource, article_id: str | None = None) -> Article:
    """Parse GROBID TEI output into sections, paragraphs and citation spans.

    Citation spans are ``<ref type="bibr">`` elements; their ``target``
    attribute lists bibliography ids. Paragraph whitespace is collapsed.

    Raises:
        ParseError: malformed XML; carries the byte offset.
        EmptyArticleError: no body, or a body without paragraph text.
    """
    data = _read_bytes(xml_source)
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, column = exc.position
        raise ParseError(f"malformed XML: {exc}", _byte_offset(data, line, column)) from None

    if article_id is None:
        idno = root.find(f".//{TEI}teiHeader//{TEI}idno")
        article_id = _clean(idno.text or "") if idno is not None and idno.text else "article"

    title_el = root.find(f".//{TEI}teiHeader//{TEI}titleStmt/{TEI}title")
    title = _clean("".join(title_el.itertext())) if title_el is not None else ""
    abstract_el = root.find(f".//{TEI}profileDesc/{TEI}abstract")
    abstract = _clean(" ".join(abstract_el.itertext())) if abstract_el is not None else ""

    body = root.find(f".//{TEI}text/{TEI}body")
    if body is None:
        raise EmptyArticleError(f"article {article_id!r} has no body")
    bibliography = _bibliography(root)

    sections = []
    for div in body.iter(f"{TEI}div"):
        head = div.find(f"{TEI}head")
        header = _clean("".join(head.itertext())) if head is not None else ""
        paragraphs = tuple(
            _paragraph(p, len(sections), i, bibliography) for i, p in enumerate(div.findall(f"{TEI}p"))
        )
        sections.append(Section(header, paragraphs))
    if not any(p.text for s in sections for p in s.paragraphs):
        raise EmptyArticleError(f"article {article_id!r} has no paragraph text")
    return Article(article_id, title, abstract, tuple(sections))


# -- masking ---------------------------------------------------------------

SectionMatcher = Union[str, "re.Pattern[str]", Callable[[str], bool], None]


def _matcher(section_matcher: SectionMatcher) -> Callable[[str], bool]:
    if callable(section_matcher):
        return section_matcher
    pattern = re.compile(section_matcher or DEFAULT_SECTION_PATTERN, re.IGNORECASE) \
        if not isinstance(section_matcher, re.Pattern) else section_matcher
    return lambda header: pattern.search(header) is not None


def mask_text(text: str, spans: Iterable[tuple[int, int]], mask_token: str = DEFAULT_MASK) -> str:
    """Replace each ``(start, end)`` slice of ``text`` with ``mask_token``.

    Raises:
        DataError: spans overlap or fall outside the text.
    """
    ordered = sorted(spans)
    for (s1, e1), (s2, _) in zip(ordered, ordered[1:]):
        if s2 < e1:
            raise DataError(f"overlapping citation spans at {s1}:{e1} and {s2}")
    for s, e in ordered:
        if not 0 <= s <= e <= len(text):
            raise DataError(f"citation span {s}:{e} outside paragraph of length {len(text)}")
    # right to left so earlier offsets stay valid
    for s, e in reversed(ordered):
        text = text[:s] + mask_token + text[e:]
    return text


def mask_paragraph(paragraph: Paragraph, mask_token: str = DEFAULT_MASK) -> Paragraph:
    """The paragraph with every citation masked; the result carries no spans."""
    return Paragraph(mask_text(paragraph.text, [(c.start, c.end) for c in paragraph.citations], mask_token))


def mask_citations(
    article: Article, section_matcher: SectionMatcher = None, mask_token: str = DEFAULT_MASK
) -> list[MaskedParagraph]:
    """Masked copies of every paragraph in the article's related-work sections.

    ``section_matcher`` is a header predicate or regex (case-insensitive);
    by default headers mentioning related work or background match.
    """
    matches = _matcher(section_matcher)
    out = []
    for si, section in enumerate(article.sections):
        if not matches(section.header):
            continue
        for pi, paragraph in enumerate(section.paragraphs):
            out.append(
                MaskedParagraph(
                    paragraph_id=f"{article.article_id}/s{si}p{pi}",
                    article_id=article.article_id,
                    header=section.header,
                    text=mask_paragraph(paragraph, mask_token).text,
                    original_text=paragraph.text,
                    citations=paragraph.citations,
                )
            )
    return out


# -- candidate selection ---------------------------------------------------

_PUNCT = re.compile(r"[^\w\s]|_")


def normalize_title(title: str) -> str:
    """Lowercase, strip punctuation and collapse whitespace."""
    title = unicodedata.normalize("NFKC", title).lower()
    return " ".join(_PUNCT.sub(" ", title).split())


def build_title_index(records: Iterable[Mapping]) -> dict[str, str]:
    """Normalised title -> document id from ``{"id", "title"}`` records.

    Titles shared by more than one document are left out, since a citation
    to them cannot be attributed to a single target.
    """
    index: dict[str, str] = {}
    ambiguous: set[str] = set()
    for rec in records:
        key = normalize_title(str(rec["title"]))
        if not key:
            continue
        if key in index and index[key] != rec["id"]:
            ambiguous.add(key)
        index.setdefault(key, str(rec["id"]))
    for key in ambiguous:
        del index[key]
    if ambiguous:
        log.warning("dropped %d ambiguous corpus title(s)", len(ambiguous))
    return index


def load_title_index(path: str | Path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return build_title_index(json.loads(line) for line in fh if line.strip())


def resolve_citations(citations: Iterable[CitationSpan], title_index: Mapping[str, str]) -> list[CitationSpan]:
    """Copies of ``citations`` with ``in_corpus`` set from the title index."""
    return [
        replace(c, in_corpus=c.resolved_title is not None and normalize_title(c.resolved_title) in title_index)
        for c in citations
    ]


def select_candidates(paragraphs: Iterable[MaskedParagraph], title_index: Mapping[str, str]) -> CandidateSelection:
    """Keep paragraphs with a citation to exactly one in-corpus article.

    The first qualifying citation (in reading order) supplies the target.
    Dropped paragraphs are tallied by reason: ``no_citation``,
    ``not_in_corpus``, ``multiple_targets`` or ``unresolved`` (citations
    not linked to any bibliography entry).
    """
    result = CandidateSelection()
    for para in paragraphs:
        target = None
        for c in resolve_citations(para.citations, title_index):
            if c.in_corpus:
                target = title_index[normalize_title(c.resolved_title)]
                break
        if target is not None:
            result.datapoints.append(
                Datapoint(para.paragraph_id, para.text, target, para.article_id, context_window=para.text)
            )
            continue
        if not para.citations:
            reason = "no_citation"
        elif any(len(c.targets) == 1 for c in para.citations):
            reason = "not_in_corpus"
        elif any(len(c.targets) > 1 for c in para.citations):
            reason = "multiple_targets"
        else:
            reason = "unresolved"
        result.dropped[reason] += 1
    return result


def build_corpus(
    xml_paths: Iterable[str | Path],
    title_index: Mapping[str, str],
    section_matcher: SectionMatcher = None,
    mask_token: str = DEFAULT_MASK,
) -> tuple[list[MaskedParagraph], CandidateSelection]:
    """Parse, mask and filter a set of TEI files (article id = file stem)."""
    masked: list[MaskedParagraph] = []
    for path in sorted(Path(p) for p in xml_paths):
        article = parse_structured_article(path, article_id=path.stem)
        masked.extend(mask_citations(article, section_matcher, mask_token))
    return masked, select_candidates(masked, title_index)
