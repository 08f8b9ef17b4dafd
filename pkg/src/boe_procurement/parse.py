"""Turn gazette HTML into raw field strings.

Extraction is driven by :class:`ExtractionRuleSet` files shipped under
``rules/``; one file per announcement layout era. Nothing here performs
I/O beyond reading the document handed in (rule files are loaded once, on
request, by :func:`load_ruleset`).
"""
from __future__ import annotations

import configparser
import datetime as dt
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional
from urllib.parse import parse_qs, urljoin, urlparse

from bs4 import BeautifulSoup, Comment, NavigableString

from .errors import RuleSetError, StructureError
from .records import COLUMNS, AnnouncementRef, NoticeKind

ADMIN_FIELDS = (
    "Institucion",
    "Organismo_responsable",
    "Expediente",
    "Fecha",
    "Tipo",
    "Naturaleza",
    "Objeto",
    "Procedimiento",
    "Ambito_geografico",
    "Materias_CPV",
    "Enlace_HTML",
)
ECONOMIC_FIELDS = ("valor_estimado_licitacion", "nombre_adjudicatario", "valor_oferta_adjudicada")
CPV_FIELD = "Codigos_CPV"
# Filled from the announcement reference when the document itself is silent.
DERIVED_FIELDS = ("Enlace_HTML",)

RULE_KINDS = ("css", "csslist", "label", "regex")
POST_PROCESSORS = ("text", "money", "cpvtokens", "date", "raw")

SECTION_VA = "V-A"

_BLOCK_TAGS = frozenset(
    "address article aside blockquote body dd div dl dt fieldset figcaption figure "
    "footer form h1 h2 h3 h4 h5 h6 header hr li main nav ol p pre section table "
    "tbody td tfoot th thead tr ul".split()
)
_SKIP_TAGS = frozenset({"script", "style", "noscript", "template", "head"})

_MONEY_TOKEN = re.compile(r"\d{1,3}(?:\.\d{3})+(?:,\d+)?|\d+(?:,\d+)?")
_CPV_TOKEN = re.compile(r"(?<!\d)\d{8}(?:-\d)?(?!\d)")
_TRAILING_INITIAL = re.compile(r"(?:^|[\s.])[A-ZÁÉÍÓÚÑ]\.$")


@dataclass(frozen=True)
class Rule:
    kind: str
    post: str
    pattern: str

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise RuleSetError(f"unknown rule kind {self.kind!r}")
        if self.post not in POST_PROCESSORS:
            raise RuleSetError(f"unknown post-processor {self.post!r}")
        if self.kind in ("label", "regex"):
            try:
                self.compiled()
            except re.error as exc:
                raise RuleSetError(f"bad pattern {self.pattern!r}: {exc}") from exc

    def compiled(self) -> re.Pattern:
        return _compile(self.kind, self.pattern)


@lru_cache(maxsize=None)
def _compile(kind: str, pattern: str) -> re.Pattern:
    if kind == "label":
        return re.compile(
            r"(?<![^\s(:;.)])(?:" + pattern + r")[ \t]*:[ \t]*(?:\n[ \t]*)?([^\n]+)"
        )
    return re.compile(pattern)


@dataclass(frozen=True)
class IndexLayout:
    container: str
    section: str
    subsection: str
    entry: str
    link: str
    award_markers: str


@dataclass(frozen=True)
class ExtractionRuleSet:
    version_tag: str
    field_rules: dict
    index: IndexLayout
    awardee_scope: Optional[str] = None
    applies_from: dt.date = dt.date.min
    applies_to: dt.date = dt.date.max

    def __post_init__(self):
        required = set(COLUMNS) - set(DERIVED_FIELDS)
        missing = required - set(self.field_rules)
        if missing:
            raise RuleSetError(f"{self.version_tag}: no rules for {sorted(missing)}")
        unknown = set(self.field_rules) - set(COLUMNS)
        if unknown:
            raise RuleSetError(f"{self.version_tag}: unknown fields {sorted(unknown)}")
        for name, rules in self.field_rules.items():
            if not rules:
                raise RuleSetError(f"{self.version_tag}: field {name} has no rules")

    def covers(self, date: dt.date) -> bool:
        return self.applies_from <= date <= self.applies_to


def parse_ruleset(text: str, source: str = "<string>") -> ExtractionRuleSet:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                   inline_comment_prefixes=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
        meta = cp["ruleset"]
        idx = cp["index"]
        fields_section = cp["fields"]
    except (configparser.Error, KeyError) as exc:
        raise RuleSetError(f"{source}: {exc}") from exc

    field_rules = {}
    for name, block in fields_section.items():
        rules = []
        for line in block.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(None, 2)
            if len(parts) != 3:
                raise RuleSetError(f"{source}: malformed rule for {name}: {line!r}")
            rules.append(Rule(*parts))
        field_rules[name] = tuple(rules)

    scopes = cp["scopes"] if cp.has_section("scopes") else {}
    return ExtractionRuleSet(
        version_tag=meta["version_tag"],
        field_rules=field_rules,
        index=IndexLayout(**{k: idx[k] for k in IndexLayout.__dataclass_fields__}),
        awardee_scope=scopes.get("awardees"),
        applies_from=dt.date.fromisoformat(meta.get("applies_from", "0001-01-01")),
        applies_to=dt.date.fromisoformat(meta.get("applies_to", "9999-12-31")),
    )


def load_ruleset(path) -> ExtractionRuleSet:
    path = Path(path)
    return parse_ruleset(path.read_text(encoding="utf-8"), source=str(path))


@lru_cache(maxsize=1)
def bundled_rulesets() -> tuple[ExtractionRuleSet, ...]:
    """The rule sets shipped with the package, oldest layout first."""
    folder = resources.files("boe_procurement") / "rules"
    sets = [
        parse_ruleset(entry.read_text(encoding="utf-8"), source=entry.name)
        for entry in sorted(folder.iterdir(), key=lambda e: e.name)
        if entry.name.endswith(".ini")
    ]
    return tuple(sorted(sets, key=lambda r: r.applies_from))


def select_ruleset(date: Optional[dt.date], rulesets=None) -> ExtractionRuleSet:
    rulesets = rulesets or bundled_rulesets()
    if date is not None:
        for rs in rulesets:
            if rs.covers(date):
                return rs
    return rulesets[-1]


@dataclass
class ParsedAnnouncement:
    ref: AnnouncementRef
    raw_fields: dict = field(default_factory=dict)
    awardees: list = field(default_factory=list)
    parse_warnings: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "ref": {
                "announcement_id": self.ref.announcement_id,
                "publication_date": self.ref.publication_date.isoformat(),
                "section": self.ref.section,
                "notice_kind": self.ref.notice_kind.name,
                "url": self.ref.url,
            },
            "raw_fields": dict(sorted(self.raw_fields.items())),
            "awardees": [list(pair) for pair in self.awardees],
            "parse_warnings": list(self.parse_warnings),
        }

    @classmethod
    def from_json(cls, data: dict) -> "ParsedAnnouncement":
        r = data["ref"]
        ref = AnnouncementRef(
            announcement_id=r["announcement_id"],
            publication_date=dt.date.fromisoformat(r["publication_date"]),
            section=r["section"],
            notice_kind=NoticeKind[r["notice_kind"]],
            url=r["url"],
        )
        return cls(ref=ref, raw_fields=dict(data.get("raw_fields", {})),
                   awardees=[tuple(p) for p in data.get("awardees", [])],
                   parse_warnings=list(data.get("parse_warnings", [])))


# -- HTML helpers -------------------------------------------------------------

def _soup(doc) -> BeautifulSoup:
    body = doc.body if hasattr(doc, "body") else doc
    if not body or not body.strip():
        raise StructureError("empty document body")
    if isinstance(body, bytes):
        text = body.decode("utf-8", errors="replace")
    else:
        text = body
    if "<" not in text:
        raise StructureError("document body is not HTML")
    return BeautifulSoup(text, "html.parser")


def _flatten(node, out: list):
    for child in node.children:
        if isinstance(child, Comment):
            continue
        if isinstance(child, NavigableString):
            out.append(str(child))
        elif child.name in _SKIP_TAGS:
            continue
        elif child.name == "br":
            out.append("\n")
        elif child.name in _BLOCK_TAGS:
            out.append("\n")
            _flatten(child, out)
            out.append("\n")
        else:
            _flatten(child, out)


def document_text(soup: BeautifulSoup) -> str:
    """Visible text with one line per block element and collapsed spacing."""
    out: list = []
    _flatten(soup, out)
    lines = (re.sub(r"\s+", " ", line).strip() for line in "".join(out).split("\n"))
    return "\n".join(line for line in lines if line)


def _clean_text(value: str) -> str:
    value = re.sub(r"\s+", " ", value).strip().rstrip(":;,").strip()
    if value.endswith(".") and not _TRAILING_INITIAL.search(value):
        value = value[:-1].rstrip()
    return value


def _post(post: str, value: str) -> list:
    """Apply a post-processor; returns zero or more captured strings."""
    if post == "raw":
        return [value] if value.strip() else []
    if post == "money":
        m = _MONEY_TOKEN.search(value)
        return [m.group(0)] if m else []
    if post == "cpvtokens":
        return _CPV_TOKEN.findall(value)
    cleaned = _clean_text(value)
    return [cleaned] if cleaned else []


def _apply_rule(rule: Rule, soup: BeautifulSoup, text: str, many: bool) -> list:
    if rule.kind in ("css", "csslist"):
        elements = soup.select(rule.pattern)
        if rule.kind == "css":
            elements = elements[:1]
        raw = [el.get_text(" ", strip=True) for el in elements]
    else:
        matches = rule.compiled().finditer(text)
        raw = [m.group(1) if m.groups() else m.group(0) for m in matches]
        if not many:
            raw = raw[:1]
    out = []
    for value in raw:
        out.extend(_post(rule.post, value))
    return out


def _first_match(rules, soup, text, many=False) -> list:
    for rule in rules:
        values = _apply_rule(rule, soup, text, many or rule.kind == "csslist")
        if values:
            return values
    return []


def _join(values: list) -> str:
    return "; ".join(values)


# -- operations ---------------------------------------------------------------

def _announcement_id(href: str) -> str:
    parsed = urlparse(href)
    ids = parse_qs(parsed.query).get("id")
    if ids:
        return ids[0]
    tail = parsed.path.rstrip("/").rsplit("/", 1)[-1]
    return re.sub(r"\.html?$", "", tail)


def _heading_matches(pattern: str, tag) -> bool:
    return re.search(pattern, tag.get_text(" ", strip=True), re.I) is not None


def parse_day_index(doc, rules: ExtractionRuleSet = None) -> list[AnnouncementRef]:
    """Section V-A notices listed in a day index, in page order."""
    date = getattr(doc, "date", None)
    rules = rules or select_ruleset(date)
    layout = rules.index
    soup = _soup(doc)
    container = soup.select_one(layout.container)
    if container is None:
        raise StructureError(f"index container {layout.container!r} not found")

    base_url = getattr(doc, "url", "") or ""
    entries = {id(t) for t in container.select(layout.entry)}
    in_section = in_subsection = False
    refs, seen = [], set()
    for tag in container.find_all(True):
        if tag.name == "h3":
            in_section = _heading_matches(layout.section, tag)
            in_subsection = False
        elif tag.name == "h4":
            in_subsection = in_section and _heading_matches(layout.subsection, tag)
        elif in_subsection and id(tag) in entries:
            link = tag.select_one(layout.link)
            if link is None or not link.get("href"):
                continue
            url = urljoin(base_url, link["href"])
            ann_id = _announcement_id(url)
            if not ann_id or ann_id in seen:
                continue
            seen.add(ann_id)
            heading = tag.find(["p", "h5", "h6"]) or tag
            kind = (NoticeKind.CONTRATACION
                    if re.search(layout.award_markers, heading.get_text(" "), re.I)
                    else NoticeKind.LICITACION)
            refs.append(AnnouncementRef(ann_id, date, SECTION_VA, kind, url))
    return refs


def _ref_of(doc) -> AnnouncementRef:
    ref = getattr(doc, "ref", None)
    if ref is None:
        raise StructureError("document carries no announcement reference")
    return ref


def _rules_for(doc, rules):
    if rules is not None:
        return rules
    ref = getattr(doc, "ref", None)
    return select_ruleset(ref.publication_date if ref else getattr(doc, "date", None))


def extract_admin_fields(doc, rules: ExtractionRuleSet = None,
                         into: ParsedAnnouncement = None) -> ParsedAnnouncement:
    ref = _ref_of(doc)
    rules = _rules_for(doc, rules)
    soup = _soup(doc)
    text = document_text(soup)
    parsed = into if into is not None else ParsedAnnouncement(ref=ref)

    for name in ADMIN_FIELDS:
        if name in DERIVED_FIELDS:
            continue
        values = _first_match(rules.field_rules[name], soup, text)
        if values:
            parsed.raw_fields[name] = _join(values)
        else:
            parsed.parse_warnings.append(f"{ref.announcement_id}: no match for {name}")
    parsed.raw_fields["Enlace_HTML"] = ref.url
    return parsed


def _awardee_text(text: str, rules: ExtractionRuleSet, kind: NoticeKind) -> str:
    if rules.awardee_scope:
        m = re.search(rules.awardee_scope, text)
        if m:
            return text[m.start():]
    return text if kind is NoticeKind.CONTRATACION else ""


def extract_economic_fields(doc, rules: ExtractionRuleSet = None,
                            into: ParsedAnnouncement = None) -> ParsedAnnouncement:
    ref = _ref_of(doc)
    rules = _rules_for(doc, rules)
    soup = _soup(doc)
    text = document_text(soup)
    parsed = into if into is not None else ParsedAnnouncement(ref=ref)
    aid = ref.announcement_id

    estimated = _first_match(rules.field_rules["valor_estimado_licitacion"], soup, text)
    if estimated:
        parsed.raw_fields["valor_estimado_licitacion"] = estimated[0]
    else:
        parsed.parse_warnings.append(f"{aid}: no match for valor_estimado_licitacion")

    scope = _awardee_text(text, rules, ref.notice_kind)
    if scope:
        names = _first_match(rules.field_rules["nombre_adjudicatario"], soup, scope, many=True)
        values = _first_match(rules.field_rules["valor_oferta_adjudicada"], soup, scope, many=True)
        if len(names) != len(values):
            parsed.parse_warnings.append(
                f"{aid}: {len(names)} awardee names but {len(values)} awarded values"
            )
        width = max(len(names), len(values))
        names += [None] * (width - len(names))
        values += [None] * (width - len(values))
        parsed.awardees = list(zip(names, values))
        if not parsed.awardees and ref.notice_kind is NoticeKind.CONTRATACION:
            parsed.parse_warnings.append(f"{aid}: award notice without awardees")
    return parsed


def extract_cpv_codes(doc, rules: ExtractionRuleSet = None) -> list[str]:
    rules = _rules_for(doc, rules)
    soup = _soup(doc)
    return _first_match(rules.field_rules[CPV_FIELD], soup, document_text(soup))


def parse_announcement(doc, rules: ExtractionRuleSet = None) -> ParsedAnnouncement:
    """All four extraction passes merged into one :class:`ParsedAnnouncement`."""
    rules = _rules_for(doc, rules)
    parsed = extract_admin_fields(doc, rules)
    extract_economic_fields(doc, rules, into=parsed)
    codes = extract_cpv_codes(doc, rules)
    if codes:
        parsed.raw_fields[CPV_FIELD] = _join(codes)
    else:
        parsed.parse_warnings.append(f"{parsed.ref.announcement_id}: no match for {CPV_FIELD}")
    return parsed
