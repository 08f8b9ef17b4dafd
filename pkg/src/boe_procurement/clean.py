"""Typed records from raw parsed fields, plus the cleaning and filtering ledger.

Money is carried as integer euro cents end to end; nothing in this module
touches floating point.
"""
from __future__ import annotations

import dataclasses
import datetime as dt
import logging
import re
import string
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .errors import (
    AmbiguousNumberError,
    DateParseError,
    EmptyDatasetError,
    InconsistentAwardError,
    PreconditionError,
)
from .parse import ParsedAnnouncement
from .records import COLUMNS, Naturaleza, NoticeKind, ProcurementRecord, fold

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD_CENTS = 100_000  # 1,000 EUR; values strictly below are dropped

# -- money ------------------------------------------------------------------

_CURRENCY = re.compile(r"€|\b(?:eur|euros?)\b", re.I)
_GROUPED = re.compile(r"\d{1,3}(?:\.\d{3})*")


def parse_money(raw: Optional[str]) -> Optional[int]:
    """Spanish-formatted amount to integer cents.

    ``"."`` groups thousands and ``","`` marks decimals, so
    ``"1.234.567,89 €"`` is 123456789 cents. Empty or non-numeric input
    gives ``None``; digit strings that could be read more than one way
    raise :class:`AmbiguousNumberError`.
    """
    if raw is None:
        return None
    s = re.sub(r"\s+", "", _CURRENCY.sub("", raw))
    if not s or not re.fullmatch(r"[\d.,]+", s) or not re.search(r"\d", s):
        return None
    if s.count(",") > 1:
        raise AmbiguousNumberError(f"several decimal commas in {raw!r}")
    int_part, comma, frac = s.partition(",")
    if comma and not (1 <= len(frac) <= 2 and frac.isdigit()):
        raise AmbiguousNumberError(f"decimal part of {raw!r} is not one or two digits")
    if not int_part:
        raise AmbiguousNumberError(f"no integer part in {raw!r}")
    if "." in int_part and not _GROUPED.fullmatch(int_part):
        raise AmbiguousNumberError(f"malformed thousands grouping in {raw!r}")
    if not int_part.replace(".", "").isdigit():
        raise AmbiguousNumberError(f"malformed number {raw!r}")
    return int(int_part.replace(".", "")) * 100 + int(frac.ljust(2, "0") or 0)


def format_money(cents: int) -> str:
    """Canonical Spanish rendering: ``123456789 -> "1.234.567,89"``."""
    if cents < 0:
        raise ValueError("money values are never negative")
    euros, rest = divmod(cents, 100)
    return f"{euros:,}".replace(",", ".") + f",{rest:02d}"


def cents_to_euros(cents: Optional[int]) -> Optional[float]:
    return None if cents is None else cents / 100


# -- dates ------------------------------------------------------------------

_MONTHS = {
    "enero": 1, "febrero": 2, "marzo": 3, "abril": 4, "mayo": 5, "junio": 6,
    "julio": 7, "agosto": 8, "septiembre": 9, "setiembre": 9, "octubre": 10,
    "noviembre": 11, "diciembre": 12,
}
_ISO = re.compile(r"(\d{4})-(\d{1,2})-(\d{1,2})")
_NUMERIC = re.compile(r"(\d{1,2})[/.-](\d{1,2})[/.-](\d{4})")
_SPANISH = re.compile(r"(\d{1,2})º?\s+de\s+([a-z]+)\s+(?:de|del)\s+(\d{4})")


def parse_date(raw: str) -> dt.date:
    """ISO, ``DD/MM/YYYY`` or ``"3 de enero de 2014"`` to a date."""
    if not raw or not raw.strip():
        raise DateParseError("empty date")
    text = fold(raw)
    try:
        if m := _ISO.fullmatch(text):
            return dt.date(int(m[1]), int(m[2]), int(m[3]))
        if m := _NUMERIC.fullmatch(text):
            return dt.date(int(m[3]), int(m[2]), int(m[1]))
        if (m := _SPANISH.fullmatch(text)) and m[2] in _MONTHS:
            return dt.date(int(m[3]), _MONTHS[m[2]], int(m[1]))
    except ValueError as exc:
        raise DateParseError(f"invalid date {raw!r}: {exc}") from exc
    raise DateParseError(f"unrecognised date {raw!r}")


# -- entities ---------------------------------------------------------------

_EDGE_PUNCT = string.punctuation + "«»“”‘’¿¡·\u2013\u2014…" + string.whitespace
_DASH_SEPARATOR = re.compile(r"\s+-\s*|\s*-\s+")


def _basic_normalize(text: str) -> str:
    text = unicodedata.normalize("NFC", text).upper()
    text = _DASH_SEPARATOR.sub(" ", text).replace(".", "")
    text = re.sub(r"\s+", " ", text)
    return text.strip(_EDGE_PUNCT)


def _fixpoint(text: str) -> str:
    for _ in range(10):
        nxt = _basic_normalize(text)
        if nxt == text:
            return text
        text = nxt
    return text


@dataclass(frozen=True)
class EntityAlias:
    pattern: str
    canonical: str

    def __post_init__(self):
        if _fixpoint(self.canonical) != self.canonical:
            raise PreconditionError(
                f"alias target {self.canonical!r} is not in normalized form"
            )


class AliasTable:
    """Lookup from normalized variant to canonical name, chains resolved."""

    def __init__(self, aliases: Iterable[EntityAlias] = ()):
        raw = {}
        for alias in aliases:
            raw[_fixpoint(alias.pattern)] = alias.canonical
        self._map = {}
        for key in raw:
            target, seen = raw[key], {key}
            while target in raw and raw[target] != target:
                if target in seen:
                    raise PreconditionError(f"alias cycle through {target!r}")
                seen.add(target)
                target = raw[target]
            self._map[key] = target

    def __len__(self):
        return len(self._map)

    def get(self, key: str) -> str:
        return self._map.get(key, key)


def load_aliases(path=None) -> AliasTable:
    """Read a ``pattern<TAB>canonical`` file; defaults to the bundled table."""
    if path is None:
        text = (resources.files("boe_procurement") / "data" / "aliases.tsv").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    aliases = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise PreconditionError(f"aliases line {lineno}: expected two tab-separated columns")
        aliases.append(EntityAlias(parts[0].strip(), parts[1].strip()))
    return AliasTable(aliases)


def normalize_entity(raw: str, aliases: Union[AliasTable, Iterable[EntityAlias], None] = None) -> str:
    """Uppercase, drop separators and edge punctuation, then apply aliases.

    >>> normalize_entity("Adif Presidencia.")
    'ADIF PRESIDENCIA'
    """
    if aliases is not None and not isinstance(aliases, AliasTable):
        aliases = AliasTable(aliases)
    text = _fixpoint(raw)
    return aliases.get(text) if aliases is not None else text


def load_denylist(path=None) -> list[str]:
    if path is None:
        text = (resources.files("boe_procurement") / "data" / "non_contractors.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return [line.strip() for line in text.splitlines()
            if line.strip() and not line.startswith("#")]


# -- CPV ---------------------------------------------------------------------

_CPV_LEAD = re.compile(r"\s*(\d{8})(?!\d)")


def reduce_cpv(raw_tokens: Sequence[str], warnings: list = None) -> list[int]:
    """Leading 8-digit codes, check digits dropped, first occurrence kept."""
    codes, seen = [], set()
    for token in raw_tokens:
        m = _CPV_LEAD.match(token)
        if not m:
            msg = f"dropping CPV token without an 8-digit code: {token!r}"
            logger.warning(msg)
            if warnings is not None:
                warnings.append(msg)
            continue
        code = int(m.group(1))
        if code not in seen:
            seen.add(code)
            codes.append(code)
    return codes


def split_list(raw: Optional[str]) -> list[str]:
    if not raw:
        return []
    return [part.strip() for part in re.split(r"[;|]", raw) if part.strip()]


# -- classification ------------------------------------------------------------

def classify_notice(raw: Optional[str]) -> Optional[NoticeKind]:
    if not raw:
        return None
    key = fold(raw)
    if re.search(r"formaliz|adjudic|contratacion|award", key):
        return NoticeKind.CONTRATACION
    if re.search(r"licitac|tender|convoca", key):
        return NoticeKind.LICITACION
    return None


def classify_naturaleza(raw: Optional[str]) -> Naturaleza:
    if not raw:
        return Naturaleza.OTROS
    try:
        return Naturaleza.from_label(raw)
    except ValueError:
        pass
    key = fold(raw)
    if "gestion" in key and "servicio" in key:
        return Naturaleza.GESTION_SERVICIOS_PUBLICOS
    for stem, value in (("obra", Naturaleza.OBRAS), ("suministro", Naturaleza.SUMINISTROS),
                        ("servicio", Naturaleza.SERVICIOS)):
        if key.startswith(stem):
            return value
    return Naturaleza.OTROS


# -- records -----------------------------------------------------------------

def _money_or_warn(raw, what, warnings, aid):
    try:
        return parse_money(raw)
    except AmbiguousNumberError as exc:
        warnings.append(f"{aid}: {what} dropped: {exc}")
        return None


def _optional_entity(raw, aliases):
    if raw is None or not raw.strip():
        return None
    return normalize_entity(raw, aliases) or None


def disaggregate_awardees(parsed: ParsedAnnouncement, aliases: AliasTable = None,
                          warnings: list = None, strict: bool = False) -> list[ProcurementRecord]:
    """One record per (contractor, value) pair of an announcement.

    Announcements without awardees yield a single record with both award
    fields absent. A pair missing either side, or whose value cannot be
    read, keeps the record but blanks both award fields, so a contractor
    name is present exactly when an awarded value is.
    """
    warnings = warnings if warnings is not None else []
    raw = parsed.raw_fields
    ref = parsed.ref
    aid = ref.announcement_id

    fecha = ref.publication_date
    if raw.get("Fecha"):
        try:
            fecha = parse_date(raw["Fecha"])
        except DateParseError as exc:
            warnings.append(f"{aid}: {exc}; using index date")
    tipo = classify_notice(raw.get("Tipo")) or ref.notice_kind

    shared = dict(
        institucion=normalize_entity(raw["Institucion"], aliases) if raw.get("Institucion") else "",
        organismo_responsable=(normalize_entity(raw["Organismo_responsable"], aliases)
                               if raw.get("Organismo_responsable") else ""),
        expediente=(raw.get("Expediente") or "").strip(),
        fecha=fecha,
        tipo=tipo,
        naturaleza=classify_naturaleza(raw.get("Naturaleza")),
        objeto=(raw.get("Objeto") or "").strip(),
        procedimiento=_optional_entity(raw.get("Procedimiento"), aliases),
        ambito_geografico=_optional_entity(raw.get("Ambito_geografico"), aliases),
        materias_cpv=tuple(split_list(raw.get("Materias_CPV"))),
        codigos_cpv=tuple(reduce_cpv(split_list(raw.get("Codigos_CPV")), warnings)),
        valor_estimado_licitacion=_money_or_warn(
            raw.get("valor_estimado_licitacion"), "estimated value", warnings, aid),
        enlace_html=raw.get("Enlace_HTML") or ref.url,
    )

    if not parsed.awardees:
        return [ProcurementRecord(**shared)]

    records = []
    for name, value in parsed.awardees:
        cents = _money_or_warn(value, "awarded value", warnings, aid) if value else None
        contractor = _optional_entity(name, aliases)
        if contractor is None or cents is None:
            err = InconsistentAwardError(
                f"{aid}: awardee {name!r} / value {value!r} cannot be paired"
            )
            if strict:
                raise err
            warnings.append(str(err))
            contractor = cents = None
        records.append(ProcurementRecord(**shared, valor_oferta_adjudicada=cents,
                                         nombre_adjudicatario=contractor))
    return records


def build_records(parsed_announcements: Iterable[ParsedAnnouncement], aliases: AliasTable = None,
                  warnings: list = None) -> tuple[list[ProcurementRecord], int, int]:
    """Disaggregate every announcement.

    Returns ``(records, announcement_count, disaggregation_delta)``.
    """
    records, n = [], 0
    for parsed in parsed_announcements:
        n += 1
        records.extend(disaggregate_awardees(parsed, aliases, warnings))
    return records, n, len(records) - n


# -- ledger -------------------------------------------------------------------

@dataclass
class CleaningReport:
    input_count: int
    removed_zero_value: int
    removed_below_threshold: int
    threshold: int
    disaggregation_delta: int = 0
    missing_pct: dict = field(default_factory=dict)
    output_count: int = 0

    def balances(self) -> bool:
        return self.output_count == (self.input_count + self.disaggregation_delta
                                     - self.removed_zero_value - self.removed_below_threshold)

    def pct_of_input(self, count: int) -> float:
        base = self.input_count + self.disaggregation_delta
        return 100.0 * count / base if base else 0.0

    def to_text(self) -> str:
        lines = [
            "Cleaning report",
            f"  input records (before disaggregation): {self.input_count}",
            f"  added by awardee disaggregation:       {self.disaggregation_delta}",
            f"  removed, awarded value = 0:            {self.removed_zero_value}"
            f" ({self.pct_of_input(self.removed_zero_value):.2f}%)",
            f"  removed, awarded value < {format_money(self.threshold)} EUR: "
            f"{self.removed_below_threshold} ({self.pct_of_input(self.removed_below_threshold):.2f}%)",
            f"  output records:                        {self.output_count}",
        ]
        if self.missing_pct:
            lines.append("  missing values (% of rows before filtering):")
            lines += [f"    {col:<26} {pct:6.2f}" for col, pct in self.missing_pct.items()]
        return "\n".join(lines)


def _is_missing(value) -> bool:
    return value is None or value == "" or value == ()


def missing_report(records: Sequence[ProcurementRecord]) -> dict:
    """Per-column share of absent values, in percent rounded to 2 decimals."""
    if not records:
        raise EmptyDatasetError("no records")
    n = len(records)
    return {
        col: round(100.0 * sum(_is_missing(r.column(col)) for r in records) / n, 2)
        for col in COLUMNS
    }


def filter_records(records: Sequence[ProcurementRecord], threshold: int = DEFAULT_THRESHOLD_CENTS,
                   disaggregation_delta: int = 0) -> tuple[list[ProcurementRecord], CleaningReport]:
    """Drop zero-value artefacts and awards strictly below ``threshold`` cents.

    Records with no awarded value pass through untouched.
    ``disaggregation_delta`` is how many of ``records`` were created by
    splitting multi-awardee announcements; it only feeds the report.
    """
    if threshold < 0:
        raise PreconditionError("threshold must be >= 0")
    kept, zero, below = [], 0, 0
    for rec in records:
        value = rec.valor_oferta_adjudicada
        if value is not None and value == 0:
            zero += 1
        elif value is not None and value < threshold:
            below += 1
        else:
            kept.append(rec)
    report = CleaningReport(
        input_count=len(records) - disaggregation_delta,
        removed_zero_value=zero,
        removed_below_threshold=below,
        threshold=threshold,
        disaggregation_delta=disaggregation_delta,
        missing_pct=missing_report(records) if records else {},
        output_count=len(kept),
    )
    return kept, report


def analytical_subset(records: Iterable[ProcurementRecord]) -> list[ProcurementRecord]:
    """Award notices with a confirmed amount and an identified contractor."""
    return [
        r for r in records
        if r.tipo is NoticeKind.CONTRATACION
        and r.valor_oferta_adjudicada is not None
        and r.nombre_adjudicatario
    ]


def flag_non_contractors(records: Iterable[ProcurementRecord],
                         denylist: Optional[Sequence[str]] = None) -> list[ProcurementRecord]:
    """Mark awardees that are known not to be contractors; nothing is removed."""
    banned = frozenset(load_denylist() if denylist is None else denylist)
    return [
        dataclasses.replace(r, non_contractor=r.nombre_adjudicatario in banned)
        if r.nombre_adjudicatario else r
        for r in records
    ]


def renormalize(records: Iterable[ProcurementRecord], aliases: AliasTable = None) -> list[ProcurementRecord]:
    """Re-apply entity normalization to records read back from CSV."""
    out = []
    for r in records:
        out.append(dataclasses.replace(
            r,
            institucion=normalize_entity(r.institucion, aliases) if r.institucion else "",
            organismo_responsable=(normalize_entity(r.organismo_responsable, aliases)
                                   if r.organismo_responsable else ""),
            procedimiento=_optional_entity(r.procedimiento, aliases),
            ambito_geografico=_optional_entity(r.ambito_geografico, aliases),
            nombre_adjudicatario=_optional_entity(r.nombre_adjudicatario, aliases),
        ))
    return out
