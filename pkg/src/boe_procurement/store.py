"""CSV persistence in the published column layout, and OCDS export."""
from __future__ import annotations

import csv
import datetime as dt
import hashlib
import io
import json
import logging
import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .clean import (
    classify_naturaleza,
    classify_notice,
    parse_date,
    parse_money,
    reduce_cpv,
    split_list,
)
from .errors import (
    AmbiguousNumberError,
    DateParseError,
    RowParseError,
    SchemaMismatchError,
    ValidationError,
)
from .records import ANALYTICAL_COLUMNS, COLUMNS, DATE_MIN, Naturaleza, NoticeKind, ProcurementRecord

logger = logging.getLogger(__name__)

LIST_SEPARATOR = ";"
MONEY_COLUMNS = ("valor_estimado_licitacion", "valor_oferta_adjudicada")
OCID_PREFIX = "ocds-boeetl-"
DEFAULT_PUBLISHER = "boe-procurement ETL"
DEFAULT_PACKAGE_URI = "urn:boe-procurement:releases"


@dataclass(frozen=True)
class DatasetFile:
    path: Path
    delimiter: str = ","
    encoding: str = "utf-8"
    header: tuple = COLUMNS


def _as_file(file) -> DatasetFile:
    return file if isinstance(file, DatasetFile) else DatasetFile(Path(file))


# -- writing --------------------------------------------------------------------

def _money_cell(cents: Optional[int]) -> str:
    if cents is None:
        return ""
    return f"{cents // 100}.{cents % 100:02d}"


def record_to_row(rec: ProcurementRecord) -> list[str]:
    return [
        rec.institucion,
        rec.organismo_responsable,
        rec.expediente,
        rec.fecha.isoformat(),
        rec.tipo.value,
        rec.naturaleza.value,
        rec.objeto,
        rec.procedimiento or "",
        rec.ambito_geografico or "",
        LIST_SEPARATOR.join(rec.materias_cpv),
        LIST_SEPARATOR.join(f"{c:08d}" for c in rec.codigos_cpv),
        _money_cell(rec.valor_estimado_licitacion),
        _money_cell(rec.valor_oferta_adjudicada),
        rec.nombre_adjudicatario or "",
        rec.enlace_html,
    ]


def write_csv(records: Iterable[ProcurementRecord], file, columns: Sequence[str] = COLUMNS) -> None:
    """UTF-8, comma separated, every field quoted, header in dataset order.

    ``columns`` may be :data:`ANALYTICAL_COLUMNS` to leave out the three
    tender-only variables.
    """
    if tuple(columns) not in (COLUMNS, ANALYTICAL_COLUMNS):
        raise SchemaMismatchError("columns must be the full or the analytical layout")
    keep = [COLUMNS.index(c) for c in columns]
    file = _as_file(file)
    file.path.parent.mkdir(parents=True, exist_ok=True)
    with open(file.path, "w", encoding=file.encoding, newline="") as fh:
        writer = csv.writer(fh, delimiter=file.delimiter, quoting=csv.QUOTE_ALL,
                            lineterminator="\n")
        writer.writerow(columns)
        for rec in records:
            row = record_to_row(rec)
            writer.writerow([row[i] for i in keep])


# -- reading --------------------------------------------------------------------

_STRICT_MONEY = re.compile(r"(\d+)\.(\d{2})")


def _strict_money(cell: str) -> Optional[int]:
    if cell == "":
        return None
    m = _STRICT_MONEY.fullmatch(cell)
    if not m:
        raise ValueError(f"bad money cell {cell!r}")
    return int(m[1]) * 100 + int(m[2])


def _dot_decimal_money(cell: str) -> Optional[int]:
    s = cell.strip().replace("€", "").strip()
    if s == "" or s.upper() in ("NA", "NAN", "NULL", "NONE"):
        return None
    try:
        amount = Decimal(s)
    except InvalidOperation as exc:
        raise ValueError(f"bad money cell {cell!r}") from exc
    if not amount.is_finite() or amount < 0:
        raise ValueError(f"bad money cell {cell!r}")
    return int((amount * 100).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def _spanish_money(cell: str) -> Optional[int]:
    if cell.strip().upper() in ("NA", "NAN", "NULL", "NONE"):
        return None
    return parse_money(cell)


def _uses_decimal_comma(values: Iterable[str]) -> bool:
    for v in values:
        if "," in v:
            return True
        if re.fullmatch(r"\s*\d{1,3}(?:\.\d{3}){2,}\s*", v):
            return True
    return False


def _strict_record(row: list[str]) -> ProcurementRecord:
    return ProcurementRecord(
        institucion=row[0],
        organismo_responsable=row[1],
        expediente=row[2],
        fecha=dt.date.fromisoformat(row[3]),
        tipo=NoticeKind(row[4]),
        naturaleza=Naturaleza(row[5]),
        objeto=row[6],
        procedimiento=row[7] or None,
        ambito_geografico=row[8] or None,
        materias_cpv=tuple(row[9].split(LIST_SEPARATOR)) if row[9] else (),
        codigos_cpv=tuple(int(c) for c in row[10].split(LIST_SEPARATOR)) if row[10] else (),
        valor_estimado_licitacion=_strict_money(row[11]),
        valor_oferta_adjudicada=_strict_money(row[12]),
        nombre_adjudicatario=row[13] or None,
        enlace_html=row[14],
    )


def _na(cell: str) -> str:
    cell = cell.strip()
    return "" if cell.upper() in ("NA", "NAN", "NULL", "NONE") else cell


def _tolerant_record(row: list[str], money_parsers, line: int, errors: list) -> ProcurementRecord:
    cells = [_na(c) for c in row]
    try:
        fecha = parse_date(cells[3])
    except DateParseError as exc:
        raise RowParseError(line, str(exc)) from exc

    money = []
    for idx, parser in zip((11, 12), money_parsers):
        try:
            money.append(parser(cells[idx]) if cells[idx] else None)
        except (ValueError, AmbiguousNumberError) as exc:
            errors.append(RowParseError(line, f"{COLUMNS[idx]}: {exc}"))
            money.append(None)

    cpv_tokens = [t for t in re.split(r"[;,|\s]+", cells[10]) if t]
    return ProcurementRecord(
        institucion=cells[0],
        organismo_responsable=cells[1],
        expediente=cells[2],
        fecha=fecha,
        tipo=classify_notice(cells[4]) or NoticeKind.LICITACION,
        naturaleza=classify_naturaleza(cells[5]),
        objeto=cells[6],
        procedimiento=cells[7] or None,
        ambito_geografico=cells[8] or None,
        materias_cpv=tuple(split_list(cells[9])),
        codigos_cpv=tuple(reduce_cpv(cpv_tokens)),
        valor_estimado_licitacion=money[0],
        valor_oferta_adjudicada=money[1],
        nombre_adjudicatario=cells[13] or None,
        enlace_html=cells[14],
    )


def _sniff(sample: str) -> csv.Dialect:
    # The header is the most reliable witness: pick the delimiter that splits
    # it into a known layout before falling back to the stdlib sniffer.
    first = sample.splitlines()[0] if sample else ""
    for delim in (",", ";", "\t"):
        cells = tuple(c.strip() for c in next(csv.reader([first], delimiter=delim), []))
        if cells in (COLUMNS, ANALYTICAL_COLUMNS) or cells[1:] in (COLUMNS, ANALYTICAL_COLUMNS):
            return type("_Sniffed", (csv.excel,), {"delimiter": delim})
    try:
        return csv.Sniffer().sniff(sample, delimiters=",;\t")
    except csv.Error:
        return csv.excel


def read_csv(file, *, tolerant: bool = False, errors: list = None) -> list[ProcurementRecord]:
    """Load records written by :func:`write_csv`.

    With ``tolerant=True`` the delimiter is sniffed, a leading row-index
    column is ignored, money columns may use either decimal convention and
    rows that fail to convert are reported in ``errors`` instead of
    aborting the read.
    """
    file = _as_file(file)
    errors = errors if errors is not None else []
    with open(file.path, encoding="utf-8-sig" if tolerant else file.encoding, newline="") as fh:
        text = fh.read()

    if tolerant:
        reader = csv.reader(io.StringIO(text), _sniff(text[:65536]))
    else:
        reader = csv.reader(io.StringIO(text), delimiter=file.delimiter)
    rows = list(reader)
    if not rows:
        raise SchemaMismatchError("file is empty (no header)")
    header = [h.strip() for h in rows[0]]
    offset = 0
    if tolerant and len(header) == len(COLUMNS) + 1 and header[0] in ("", "X", "...1", "Unnamed: 0"):
        offset = 1
    if tolerant and len(header) == len(ANALYTICAL_COLUMNS) + 1 and header[0] in ("", "X", "...1", "Unnamed: 0"):
        offset = 1
    found = tuple(header[offset:])
    if found not in (COLUMNS, ANALYTICAL_COLUMNS):
        raise SchemaMismatchError(f"header {header} does not match {list(COLUMNS)}")

    body = [r[offset:] for r in rows[1:] if any(c.strip() for c in r)]
    if found == ANALYTICAL_COLUMNS:
        # Re-insert empty tender-only cells so rows line up with COLUMNS.
        width = len(ANALYTICAL_COLUMNS)
        slots = [ANALYTICAL_COLUMNS.index(c) if c in ANALYTICAL_COLUMNS else None for c in COLUMNS]
        body = [[r[i] if i is not None else "" for i in slots] if len(r) == width else r
                for r in body]
    records = []
    if not tolerant:
        for line, row in enumerate(body, 2):
            if len(row) != len(COLUMNS):
                raise RowParseError(line, f"expected {len(COLUMNS)} fields, got {len(row)}")
            try:
                records.append(_strict_record(row))
            except ValueError as exc:
                raise RowParseError(line, str(exc)) from exc
        return records

    parsers = [
        _spanish_money if _uses_decimal_comma(r[idx] for r in body if len(r) > idx)
        else _dot_decimal_money
        for idx in (11, 12)
    ]
    for line, row in enumerate(body, 2):
        if len(row) != len(COLUMNS):
            errors.append(RowParseError(line, f"expected {len(COLUMNS)} fields, got {len(row)}"))
            continue
        try:
            records.append(_tolerant_record(row, parsers, line, errors))
        except RowParseError as exc:
            errors.append(exc)
    if errors:
        logger.warning("%s: %d row conversion problems", file.path, len(errors))
    return records


# -- OCDS ---------------------------------------------------------------------------

_CATEGORY = {
    Naturaleza.OBRAS: "works",
    Naturaleza.SERVICIOS: "services",
    Naturaleza.SUMINISTROS: "goods",
    Naturaleza.GESTION_SERVICIOS_PUBLICOS: "services",
}


def _digest(*parts: str) -> str:
    return hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()[:16]


def mint_ocid(rec: ProcurementRecord) -> str:
    """Stable identifier from (expediente, supplier).

    Records without an expediente fall back to their announcement URL so
    that unrelated tenders do not share an ocid.
    """
    process = rec.expediente or rec.enlace_html
    return OCID_PREFIX + _digest(process, rec.nombre_adjudicatario or "")


@dataclass(frozen=True)
class OcdsRelease:
    ocid: str
    release_id: str
    release_date: dt.date
    tag: str
    buyer_name: str
    title: str
    value_amount: Optional[int] = None
    supplier_name: Optional[str] = None
    cpv_classifications: tuple = ()
    source_url: str = ""
    procuring_entity: str = ""
    tender_id: str = ""
    procedure: Optional[str] = None
    category: Optional[str] = None
    value_currency: str = field(default="EUR", init=False)

    def to_json(self) -> dict:
        buyer_id = "org-" + _digest(self.buyer_name)
        parties = [{"id": buyer_id, "name": self.buyer_name, "roles": ["buyer"]}]
        if self.procuring_entity and self.procuring_entity != self.buyer_name:
            parties.append({"id": "org-" + _digest(self.procuring_entity),
                            "name": self.procuring_entity, "roles": ["procuringEntity"]})
        tender = {"id": self.tender_id or self.ocid, "title": self.title}
        if self.category:
            tender["mainProcurementCategory"] = self.category
        if self.procedure:
            tender["procurementMethodDetails"] = self.procedure
        if self.tag == "tender" and self.value_amount is not None:
            tender["value"] = {"amount": self.value_amount / 100, "currency": self.value_currency}
        if self.cpv_classifications:
            main, *extra = self.cpv_classifications
            item = {"id": "1", "classification": {"scheme": "CPV", "id": f"{main:08d}"}}
            if extra:
                item["additionalClassifications"] = [
                    {"scheme": "CPV", "id": f"{c:08d}"} for c in extra
                ]
            tender["items"] = [item]
        if self.source_url:
            tender["documents"] = [{
                "id": "notice",
                "documentType": "awardNotice" if self.tag == "award" else "tenderNotice",
                "url": self.source_url,
            }]
        release = {
            "ocid": self.ocid,
            "id": self.release_id,
            "date": f"{self.release_date.isoformat()}T00:00:00Z",
            "tag": [self.tag],
            "initiationType": "tender",
            "parties": parties,
            "buyer": {"id": buyer_id, "name": self.buyer_name},
            "tender": tender,
        }
        if self.tag == "award":
            supplier_id = "org-" + _digest(self.supplier_name)
            parties.append({"id": supplier_id, "name": self.supplier_name, "roles": ["supplier"]})
            release["awards"] = [{
                "id": self.release_id + "-award",
                "status": "active",
                "value": {"amount": self.value_amount / 100, "currency": self.value_currency},
                "suppliers": [{"id": supplier_id, "name": self.supplier_name}],
            }]
        return release


def to_release(rec: ProcurementRecord) -> OcdsRelease:
    is_award = rec.tipo is NoticeKind.CONTRATACION
    if is_award and (rec.nombre_adjudicatario is None or rec.valor_oferta_adjudicada is None):
        raise ValidationError(
            f"award record {rec.expediente or rec.enlace_html!r} lacks supplier or amount"
        )
    ocid = mint_ocid(rec)
    return OcdsRelease(
        ocid=ocid,
        release_id="",
        release_date=rec.fecha,
        tag="award" if is_award else "tender",
        buyer_name=rec.institucion or rec.organismo_responsable,
        title=rec.objeto,
        value_amount=rec.valor_oferta_adjudicada if is_award else rec.valor_estimado_licitacion,
        supplier_name=rec.nombre_adjudicatario if is_award else None,
        cpv_classifications=tuple(rec.codigos_cpv),
        source_url=rec.enlace_html,
        procuring_entity=rec.organismo_responsable,
        tender_id=rec.expediente,
        procedure=rec.procedimiento,
        category=_CATEGORY.get(rec.naturaleza),
    )


def build_releases(records: Iterable[ProcurementRecord], skip_invalid: bool = False,
                   skipped: list = None) -> list[OcdsRelease]:
    releases = []
    for rec in records:
        try:
            releases.append(to_release(rec))
        except ValidationError as exc:
            if not skip_invalid:
                raise
            if skipped is not None:
                skipped.append(str(exc))
    releases.sort(key=lambda r: (r.release_date, r.ocid, r.tag, r.title, r.source_url))
    seen: dict = {}
    out = []
    for rel in releases:
        base = f"{rel.ocid}-{rel.tag}-{rel.release_date.isoformat()}"
        seen[base] = seen.get(base, 0) + 1
        rid = base if seen[base] == 1 else f"{base}-{seen[base]}"
        out.append(OcdsRelease(**{**_fields(rel), "release_id": rid}))
    return out


def _fields(rel: OcdsRelease) -> dict:
    return {k: getattr(rel, k) for k in rel.__dataclass_fields__ if k != "value_currency"}


def release_package(releases: Sequence[OcdsRelease], publisher: str = DEFAULT_PUBLISHER,
                    uri: str = DEFAULT_PACKAGE_URI) -> dict:
    latest = max((r.release_date for r in releases), default=DATE_MIN)
    return {
        "uri": uri,
        "version": "1.1",
        "publishedDate": f"{latest.isoformat()}T00:00:00Z",
        "publisher": {"name": publisher},
        "releases": [r.to_json() for r in releases],
    }


def export_ocds(records: Iterable[ProcurementRecord], out_path, *, skip_invalid: bool = False,
                skipped: list = None, publisher: str = DEFAULT_PUBLISHER,
                uri: str = DEFAULT_PACKAGE_URI) -> int:
    """Write one OCDS release package; returns the number of releases.

    Output is a pure function of the input records: no wall-clock
    timestamps, sorted releases, hash-derived identifiers.
    """
    releases = build_releases(records, skip_invalid=skip_invalid, skipped=skipped)
    package = release_package(releases, publisher=publisher, uri=uri)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(package, fh, ensure_ascii=False, indent=2)
        fh.write("\n")
    return len(releases)
