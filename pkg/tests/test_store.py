import datetime as dt
import json

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from boe_procurement.errors import RowParseError, SchemaMismatchError, ValidationError
from boe_procurement.records import ANALYTICAL_COLUMNS, COLUMNS, Naturaleza, NoticeKind
from boe_procurement.store import (
    DatasetFile,
    build_releases,
    export_ocds,
    mint_ocid,
    read_csv,
    release_package,
    write_csv,
)

from conftest import make_record

HEADER = ",".join(f'"{c}"' for c in COLUMNS)


def test_header_order():
    assert COLUMNS == (
        "Institucion", "Organismo_responsable", "Expediente", "Fecha", "Tipo", "Naturaleza", "Objeto",
        "Procedimiento", "Ambito_geografico", "Materias_CPV", "Codigos_CPV",
        "valor_estimado_licitacion", "valor_oferta_adjudicada", "nombre_adjudicatario", "Enlace_HTML",
    )


def test_empty_file_has_header_only(tmp_path):
    write_csv([], tmp_path / "x.csv")
    assert (tmp_path / "x.csv").read_text(encoding="utf-8") == HEADER + "\n"


def test_money_cell_format(tmp_path):
    write_csv([make_record(valor_oferta_adjudicada=100000, codigos_cpv=(9134100, 45233142))],
              tmp_path / "x.csv")
    line = (tmp_path / "x.csv").read_text(encoding="utf-8").splitlines()[1]
    assert '"1000.00"' in line
    assert '"09134100;45233142"' in line
    assert '"2020-05-04"' in line
    assert line.count('","') == 14


def test_round_trip_simple(tmp_path):
    recs = [make_record(), make_record(tipo=NoticeKind.LICITACION, valor_oferta_adjudicada=None,
                                       nombre_adjudicatario=None, valor_estimado_licitacion=123,
                                       procedimiento=None, materias_cpv=(), codigos_cpv=())]
    write_csv(recs, tmp_path / "x.csv")
    assert read_csv(tmp_path / "x.csv") == recs


_text = st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00\r"),
                min_size=1, max_size=20)
_item = _text.filter(lambda s: ";" not in s and s.strip() == s and s != "")
_money = st.one_of(st.none(), st.integers(0, 10**13))
_records = st.builds(
    make_record,
    institucion=_text, organismo_responsable=_text, expediente=_text,
    fecha=st.dates(dt.date(2014, 1, 1), dt.date(2024, 12, 31)),
    tipo=st.sampled_from(NoticeKind), naturaleza=st.sampled_from(Naturaleza), objeto=_text,
    procedimiento=st.one_of(st.none(), _text), ambito_geografico=st.one_of(st.none(), _text),
    materias_cpv=st.lists(_item, max_size=3).map(tuple),
    codigos_cpv=st.lists(st.integers(0, 99_999_999), max_size=3).map(tuple),
    valor_estimado_licitacion=_money, valor_oferta_adjudicada=_money,
    nombre_adjudicatario=st.one_of(st.none(), _text), enlace_html=_text,
)


@settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.lists(_records, max_size=8))
def test_round_trip_property(tmp_path, recs):
    path = tmp_path / "rt.csv"
    write_csv(recs, path)
    assert read_csv(path) == recs


def test_shuffled_header(tmp_path):
    cols = list(COLUMNS)
    cols[0], cols[1] = cols[1], cols[0]
    (tmp_path / "x.csv").write_text(",".join(cols) + "\n", encoding="utf-8")
    with pytest.raises(SchemaMismatchError):
        read_csv(tmp_path / "x.csv")


def test_strict_reader_rejects_bad_row(tmp_path):
    write_csv([make_record()], tmp_path / "x.csv")
    text = (tmp_path / "x.csv").read_text(encoding="utf-8").replace('"250000.00"', '"250.000,00"')
    (tmp_path / "x.csv").write_text(text, encoding="utf-8")
    with pytest.raises(RowParseError):
        read_csv(tmp_path / "x.csv")


def test_analytical_layout_round_trip(tmp_path):
    rec = make_record(valor_estimado_licitacion=None, materias_cpv=(), codigos_cpv=())
    write_csv([rec], tmp_path / "sub.csv", columns=ANALYTICAL_COLUMNS)
    header = (tmp_path / "sub.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header.count(",") == 11
    assert read_csv(tmp_path / "sub.csv") == [rec]


def test_tolerant_reader_published_style(tmp_path):
    """Semicolon-delimited, BOM, row-index column, Spanish decimals, NA cells."""
    rows = [
        ";" + ";".join(COLUMNS),
        '1;Ministerio de Fomento;ADIF PRESIDENCIA;E-1;03/01/2014;Contratación;Obras;Vía;Abierto;'
        'Andalucía;Trabajos;45233142-6, 45112730-1;NA;1.234.567,89;ACME SL;https://x/1',
        '2;Ministerio de Fomento;ADIF PRESIDENCIA;E-2;2014-01-03;Licitación;Servicios;Limpieza;NA;'
        'NA;NA;NA;450.000,00;NA;NA;https://x/2',
        '3;Ministerio de Fomento;ADIF;E-3;fecha rota;Licitación;Obras;x;NA;NA;NA;NA;NA;NA;NA;https://x/3',
        '4;Ministerio;ADIF;E-4;2014-01-03;Contratación;Obras;x;NA;NA;NA;NA;1,2,3;X SL;https://x/4',
    ]
    path = tmp_path / "published.csv"
    path.write_text("﻿" + "\n".join(rows) + "\n", encoding="utf-8")
    errors = []
    recs = read_csv(DatasetFile(path), tolerant=True, errors=errors)
    assert len(recs) == 2
    assert recs[0].valor_oferta_adjudicada == 123456789
    assert recs[0].codigos_cpv == (45233142, 45112730)
    assert recs[0].fecha == dt.date(2014, 1, 3)
    assert recs[1].valor_estimado_licitacion == 45000000 and recs[1].procedimiento is None
    assert sorted(e.line for e in errors) == [4, 5]


def test_tolerant_reader_dot_decimal(tmp_path):
    write_csv([make_record(valor_oferta_adjudicada=123456)], tmp_path / "x.csv")
    text = (tmp_path / "x.csv").read_text(encoding="utf-8").replace('"1234.56"', '"1.23456e3"')
    (tmp_path / "x.csv").write_text(text, encoding="utf-8")
    assert read_csv(tmp_path / "x.csv", tolerant=True)[0].valor_oferta_adjudicada == 123456


# -- OCDS ------------------------------------------------------------------------------

def test_award_release():
    (rel,) = build_releases([make_record()])
    doc = rel.to_json()
    assert doc["tag"] == ["award"]
    assert doc["awards"][0]["value"] == {"amount": 250000.0, "currency": "EUR"}
    assert doc["awards"][0]["suppliers"][0]["name"] == "ACME SL"
    assert doc["tender"]["items"][0]["classification"] == {"scheme": "CPV", "id": "45233142"}
    assert doc["ocid"].startswith("ocds-boeetl-")


def test_tender_release_has_no_supplier():
    rec = make_record(tipo=NoticeKind.LICITACION, valor_oferta_adjudicada=None,
                      nombre_adjudicatario=None, valor_estimado_licitacion=5000000)
    doc = build_releases([rec])[0].to_json()
    assert doc["tag"] == ["tender"] and "awards" not in doc
    assert all("supplier" not in p["roles"] for p in doc["parties"])
    assert doc["tender"]["value"]["amount"] == 50000.0


def test_award_without_supplier_is_invalid():
    bad = make_record(nombre_adjudicatario=None)
    with pytest.raises(ValidationError):
        build_releases([bad])
    skipped = []
    assert build_releases([bad, make_record()], skip_invalid=True, skipped=skipped)
    assert len(skipped) == 1


def test_ocid_distinct_per_supplier():
    a = make_record(nombre_adjudicatario="A SL")
    b = make_record(nombre_adjudicatario="B SL")
    assert mint_ocid(a) != mint_ocid(b)
    assert mint_ocid(a) == mint_ocid(make_record(nombre_adjudicatario="A SL", objeto="otro"))


def test_release_ordering_and_ids():
    recs = [make_record(fecha=dt.date(2021, 1, 1), expediente="Z"),
            make_record(fecha=dt.date(2020, 1, 1), expediente="Y"),
            make_record(fecha=dt.date(2020, 1, 1), expediente="Y")]
    rels = build_releases(recs)
    assert [r.release_date for r in rels] == sorted(r.release_date for r in rels)
    assert len({r.release_id for r in rels}) == 3
    pkg = release_package(rels)
    assert pkg["publishedDate"].startswith("2021-01-01")
    assert set(pkg) >= {"uri", "publishedDate", "publisher", "releases"}


def test_export_is_byte_identical(tmp_path):
    recs = [make_record(expediente=f"E{i}", nombre_adjudicatario=f"S{i % 3}") for i in range(20)]
    export_ocds(recs, tmp_path / "a.json")
    export_ocds(list(reversed(recs)), tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert len(json.loads((tmp_path / "a.json").read_text(encoding="utf-8"))["releases"]) == 20
