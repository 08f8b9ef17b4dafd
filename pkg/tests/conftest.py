import datetime as dt
import os
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import pytest

from boe_procurement.records import Naturaleza, NoticeKind, ProcurementRecord

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"


def make_record(**overrides) -> ProcurementRecord:
    base = dict(
        institucion="MINISTERIO DE FOMENTO",
        organismo_responsable="ADIF PRESIDENCIA",
        expediente="EXP-1",
        fecha=dt.date(2020, 5, 4),
        tipo=NoticeKind.CONTRATACION,
        naturaleza=Naturaleza.OBRAS,
        objeto="Obra de prueba",
        procedimiento="ABIERTO",
        ambito_geografico="COMUNIDAD DE MADRID",
        materias_cpv=("Trabajos de construcción",),
        codigos_cpv=(45233142,),
        valor_estimado_licitacion=None,
        valor_oferta_adjudicada=250_000_00,
        nombre_adjudicatario="ACME SL",
        enlace_html="https://www.boe.es/diario_boe/txt.php?id=BOE-B-2020-1",
    )
    base.update(overrides)
    return ProcurementRecord(**base)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def record_factory():
    return make_record


@pytest.fixture(scope="session")
def dataset_csv():
    path = os.environ.get("BOE_DATASET_CSV")
    if not path or not Path(path).exists():
        pytest.skip("BOE_DATASET_CSV not set; full-data checks need the published CSV")
    return Path(path)


def _announcement(n, kind, awardees=(), estimated=None, naturaleza="Obras"):
    from boe_procurement.parse import ParsedAnnouncement
    from boe_procurement.records import AnnouncementRef

    ident = f"BOE-B-2020-{n}"
    url = f"https://www.boe.es/diario_boe/txt.php?id={ident}"
    raw = {
        "Institucion": "Ministerio de Fomento",
        "Organismo_responsable": "ADIF - Presidencia",
        "Expediente": f"EXP-{n}",
        "Fecha": "4 de mayo de 2020",
        "Tipo": "Formalización contrato" if kind is NoticeKind.CONTRATACION else "Licitación",
        "Naturaleza": naturaleza,
        "Objeto": f"Objeto {n}",
        "Procedimiento": "Abierto",
        "Ambito_geografico": "Comunidad de Madrid",
        "Materias_CPV": "Trabajos de construcción",
        "Codigos_CPV": "45233142-6",
        "Enlace_HTML": url,
    }
    if estimated:
        raw["valor_estimado_licitacion"] = estimated
    ref = AnnouncementRef(ident, dt.date(2020, 5, 4), "V-A", kind, url)
    return ParsedAnnouncement(ref=ref, raw_fields=raw, awardees=list(awardees))


def ledger_announcements():
    """Nine announcements that disaggregate into ten rows.

    Hand count: two tenders (2 rows), one two-awardee award (2 rows),
    six single awards (6 rows). Awards at 0,00 and 500,00 EUR are the
    zero-value and sub-threshold removals; 1.000,00 EUR sits on the
    threshold and is kept. Expected output after filtering: 8 rows.
    """
    C, L = NoticeKind.CONTRATACION, NoticeKind.LICITACION
    return [
        _announcement(1, L, estimated="200.000,00"),
        _announcement(2, C, [("Acme Obras, S.L.", "150.000,00")]),
        _announcement(3, C, [("Construcciones Norte, S.A.", "300.000,00"),
                             ("Vías del Sur, S.L.", "120.000,00")]),
        _announcement(4, C, [("Gestiones Cero, S.L.", "0,00")], naturaleza="Servicios"),
        _announcement(5, C, [("Pequeños Servicios, S.L.", "500,00")], naturaleza="Servicios"),
        _announcement(6, C, [("Umbral Exacto, S.L.", "1.000,00")], naturaleza="Servicios"),
        _announcement(7, L, estimated="80.000,00", naturaleza="Suministros"),
        _announcement(8, C, [("Grandes Obras, S.A.", "2.500.000,00")]),
        _announcement(9, C, [("Tribunal Administrativo Central de Recursos Contractuales", "10.000,00")],
                      naturaleza="Servicios"),
    ]


class FixtureServer:
    """Serves the fixture corpus with the gazette's URL layout."""

    def __init__(self):
        self.hits = []
        self.starts = []
        self.fail = {}  # path -> status
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_GET(self):
                server.starts.append(time.monotonic())
                server.hits.append(self.path)
                status = server.fail.get(self.path)
                if status:
                    self.send_response(status)
                    self.end_headers()
                    return
                body = server.lookup(self.path)
                if body is None:
                    self.send_response(404)
                    self.end_headers()
                    return
                self.send_response(200)
                self.send_header("Content-Type", "text/html; charset=utf-8")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.port = self.httpd.server_address[1]
        self.thread = threading.Thread(target=self.httpd.serve_forever,
                                       kwargs={"poll_interval": 0.05}, daemon=True)
        self.thread.start()

    def lookup(self, path):
        url = urlparse(path)
        parts = url.path.strip("/").split("/")
        if parts[:2] == ["boe", "dias"] and len(parts) == 5:
            f = FIXTURES / "index" / f"{parts[2]}-{parts[3]}-{parts[4]}.html"
        elif url.path == "/diario_boe/txt.php":
            ident = parse_qs(url.query).get("id", [""])[0]
            f = FIXTURES / "doc" / f"{ident}.html"
        else:
            return None
        return f.read_bytes() if f.exists() else None

    @property
    def template(self):
        return f"http://127.0.0.1:{self.port}/boe/dias/{{YYYY}}/{{MM}}/{{DD}}/"

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


# -- acceptance summary ----------------------------------------------------------------

_CRITERIA = {}


def _criterion(nodeid):
    if "test_acceptance.py::test_criterion_" not in nodeid:
        return None
    return int(nodeid.split("test_criterion_")[1][:2])


def pytest_runtest_logreport(report):
    n = _criterion(report.nodeid)
    if n is None:
        return
    name = report.nodeid.split("::")[-1]
    if report.failed:
        _CRITERIA[n] = ("FAIL", name)
    elif report.skipped:
        _CRITERIA.setdefault(n, ("SKIP", name))
    elif report.when == "call":
        _CRITERIA.setdefault(n, ("PASS", name))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, name = _CRITERIA[n]
        terminalreporter.write_line(f"{status} criterion {n:2d}  {name}")
