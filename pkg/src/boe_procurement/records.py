"""Domain types shared across the pipeline stages."""
from __future__ import annotations

import datetime as dt
import enum
import unicodedata
from dataclasses import dataclass, field
from typing import Optional

#: Column order of the published dataset.
COLUMNS = (
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
    "Codigos_CPV",
    "valor_estimado_licitacion",
    "valor_oferta_adjudicada",
    "nombre_adjudicatario",
    "Enlace_HTML",
)

#: Columns that only make sense for tenders; dropped from analytical views.
TENDER_ONLY_COLUMNS = ("valor_estimado_licitacion", "Materias_CPV", "Codigos_CPV")

ANALYTICAL_COLUMNS = tuple(c for c in COLUMNS if c not in TENDER_ONLY_COLUMNS)

DATE_MIN = dt.date(2014, 1, 1)
DATE_MAX = dt.date(2024, 12, 31)


def fold(text: str) -> str:
    """Lowercase and strip diacritics, for tolerant label matching."""
    decomposed = unicodedata.normalize("NFKD", text)
    return "".join(c for c in decomposed if not unicodedata.combining(c)).lower().strip()


class _LabelledEnum(str, enum.Enum):
    @classmethod
    def from_label(cls, label: str):
        key = fold(label).replace(" ", "").replace("_", "")
        for member in cls:
            if key in member._aliases():
                return member
        raise ValueError(f"unknown {cls.__name__} label: {label!r}")

    def _aliases(self) -> set[str]:
        names = {fold(self.value).replace(" ", ""), self.name.lower().replace("_", "")}
        return names | set(_EXTRA_ALIASES.get(self.name, ()))


class NoticeKind(_LabelledEnum):
    LICITACION = "Licitación"
    CONTRATACION = "Contratación"


class Naturaleza(_LabelledEnum):
    OBRAS = "Obras"
    SERVICIOS = "Servicios"
    SUMINISTROS = "Suministros"
    GESTION_SERVICIOS_PUBLICOS = "Gestión de Servicios Públicos"
    OTROS = "Otros"


_EXTRA_ALIASES = {
    "LICITACION": ("tender", "licitaciones"),
    "CONTRATACION": ("award", "formalizacion", "formalizaciones", "adjudicacion"),
    "OBRAS": ("works", "obra"),
    "SERVICIOS": ("services", "servicio"),
    "SUMINISTROS": ("supplies", "goods", "suministro"),
    "GESTION_SERVICIOS_PUBLICOS": (
        "gestionserviciospublicos",
        "gestiondeserviciospublicos",
        "gestiondeservicios",
    ),
    "OTROS": ("other", "others", "otro"),
}


@dataclass(frozen=True)
class AnnouncementRef:
    announcement_id: str
    publication_date: dt.date
    section: str
    notice_kind: NoticeKind
    url: str


@dataclass(frozen=True)
class ProcurementRecord:
    """One row of the dataset; monetary values are integer euro cents."""

    institucion: str
    organismo_responsable: str
    expediente: str
    fecha: dt.date
    tipo: NoticeKind
    naturaleza: Naturaleza
    objeto: str
    procedimiento: Optional[str] = None
    ambito_geografico: Optional[str] = None
    materias_cpv: tuple[str, ...] = ()
    codigos_cpv: tuple[int, ...] = ()
    valor_estimado_licitacion: Optional[int] = None
    valor_oferta_adjudicada: Optional[int] = None
    nombre_adjudicatario: Optional[str] = None
    enlace_html: str = ""
    # Annotation only: never persisted, never part of equality.
    non_contractor: bool = field(default=False, compare=False)

    @property
    def year(self) -> int:
        return self.fecha.year

    def column(self, name: str):
        """Value of the dataset column ``name`` (e.g. ``"Ambito_geografico"``)."""
        if name == "Ano":
            return self.year
        return getattr(self, _ATTR_BY_COLUMN[name])


_ATTR_BY_COLUMN = {c: c.lower() for c in COLUMNS}
