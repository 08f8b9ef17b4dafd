"""ETL and analysis toolkit for Spanish official-gazette procurement notices.

Stages: :mod:`fetch` downloads day indices and announcement pages,
:mod:`parse` extracts raw fields, :mod:`clean` builds typed records and
the cleaning ledger, :mod:`store` handles CSV and OCDS output, and
:mod:`analytics` reproduces the descriptive and inferential analyses.
"""
from .records import COLUMNS, Naturaleza, NoticeKind, ProcurementRecord

__version__ = "0.1.0"

__all__ = ["COLUMNS", "Naturaleza", "NoticeKind", "ProcurementRecord", "__version__"]
