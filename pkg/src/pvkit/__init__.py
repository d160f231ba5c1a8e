"""Signal detection and signal-strength estimation for spontaneous reporting data."""

from . import bcpnn, disprop, ebayes, lrt, simulate, tables
from .tables import (
    OTHER_AES,
    OTHER_DRUGS,
    ContingencyTable,
    build_from_aggregates,
    build_from_reports,
    expected_baseline,
    filter_aes_by_keywords,
    read_table_csv,
    write_table_csv,
)

__version__ = "0.1.0"

__all__ = [
    "OTHER_AES",
    "OTHER_DRUGS",
    "ContingencyTable",
    "bcpnn",
    "build_from_aggregates",
    "build_from_reports",
    "disprop",
    "ebayes",
    "expected_baseline",
    "filter_aes_by_keywords",
    "lrt",
    "read_table_csv",
    "simulate",
    "tables",
    "write_table_csv",
]
