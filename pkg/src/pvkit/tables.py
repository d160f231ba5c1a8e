"""
AE x drug contingency tables.

Rows are adverse events, columns are drugs. A table may carry one reference
row (``other AEs``) and one reference column (``other drugs``) that collapse
everything outside the events and drugs under study; they supply the
background mass used to estimate expected counts.
"""

from __future__ import annotations

import csv
import io
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateTable,
    DisjointnessViolation,
    EmptyInput,
    MalformedInput,
    NoMatchingRows,
)

__all__ = [
    "OTHER_AES",
    "OTHER_DRUGS",
    "ReportRecord",
    "AggregateRecord",
    "ContingencyTable",
    "Collapsed2x2",
    "BaselineMatrix",
    "build_from_reports",
    "build_from_aggregates",
    "filter_aes_by_keywords",
    "collapse_2x2",
    "expected_baseline",
    "read_reports_csv",
    "read_aggregates_csv",
    "read_table_csv",
    "write_table_csv",
    "table_to_csv_text",
]

OTHER_AES = "other AEs"
OTHER_DRUGS = "other drugs"


@dataclass(frozen=True)
class ReportRecord:
    """One (report, drug, AE) occurrence from a raw report file.

    ``primary_suspect`` is ``None`` when the source does not carry the flag.
    """

    report_id: str
    drug: str
    ae: str
    primary_suspect: bool | None = None

    def __post_init__(self):
        if not self.drug or not self.ae:
            raise ValueError("drug and ae labels must be non-empty")


@dataclass(frozen=True)
class AggregateRecord:
    ae: str
    drug: str
    count: int

    def __post_init__(self):
        if self.count < 0:
            raise ValueError(f"negative count for ({self.ae}, {self.drug})")


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    """I x J matrix of report counts with axis labels.

    Parameters
    ----------
    ae_labels, drug_labels : sequence of str
        Unique row and column labels.
    counts : array_like of int, shape (I, J)
        Nonnegative report counts. Stored as a read-only int64 array.
    reference_row_index, reference_col_index : int, optional
        Position of the ``other AEs`` row / ``other drugs`` column.
    """

    ae_labels: tuple
    drug_labels: tuple
    counts: np.ndarray
    reference_row_index: int | None = None
    reference_col_index: int | None = None
    warnings: tuple = field(default=(), compare=False)

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64, copy=True)
        if counts.ndim != 2:
            raise ValueError("counts must be a 2-d array")
        ae_labels = tuple(str(a) for a in self.ae_labels)
        drug_labels = tuple(str(d) for d in self.drug_labels)
        if counts.shape != (len(ae_labels), len(drug_labels)):
            raise ValueError(
                f"counts shape {counts.shape} does not match labels "
                f"({len(ae_labels)}, {len(drug_labels)})"
            )
        if counts.shape[0] < 1 or counts.shape[1] < 1:
            raise ValueError("table needs at least one row and one column")
        if (counts < 0).any():
            raise ValueError("counts must be nonnegative")
        if len(set(ae_labels)) != len(ae_labels):
            raise ValueError("duplicate AE labels")
        if len(set(drug_labels)) != len(drug_labels):
            raise ValueError("duplicate drug labels")
        for name, idx, size in (
            ("reference_row_index", self.reference_row_index, counts.shape[0]),
            ("reference_col_index", self.reference_col_index, counts.shape[1]),
        ):
            if idx is not None and not 0 <= idx < size:
                raise ValueError(f"{name}={idx} out of range")
        counts.setflags(write=False)
        row = counts.sum(axis=1)
        col = counts.sum(axis=0)
        row.setflags(write=False)
        col.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "ae_labels", ae_labels)
        object.__setattr__(self, "drug_labels", drug_labels)
        object.__setattr__(self, "warnings", tuple(self.warnings))
        object.__setattr__(self, "_row_totals", row)
        object.__setattr__(self, "_col_totals", col)
        object.__setattr__(self, "_grand_total", int(counts.sum()))

    @property
    def shape(self):
        return self.counts.shape

    @property
    def row_totals(self) -> np.ndarray:
        """N_i. for every AE row."""
        return self._row_totals

    @property
    def col_totals(self) -> np.ndarray:
        """N_.j for every drug column."""
        return self._col_totals

    @property
    def grand_total(self) -> int:
        return self._grand_total

    def ae_index(self, label: str) -> int:
        return self.ae_labels.index(label)

    def drug_index(self, label: str) -> int:
        return self.drug_labels.index(label)

    def non_reference_columns(self) -> list[int]:
        return [j for j in range(self.shape[1]) if j != self.reference_col_index]

    def non_reference_rows(self) -> list[int]:
        return [i for i in range(self.shape[0]) if i != self.reference_row_index]

    def transpose(self) -> "ContingencyTable":
        return ContingencyTable(
            ae_labels=self.drug_labels,
            drug_labels=self.ae_labels,
            counts=self.counts.T,
            reference_row_index=self.reference_col_index,
            reference_col_index=self.reference_row_index,
        )

    def __eq__(self, other):
        if not isinstance(other, ContingencyTable):
            return NotImplemented
        return (
            self.ae_labels == other.ae_labels
            and self.drug_labels == other.drug_labels
            and np.array_equal(self.counts, other.counts)
            and self.reference_row_index == other.reference_row_index
            and self.reference_col_index == other.reference_col_index
        )

    __hash__ = None

    def __repr__(self):
        i, j = self.shape
        return f"ContingencyTable({i} AEs x {j} drugs, N={self.grand_total})"


@dataclass(frozen=True)
class Collapsed2x2:
    """The four cells of the 2x2 table for one AE-drug pair.

    n11 drug & AE, n12 other drugs & AE, n21 drug & other AEs,
    n22 other drugs & other AEs.
    """

    n11: int
    n12: int
    n21: int
    n22: int

    @property
    def total(self) -> int:
        return self.n11 + self.n12 + self.n21 + self.n22

    def as_tuple(self):
        return (self.n11, self.n12, self.n21, self.n22)


@dataclass(frozen=True, eq=False)
class BaselineMatrix:
    """Expected counts under row/column independence."""

    expected: np.ndarray

    def ratio(self, table: ContingencyTable) -> np.ndarray:
        """Observed over expected, NaN where the expectation is zero."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.expected > 0, table.counts / self.expected, np.nan)


def _emit(messages: list[str], message: str):
    messages.append(message)
    warnings.warn(message, stacklevel=3)


def build_from_reports(
    records: Sequence[ReportRecord], drugs_of_interest: Sequence[str]
) -> ContingencyTable:
    """Tabulate raw report records into an AE x drug table.

    One column per drug of interest plus a trailing ``other drugs`` column
    pooling every other drug. Each distinct (report, drug, AE) triple counts
    once. If any record carries a primary-suspect flag, only flagged records
    are used.
    """
    if not records:
        raise EmptyInput("no report records")
    if not drugs_of_interest:
        raise EmptyInput("no drugs of interest")
    interest = list(dict.fromkeys(drugs_of_interest))
    if OTHER_DRUGS in interest:
        raise ValueError(f"'{OTHER_DRUGS}' is reserved for the reference column")

    if any(r.primary_suspect is not None for r in records):
        records = [r for r in records if r.primary_suspect]
        if not records:
            raise EmptyInput("no records flagged as primary suspect")

    triples = {(r.report_id, r.drug, r.ae) for r in records}
    ae_labels = sorted({ae for _, _, ae in triples})
    row_of = {ae: i for i, ae in enumerate(ae_labels)}
    col_of = {d: j for j, d in enumerate(interest)}
    ref = len(interest)
    counts = np.zeros((len(ae_labels), len(interest) + 1), dtype=np.int64)
    for _, drug, ae in triples:
        counts[row_of[ae], col_of.get(drug, ref)] += 1

    notes: list[str] = []
    seen = {drug for _, drug, _ in triples}
    for drug in interest:
        if drug not in seen:
            _emit(notes, f"drug of interest {drug!r} absent from records; zero column kept")
    return ContingencyTable(
        ae_labels=ae_labels,
        drug_labels=interest + [OTHER_DRUGS],
        counts=counts,
        reference_col_index=ref,
        warnings=tuple(notes),
    )


def build_from_aggregates(
    aggs: Sequence[AggregateRecord],
    drugs_of_interest: Sequence[str],
    reference_drugs: Sequence[str],
) -> ContingencyTable:
    """Tabulate per-drug AE counts into a table with one pooled reference column.

    Aggregate counts for drugs outside both lists are ignored. Repeated
    (ae, drug) entries are summed with a warning.
    """
    if not drugs_of_interest:
        raise EmptyInput("no drugs of interest")
    interest = list(dict.fromkeys(drugs_of_interest))
    reference = list(dict.fromkeys(reference_drugs))
    overlap = sorted(set(interest) & set(reference))
    if overlap:
        raise DisjointnessViolation(
            f"drugs listed both as interest and reference: {', '.join(overlap)}"
        )
    if OTHER_DRUGS in interest:
        raise ValueError(f"'{OTHER_DRUGS}' is reserved for the reference column")

    notes: list[str] = []
    seen = Counter((a.ae, a.drug) for a in aggs)
    for (ae, drug), k in sorted(seen.items()):
        if k > 1:
            _emit(notes, f"{k} aggregate entries for ({ae}, {drug}); summed")

    ae_labels = sorted({a.ae for a in aggs})
    row_of = {ae: i for i, ae in enumerate(ae_labels)}
    col_of = {d: j for j, d in enumerate(interest)}
    ref_set = set(reference)
    ref = len(interest)
    counts = np.zeros((len(ae_labels), len(interest) + 1), dtype=np.int64)
    for a in aggs:
        if a.drug in col_of:
            counts[row_of[a.ae], col_of[a.drug]] += a.count
        elif a.drug in ref_set:
            counts[row_of[a.ae], ref] += a.count

    present = {a.drug for a in aggs}
    for drug in interest:
        if drug not in present:
            _emit(notes, f"drug of interest {drug!r} absent from aggregates; zero column kept")
    if not ae_labels:
        raise EmptyInput("no aggregate records")
    return ContingencyTable(
        ae_labels=ae_labels,
        drug_labels=interest + [OTHER_DRUGS],
        counts=counts,
        reference_col_index=ref,
        warnings=tuple(notes),
    )


def filter_aes_by_keywords(
    table: ContingencyTable, keywords: Iterable[str]
) -> ContingencyTable:
    """Keep AE rows whose label contains any keyword; pool the rest.

    Matching is a case-insensitive substring test. Unmatched rows, and any
    existing ``other AEs`` row, are summed into a trailing ``other AEs`` row,
    which is kept even when it is all zeros.
    """
    keys = [k.casefold() for k in keywords if k and k.strip()]
    if not keys:
        raise EmptyInput("no keywords")
    keep, pool = [], []
    for i, label in enumerate(table.ae_labels):
        lowered = label.casefold()
        if i != table.reference_row_index and any(k in lowered for k in keys):
            keep.append(i)
        else:
            pool.append(i)
    if not keep:
        raise NoMatchingRows("no AE label matches any keyword")
    other = table.counts[pool].sum(axis=0, keepdims=True)
    counts = np.vstack([table.counts[keep], other])
    return ContingencyTable(
        ae_labels=[table.ae_labels[i] for i in keep] + [OTHER_AES],
        drug_labels=table.drug_labels,
        counts=counts,
        reference_row_index=len(keep),
        reference_col_index=table.reference_col_index,
        warnings=table.warnings,
    )


def collapse_2x2(table: ContingencyTable, ae_index: int, drug_index: int) -> Collapsed2x2:
    n_i, n_j = table.shape
    if not (0 <= ae_index < n_i and 0 <= drug_index < n_j):
        raise IndexError(f"cell ({ae_index}, {drug_index}) outside table of shape {table.shape}")
    nij = int(table.counts[ae_index, drug_index])
    ni = int(table.row_totals[ae_index])
    nj = int(table.col_totals[drug_index])
    n = table.grand_total
    return Collapsed2x2(nij, ni - nij, nj - nij, n - ni - nj + nij)


def expected_baseline(table: ContingencyTable) -> BaselineMatrix:
    """E_ij = N_i. N_.j / N.. for every cell."""
    n = table.grand_total
    if n <= 0:
        raise DegenerateTable("grand total is zero")
    row = table.row_totals.astype(np.float64)
    col = table.col_totals.astype(np.float64)
    expected = np.outer(row, col) / float(n)
    expected.setflags(write=False)
    return BaselineMatrix(expected=expected)


# -- CSV formats -------------------------------------------------------------


def _open_rows(source):
    """Yield (line_number, row dict) from a path or text stream."""
    if isinstance(source, (str, Path)):
        handle = open(source, newline="", encoding="utf-8")
        close = True
    else:
        handle, close = source, False
    try:
        reader = csv.DictReader(handle)
        fields = [f.strip() for f in (reader.fieldnames or [])]
        reader.fieldnames = fields
        yield fields
        for row in reader:
            yield reader.line_num, row
    finally:
        if close:
            handle.close()


def _require(fields, needed, kind):
    missing = [f for f in needed if f not in fields]
    if missing:
        raise MalformedInput(f"{kind} CSV header missing {', '.join(missing)}", line=1)


_TRUE = {"1", "true", "t", "yes", "y", "ps", "primary", "primary suspect"}
_FALSE = {"0", "false", "f", "no", "n", ""}


def read_reports_csv(source) -> list[ReportRecord]:
    """Read ``report_id,drug,ae`` rows, with an optional ``primary_suspect`` column."""
    rows = _open_rows(source)
    fields = next(rows)
    _require(fields, ["report_id", "drug", "ae"], "report")
    flagged = "primary_suspect" in fields
    out = []
    for line, row in rows:
        if None in row or any(row.get(f) is None for f in ("report_id", "drug", "ae")):
            raise MalformedInput("wrong number of fields", line=line)
        drug, ae = row["drug"].strip(), row["ae"].strip()
        if not drug or not ae:
            raise MalformedInput("empty drug or ae label", line=line)
        flag = None
        if flagged:
            raw = (row.get("primary_suspect") or "").strip().casefold()
            if raw in _TRUE:
                flag = True
            elif raw in _FALSE:
                flag = False
            else:
                raise MalformedInput(f"unrecognised primary_suspect value {raw!r}", line=line)
        out.append(ReportRecord(row["report_id"].strip(), drug, ae, flag))
    return out


def read_aggregates_csv(source) -> list[AggregateRecord]:
    rows = _open_rows(source)
    fields = next(rows)
    _require(fields, ["ae", "drug", "count"], "aggregate")
    out = []
    for line, row in rows:
        if None in row or any(row.get(f) is None for f in ("ae", "drug", "count")):
            raise MalformedInput("wrong number of fields", line=line)
        try:
            count = int(row["count"].strip())
        except ValueError:
            raise MalformedInput(f"count {row['count']!r} is not an integer", line=line) from None
        if count < 0:
            raise MalformedInput("negative count", line=line)
        ae, drug = row["ae"].strip(), row["drug"].strip()
        if not ae or not drug:
            raise MalformedInput("empty drug or ae label", line=line)
        out.append(AggregateRecord(ae, drug, count))
    return out


def read_table_csv(source) -> ContingencyTable:
    """Read a table CSV: first column ``ae``, one column per drug."""
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_table_csv(fh)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedInput("empty table file", line=1) from None
    if not header or header[0].strip() != "ae":
        raise MalformedInput("first header field must be 'ae'", line=1)
    drugs = [h.strip() for h in header[1:]]
    if not drugs:
        raise MalformedInput("no drug columns", line=1)
    labels, rows = [], []
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != len(header):
            raise MalformedInput(
                f"expected {len(header)} fields, found {len(row)}", line=line
            )
        try:
            values = [int(v) for v in row[1:]]
        except ValueError:
            raise MalformedInput("non-integer count", line=line) from None
        if any(v < 0 for v in values):
            raise MalformedInput("negative count", line=line)
        labels.append(row[0].strip())
        rows.append(values)
    if not rows:
        raise MalformedInput("table has no rows", line=2)
    try:
        return ContingencyTable(
            ae_labels=labels,
            drug_labels=drugs,
            counts=np.array(rows, dtype=np.int64),
            reference_row_index=labels.index(OTHER_AES) if OTHER_AES in labels else None,
            reference_col_index=drugs.index(OTHER_DRUGS) if OTHER_DRUGS in drugs else None,
        )
    except ValueError as exc:
        raise MalformedInput(str(exc)) from None


def table_to_csv_text(table: ContingencyTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["ae", *table.drug_labels])
    for label, row in zip(table.ae_labels, table.counts):
        writer.writerow([label, *(int(v) for v in row)])
    return buf.getvalue()


def write_table_csv(table: ContingencyTable, path) -> None:
    Path(path).write_text(table_to_csv_text(table), encoding="utf-8")
