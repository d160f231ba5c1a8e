"""
Synthetic report tables with known truth, and decision scoring.

A scenario fixes the row marginals (AE reporting volumes), the column totals
(drug reporting volumes) and a signal strength per cell. The baseline is
``E_ij = col_total_j * row_marginal_i / sum(row_marginals)``; cells with
``lambda = 1`` are nulls.

Randomness comes from keyed Philox streams, one per (seed, table, column), so
a table depends only on the scenario and its index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import MalformedInput
from .rng import stream
from .tables import OTHER_DRUGS, ContingencyTable

__all__ = [
    "SimScenario",
    "MetricReport",
    "gen_null_conditional",
    "gen_poisson_table",
    "score",
    "load_scenario",
]

_SIMULATION = 2  # stream domain, distinct from the Monte Carlo nulls


@dataclass(frozen=True, eq=False)
class SimScenario:
    """Table dimensions, marginals and planted signal strengths.

    ``signal_map`` is a dense ``(I, J)`` array of true ``lambda``. When
    ``reference_col`` is set, the last column is the ``other drugs``
    reference and should carry ``lambda = 1``.
    """

    I: int
    J: int
    row_marginals: np.ndarray
    col_totals: np.ndarray
    signal_map: np.ndarray | None = None
    p0: float = 0.0
    seed: int = 0
    reference_col: bool = False

    def __post_init__(self):
        rows = np.asarray(self.row_marginals, dtype=np.float64).ravel()
        cols = np.asarray(self.col_totals, dtype=np.float64).ravel()
        if self.I < 1 or self.J < 1:
            raise ValueError("I and J must be positive")
        if rows.size != self.I or cols.size != self.J:
            raise ValueError("marginal lengths must match I and J")
        if (rows < 0).any() or rows.sum() <= 0:
            raise ValueError("row marginals must be nonnegative with a positive sum")
        if (cols < 0).any():
            raise ValueError("column totals must be nonnegative")
        lam = np.ones((self.I, self.J)) if self.signal_map is None else np.asarray(self.signal_map, dtype=np.float64)
        if lam.shape != (self.I, self.J):
            raise ValueError(f"signal_map must have shape ({self.I}, {self.J})")
        if (lam < 0).any() or not np.isfinite(lam).all():
            raise ValueError("signal strengths must be finite and nonnegative")
        if not 0.0 <= self.p0 <= 1.0:
            raise ValueError("p0 must lie in [0, 1]")
        object.__setattr__(self, "row_marginals", rows)
        object.__setattr__(self, "col_totals", cols)
        object.__setattr__(self, "signal_map", lam)

    @property
    def row_proportions(self) -> np.ndarray:
        return self.row_marginals / self.row_marginals.sum()

    @property
    def expected(self) -> np.ndarray:
        return np.outer(self.row_proportions, self.col_totals)

    @property
    def truth(self) -> np.ndarray:
        """Cells with a planted signal (``lambda > 1``)."""
        return self.signal_map > 1.0

    def labels(self):
        aes = [f"AE{i + 1}" for i in range(self.I)]
        drugs = [f"D{j + 1}" for j in range(self.J)]
        if self.reference_col:
            drugs[-1] = OTHER_DRUGS
        return aes, drugs

    def to_dict(self) -> dict:
        lam = self.signal_map
        sparse = [[int(i), int(j), float(lam[i, j])] for i, j in zip(*np.nonzero(lam != 1.0))]
        return {
            "I": self.I,
            "J": self.J,
            "row_marginals": self.row_marginals.tolist(),
            "col_totals": self.col_totals.tolist(),
            "signal_map": sparse,
            "p0": self.p0,
            "seed": self.seed,
            "reference_col": self.reference_col,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "SimScenario":
        try:
            I, J = int(d["I"]), int(d["J"])
            lam = np.ones((I, J))
            for entry in d.get("signal_map", []):
                i, j, value = entry
                if not (0 <= int(i) < I and 0 <= int(j) < J):
                    raise ValueError(f"signal_map entry {entry} is outside the {I}x{J} table")
                lam[int(i), int(j)] = float(value)
            return cls(
                I=I,
                J=J,
                row_marginals=d["row_marginals"],
                col_totals=d["col_totals"],
                signal_map=lam,
                p0=float(d.get("p0", 0.0)),
                seed=int(d.get("seed", 0)),
                reference_col=bool(d.get("reference_col", False)),
            )
        except KeyError as exc:
            raise MalformedInput(f"scenario is missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise MalformedInput(f"invalid scenario: {exc}") from None


def load_scenario(source) -> SimScenario:
    """Read a scenario from a JSON file path or an open file."""
    try:
        if hasattr(source, "read"):
            d = json.load(source)
        else:
            with open(source, encoding="utf-8") as fh:
                d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedInput(f"scenario is not valid JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(d, dict):
        raise MalformedInput("scenario JSON must be an object")
    return SimScenario.from_dict(d)


def _table(scenario, counts):
    aes, drugs = scenario.labels()
    ref = scenario.J - 1 if scenario.reference_col else None
    return ContingencyTable(aes, drugs, counts, reference_col_index=ref)


def gen_null_conditional(scenario: SimScenario, table_index: int = 0) -> ContingencyTable:
    """Each column drawn Multinomial(col_total_j, row proportions)."""
    totals = scenario.col_totals
    if not np.all(totals == np.round(totals)):
        raise ValueError("column totals must be integers for multinomial sampling")
    p = scenario.row_proportions
    counts = np.empty((scenario.I, scenario.J), dtype=np.int64)
    for j in range(scenario.J):
        rng = stream(scenario.seed, _SIMULATION, table_index, j)
        counts[:, j] = rng.multinomial(int(totals[j]), p)
    return _table(scenario, counts)


def gen_poisson_table(scenario: SimScenario, table_index: int = 0) -> ContingencyTable:
    """Cells drawn ZIP(lambda_ij * E_ij, p0); ``p0 = 0`` is plain Poisson."""
    theta = scenario.signal_map * scenario.expected
    counts = np.empty((scenario.I, scenario.J), dtype=np.int64)
    for j in range(scenario.J):
        rng = stream(scenario.seed, _SIMULATION, table_index, j)
        zero = rng.random(scenario.I) < scenario.p0
        counts[:, j] = np.where(zero, 0, rng.poisson(theta[:, j]))
    return _table(scenario, counts)


@dataclass(frozen=True)
class MetricReport:
    tp: int
    fp: int
    fn: int
    tn: int
    fdr: float = field(init=False)
    sensitivity: float = field(init=False)
    type_i_error: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "fdr", self.fp / max(self.tp + self.fp, 1))
        object.__setattr__(self, "sensitivity", self.tp / max(self.tp + self.fn, 1))
        object.__setattr__(self, "type_i_error", self.fp / max(self.fp + self.tn, 1))

    def __add__(self, other: "MetricReport") -> "MetricReport":
        return MetricReport(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    def to_dict(self) -> dict:
        return {
            "fdr": self.fdr,
            "sensitivity": self.sensitivity,
            "type_i_error": self.type_i_error,
            "counts": {"TP": self.tp, "FP": self.fp, "FN": self.fn, "TN": self.tn},
        }


def score(decisions, truth) -> MetricReport:
    """Confusion counts of boolean ``decisions`` against boolean ``truth``."""
    d = np.asarray(decisions, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if d.shape != t.shape:
        raise ValueError(f"decisions {d.shape} and truth {t.shape} differ in shape")
    return MetricReport(
        tp=int((d & t).sum()),
        fp=int((d & ~t).sum()),
        fn=int((~d & t).sum()),
        tn=int((~d & ~t).sum()),
    )
