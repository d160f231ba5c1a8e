"""
Frequentist screening of a small drug-event table
=================================================

Aggregate counts for two drugs of interest are pooled against a set of
reference drugs, then screened with PRR, ROR and the BCPNN information
component.
"""

import numpy as np

from pvkit import build_from_aggregates, expected_baseline
from pvkit.bcpnn import bcpnn_signals, ic
from pvkit.disprop import flag_signals, prr, ror
from pvkit.tables import AggregateRecord

# Hypothetical quarterly counts. Statin-B has an excess of muscle pain.
counts = {
    ("Myalgia", "Statin-A"): 40, ("Myalgia", "Statin-B"): 160, ("Myalgia", "Ref-1"): 300, ("Myalgia", "Ref-2"): 260,
    ("Headache", "Statin-A"): 55, ("Headache", "Statin-B"): 50, ("Headache", "Ref-1"): 900, ("Headache", "Ref-2"): 810,
    ("Nausea", "Statin-A"): 35, ("Nausea", "Statin-B"): 38, ("Nausea", "Ref-1"): 700, ("Nausea", "Ref-2"): 640,
    ("Rash", "Statin-A"): 12, ("Rash", "Statin-B"): 9, ("Rash", "Ref-1"): 210, ("Rash", "Ref-2"): 190,
}
records = [AggregateRecord(ae, drug, n) for (ae, drug), n in counts.items()]
table = build_from_aggregates(records, ["Statin-A", "Statin-B"], ["Ref-1", "Ref-2"])
print("AEs:", table.ae_labels)
print("drugs:", table.drug_labels)
print(table.counts)

# Observed against the independence baseline.
E = expected_baseline(table).expected
print("\nO/E\n", np.round(table.counts / E, 2))

# Ratio measures with 95% intervals, flagged when the lower bound exceeds 1.
# Only the drugs of interest are reported; the pooled reference column is context.
drug_cols = np.zeros(table.counts.shape, bool)
drug_cols[:, table.non_reference_columns()] = True
for result in (prr(table), ror(table)):
    flags = flag_signals(result, "ci_low>1") & drug_cols
    for i, j in zip(*np.nonzero(flags)):
        est, lo, hi, _ = result.cell(i, j)
        print(f"{result.method}: {table.ae_labels[i]} / {table.drug_labels[j]} = {est:.2f} [{lo:.2f}, {hi:.2f}]")

# Information component, flagged when its lower 95% limit is above 0.
res = ic(table)
for i, j in zip(*np.nonzero(bcpnn_signals(res) & drug_cols)):
    print(f"IC: {table.ae_labels[i]} / {table.drug_labels[j]} = {res.ic_mean[i, j]:.2f} (IC025 {res.ic025[i, j]:.2f})")
