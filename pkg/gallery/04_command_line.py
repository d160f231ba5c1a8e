"""
The command-line workflow
=========================

Builds a table from aggregate counts, analyzes it with two methods and runs
a small simulation study, all through the ``pvkit`` entry point.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from pvkit.cli import main
from pvkit.simulate import SimScenario

work = Path(tempfile.mkdtemp())
gen = np.random.default_rng(8)
aes = [f"AE{i}" for i in range(25)]
with open(work / "aggregates.csv", "w") as fh:
    fh.write("ae,drug,count\n")
    for i, ae in enumerate(aes):
        for drug, scale in (("DrugX", 1), ("DrugY", 1), ("Ref", 30)):
            boost = 4 if (drug == "DrugX" and i == 3) else 1
            fh.write(f"{ae},{drug},{gen.poisson(boost * scale * (1 + i % 7))}\n")

(work / "ref.txt").write_text("Ref\n")
main(["build", "--aggregates", str(work / "aggregates.csv"), "--interest", "DrugX", "--interest", "DrugY",
      "--reference-list", str(work / "ref.txt"), "--out", str(work / "table.csv")])

for method in ("pseudo-lrt", "gps"):
    main(["analyze", "--table", str(work / "table.csv"), "--method", method, "--out-dir", str(work / method),
          "--seed", "1"])
    print(method, "->", sorted(p.name for p in (work / method).iterdir()))
print((work / "gps" / "results.csv").read_text().splitlines()[:3])

lam = np.ones((20, 3))
lam[2, 0] = lam[9, 1] = 3.0
scenario = SimScenario(I=20, J=3, row_marginals=np.linspace(1, 10, 20), col_totals=[200, 200, 5000],
                       signal_map=lam, seed=2, reference_col=True)
(work / "scenario.json").write_text(scenario.to_json())
main(["simulate", "--scenario", str(work / "scenario.json"), "--tables", "20", "--method", "pseudo-lrt,gps",
      "--reps", "199", "--out", str(work / "report.json")])
report = json.loads((work / "report.json").read_text())
for method, m in report["methods"].items():
    print(f"{method}: cell sensitivity {m['sensitivity']:.2f}, FDR {m['fdr']:.2f}")
print("outputs in", work)
