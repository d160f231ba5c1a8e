import csv
import hashlib
import json

import numpy as np
import pytest

from pvkit import cli
from pvkit.ebayes import eb_signal_table, fit_general_gamma, fit_gps
from pvkit.lrt import pseudo_lrt
from pvkit.simulate import SimScenario, gen_poisson_table, score
from pvkit.tables import OTHER_AES, OTHER_DRUGS, read_table_csv


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def aggregates(tmp_path):
    gen = np.random.default_rng(17)
    aes = ["Anxiety", "Panic attack", "Rash", "Nausea", "Headache", "Insomnia", "Vomiting", "Fatigue"]
    drugs = ["X", "Y", "R1", "R2", "R3"]
    lines = ["ae,drug,count"]
    for a in aes:
        for d in drugs:
            base = 200 if d.startswith("R") else 15
            n = int(gen.poisson(base))
            if (a, d) == ("Panic attack", "X"):
                n = 90
            lines.append(f"{a},{d},{n}")
    agg = tmp_path / "agg.csv"
    agg.write_text("\n".join(lines) + "\n")
    ref = tmp_path / "ref.txt"
    ref.write_text("R1\nR2\nR3\n")
    kw = tmp_path / "kw.txt"
    kw.write_text("anx\npanic\ninsomn\n")
    return agg, ref, kw


def build(tmp_path, aggregates, name="table.csv", keywords=True):
    agg, ref, kw = aggregates
    out = tmp_path / name
    argv = ["build", "--aggregates", str(agg), "--interest", "X", "--interest", "Y",
            "--reference-list", str(ref), "--out", str(out)]
    if keywords:
        argv += ["--ae-keywords", str(kw)]
    return cli.main(argv), out


@pytest.fixture
def table_csv(tmp_path, aggregates):
    code, out = build(tmp_path, aggregates, keywords=False)
    assert code == 0
    return out


def analyze(table_csv, out_dir, method, *extra):
    return cli.main(["analyze", "--table", str(table_csv), "--method", method, "--out-dir", str(out_dir), *extra])


class TestBuild:
    def test_reference_column_and_manifest(self, tmp_path, aggregates):
        code, out = build(tmp_path, aggregates, keywords=False)
        assert code == 0
        t = read_table_csv(out)
        assert t.drug_labels == ("X", "Y", OTHER_DRUGS)
        manifest = json.loads(out.with_name(out.name + ".manifest.json").read_text())
        assert manifest["command"] == "build"
        for entry in manifest["inputs"] + manifest["outputs"]:
            assert entry["sha256"] == digest(type(out)(entry["path"]))

    def test_keywords_pool_other_aes(self, tmp_path, aggregates):
        code, out = build(tmp_path, aggregates)
        assert code == 0
        t = read_table_csv(out)
        assert t.ae_labels == ("Anxiety", "Insomnia", "Panic attack", OTHER_AES)
        assert t.counts[-1].sum() > 0

    def test_rebuild_digest(self, tmp_path, aggregates):
        _, first = build(tmp_path, aggregates, "a.csv")
        stored = json.loads(first.with_name("a.csv.manifest.json").read_text())["outputs"][0]["sha256"]
        _, second = build(tmp_path, aggregates, "b.csv")
        assert digest(second) == stored

    def test_reports_input(self, tmp_path):
        rep = tmp_path / "rep.csv"
        rep.write_text("report_id,drug,ae\nr1,A,Headache\nr2,A,Nausea\nr3,B,Headache\n")
        out = tmp_path / "t.csv"
        assert cli.main(["build", "--reports", str(rep), "--interest", "A", "--out", str(out)]) == 0
        assert read_table_csv(out).counts.tolist() == [[1, 1], [1, 0]]

    def test_malformed_csv_exit_2(self, tmp_path, aggregates, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("ae,drug,count\nA,X,1\nB,X,notanumber\n")
        _, ref, _ = aggregates
        code = cli.main(["build", "--aggregates", str(bad), "--interest", "X",
                         "--reference-list", str(ref), "--out", str(tmp_path / "o.csv")])
        assert code == 2
        assert "line 3" in capsys.readouterr().err

    def test_disjointness_exit_3(self, tmp_path, aggregates):
        agg, _, _ = aggregates
        ref = tmp_path / "overlap.txt"
        ref.write_text("X\nR1\n")
        code = cli.main(["build", "--aggregates", str(agg), "--interest", "X",
                         "--reference-list", str(ref), "--out", str(tmp_path / "o.csv")])
        assert code == 3

    def test_missing_file_exit_2(self, tmp_path):
        code = cli.main(["build", "--reports", str(tmp_path / "nope.csv"), "--interest", "A",
                         "--out", str(tmp_path / "o.csv")])
        assert code == 2


class TestAnalyze:
    def test_unknown_method_exit_4(self, table_csv, tmp_path):
        assert analyze(table_csv, tmp_path / "o", "magic") == 4

    def test_usage_errors_exit_4(self, table_csv, tmp_path):
        assert cli.main(["analyze"]) == 4
        assert analyze(table_csv, tmp_path / "o", "lrt", "--reps", "0") == 4
        assert analyze(table_csv, tmp_path / "o", "gps", "--rule", "nonsense") == 4

    @pytest.mark.parametrize("method", ["prr", "ror", "bcpnn"])
    def test_frequentist_outputs(self, table_csv, tmp_path, method):
        out = tmp_path / method
        assert analyze(table_csv, out, method) == 0
        rows = read_rows(out / "results.csv")
        assert len(rows) == 8 * 2
        manifest = json.loads((out / "manifest.json").read_text())
        for entry in manifest["outputs"]:
            assert entry["sha256"] == digest(type(out)(entry["path"]))

    def test_pseudo_lrt_deterministic_and_thread_invariant(self, table_csv, tmp_path):
        outs = []
        for k, threads in enumerate(("1", "8", "1")):
            out = tmp_path / f"p{k}"
            assert analyze(table_csv, out, "pseudo-lrt", "--reps", "999", "--seed", "42", "--threads", threads) == 0
            outs.append(out)
        for name in ("results.csv", "cells.csv", "heatmap.json"):
            assert len({(o / name).read_bytes() for o in outs}) == 1
        rows = read_rows(outs[0] / "results.csv")
        x = next(r for r in rows if r["drug"] == "X")
        assert float(x["p_value"]) < 0.05 and x["argmax_ae"] == "Panic attack"

    @pytest.mark.parametrize("method", ["lrt", "ext-lrt"])
    def test_lrt_thread_invariant(self, table_csv, tmp_path, method, monkeypatch):
        a, b = tmp_path / "a", tmp_path / "b"
        assert analyze(table_csv, a, method, "--reps", "600", "--seed", "3") == 0
        monkeypatch.setenv("PVKIT_THREADS", "8")
        assert analyze(table_csv, b, method, "--reps", "600", "--seed", "3") == 0
        assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()

    def test_gps_rule(self, table_csv, tmp_path):
        out = tmp_path / "gps"
        assert analyze(table_csv, out, "gps", "--rule", "eb05>2") == 0
        rows = read_rows(out / "results.csv")
        for r in rows:
            assert (r["decision"] == "true") == (float(r["q05"]) > 2)
        t = read_table_csv(table_csv)
        lib = eb_signal_table(fit_gps(t), t, rule="eb05>2")
        i, j = t.ae_labels.index("Panic attack"), t.drug_labels.index("X")
        row = next(r for r in rows if r["ae"] == "Panic attack" and r["drug"] == "X")
        assert float(row["q05"]) == lib.q05[i, j] and row["decision"] == "true"
        eye = json.loads((out / "eyeplot.json").read_text())["cells"]
        assert all(c["q05"] >= 1.001 and c["q05"] <= c["median"] <= c["q95"] for c in eye)
        prior = json.loads((out / "prior.json").read_text())
        assert prior["kind"] == "gamma-mixture"

    def test_general_gamma_rule(self, table_csv, tmp_path):
        out = tmp_path / "gg"
        assert analyze(table_csv, out, "general-gamma", "--rule", "1-prob<0.05", "--components", "20") == 0
        rows = read_rows(out / "results.csv")
        for r in rows:
            assert (r["decision"] == "true") == (1 - float(r["prob_signal"]) < 0.05)
        t = read_table_csv(table_csv)
        lib = eb_signal_table(fit_general_gamma(t, K=20), t, rule="prob>0.95")
        got = {(r["ae"], r["drug"]): r["decision"] == "true" for r in rows}
        for (ae, drug), dec in got.items():
            assert dec == bool(lib.decision[t.ae_labels.index(ae), t.drug_labels.index(drug)])
        heat = json.loads((out / "heatmap.json").read_text())
        assert heat["measure"] == "prob_signal" and len(heat["cells"]) == len(rows)

    @pytest.mark.parametrize("method", ["km", "efron"])
    def test_grid_methods(self, table_csv, tmp_path, method):
        out = tmp_path / method
        extra = ["--c0", "1", "--df", "4"] if method == "efron" else []
        assert analyze(table_csv, out, method, *extra) == 0
        assert (out / "eyeplot.json").exists()

    def test_round_trip_numbers(self, table_csv, tmp_path):
        out = tmp_path / "ror"
        analyze(table_csv, out, "ror")
        t = read_table_csv(table_csv)
        from pvkit.disprop import ror
        res = ror(t)
        for r in read_rows(out / "results.csv"):
            i, j = t.ae_labels.index(r["ae"]), t.drug_labels.index(r["drug"])
            if r["defined"] == "true":
                assert float(r["estimate"]) == res.estimate[i, j]


def write_scenario(path, signal=None, seed=5):
    s = SimScenario(I=15, J=4, row_marginals=np.linspace(1, 3, 15), col_totals=[120, 150, 200, 1500],
                    signal_map=signal, seed=seed, reference_col=True)
    path.write_text(s.to_json())
    return s


class TestSimulate:
    def test_tables_zero_exit_2(self, tmp_path):
        sc = tmp_path / "s.json"
        write_scenario(sc)
        assert cli.main(["simulate", "--scenario", str(sc), "--tables", "0", "--method", "prr",
                         "--out", str(tmp_path / "r.json")]) == 2

    def test_malformed_scenario_exit_2(self, tmp_path):
        sc = tmp_path / "s.json"
        sc.write_text("{\"I\": 3}")
        assert cli.main(["simulate", "--scenario", str(sc), "--tables", "2", "--method", "prr",
                         "--out", str(tmp_path / "r.json")]) == 2

    def test_null_pseudo_lrt_type_one(self, tmp_path):
        sc = tmp_path / "s.json"
        write_scenario(sc)
        out = tmp_path / "r.json"
        assert cli.main(["simulate", "--scenario", str(sc), "--tables", "300", "--method", "pseudo-lrt",
                         "--reps", "199", "--out", str(out)]) == 0
        report = json.loads(out.read_text())["methods"]["pseudo-lrt"]
        assert abs(report["drug_level"]["type_i_error"] - 0.05) <= 0.02, report["drug_level"]
        assert report["type_i_error"] <= 0.05

    def test_planted_confusion_oracle(self, tmp_path):
        lam = np.ones((15, 4))
        lam[[2, 9], [0, 1]] = 4.0
        sc = tmp_path / "s.json"
        scenario = write_scenario(sc, lam)
        out = tmp_path / "r.json"
        assert cli.main(["simulate", "--scenario", str(sc), "--tables", "20", "--method", "pseudo-lrt,prr",
                         "--reps", "199", "--out", str(out)]) == 0
        got = json.loads(out.read_text())["methods"]["pseudo-lrt"]
        total = None
        for t in range(20):
            table = gen_poisson_table(scenario, t)
            seed = cli._table_seed(scenario.seed, t)
            d = np.zeros((15, 3), bool)
            for r in pseudo_lrt(table, [0, 1, 2], reps=199, seed=seed):
                d[:, r.drug_index] = r.cell_decisions
            rep = score(d, lam[:, :3] > 1)
            total = rep if total is None else total + rep
        assert got["counts"] == {"TP": total.tp, "FP": total.fp, "FN": total.fn, "TN": total.tn}
        assert got["sensitivity"] == total.sensitivity

    def test_manifest_and_determinism(self, tmp_path):
        sc = tmp_path / "s.json"
        write_scenario(sc)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for out, threads in ((a, "1"), (b, "8")):
            assert cli.main(["simulate", "--scenario", str(sc), "--tables", "5", "--method", "lrt,gps",
                             "--reps", "99", "--threads", threads, "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()
        manifest = json.loads((tmp_path / "a.json.manifest.json").read_text())
        assert manifest["inputs"][0]["sha256"] == digest(sc)
