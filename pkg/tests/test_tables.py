import io
import warnings
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pvkit.errors import (
    DegenerateTable,
    DisjointnessViolation,
    EmptyInput,
    MalformedInput,
    NoMatchingRows,
)
from pvkit.tables import (
    OTHER_AES,
    OTHER_DRUGS,
    AggregateRecord,
    ContingencyTable,
    ReportRecord,
    build_from_aggregates,
    build_from_reports,
    collapse_2x2,
    expected_baseline,
    filter_aes_by_keywords,
    read_aggregates_csv,
    read_reports_csv,
    read_table_csv,
    table_to_csv_text,
)

from conftest import make_table

count_tables = arrays(np.int64, st.tuples(st.integers(1, 6), st.integers(1, 5)), elements=st.integers(0, 500))


class TestContingencyTable:
    def test_marginals(self, random_table):
        c = random_table.counts
        assert np.array_equal(random_table.row_totals, c.sum(axis=1))
        assert np.array_equal(random_table.col_totals, c.sum(axis=0))
        assert random_table.grand_total == c.sum()

    def test_counts_read_only(self, random_table):
        with pytest.raises(ValueError):
            random_table.counts[0, 0] = 5

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            make_table([[1, -1]])

    def test_rejects_duplicate_labels(self):
        with pytest.raises(ValueError):
            ContingencyTable(["a", "a"], ["x"], [[1], [2]])

    def test_rejects_bad_reference(self):
        with pytest.raises(ValueError):
            ContingencyTable(["a"], ["x"], [[1]], reference_col_index=3)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ContingencyTable(["a", "b"], ["x"], [[1, 2]])

    @given(count_tables)
    def test_grand_total_identity(self, counts):
        t = make_table(counts)
        assert t.row_totals.sum() == t.col_totals.sum() == t.grand_total


class TestBuildFromReports:
    def test_three_records(self):
        recs = [ReportRecord("r1", "A", "Headache"), ReportRecord("r2", "A", "Nausea"),
                ReportRecord("r3", "B", "Headache")]
        t = build_from_reports(recs, ["A"])
        assert t.drug_labels == ("A", OTHER_DRUGS)
        assert t.ae_labels == ("Headache", "Nausea")
        assert t.counts.tolist() == [[1, 1], [1, 0]]
        assert t.reference_col_index == 1

    def test_duplicate_triple_counted_once(self):
        recs = [ReportRecord("r1", "A", "Headache")] * 2 + [ReportRecord("r2", "B", "Headache")]
        t = build_from_reports(recs, ["A"])
        assert t.counts.tolist() == [[1, 1]]

    def test_empty(self):
        with pytest.raises(EmptyInput):
            build_from_reports([], ["A"])

    def test_absent_drug_keeps_zero_column(self):
        recs = [ReportRecord("r1", "A", "Headache")]
        with pytest.warns(UserWarning, match="absent"):
            t = build_from_reports(recs, ["A", "Z"])
        assert t.counts[:, 1].sum() == 0
        assert any("Z" in w for w in t.warnings)

    def test_primary_suspect_filter(self):
        recs = [ReportRecord("r1", "A", "Headache", True), ReportRecord("r2", "A", "Rash", False)]
        t = build_from_reports(recs, ["A"])
        assert t.ae_labels == ("Headache",)

    def test_multiplicity_oracle(self, rng):
        drugs = [f"D{k}" for k in range(8)]
        aes = [f"E{k}" for k in range(25)]
        recs = []
        for r in range(2500):
            for _ in range(4):
                recs.append(ReportRecord(f"r{r}", drugs[rng.integers(8)], aes[rng.integers(25)]))
        assert len(recs) == 10_000
        interest = drugs[:3]
        t = build_from_reports(recs, interest)
        # independent oracle: hash-count distinct triples
        oracle = Counter()
        for rid, d, a in {(x.report_id, x.drug, x.ae) for x in recs}:
            oracle[(a, d if d in interest else OTHER_DRUGS)] += 1
        for i, a in enumerate(t.ae_labels):
            for j, d in enumerate(t.drug_labels):
                assert t.counts[i, j] == oracle[(a, d)]


class TestBuildFromAggregates:
    def test_reference_sum(self):
        aggs = [AggregateRecord("AE1", "X", 2), AggregateRecord("AE1", "Y", 3), AggregateRecord("AE1", "Z", 5)]
        t = build_from_aggregates(aggs, ["X"], ["Y", "Z"])
        assert t.counts.tolist() == [[2, 8]]
        assert t.drug_labels == ("X", OTHER_DRUGS)

    def test_overlap(self):
        with pytest.raises(DisjointnessViolation):
            build_from_aggregates([AggregateRecord("AE1", "X", 1)], ["X"], ["X", "Y"])

    def test_duplicates_summed_with_warning(self):
        aggs = [AggregateRecord("AE1", "X", 2), AggregateRecord("AE1", "X", 3)]
        with pytest.warns(UserWarning, match="summed"):
            t = build_from_aggregates(aggs, ["X"], [])
        assert t.counts[0, 0] == 5

    def test_missing_pairs_zero_filled(self):
        aggs = [AggregateRecord("AE1", "X", 2), AggregateRecord("AE2", "Y", 3)]
        t = build_from_aggregates(aggs, ["X"], ["Y"])
        assert t.counts.tolist() == [[2, 0], [0, 3]]

    def test_column_sums_match_raw_totals(self, rng):
        drugs = ["Oxycodone", "Morphine", "Fentanyl", "Codeine", "Tramadol", "R1", "R2", "R3"]
        aggs = [AggregateRecord(f"AE{i}", d, int(rng.integers(0, 1000)))
                for i in range(60) for d in drugs]
        interest, reference = drugs[:5], drugs[5:]
        t = build_from_aggregates(aggs, interest, reference)
        per_drug = Counter()
        for a in aggs:
            per_drug[a.drug] += a.count
        for j, d in enumerate(interest):
            assert t.col_totals[j] == per_drug[d]
        assert t.col_totals[-1] == sum(per_drug[d] for d in reference)

    def test_baseline_invariant_to_reference_partition(self, rng):
        aggs = [AggregateRecord(f"AE{i}", d, int(rng.integers(0, 50)))
                for i in range(10) for d in ["X", "Y", "Z", "W"]]
        split = build_from_aggregates(aggs, ["X"], ["Y", "Z", "W"])
        merged_aggs = [AggregateRecord(a.ae, "REF" if a.drug != "X" else "X", a.count) for a in aggs]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            merged = build_from_aggregates(merged_aggs, ["X"], ["REF"])
        assert np.array_equal(expected_baseline(split).expected, expected_baseline(merged).expected)


class TestFilterKeywords:
    def test_anxiety_rash(self):
        t = ContingencyTable(["Anxiety", "Rash"], ["A", OTHER_DRUGS], [[3, 4], [5, 6]], reference_col_index=1)
        f = filter_aes_by_keywords(t, ["anx"])
        assert f.ae_labels == ("Anxiety", OTHER_AES)
        assert f.counts[1].tolist() == [5, 6]
        assert f.reference_row_index == 1

    def test_all_match_keeps_zero_row(self):
        t = make_table([[1, 2], [3, 4]])
        f = filter_aes_by_keywords(t, ["ae"])
        assert f.counts[-1].tolist() == [0, 0]
        assert f.ae_labels[-1] == OTHER_AES

    def test_no_match(self):
        with pytest.raises(NoMatchingRows):
            filter_aes_by_keywords(make_table([[1]]), ["zzz"])

    def test_empty_keywords(self):
        with pytest.raises(EmptyInput):
            filter_aes_by_keywords(make_table([[1]]), [])

    def test_scan_oracle_large(self, rng):
        stems = ["Anxiety", "Depression", "Insomnia", "Rash", "Nausea", "Headache", "Panic attack",
                 "Hallucination", "Vomiting", "Delirium", "Fatigue"]
        labels = [f"{stems[i % len(stems)]} type {i}" for i in range(243)]
        t = ContingencyTable(labels, ["A", "B"], rng.integers(0, 30, size=(243, 2)))
        keywords = ["ANXI", "depress", "insomn", "panic", "halluc", "delir"]
        f = filter_aes_by_keywords(t, keywords)
        expected = sum(any(k.lower() in lab.lower() for k in keywords) for lab in labels)
        assert len(f.ae_labels) - 1 == expected
        assert np.array_equal(f.col_totals, t.col_totals)

    @given(count_tables, st.integers(0, 5))
    def test_preserves_column_marginals(self, counts, k):
        t = make_table(counts)
        key = t.ae_labels[k % counts.shape[0]]
        f = filter_aes_by_keywords(t, [key])
        assert np.array_equal(f.col_totals, t.col_totals)
        assert f.grand_total == t.grand_total


class TestCollapse:
    def test_two_by_two_identity(self):
        assert collapse_2x2(make_table([[1, 2], [3, 4]]), 0, 0).as_tuple() == (1, 2, 3, 4)

    def test_off_diagonal(self):
        assert collapse_2x2(make_table([[5, 0], [0, 5]]), 0, 1).as_tuple() == (0, 5, 5, 0)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            collapse_2x2(make_table([[1]]), 1, 0)

    def test_all_cells_sum_to_total(self, random_table):
        n_i, n_j = random_table.shape
        for i in range(n_i):
            for j in range(n_j):
                c = collapse_2x2(random_table, i, j)
                assert c.total == random_table.grand_total
                assert min(c.as_tuple()) >= 0

    @given(count_tables, st.data())
    def test_nonnegative_and_total(self, counts, data):
        t = make_table(counts)
        i = data.draw(st.integers(0, counts.shape[0] - 1))
        j = data.draw(st.integers(0, counts.shape[1] - 1))
        c = collapse_2x2(t, i, j)
        assert min(c.as_tuple()) >= 0 and c.total == t.grand_total


class TestExpectedBaseline:
    def test_all_ones(self):
        assert np.all(expected_baseline(make_table(np.ones((2, 2), int))).expected == 1.0)

    def test_zero_total(self):
        with pytest.raises(DegenerateTable):
            expected_baseline(make_table(np.zeros((2, 2), int)))

    def test_observed_over_expected_example(self):
        assert abs(3831 / 42.06 - 91.08) < 0.01

    def test_marginal_sums(self, rng):
        t = make_table(rng.integers(0, 100, size=(50, 7)))
        e = expected_baseline(t).expected
        np.testing.assert_allclose(e.sum(axis=1), t.row_totals, rtol=1e-9)
        np.testing.assert_allclose(e.sum(axis=0), t.col_totals, rtol=1e-9)

    @given(count_tables)
    def test_formula(self, counts):
        t = make_table(counts)
        if t.grand_total == 0:
            return
        e = expected_baseline(t).expected
        i, j = counts.shape[0] - 1, counts.shape[1] - 1
        assert e[i, j] == t.row_totals[i] * t.col_totals[j] / t.grand_total


class TestCsv:
    @settings(max_examples=50)
    @given(count_tables)
    def test_round_trip(self, counts):
        t = make_table(counts, ref_col=counts.shape[1] > 1)
        back = read_table_csv(io.StringIO(table_to_csv_text(t)))
        assert back == t

    def test_labels_with_commas(self):
        t = ContingencyTable(['Pain, "acute"', OTHER_AES], ["A", OTHER_DRUGS], [[1, 2], [3, 4]],
                             reference_row_index=1, reference_col_index=1)
        assert read_table_csv(io.StringIO(table_to_csv_text(t))) == t

    def test_table_bad_count_line(self):
        with pytest.raises(MalformedInput, match="line 3"):
            read_table_csv(io.StringIO("ae,A\nx,1\ny,oops\n"))

    def test_table_ragged(self):
        with pytest.raises(MalformedInput, match="line 2"):
            read_table_csv(io.StringIO("ae,A,B\nx,1\n"))

    def test_reports_csv(self):
        recs = read_reports_csv(io.StringIO('report_id,drug,ae\nr1,A,"Pain, acute"\nr2,B,Rash\n'))
        assert recs[0].ae == "Pain, acute" and recs[0].primary_suspect is None

    def test_reports_missing_header(self):
        with pytest.raises(MalformedInput, match="line 1"):
            read_reports_csv(io.StringIO("id,drug,ae\n"))

    def test_aggregates_bad_count(self):
        with pytest.raises(MalformedInput, match="line 3"):
            read_aggregates_csv(io.StringIO("ae,drug,count\nA,X,1\nB,X,-2\n"))
