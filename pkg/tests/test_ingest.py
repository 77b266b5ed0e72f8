import numpy as np
import pandas as pd
import pytest

from pathfrag.events import MISSING
from pathfrag.ingest import IngestionError, IngestionMaps, ingest_mimic_like


def write_csv(path, rows, columns):
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False)


EVENT_COLUMNS = ["patient_id", "admission_id", "order", "code", "code_version"]


def simple_maps():
    return IngestionMaps(
        icd10_to_icd9={"C50": "174"},
        ccs_hierarchy={
            "174": ("2", "2.5", "2.5.1"),
            "401": ("7", "7.1", "7.1.1"),
        },
    )


class TestIngestionMaps:
    def test_from_files(self, tmp_path):
        write_csv(tmp_path / "gem.csv", [["C50", "174"]], ["icd10", "icd9"])
        write_csv(
            tmp_path / "ccs.csv",
            [["174", "2", "2.5", "2.5.1"]],
            ["icd9", "ccs1", "ccs2", "ccs3"],
        )
        maps = IngestionMaps.from_files(tmp_path / "gem.csv", tmp_path / "ccs.csv")
        assert maps.icd10_to_icd9 == {"C50": "174"}
        assert maps.ccs_hierarchy["174"] == ("2", "2.5", "2.5.1")

    def test_missing_gem_column(self, tmp_path):
        write_csv(tmp_path / "gem.csv", [["C50"]], ["icd10"])
        write_csv(
            tmp_path / "ccs.csv",
            [["174", "2", "2.5", "2.5.1"]],
            ["icd9", "ccs1", "ccs2", "ccs3"],
        )
        with pytest.raises(IngestionError, match="icd9"):
            IngestionMaps.from_files(tmp_path / "gem.csv", tmp_path / "ccs.csv")


class TestIngest:
    def test_admission_index_within_patient(self, tmp_path):
        rows = [
            ["p1", "admA", 0, "174", 9],
            ["p1", "admA", 1, "174", 9],
            ["p1", "admB", 2, "174", 9],
        ]
        write_csv(tmp_path / "events.csv", rows, EVENT_COLUMNS)
        cohort = ingest_mimic_like([tmp_path / "events.csv"], simple_maps(), "2")
        admission_schema = cohort.schemas[0]
        values = [
            admission_schema.index_to_code[ev.values[0]]
            for ev in cohort.patients[0].events
        ]
        assert values == ["0", "0", "1"]

    def test_unmapped_icd10_becomes_missing(self, tmp_path):
        rows = [
            ["p1", "admA", 0, "174", 9],
            ["p1", "admA", 1, "ZZZ9", 10],
        ]
        write_csv(tmp_path / "events.csv", rows, EVENT_COLUMNS)
        maps = simple_maps()
        cohort = ingest_mimic_like([tmp_path / "events.csv"], maps, "2")
        second = cohort.patients[0].events[1]
        assert second.values[1] is MISSING  # icd9
        assert second.values[2] is MISSING  # ccs1
        assert second.values[3] is MISSING
        assert second.values[4] is MISSING
        assert maps.unmapped_icd10 == 1

    def test_icd10_mapped_via_gem(self, tmp_path):
        rows = [["p1", "admA", 0, "C50", 10]]
        write_csv(tmp_path / "events.csv", rows, EVENT_COLUMNS)
        cohort = ingest_mimic_like([tmp_path / "events.csv"], simple_maps(), "2")
        icd9_schema = cohort.schemas[1]
        value = cohort.patients[0].events[0].values[1]
        assert icd9_schema.index_to_code[value] == "174"

    def test_category_filter_drops_other_patients(self, tmp_path):
        rows = [
            ["p1", "admA", 0, "174", 9],
            ["p2", "admB", 0, "401", 9],
        ]
        write_csv(tmp_path / "events.csv", rows, EVENT_COLUMNS)
        cohort = ingest_mimic_like([tmp_path / "events.csv"], simple_maps(), "2")
        assert [p.patient_id for p in cohort.patients] == ["p1"]

    def test_category_matches_any_level(self, tmp_path):
        rows = [["p1", "admA", 0, "174", 9]]
        write_csv(tmp_path / "events.csv", rows, EVENT_COLUMNS)
        for category in ("2", "2.5", "2.5.1"):
            cohort = ingest_mimic_like([tmp_path / "events.csv"], simple_maps(), category)
            assert len(cohort.patients) == 1

    def test_empty_after_filter_names_category(self, tmp_path):
        rows = [["p1", "admA", 0, "174", 9]]
        write_csv(tmp_path / "events.csv", rows, EVENT_COLUMNS)
        with pytest.raises(IngestionError, match="nonexistent"):
            ingest_mimic_like([tmp_path / "events.csv"], simple_maps(), "nonexistent")

    def test_missing_required_column(self, tmp_path):
        write_csv(tmp_path / "events.csv", [["p1", "admA", 0, "174"]], EVENT_COLUMNS[:4])
        with pytest.raises(IngestionError, match="code_version"):
            ingest_mimic_like([tmp_path / "events.csv"], simple_maps(), "2")

    def test_order_column_respected_not_row_order(self, tmp_path):
        rows = [
            ["p1", "admA", 1, "401", 9],
            ["p1", "admA", 0, "174", 9],
        ]
        write_csv(tmp_path / "events.csv", rows, EVENT_COLUMNS)
        cohort = ingest_mimic_like([tmp_path / "events.csv"], simple_maps(), "2")
        icd9_schema = cohort.schemas[1]
        codes = [
            icd9_schema.index_to_code[ev.values[1]]
            for ev in cohort.patients[0].events
        ]
        assert codes == ["174", "401"]


class TestBreastCancerShapedFixture:
    def test_scaled_table_proportions(self, tmp_path):
        # 1576 patients / 3926 admissions / 14178 events scaled down 100x:
        # 16 patients, ~39 admissions, ~142 events
        rng = np.random.default_rng(0)
        num_patients, num_admissions, num_events = 16, 39, 142
        admissions_per_patient = np.ones(num_patients, dtype=int)
        for _ in range(num_admissions - num_patients):
            admissions_per_patient[rng.integers(num_patients)] += 1
        events_per_patient = admissions_per_patient.copy()
        for _ in range(num_events - num_admissions):
            events_per_patient[rng.integers(num_patients)] += 1
        rows = []
        for p in range(num_patients):
            order = 0
            per_admission = np.array_split(
                range(events_per_patient[p]), admissions_per_patient[p]
            )
            for a, chunk in enumerate(per_admission):
                for _ in chunk:
                    # every patient touches the breast-cancer category at
                    # least once; remaining events mix in another code
                    code = "174" if order == 0 or rng.random() < 0.5 else "401"
                    rows.append([f"p{p:02d}", f"p{p:02d}a{a}", order, code, 9])
                    order += 1
        write_csv(tmp_path / "events.csv", rows, EVENT_COLUMNS)
        cohort = ingest_mimic_like([tmp_path / "events.csv"], simple_maps(), "2")
        assert len(cohort.patients) == 16
        assert cohort.num_events == 142
        total_admissions = sum(
            len({ev.values[0] for ev in p.events}) for p in cohort.patients
        )
        assert total_admissions == pytest.approx(39, abs=2)
        assert len(cohort.schemas) == 5
