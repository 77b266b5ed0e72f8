import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from pathfrag.events import (
    Cohort,
    EncodingError,
    EventRecord,
    PatientSequence,
    SamplingError,
    SchemaError,
    VariableSchema,
    build_schema,
    load_cohort,
    one_hot,
    sample_training_window,
    save_cohort,
)


def make_schema(codes, k=0, name="var0"):
    return VariableSchema(variable_id=k, name=name, code_to_index={c: i for i, c in enumerate(codes)})


def make_sequence(pid, values_list, schemas):
    events = [
        EventRecord(patient_id=pid, position=i, values=tuple(vals))
        for i, vals in enumerate(values_list)
    ]
    return PatientSequence(patient_id=pid, events=events)


class TestBuildSchema:
    def test_lexicographic_assignment(self):
        table = pd.DataFrame({"x": ["A", "C", "B"]})
        (schema,) = build_schema(table)
        assert schema.cardinality == 3
        assert schema.code_to_index == {"A": 0, "B": 1, "C": 2}

    def test_single_value_column(self):
        (schema,) = build_schema(pd.DataFrame({"x": ["X", "X"]}))
        assert schema.cardinality == 1

    def test_two_columns(self):
        table = pd.DataFrame({"x": ["A", "B"], "y": ["P", "P"]})
        schemas = build_schema(table)
        assert [s.cardinality for s in schemas] == [2, 1]

    def test_missing_never_in_vocabulary(self):
        table = pd.DataFrame({"x": ["A", None, "B", ""]})
        (schema,) = build_schema(table)
        assert schema.cardinality == 2

    def test_empty_table_rejected(self):
        with pytest.raises(SchemaError):
            build_schema(pd.DataFrame({"x": []}))


class TestOneHot:
    def test_coded_index(self):
        schema = make_schema(["a", "b", "c", "d"])
        ev = EventRecord("p", 0, (2,))
        assert one_hot(ev, [schema])[0].tolist() == [0, 0, 1, 0]

    def test_missing_is_all_zero(self):
        schema = make_schema(["a", "b", "c"])
        ev = EventRecord("p", 0, (None,))
        assert one_hot(ev, [schema])[0].tolist() == [0, 0, 0]

    def test_cardinality_one(self):
        schema = make_schema(["only"])
        assert one_hot(EventRecord("p", 0, (0,)), [schema])[0].tolist() == [1]

    def test_out_of_vocabulary(self):
        schema = make_schema(["a"])
        with pytest.raises(EncodingError):
            one_hot(EventRecord("p", 0, (3,)), [schema])

    @given(st.lists(st.integers(0, 4), min_size=1, max_size=20))
    def test_round_trip_argmax(self, values):
        schema = make_schema([f"c{i}" for i in range(5)])
        for i, v in enumerate(values):
            vec = one_hot(EventRecord("p", i, (v,)), [schema])[0]
            assert int(np.argmax(vec)) == v
            assert vec.sum() == 1


class TestWindowSampling:
    schemas = [make_schema(["a", "b", "c"])]

    def seq(self, length):
        return make_sequence("p", [(i % 3,) for i in range(length)], self.schemas)

    def test_full_window(self):
        rng = np.random.default_rng(0)
        w = sample_training_window(self.seq(10), self.schemas, 4, rng)
        assert w.valid_len == 4
        assert 0 <= w.source[1] <= 6

    def test_short_sequence_right_padded(self):
        rng = np.random.default_rng(0)
        w = sample_training_window(self.seq(3), self.schemas, 8, rng)
        assert w.valid_len == 3
        assert w.source[1] == 0
        assert np.all(w.one_hot_blocks[0][3:] == 0)
        assert np.all(w.one_hot_blocks[0][:3].sum(axis=1) == 1)

    def test_single_event(self):
        rng = np.random.default_rng(0)
        w = sample_training_window(self.seq(1), self.schemas, 4, rng)
        assert w.valid_len == 1

    def test_empty_sequence_rejected(self):
        empty = PatientSequence(patient_id="p", events=[])
        with pytest.raises(SamplingError):
            sample_training_window(empty, self.schemas, 4, np.random.default_rng(0))

    def test_reproducible_with_fixed_seed(self):
        seq = self.seq(20)
        w1 = sample_training_window(seq, self.schemas, 4, np.random.default_rng(7))
        w2 = sample_training_window(seq, self.schemas, 4, np.random.default_rng(7))
        assert w1.source == w2.source
        np.testing.assert_array_equal(w1.one_hot_blocks[0], w2.one_hot_blocks[0])

    def test_start_offsets_uniform(self):
        seq = self.seq(12)
        rng = np.random.default_rng(42)
        n = 4
        starts = [
            sample_training_window(seq, self.schemas, n, rng).source[1]
            for _ in range(10_000)
        ]
        counts = np.bincount(starts, minlength=12 - n + 1)
        assert len(counts) == 9
        result = stats.chisquare(counts)
        assert result.pvalue > 0.01


class TestCohort:
    def test_duplicate_patient_ids_rejected(self):
        schemas = [make_schema(["a"])]
        p = make_sequence("p", [(0,)], schemas)
        q = make_sequence("p", [(0,)], schemas)
        with pytest.raises(SchemaError):
            Cohort(schemas=schemas, patients=[p, q])

    def test_value_out_of_range_rejected(self):
        schemas = [make_schema(["a"])]
        bad = make_sequence("p", [(5,)], schemas)
        with pytest.raises(SchemaError):
            Cohort(schemas=schemas, patients=[bad])

    def test_csv_round_trip(self, tmp_path):
        schemas = [make_schema(["a", "b"]), make_schema(["x", "y", "z"], k=1, name="var1")]
        p1 = PatientSequence(
            "p1",
            [
                EventRecord("p1", 0, (0, 2), truth_vertex=3),
                EventRecord("p1", 1, (None, 1), truth_vertex=3),
            ],
        )
        p2 = PatientSequence("p2", [EventRecord("p2", 0, (1, None), truth_vertex=0)])
        cohort = Cohort(schemas=schemas, patients=[p1, p2], provenance="synthetic")
        save_cohort(cohort, tmp_path / "c.csv", tmp_path / "s.json")
        loaded = load_cohort(tmp_path / "c.csv", tmp_path / "s.json")
        assert loaded.provenance == "synthetic"
        assert [s.code_to_index for s in loaded.schemas] == [s.code_to_index for s in schemas]
        assert loaded.patients[0].events[1].values == (None, 1)
        assert loaded.patients[0].events[0].truth_vertex == 3
        assert loaded.patients[1].events[0].values == (1, None)

    def test_fingerprint_tracks_schema(self):
        schemas_a = [make_schema(["a", "b"])]
        schemas_b = [make_schema(["a", "c"])]
        ca = Cohort(schemas=schemas_a, patients=[])
        cb = Cohort(schemas=schemas_b, patients=[])
        assert ca.schema_fingerprint() != cb.schema_fingerprint()
        assert ca.schema_fingerprint() == Cohort(schemas=schemas_a, patients=[]).schema_fingerprint()
