"""Event-sequence data model: schemas, one-hot encoding, window sampling.

Administrative health records are modelled as ordered multivariate
categorical event sequences. Each variable has its own vocabulary; missing
values are a schema-level sentinel (``None``) that one-hot encodes to the
all-zero vector.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

MISSING = None


class SchemaError(ValueError):
    pass


class EncodingError(ValueError):
    pass


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class VariableSchema:
    """Vocabulary for one categorical variable."""

    variable_id: int
    name: str
    code_to_index: dict[str, int]

    def __post_init__(self):
        indices = sorted(self.code_to_index.values())
        if indices != list(range(len(indices))):
            raise SchemaError(f"variable {self.name!r}: indices not dense")

    @property
    def cardinality(self) -> int:
        return len(self.code_to_index)

    @property
    def index_to_code(self) -> list[str]:
        out = [""] * self.cardinality
        for code, idx in self.code_to_index.items():
            out[idx] = code
        return out


@dataclass(frozen=True)
class EventRecord:
    """One row of a patient's event log.

    ``values`` holds one category index per variable, or ``None`` for a
    missing value. ``truth_vertex`` is only populated on synthetic data.
    """

    patient_id: str
    position: int
    values: tuple[Optional[int], ...]
    truth_vertex: Optional[int] = None


@dataclass
class PatientSequence:
    patient_id: str
    events: list[EventRecord]

    def __post_init__(self):
        for i, ev in enumerate(self.events):
            if ev.patient_id != self.patient_id:
                raise SchemaError(f"event {i} has foreign patient_id {ev.patient_id!r}")
            if ev.position != i:
                raise SchemaError(f"event positions must be 0..len-1, got {ev.position} at {i}")

    def __len__(self) -> int:
        return len(self.events)


@dataclass
class Cohort:
    schemas: list[VariableSchema]
    patients: list[PatientSequence]
    provenance: str = "ingested"

    def __post_init__(self):
        ids = [p.patient_id for p in self.patients]
        if len(set(ids)) != len(ids):
            raise SchemaError("duplicate patient_ids in cohort")
        for patient in self.patients:
            for ev in patient.events:
                self._check_event(ev)

    def _check_event(self, ev: EventRecord) -> None:
        if len(ev.values) != len(self.schemas):
            raise SchemaError(
                f"event of {ev.patient_id!r} has {len(ev.values)} values, "
                f"expected {len(self.schemas)}"
            )
        for schema, value in zip(self.schemas, ev.values):
            if value is not None and not (0 <= value < schema.cardinality):
                raise SchemaError(
                    f"value {value} out of range for variable {schema.name!r} "
                    f"(cardinality {schema.cardinality})"
                )

    @property
    def num_events(self) -> int:
        return sum(len(p) for p in self.patients)

    def schema_fingerprint(self) -> str:
        payload = [
            {"variable_id": s.variable_id, "name": s.name, "codes": s.index_to_code}
            for s in self.schemas
        ]
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class TrainingWindow:
    """A contiguous, possibly right-padded slice of one patient's events.

    ``one_hot_blocks[k]`` has shape (n, m_k); rows at or beyond ``valid_len``
    are all-zero padding.
    """

    one_hot_blocks: list[np.ndarray]
    valid_len: int
    source: tuple[str, int]
    truth_vertices: Optional[list[Optional[int]]] = None

    @property
    def length(self) -> int:
        return self.one_hot_blocks[0].shape[0]


def build_schema(table: pd.DataFrame, columns: Optional[Sequence[str]] = None) -> list[VariableSchema]:
    """Build vocabularies from the categorical columns of a raw event table.

    Index assignment is lexicographic over the stringified category values so
    schemas are deterministic. Empty cells / NaN are the MISSING sentinel and
    never enter a vocabulary.
    """
    if len(table) == 0:
        raise SchemaError("cannot build schemas from an empty table")
    if columns is None:
        columns = list(table.columns)
    schemas = []
    for k, col in enumerate(columns):
        values = table[col]
        present = values[values.notna()].astype(str)
        codes = sorted(c for c in present.unique() if c != "")
        schemas.append(
            VariableSchema(variable_id=k, name=str(col), code_to_index={c: i for i, c in enumerate(codes)})
        )
    return schemas


def one_hot(event: EventRecord, schemas: Sequence[VariableSchema]) -> list[np.ndarray]:
    """One-hot encode one event; missing values become all-zero vectors."""
    if len(event.values) != len(schemas):
        raise EncodingError(f"event has {len(event.values)} values for {len(schemas)} schemas")
    vectors = []
    for schema, value in zip(schemas, event.values):
        vec = np.zeros(schema.cardinality, dtype=np.float32)
        if value is not None:
            if not (0 <= value < schema.cardinality):
                raise EncodingError(
                    f"value {value} out of vocabulary for variable {schema.name!r}"
                )
            vec[value] = 1.0
        vectors.append(vec)
    return vectors


def encode_window(
    seq: PatientSequence,
    schemas: Sequence[VariableSchema],
    start: int,
    n: int,
) -> TrainingWindow:
    """One-hot encode ``seq[start:start+n]`` into a right-padded window."""
    rows = seq.events[start : start + n]
    valid_len = len(rows)
    blocks = [np.zeros((n, s.cardinality), dtype=np.float32) for s in schemas]
    truth = []
    for i, ev in enumerate(rows):
        for k, vec in enumerate(one_hot(ev, schemas)):
            blocks[k][i] = vec
        truth.append(ev.truth_vertex)
    truth.extend([None] * (n - valid_len))
    return TrainingWindow(
        one_hot_blocks=blocks,
        valid_len=valid_len,
        source=(seq.patient_id, start),
        truth_vertices=truth,
    )


def sample_training_window(
    seq: PatientSequence,
    schemas: Sequence[VariableSchema],
    n: int,
    rng: np.random.Generator,
) -> TrainingWindow:
    """Sample a contiguous window of length ``n``, uniform over feasible starts.

    Sequences shorter than ``n`` are taken whole and right-padded with
    all-zero rows.
    """
    if len(seq) == 0:
        raise SamplingError(f"patient {seq.patient_id!r} has no events")
    if n < 2:
        raise SamplingError(f"window length must be >= 2, got {n}")
    max_start = max(len(seq) - n, 0)
    start = int(rng.integers(0, max_start + 1))
    return encode_window(seq, schemas, start, n)


# ---------------------------------------------------------------------------
# Cohort serialization: events CSV + sidecar schema JSON.

def schemas_to_json(schemas: Sequence[VariableSchema]) -> list[dict]:
    return [
        {"variable_id": s.variable_id, "name": s.name, "codes": s.index_to_code}
        for s in schemas
    ]


def schemas_from_json(payload: Iterable[dict]) -> list[VariableSchema]:
    return [
        VariableSchema(
            variable_id=entry["variable_id"],
            name=entry["name"],
            code_to_index={code: i for i, code in enumerate(entry["codes"])},
        )
        for entry in payload
    ]


def save_cohort(cohort: Cohort, csv_path: Path | str, schema_path: Path | str,
                extra_meta: Optional[dict] = None) -> None:
    csv_path, schema_path = Path(csv_path), Path(schema_path)
    records = []
    has_truth = any(
        ev.truth_vertex is not None for p in cohort.patients for ev in p.events
    )
    for patient in cohort.patients:
        for ev in patient.events:
            row: dict = {"patient_id": patient.patient_id, "position": ev.position}
            for schema, value in zip(cohort.schemas, ev.values):
                row[schema.name] = "" if value is None else schema.index_to_code[value]
            if has_truth:
                row["truth_vertex"] = "" if ev.truth_vertex is None else ev.truth_vertex
            records.append(row)
    pd.DataFrame.from_records(records).to_csv(csv_path, index=False)
    meta = {"provenance": cohort.provenance, "schemas": schemas_to_json(cohort.schemas)}
    if extra_meta:
        meta.update(extra_meta)
    schema_path.write_text(json.dumps(meta, indent=2))


def load_cohort(csv_path: Path | str, schema_path: Path | str) -> Cohort:
    meta = json.loads(Path(schema_path).read_text())
    schemas = schemas_from_json(meta["schemas"])
    frame = pd.read_csv(csv_path, dtype={"patient_id": str}, keep_default_na=False)
    patients = []
    for pid, group in frame.groupby("patient_id", sort=False):
        group = group.sort_values("position")
        events = []
        for _, row in group.iterrows():
            values = []
            for schema in schemas:
                cell = str(row[schema.name])
                values.append(None if cell == "" else schema.code_to_index[cell])
            truth = None
            if "truth_vertex" in frame.columns and str(row["truth_vertex"]) != "":
                truth = int(float(row["truth_vertex"]))
            events.append(
                EventRecord(
                    patient_id=str(pid),
                    position=int(row["position"]),
                    values=tuple(values),
                    truth_vertex=truth,
                )
            )
        patients.append(PatientSequence(patient_id=str(pid), events=events))
    return Cohort(schemas=schemas, patients=patients, provenance=meta.get("provenance", "ingested"))
