"""Ingestion of MIMIC-shaped event CSVs into a cohort.

Input events carry an ICD-9 or ICD-10 code; ICD-10 codes are mapped to
ICD-9 via a general equivalence mapping table, then grouped into three
hierarchical CCS levels. Each resulting event has five categorical
variables: the patient's admission index, the ICD-9 code, and the three
CCS levels. Unmappable codes become MISSING on all code-derived variables.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd

from .events import Cohort, EventRecord, PatientSequence, build_schema

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("patient_id", "admission_id", "order", "code", "code_version")


class IngestionError(ValueError):
    pass


@dataclass
class IngestionMaps:
    icd10_to_icd9: dict[str, str]
    ccs_hierarchy: dict[str, tuple[str, str, str]]  # icd9 -> (ccs1, ccs2, ccs3)
    unmapped_icd10: int = 0
    missing_ccs: int = 0

    @classmethod
    def from_files(cls, gem_csv: Path | str, ccs_csv: Path | str) -> "IngestionMaps":
        gem = pd.read_csv(gem_csv, dtype=str)
        for col in ("icd10", "icd9"):
            if col not in gem.columns:
                raise IngestionError(f"GEM table missing column {col!r}")
        ccs = pd.read_csv(ccs_csv, dtype=str)
        for col in ("icd9", "ccs1", "ccs2", "ccs3"):
            if col not in ccs.columns:
                raise IngestionError(f"CCS table missing column {col!r}")
        return cls(
            icd10_to_icd9=dict(zip(gem["icd10"], gem["icd9"])),
            ccs_hierarchy={
                row.icd9: (row.ccs1, row.ccs2, row.ccs3) for row in ccs.itertuples()
            },
        )


def _resolve_code(
    code: str, version: int, maps: IngestionMaps
) -> tuple[Optional[str], Optional[tuple[str, str, str]]]:
    if version == 10:
        mapped = maps.icd10_to_icd9.get(code)
        if mapped is None:
            maps.unmapped_icd10 += 1
            return None, None
        code = mapped
    ccs = maps.ccs_hierarchy.get(code)
    if ccs is None:
        maps.missing_ccs += 1
    return code, ccs


def ingest_mimic_like(
    event_csvs: Sequence[Path | str],
    maps: IngestionMaps,
    ccs_category: str,
) -> Cohort:
    """Parse admission-level event CSVs and keep patients whose records touch
    the selected CCS diagnosis category (at any of the three levels)."""
    frames = []
    for path in event_csvs:
        frame = pd.read_csv(path, dtype=str)
        missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
        if missing:
            raise IngestionError(f"{path}: missing required columns {missing}")
        frames.append(frame)
    table = pd.concat(frames, ignore_index=True)
    table["order"] = table["order"].astype(float)
    table["code_version"] = table["code_version"].astype(float).astype(int)

    rows = []
    for pid, group in table.groupby("patient_id", sort=True):
        group = group.sort_values("order", kind="stable")
        admission_index = {
            adm: i
            for i, adm in enumerate(dict.fromkeys(group["admission_id"]))
        }
        for _, raw in group.iterrows():
            icd9, ccs = _resolve_code(str(raw["code"]), int(raw["code_version"]), maps)
            rows.append(
                {
                    "patient_id": pid,
                    "admission_index": str(admission_index[raw["admission_id"]]),
                    "icd9": icd9,
                    "ccs1": ccs[0] if ccs else None,
                    "ccs2": ccs[1] if ccs else None,
                    "ccs3": ccs[2] if ccs else None,
                }
            )
    events = pd.DataFrame(rows)
    if maps.unmapped_icd10:
        logger.warning("%d ICD-10 codes had no GEM mapping", maps.unmapped_icd10)
    if maps.missing_ccs:
        logger.warning("%d ICD-9 codes had no CCS entry", maps.missing_ccs)

    in_category = events[["ccs1", "ccs2", "ccs3"]].eq(ccs_category).any(axis=1)
    keep_patients = set(events.loc[in_category, "patient_id"])
    if not keep_patients:
        raise IngestionError(
            f"no patients match CCS category {ccs_category!r} after filtering"
        )
    events = events[events["patient_id"].isin(keep_patients)]

    variable_columns = ["admission_index", "icd9", "ccs1", "ccs2", "ccs3"]
    schemas = build_schema(events, variable_columns)
    by_name = {s.name: s for s in schemas}
    patients = []
    for pid, group in events.groupby("patient_id", sort=True):
        recs = []
        for i, (_, row) in enumerate(group.iterrows()):
            values = tuple(
                None if row[col] is None else by_name[col].code_to_index[str(row[col])]
                for col in variable_columns
            )
            recs.append(
                EventRecord(patient_id=str(pid), position=i, values=values)
            )
        patients.append(PatientSequence(patient_id=str(pid), events=recs))
    return Cohort(schemas=schemas, patients=patients, provenance="ingested")
