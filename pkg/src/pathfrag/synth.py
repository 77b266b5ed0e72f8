"""Synthetic cohort generation from random ground-truth pathway graphs.

A directed scale-free graph is the ground-truth pathway; patients are random
walks through it, dwelling at each vertex for a geometric number of events.
Each (vertex, variable) pair emits codes from a truncated Zipf distribution
over a private random permutation of the support, so different vertices have
different modal codes almost surely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import networkx as nx
import numpy as np

from .events import Cohort, EventRecord, PatientSequence, VariableSchema


class GenerationError(RuntimeError):
    pass


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    num_vertices: int = 6
    ba_m: int = 1
    ba_p: float = 0.1
    ba_q: float = 0.0
    delta: float = 0.6
    zipf_a: float = 3.0
    support_size: int = 100
    num_variables: int = 1
    num_patients: int = 1000
    max_walk_events: int = 200
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.delta <= 1):
            raise ValueError(f"delta must be in (0, 1], got {self.delta}")
        if self.zipf_a <= 1:
            raise ValueError(f"zipf_a must be > 1, got {self.zipf_a}")
        if self.support_size < 2:
            raise ValueError(f"support_size must be >= 2, got {self.support_size}")
        if self.ba_p + self.ba_q >= 1:
            raise ValueError(f"ba_p + ba_q must be < 1, got {self.ba_p + self.ba_q}")


@dataclass(frozen=True)
class EmissionModel:
    """Truncated Zipf over ranks 1..|X|, routed through a code permutation."""

    permutation: np.ndarray  # permutation[rank_index] = code index
    exponent: float

    def pmf_by_rank(self) -> np.ndarray:
        ranks = np.arange(1, len(self.permutation) + 1, dtype=np.float64)
        weights = ranks ** (-self.exponent)
        return weights / weights.sum()

    def pmf_by_code(self) -> np.ndarray:
        pmf = np.zeros(len(self.permutation))
        pmf[self.permutation] = self.pmf_by_rank()
        return pmf

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        ranks = rng.choice(len(self.permutation), size=size, p=self.pmf_by_rank())
        return self.permutation[ranks]


@dataclass
class SyntheticPathway:
    num_vertices: int
    edges: set[tuple[int, int]]
    emissions: dict[tuple[int, int], EmissionModel]  # (vertex, variable) -> model

    @property
    def start_set(self) -> list[int]:
        indeg = {v: 0 for v in range(self.num_vertices)}
        for _, dst in self.edges:
            indeg[dst] += 1
        return [v for v in range(self.num_vertices) if indeg[v] == 0]

    @property
    def end_set(self) -> list[int]:
        outdeg = {v: 0 for v in range(self.num_vertices)}
        for src, _ in self.edges:
            outdeg[src] += 1
        return [v for v in range(self.num_vertices) if outdeg[v] == 0]

    def out_neighbors(self, v: int) -> list[int]:
        return sorted(dst for src, dst in self.edges if src == v)

    def to_digraph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(range(self.num_vertices))
        g.add_edges_from(sorted(self.edges))
        return g


def generate_pathway(config: GeneratorConfig) -> SyntheticPathway:
    """Generate a directed scale-free ground-truth pathway with emissions.

    The preferential-attachment graph is grown undirected (extended
    Barabási–Albert moves: new node / new edges / rewiring), then every edge
    is oriented from its earlier-generated endpoint to the later one. If that
    orientation yields no start vertex (degenerate case), the seed is bumped
    and generation retried up to 16 times.
    """
    for attempt in range(16):
        seed = config.seed + attempt
        if config.num_vertices == 1:
            edges: set[tuple[int, int]] = set()
        else:
            g = nx.extended_barabasi_albert_graph(
                config.num_vertices, config.ba_m, config.ba_p, config.ba_q, seed=seed
            )
            # Node ids are generation order in the networkx growth loop.
            edges = {(min(u, v), max(u, v)) for u, v in g.edges()}
        pathway = SyntheticPathway(
            num_vertices=config.num_vertices, edges=edges, emissions={}
        )
        if pathway.start_set:
            break
    else:
        raise GenerationError(
            f"no start vertices after 16 attempts from seed {config.seed}"
        )

    emission_rng = np.random.default_rng([config.seed, 0x0E])
    for v in range(config.num_vertices):
        for k in range(config.num_variables):
            perm = emission_rng.permutation(config.support_size)
            pathway.emissions[(v, k)] = EmissionModel(
                permutation=perm, exponent=config.zipf_a
            )
    return pathway


def random_walk(
    pathway: SyntheticPathway,
    delta: float,
    max_walk_events: int,
    rng: np.random.Generator,
) -> list[int]:
    """Walk the pathway: advance with probability delta, else dwell.

    The walk starts uniformly over start vertices and ends when an advance is
    drawn at a vertex with no out-neighbors, or at the event cap.
    """
    starts = pathway.start_set
    if not starts:
        raise GenerationError("pathway has no start vertices")
    v = int(rng.choice(starts))
    walk = [v]
    while len(walk) < max_walk_events:
        if rng.random() < delta:
            succ = pathway.out_neighbors(v)
            if not succ:
                break
            v = int(rng.choice(succ))
        walk.append(v)
    return walk


def _code_label(index: int, support_size: int) -> str:
    width = len(str(support_size - 1))
    return f"c{index:0{width}d}"


def emit_cohort(pathway: SyntheticPathway, config: GeneratorConfig) -> Cohort:
    """Emit one patient sequence per walk, recording ground-truth vertices.

    Each patient uses an rng substream keyed on (seed, patient index), so
    emission is reproducible and order-independent across patients.
    """
    schemas = [
        VariableSchema(
            variable_id=k,
            name=f"var{k}",
            code_to_index={
                _code_label(i, config.support_size): i
                for i in range(config.support_size)
            },
        )
        for k in range(config.num_variables)
    ]
    patients = []
    for p in range(config.num_patients):
        rng = np.random.default_rng([config.seed, 1, p])
        walk = random_walk(pathway, config.delta, config.max_walk_events, rng)
        per_var = [
            np.concatenate(
                [pathway.emissions[(v, k)].sample(rng, 1) for v in walk]
            )
            for k in range(config.num_variables)
        ]
        pid = f"p{p:06d}"
        events = [
            EventRecord(
                patient_id=pid,
                position=i,
                values=tuple(int(per_var[k][i]) for k in range(config.num_variables)),
                truth_vertex=v,
            )
            for i, v in enumerate(walk)
        ]
        patients.append(PatientSequence(patient_id=pid, events=events))
    return Cohort(schemas=schemas, patients=patients, provenance="synthetic")


def rank_frequency(cohort: Cohort, variable: int = 0) -> np.ndarray:
    """Normalized descending code frequencies pooled over all events."""
    counts = np.zeros(cohort.schemas[variable].cardinality)
    for patient in cohort.patients:
        for ev in patient.events:
            value = ev.values[variable]
            if value is not None:
                counts[value] += 1
    counts = np.sort(counts)[::-1]
    total = counts.sum()
    if total == 0:
        raise ReportError("cohort has no non-missing events for the variable")
    return counts / total


def plausibility_report(
    cohort: Cohort, reference_rank_freq: np.ndarray, variable: int = 0
) -> tuple[float, np.ndarray]:
    """KL(reference || synthetic) over the shared rank-frequency prefix.

    The synthetic side gets additive smoothing 1e-9 so reference mass on
    ranks the cohort never produced stays finite.
    """
    reference = np.asarray(reference_rank_freq, dtype=np.float64)
    if reference.size == 0:
        raise ReportError("reference rank-frequency vector is empty")
    synthetic = rank_frequency(cohort, variable)
    shared = min(len(reference), len(synthetic))
    ref, syn = reference[:shared], synthetic[:shared] + 1e-9
    mask = ref > 0
    kl = float(np.sum(ref[mask] * np.log(ref[mask] / syn[mask])))
    return kl, synthetic


def save_pathway(pathway: SyntheticPathway, path: Path | str,
                 extra_meta: Optional[dict] = None) -> None:
    payload = {
        "num_vertices": pathway.num_vertices,
        "edges": sorted(list(e) for e in pathway.edges),
        "start_set": pathway.start_set,
        "end_set": pathway.end_set,
        "emissions": [
            {
                "vertex": v,
                "variable": k,
                "exponent": model.exponent,
                "permutation": model.permutation.tolist(),
            }
            for (v, k), model in sorted(pathway.emissions.items())
        ],
    }
    if extra_meta:
        payload["meta"] = extra_meta
    Path(path).write_text(json.dumps(payload, indent=2))


def load_pathway(path: Path | str) -> SyntheticPathway:
    payload = json.loads(Path(path).read_text())
    return SyntheticPathway(
        num_vertices=payload["num_vertices"],
        edges={tuple(e) for e in payload["edges"]},
        emissions={
            (e["vertex"], e["variable"]): EmissionModel(
                permutation=np.asarray(e["permutation"], dtype=np.int64),
                exponent=e["exponent"],
            )
            for e in payload["emissions"]
        },
    )
