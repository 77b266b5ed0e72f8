"""Pathway inference: encode whole sequences, cluster, build the transition
graph, and post-process it into a unidirectional adjacency."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import networkx as nx
import numpy as np
import torch
from sklearn.cluster import HDBSCAN, AgglomerativeClustering
from sklearn.metrics import (
    calinski_harabasz_score,
    davies_bouldin_score,
    silhouette_score,
)

from .events import Cohort, encode_window
from .model import EventEncoderModel

NOISE = -1


class ClusteringError(ValueError):
    pass


@dataclass
class EncodedCohort:
    rows: np.ndarray  # (total events, d)
    index: list[tuple[str, int]]  # (patient_id, position) per row

    def __post_init__(self):
        if len(self.index) != self.rows.shape[0]:
            raise ValueError("index length must equal row count")


@dataclass(frozen=True)
class ClusterSpec:
    algorithm: str = "agglomerative"  # "agglomerative" | "hdbscan"
    n_clusters: int = 5
    linkage: str = "ward"
    min_cluster_size: int = 5
    min_samples: Optional[int] = None

    def describe(self) -> str:
        if self.algorithm == "agglomerative":
            return f"agglomerative(k={self.n_clusters}, linkage={self.linkage})"
        return f"hdbscan(min_cluster_size={self.min_cluster_size}, min_samples={self.min_samples})"


@dataclass
class ClusterAssignment:
    labels: np.ndarray  # NOISE (-1) allowed
    num_clusters: int

    def __post_init__(self):
        found = sorted(set(self.labels[self.labels != NOISE]))
        if found and not (found[0] >= 0 and found[-1] < self.num_clusters):
            raise ClusteringError(
                f"labels {found} outside [0, {self.num_clusters})"
            )


@dataclass
class InferredPathway:
    adjacency_bi: np.ndarray  # (V, V) nonnegative, zero diagonal
    adjacency_uni: Optional[np.ndarray] = None
    threshold_used: Optional[float] = None
    cluster_ids: Optional[list[int]] = None

    @property
    def num_vertices(self) -> int:
        return self.adjacency_bi.shape[0]

    def to_digraph(self, which: str = "uni") -> nx.DiGraph:
        adj = self.adjacency_uni if which == "uni" else self.adjacency_bi
        if adj is None:
            raise ValueError("adjacency_uni not computed; run post_process first")
        g = nx.DiGraph()
        g.add_nodes_from(range(self.num_vertices))
        for i, j in zip(*np.nonzero(adj)):
            g.add_edge(int(i), int(j), weight=float(adj[i, j]))
        return g


def encode_cohort(model: EventEncoderModel, cohort: Cohort) -> EncodedCohort:
    """Encode each patient's full sequence in one pass of its own length."""
    cards = [s.cardinality for s in cohort.schemas]
    if cards != model.cardinalities:
        raise ClusteringError(
            f"model cardinalities {model.cardinalities} do not match cohort {cards}"
        )
    model.eval()
    rows, index = [], []
    with torch.no_grad():
        for patient in cohort.patients:
            window = encode_window(patient, cohort.schemas, 0, len(patient))
            _, s_enc, _ = model.run_window(window)
            rows.append(s_enc.numpy())
            index.extend((patient.patient_id, ev.position) for ev in patient.events)
    return EncodedCohort(rows=np.concatenate(rows, axis=0), index=index)


def _densify(raw_labels: np.ndarray) -> ClusterAssignment:
    uniques = sorted(set(raw_labels[raw_labels != NOISE]))
    remap = {old: new for new, old in enumerate(uniques)}
    labels = np.array([NOISE if l == NOISE else remap[l] for l in raw_labels])
    return ClusterAssignment(labels=labels, num_clusters=len(uniques))


def fit_clusters(encoded: EncodedCohort, spec: ClusterSpec) -> ClusterAssignment:
    n_rows = encoded.rows.shape[0]
    if n_rows < 2:
        raise ClusteringError(f"need >= 2 rows to cluster, got {n_rows}")
    if spec.algorithm == "agglomerative":
        if spec.n_clusters > n_rows:
            raise ClusteringError(
                f"requested {spec.n_clusters} clusters from {n_rows} rows"
            )
        algo = AgglomerativeClustering(n_clusters=spec.n_clusters, linkage=spec.linkage)
        raw = algo.fit_predict(encoded.rows)
    elif spec.algorithm == "hdbscan":
        algo = HDBSCAN(
            min_cluster_size=spec.min_cluster_size, min_samples=spec.min_samples
        )
        raw = algo.fit_predict(encoded.rows)
    else:
        raise ClusteringError(f"unknown clustering algorithm {spec.algorithm!r}")
    return _densify(np.asarray(raw))


_METRICS = {
    "silhouette": (silhouette_score, 1.0),
    "calinski_harabasz": (calinski_harabasz_score, 1.0),
    "davies_bouldin": (davies_bouldin_score, -1.0),  # lower is better, negated
}


def grid_search_clusters(
    encoded: EncodedCohort,
    grid: Sequence[ClusterSpec],
    metric: str = "silhouette",
) -> tuple[ClusterSpec, ClusterAssignment, list[dict]]:
    """Fit every spec and keep the best by the chosen unsupervised metric.

    Scores are computed over non-noise points. The full score table is
    returned; Calinski-Harabasz rows also carry the square root of the score
    for readability given its quadratic scaling.
    """
    if not grid:
        raise ClusteringError("clustering grid is empty")
    if metric not in _METRICS:
        raise ClusteringError(f"unknown metric {metric!r}")
    score_fn, sign = _METRICS[metric]
    table: list[dict] = []
    best = None
    for spec in grid:
        entry: dict = {"spec": spec.describe()}
        try:
            assignment = fit_clusters(encoded, spec)
            keep = assignment.labels != NOISE
            kept_labels = assignment.labels[keep]
            if len(set(kept_labels)) < 2:
                raise ClusteringError("fewer than 2 non-noise clusters")
            raw_score = float(score_fn(encoded.rows[keep], kept_labels))
            entry["score"] = raw_score
            entry["num_clusters"] = assignment.num_clusters
            if metric == "calinski_harabasz":
                entry["sqrt_score"] = math.sqrt(raw_score)
            ranked = sign * raw_score
            if best is None or ranked > best[0]:
                best = (ranked, spec, assignment)
        except Exception as exc:  # per-spec failures are recorded, not fatal
            entry["error"] = str(exc)
        table.append(entry)
    if best is None:
        causes = "; ".join(f"{e['spec']}: {e.get('error')}" for e in table)
        raise ClusteringError(f"every clustering spec failed: {causes}")
    return best[1], best[2], table


def cluster_sequences(
    assignment: ClusterAssignment, index: Sequence[tuple[str, int]]
) -> dict[str, list[int]]:
    """Per-patient cluster label sequences in position order, noise dropped."""
    by_patient: dict[str, list[tuple[int, int]]] = {}
    for label, (pid, position) in zip(assignment.labels, index):
        by_patient.setdefault(pid, []).append((position, int(label)))
    return {
        pid: [l for _, l in sorted(pairs) if l != NOISE]
        for pid, pairs in by_patient.items()
    }


def infer_pathway(
    assignment: ClusterAssignment, index: Sequence[tuple[str, int]]
) -> InferredPathway:
    """Accumulate adjacent unequal-cluster transitions over all patients."""
    v = assignment.num_clusters
    adj = np.zeros((v, v), dtype=np.float64)
    for labels in cluster_sequences(assignment, index).values():
        for a, b in zip(labels, labels[1:]):
            if a != b:
                adj[a, b] += 1
    return InferredPathway(adjacency_bi=adj, cluster_ids=list(range(v)))


def post_process(pathway: InferredPathway, threshold: float = 0.0) -> InferredPathway:
    """Collapse to unidirectional edges, normalize, and optionally binarize.

    The antisymmetric difference keeps only the stronger direction of each
    pair; ties cancel to zero. With threshold > 0 the surviving entries are
    set to 1.
    """
    uni = pathway.adjacency_bi - pathway.adjacency_bi.T
    uni = np.clip(uni, 0, None)
    peak = uni.max() if uni.size else 0.0
    if peak > 0:
        uni = uni / peak
    if threshold > 0:
        uni = np.where(uni >= threshold, 1.0, 0.0)
    return replace(pathway, adjacency_uni=uni, threshold_used=threshold)


def transition_count(pathway: InferredPathway) -> int:
    adj = pathway.adjacency_bi
    return int(adj.sum() - np.trace(adj))


def tfidf_summary(
    assignment: ClusterAssignment,
    cohort: Cohort,
    variable: int = 0,
) -> tuple[dict[int, dict[str, float]], dict[int, float], float]:
    """TF-IDF weighted code histograms per cluster, plus entropies.

    Clusters are documents of codes; idf = log(C / clusters containing the
    code). With a single cluster all idfs vanish, so the tf-only histogram is
    used. Entropies are in bits; the returned scalar is the cluster mean.
    """
    schema = cohort.schemas[variable]
    order = []
    for patient in cohort.patients:
        for ev in patient.events:
            order.append(ev)
    if len(order) != len(assignment.labels):
        raise ClusteringError("assignment does not cover every event")
    tf: dict[int, Counter] = {}
    for ev, label in zip(order, assignment.labels):
        if label == NOISE:
            continue
        value = ev.values[variable]
        if value is None:
            continue
        tf.setdefault(int(label), Counter())[schema.index_to_code[value]] += 1
    num_clusters = max(len(tf), 1)
    doc_freq: Counter = Counter()
    for counts in tf.values():
        doc_freq.update(set(counts))
    histograms: dict[int, dict[str, float]] = {}
    entropies: dict[int, float] = {}
    for cluster, counts in sorted(tf.items()):
        weighted = {
            code: count * math.log(num_clusters / doc_freq[code])
            for code, count in counts.items()
        }
        if sum(weighted.values()) == 0:
            weighted = {code: float(count) for code, count in counts.items()}
        histograms[cluster] = weighted
        total = sum(weighted.values())
        entropy = 0.0
        if total > 0:
            for weight in weighted.values():
                p = weight / total
                if p > 0:
                    entropy -= p * math.log2(p)
        entropies[cluster] = entropy
    mean_entropy = float(np.mean(list(entropies.values()))) if entropies else 0.0
    return histograms, entropies, mean_entropy


# ---------------------------------------------------------------------------
# Exports

def save_pathway_json(
    pathway: InferredPathway,
    assignment: ClusterAssignment,
    path: Path | str,
    extra_meta: Optional[dict] = None,
) -> None:
    sizes = Counter(int(l) for l in assignment.labels)
    payload = {
        "num_vertices": pathway.num_vertices,
        "adjacency_bi": pathway.adjacency_bi.tolist(),
        "adjacency_uni": None
        if pathway.adjacency_uni is None
        else pathway.adjacency_uni.tolist(),
        "threshold": pathway.threshold_used,
        "cluster_sizes": {str(k): v for k, v in sorted(sizes.items())},
        "noise_fraction": float(np.mean(assignment.labels == NOISE)),
    }
    if extra_meta:
        payload["meta"] = extra_meta
    Path(path).write_text(json.dumps(payload, indent=2))


def pathway_to_dot(pathway: InferredPathway, which: str = "uni") -> str:
    adj = pathway.adjacency_uni if which == "uni" else pathway.adjacency_bi
    if adj is None:
        raise ValueError("adjacency_uni not computed; run post_process first")
    lines = ["digraph pathway {"]
    for v in range(pathway.num_vertices):
        lines.append(f'  n{v} [label="C{v}"];')
    for i, j in zip(*np.nonzero(adj)):
        lines.append(f'  n{i} -> n{j} [label="{adj[i, j]:.2f}"];')
    lines.append("}")
    return "\n".join(lines)


def save_cluster_summary_csv(
    histograms: dict[int, dict[str, float]], path: Path | str
) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster", "code", "tfidf_weight"])
        for cluster, weights in sorted(histograms.items()):
            for code, weight in sorted(weights.items(), key=lambda kv: -kv[1]):
                writer.writerow([cluster, code, weight])
