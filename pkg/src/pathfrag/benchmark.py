"""Baselines and the benchmark sweep harness.

Every method produces event-level cluster labels for a synthetic cohort; the
shared tail of the pipeline (transition counting, post-processing, scoring
against the ground-truth graph) is identical across methods so the
comparison isolates the representation step.
"""

from __future__ import annotations

import json
import time
import traceback
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.decomposition import PCA

from .events import Cohort
from .inference import (
    ClusterAssignment,
    ClusterSpec,
    EncodedCohort,
    encode_cohort,
    fit_clusters,
    grid_search_clusters,
    infer_pathway,
    post_process,
)
from .metrics import MetricReport, ami, ged_detailed, wlgk
from .model import EventEncoderModel, ModelConfig
from .synth import GeneratorConfig, SyntheticPathway, emit_cohort, generate_pathway
from .training import TrainConfig, train


@dataclass(frozen=True)
class ExperimentSpec:
    num_vertices: int
    support_size: int
    zipf_a: float
    num_variables: int
    seed: int

    def generator_config(self, base: GeneratorConfig) -> GeneratorConfig:
        return GeneratorConfig(
            num_vertices=self.num_vertices,
            ba_m=base.ba_m,
            ba_p=base.ba_p,
            ba_q=base.ba_q,
            delta=base.delta,
            zipf_a=self.zipf_a,
            support_size=self.support_size,
            num_variables=self.num_variables,
            num_patients=base.num_patients,
            max_walk_events=base.max_walk_events,
            seed=self.seed,
        )


FULL_SWEEP = dict(
    num_vertices=(3, 5, 7, 9),
    support_size=(100, 1000),
    zipf_a=(1.5, 2.0, 3.0, 4.0),
    num_variables=(1, 2),
    seeds=(0, 1, 2),
)


def build_sweep(
    num_vertices: Sequence[int],
    support_size: Sequence[int],
    zipf_a: Sequence[float],
    num_variables: Sequence[int],
    seeds: Sequence[int],
) -> list[ExperimentSpec]:
    return [
        ExperimentSpec(v, s, a, k, seed)
        for v, s, a, k, seed in product(
            num_vertices, support_size, zipf_a, num_variables, seeds
        )
    ]


@dataclass
class BenchmarkConfig:
    base_generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    cluster_grid_max_k: int = 8
    cluster_metric: str = "silhouette"
    # Defrag clustering: "hdbscan" scales min_cluster_size with cohort size;
    # "grid" runs the agglomerative-k grid search instead.
    defrag_cluster: str = "hdbscan"
    min_cluster_divisor: int = 20
    # PCA baseline cluster count: "grid" selects k with the same unsupervised
    # grid search used elsewhere; "true_k" hands it the ground-truth count.
    pca_select: str = "grid"
    pca_dims: int = 8
    edge_threshold: float = 0.2
    ged_timeout: float = 60.0


def _event_index(cohort: Cohort) -> list[tuple[str, int]]:
    return [
        (p.patient_id, ev.position) for p in cohort.patients for ev in p.events
    ]


def _truth_labels(cohort: Cohort) -> np.ndarray:
    return np.array(
        [ev.truth_vertex for p in cohort.patients for ev in p.events], dtype=np.int64
    )


def _one_hot_features(cohort: Cohort) -> np.ndarray:
    offsets = np.cumsum([0] + [s.cardinality for s in cohort.schemas])
    feats = np.zeros((cohort.num_events, offsets[-1]), dtype=np.float32)
    row = 0
    for patient in cohort.patients:
        for ev in patient.events:
            for k, value in enumerate(ev.values):
                if value is not None:
                    feats[row, offsets[k] + value] = 1.0
            row += 1
    return feats


def random_baseline(
    cohort: Cohort, k_true: int, rng: np.random.Generator
) -> ClusterAssignment:
    """Uniform random labels over the true vertex count."""
    if k_true < 1:
        raise ValueError(f"k_true must be >= 1, got {k_true}")
    labels = rng.integers(0, k_true, size=cohort.num_events)
    return ClusterAssignment(labels=np.asarray(labels), num_clusters=k_true)


def _pca_encoded(cohort: Cohort, dims: int, seed: int) -> EncodedCohort:
    feats = _one_hot_features(cohort)
    if dims > feats.shape[1]:
        raise ValueError(f"dims {dims} exceeds feature dimension {feats.shape[1]}")
    projected = PCA(n_components=dims, random_state=seed).fit_transform(feats)
    return EncodedCohort(rows=projected, index=_event_index(cohort))


def pca_cluster_baseline(
    cohort: Cohort, dims: int, k: int, seed: int = 0
) -> ClusterAssignment:
    """PCA of per-event concatenated one-hot vectors, then Ward clustering."""
    encoded = _pca_encoded(cohort, dims, seed)
    return fit_clusters(encoded, ClusterSpec(algorithm="agglomerative", n_clusters=k))


def defrag_assignment(
    cohort: Cohort,
    config: BenchmarkConfig,
    objective: str,
    seed: int,
) -> ClusterAssignment:
    """Train the encoder on the cohort, encode, and grid-search clustering."""
    cards = [s.cardinality for s in cohort.schemas]
    import torch

    torch.manual_seed(seed)
    model = EventEncoderModel(config.model, cards)
    train_cfg = TrainConfig(
        steps=config.train.steps,
        batch_size=config.train.batch_size,
        learning_rate=config.train.learning_rate,
        weight_decay=config.train.weight_decay,
        window_n=config.train.window_n,
        objective=objective,
        seed=seed,
    )
    train(model, cohort, train_cfg)
    encoded = encode_cohort(model, cohort)
    if config.defrag_cluster == "hdbscan":
        min_size = max(5, encoded.rows.shape[0] // config.min_cluster_divisor)
        return fit_clusters(
            encoded, ClusterSpec(algorithm="hdbscan", min_cluster_size=min_size)
        )
    if config.defrag_cluster == "grid":
        grid = [
            ClusterSpec(algorithm="agglomerative", n_clusters=k)
            for k in range(2, config.cluster_grid_max_k + 1)
        ]
        _, assignment, _ = grid_search_clusters(encoded, grid, config.cluster_metric)
        return assignment
    raise ValueError(f"unknown defrag_cluster strategy {config.defrag_cluster!r}")


def score_assignment(
    assignment: ClusterAssignment,
    cohort: Cohort,
    truth: SyntheticPathway,
    threshold: float,
    ged_timeout: float = 60.0,
) -> MetricReport:
    """Shared scoring tail: inferred graph + AMI/GED/WLGK vs ground truth."""
    start = time.monotonic()
    inferred = post_process(infer_pathway(assignment, _event_index(cohort)), threshold)
    g_pred = inferred.to_digraph("uni")
    g_true = truth.to_digraph()
    ged_value, exact = ged_detailed(g_pred, g_true, timeout=ged_timeout)
    report = MetricReport(
        ami=ami(_truth_labels(cohort), assignment.labels),
        ged=ged_value,
        ged_norm=ged_value / truth.num_vertices,
        wlgk=wlgk(g_pred, g_true),
        runtime_seconds=time.monotonic() - start,
        ged_exact=exact,
    )
    return report


def run_method(
    method: str,
    cohort: Cohort,
    truth: SyntheticPathway,
    config: BenchmarkConfig,
    seed: int,
) -> MetricReport:
    rng = np.random.default_rng(seed)
    if method == "random":
        assignment = random_baseline(cohort, truth.num_vertices, rng)
    elif method == "pca_cluster":
        dims = min(config.pca_dims, sum(s.cardinality for s in cohort.schemas))
        if config.pca_select == "grid":
            encoded = _pca_encoded(cohort, dims, seed)
            grid = [
                ClusterSpec(algorithm="agglomerative", n_clusters=k)
                for k in range(2, config.cluster_grid_max_k + 1)
            ]
            _, assignment, _ = grid_search_clusters(
                encoded, grid, config.cluster_metric
            )
        else:
            assignment = pca_cluster_baseline(
                cohort, dims, truth.num_vertices, seed=seed
            )
    elif method == "defrag_stlo":
        assignment = defrag_assignment(cohort, config, "stlo", seed)
    elif method == "defrag_mse":
        assignment = defrag_assignment(cohort, config, "mse", seed)
    else:
        raise ValueError(f"unknown method {method!r}")
    return score_assignment(
        assignment, cohort, truth, config.edge_threshold, config.ged_timeout
    )


@dataclass
class BenchmarkResult:
    rows: pd.DataFrame  # one row per spec x method
    errors: list[dict]

    def summary(self) -> pd.DataFrame:
        """Mean (std) per method over successful experiments."""
        return self.rows.groupby("method")[["ami", "ged_norm", "wlgk"]].agg(
            ["mean", "std"]
        )

    def marginal(self, variable: str) -> pd.DataFrame:
        return self.rows.groupby(["method", variable])[
            ["ami", "ged_norm", "wlgk"]
        ].mean()

    def paired_metric(self, metric: str, method_a: str, method_b: str):
        """Aligned per-experiment metric vectors for significance testing."""
        keys = ["num_vertices", "support_size", "zipf_a", "num_variables", "seed"]
        a = self.rows[self.rows.method == method_a].set_index(keys)[metric]
        b = self.rows[self.rows.method == method_b].set_index(keys)[metric]
        joined = pd.concat([a, b], axis=1, keys=["a", "b"]).dropna()
        return joined["a"].to_numpy(), joined["b"].to_numpy()


def run_benchmark(
    sweep: Sequence[ExperimentSpec],
    methods: Sequence[str],
    config: BenchmarkConfig,
    progress: Optional[Callable[[str], None]] = None,
) -> BenchmarkResult:
    """Generate data per spec, run every method, and score; failures are
    recorded and the sweep continues."""
    rows, errors = [], []
    for spec in sweep:
        gen_cfg = spec.generator_config(config.base_generator)
        pathway = generate_pathway(gen_cfg)
        cohort = emit_cohort(pathway, gen_cfg)
        for method in methods:
            label = f"{method} on {asdict(spec)}"
            if progress:
                progress(label)
            try:
                report = run_method(method, cohort, pathway, config, spec.seed)
                rows.append({**asdict(spec), "method": method, **asdict(report)})
            except Exception as exc:
                errors.append(
                    {**asdict(spec), "method": method, "error": str(exc),
                     "traceback": traceback.format_exc()}
                )
    return BenchmarkResult(rows=pd.DataFrame(rows), errors=errors)


def save_benchmark(
    result: BenchmarkResult,
    csv_path: Path | str,
    summary_path: Path | str,
    extra_meta: Optional[dict] = None,
) -> None:
    result.rows.to_csv(csv_path, index=False)
    summary = {
        "methods": {},
        "errors": [
            {k: v for k, v in e.items() if k != "traceback"} for e in result.errors
        ],
    }
    if len(result.rows):
        for method, group in result.rows.groupby("method"):
            summary["methods"][method] = {
                metric: {
                    "mean": float(group[metric].mean()),
                    "std": float(group[metric].std(ddof=1)) if len(group) > 1 else 0.0,
                }
                for metric in ("ami", "ged_norm", "wlgk")
            }
    if extra_meta:
        summary["meta"] = extra_meta
    Path(summary_path).write_text(json.dumps(summary, indent=2))
