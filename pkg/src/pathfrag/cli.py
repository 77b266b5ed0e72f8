"""Command-line entry points for the pathway-inference pipeline.

Every command reads a YAML config (``--config``), optionally patched with
repeatable ``--set section.key=value`` overrides, and writes its artifacts
under ``--out``. Artifacts embed the resolved config and seed.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import benchmark as bench_mod
from . import inference as infer_mod
from .config import ConfigError, RunConfig, load_config
from .events import load_cohort, save_cohort
from .ingest import IngestionMaps, ingest_mimic_like
from .metrics import ami, ged_detailed, wlgk
from .model import EventEncoderModel, load_checkpoint, save_checkpoint
from .synth import emit_cohort, generate_pathway, load_pathway, save_pathway
from .training import train as run_training


def _load(config_path: str, sets: tuple[str, ...], seed) -> RunConfig:
    try:
        overrides = list(sets)
        if seed is not None:
            overrides += [f"generator.seed={seed}", f"train.seed={seed}"]
        return load_config(config_path, overrides)
    except FileNotFoundError as exc:
        click.echo(str(exc), err=True)
        sys.exit(2)
    except ConfigError as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)


def _common(fn):
    fn = click.option("--config", "config_path", required=True, help="YAML run config")(fn)
    fn = click.option("--set", "sets", multiple=True, metavar="KEY=VALUE",
                      help="override a config value (repeatable)")(fn)
    fn = click.option("--seed", type=int, default=None, help="override generator/train seed")(fn)
    fn = click.option("--out", "out_dir", default=None, help="output directory")(fn)
    return fn


def _outdir(cfg: RunConfig, out_dir) -> Path:
    path = Path(out_dir or cfg.io.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _meta(cfg: RunConfig) -> dict:
    return {"config": cfg.resolved, "seed": cfg.generator.seed}


@click.group()
def main():
    """Treatment-pathway inference from event-log health records."""


@main.command()
@_common
def synth(config_path, sets, seed, out_dir):
    """Generate a ground-truth pathway and a synthetic cohort."""
    cfg = _load(config_path, sets, seed)
    out = _outdir(cfg, out_dir)
    pathway = generate_pathway(cfg.generator)
    cohort = emit_cohort(pathway, cfg.generator)
    save_pathway(pathway, out / "pathway_true.json", extra_meta=_meta(cfg))
    save_cohort(cohort, out / "cohort.csv", out / "schemas.json", extra_meta=_meta(cfg))
    click.echo(
        f"wrote {cohort.num_events} events from {len(cohort.patients)} patients to {out}"
    )


@main.command()
@_common
def train(config_path, sets, seed, out_dir):
    """Train the event encoder on a cohort; writes checkpoint + loss CSV."""
    cfg = _load(config_path, sets, seed)
    out = _outdir(cfg, out_dir)
    cohort = load_cohort(out / "cohort.csv", out / "schemas.json")
    import torch

    torch.manual_seed(cfg.train.seed)
    model = EventEncoderModel(cfg.model, [s.cardinality for s in cohort.schemas])
    history = run_training(
        model, cohort, cfg.train, cfg.loss, history_path=out / "loss_history.csv"
    )
    save_checkpoint(
        model, out / "checkpoint.pt", cohort.schema_fingerprint(),
        extra={"run": _meta(cfg) | {"seed": cfg.train.seed}},
    )
    click.echo(
        f"trained {cfg.train.steps} steps; final loss {history[-1].loss:.4f}; wrote {out / 'checkpoint.pt'}"
    )


@main.command()
@_common
def infer(config_path, sets, seed, out_dir):
    """Encode, cluster, and infer the pathway graph from a trained model."""
    cfg = _load(config_path, sets, seed)
    out = _outdir(cfg, out_dir)
    cohort = load_cohort(out / "cohort.csv", out / "schemas.json")
    model, _ = load_checkpoint(out / "checkpoint.pt", cohort.schema_fingerprint())
    encoded = infer_mod.encode_cohort(model, cohort)
    if cfg.cluster.grid_search:
        grid = [
            infer_mod.ClusterSpec(algorithm="agglomerative", n_clusters=k,
                                  linkage=cfg.cluster.linkage)
            for k in range(2, cfg.cluster.grid_max_k + 1)
        ]
        spec, assignment, table = infer_mod.grid_search_clusters(
            encoded, grid, cfg.cluster.grid_metric
        )
        click.echo(f"grid search selected {spec.describe()}")
    else:
        spec = infer_mod.ClusterSpec(
            algorithm=cfg.cluster.algorithm,
            n_clusters=cfg.cluster.n_clusters,
            linkage=cfg.cluster.linkage,
            min_cluster_size=cfg.cluster.min_cluster_size,
            min_samples=cfg.cluster.min_samples,
        )
        assignment = infer_mod.fit_clusters(encoded, spec)
    pathway = infer_mod.post_process(
        infer_mod.infer_pathway(assignment, encoded.index), cfg.infer.threshold
    )
    infer_mod.save_pathway_json(
        pathway, assignment, out / "pathway_inferred.json", extra_meta=_meta(cfg)
    )
    (out / "pathway_inferred.dot").write_text(infer_mod.pathway_to_dot(pathway))
    with open(out / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "position", "cluster"])
        for (pid, position), label in zip(encoded.index, assignment.labels):
            writer.writerow([pid, position, int(label)])
    histograms, _, mean_entropy = infer_mod.tfidf_summary(
        assignment, cohort, cfg.infer.tfidf_variable
    )
    infer_mod.save_cluster_summary_csv(histograms, out / "cluster_summary.csv")
    click.echo(
        f"inferred {assignment.num_clusters} clusters, "
        f"{infer_mod.transition_count(pathway)} transitions, "
        f"mean tfidf entropy {mean_entropy:.3f} bits; wrote {out}"
    )


@main.command("eval")
@_common
def eval_cmd(config_path, sets, seed, out_dir):
    """Score an inferred pathway against the ground-truth pathway."""
    cfg = _load(config_path, sets, seed)
    out = _outdir(cfg, out_dir)
    truth = load_pathway(out / "pathway_true.json")
    inferred_payload = json.loads((out / "pathway_inferred.json").read_text())
    uni = np.asarray(inferred_payload["adjacency_uni"], dtype=float)
    inferred = infer_mod.InferredPathway(
        adjacency_bi=np.asarray(inferred_payload["adjacency_bi"], dtype=float),
        adjacency_uni=uni,
        threshold_used=inferred_payload.get("threshold"),
    )
    cohort = load_cohort(out / "cohort.csv", out / "schemas.json")
    truth_labels, pred_labels = [], []
    labels = {}
    with open(out / "labels.csv") as fh:
        for row in csv.DictReader(fh):
            labels[(row["patient_id"], int(row["position"]))] = int(row["cluster"])
    for patient in cohort.patients:
        for ev in patient.events:
            truth_labels.append(ev.truth_vertex)
            pred_labels.append(labels[(patient.patient_id, ev.position)])
    g_pred = inferred.to_digraph("uni")
    g_true = truth.to_digraph()
    ged_value, exact = ged_detailed(g_pred, g_true, timeout=cfg.eval.ged_timeout)
    report = {
        "ami": ami(truth_labels, pred_labels),
        "ged": ged_value,
        "ged_norm": ged_value / truth.num_vertices,
        "ged_exact": exact,
        "wlgk": wlgk(g_pred, g_true),
        "meta": _meta(cfg),
    }
    (out / "metrics.json").write_text(json.dumps(report, indent=2))
    click.echo(
        f"AMI {report['ami']:.3f}  GED {report['ged']:.1f}  "
        f"GED-norm {report['ged_norm']:.3f}  WLGK {report['wlgk']:.3f}"
    )


@main.command()
@_common
@click.option("--dry-run", is_flag=True, help="list planned experiments and exit")
def bench(config_path, sets, seed, out_dir, dry_run):
    """Run the benchmark sweep over generator settings and methods."""
    cfg = _load(config_path, sets, seed)
    sweep = bench_mod.build_sweep(
        cfg.eval.num_vertices, cfg.eval.support_size, cfg.eval.zipf_a,
        cfg.eval.num_variables, cfg.eval.seeds,
    )
    if dry_run:
        for spec in sweep:
            click.echo(
                f"V={spec.num_vertices} |X|={spec.support_size} a={spec.zipf_a} "
                f"k={spec.num_variables} seed={spec.seed}"
            )
        click.echo(f"{len(sweep)} planned experiments x {len(cfg.eval.methods)} methods")
        return
    out = _outdir(cfg, out_dir)
    config = bench_mod.BenchmarkConfig(
        base_generator=cfg.generator,
        model=cfg.model,
        train=cfg.train,
        cluster_grid_max_k=cfg.eval.cluster_grid_max_k,
        cluster_metric=cfg.eval.cluster_metric,
        defrag_cluster=cfg.eval.defrag_cluster,
        min_cluster_divisor=cfg.eval.min_cluster_divisor,
        pca_select=cfg.eval.pca_select,
        pca_dims=cfg.eval.pca_dims,
        edge_threshold=cfg.eval.edge_threshold,
        ged_timeout=cfg.eval.ged_timeout,
    )
    result = bench_mod.run_benchmark(
        sweep, cfg.eval.methods, config, progress=lambda msg: click.echo(msg, err=True)
    )
    bench_mod.save_benchmark(
        result, out / "bench_results.csv", out / "bench_summary.json",
        extra_meta=_meta(cfg),
    )
    click.echo(f"wrote {len(result.rows)} result rows, {len(result.errors)} failures to {out}")


@main.command()
@_common
def report(config_path, sets, seed, out_dir):
    """Render mean (std) and marginal tables from benchmark results."""
    import pandas as pd

    cfg = _load(config_path, sets, seed)
    out = _outdir(cfg, out_dir)
    rows = pd.read_csv(out / "bench_results.csv")
    result = bench_mod.BenchmarkResult(rows=rows, errors=[])
    lines = ["method summary: mean (std)"]
    for method, group in rows.groupby("method"):
        cells = [
            f"{metric} {group[metric].mean():.2f} ({group[metric].std(ddof=1) if len(group) > 1 else 0.0:.2f})"
            for metric in ("ami", "ged_norm", "wlgk")
        ]
        lines.append(f"  {method:<14} " + "  ".join(cells))
    for variable in ("num_vertices", "support_size", "zipf_a", "num_variables"):
        if variable in rows.columns and rows[variable].nunique() > 1:
            lines.append(f"marginal by {variable}:")
            lines.append(result.marginal(variable).round(3).to_string())
    text = "\n".join(lines)
    (out / "bench_report.txt").write_text(text + "\n")
    click.echo(text)


@main.command()
@_common
@click.option("--events", "event_csvs", multiple=True, required=True,
              help="event CSV path (repeatable)")
@click.option("--gem", "gem_csv", required=True, help="ICD-10 to ICD-9 mapping CSV")
@click.option("--ccs", "ccs_csv", required=True, help="ICD-9 to CCS hierarchy CSV")
@click.option("--category", required=True, help="CCS diagnosis category selector")
def ingest(config_path, sets, seed, out_dir, event_csvs, gem_csv, ccs_csv, category):
    """Ingest MIMIC-shaped CSVs into a cohort CSV + schema JSON."""
    cfg = _load(config_path, sets, seed)
    out = _outdir(cfg, out_dir)
    maps = IngestionMaps.from_files(gem_csv, ccs_csv)
    cohort = ingest_mimic_like(list(event_csvs), maps, category)
    save_cohort(cohort, out / "cohort.csv", out / "schemas.json", extra_meta=_meta(cfg))
    click.echo(
        f"ingested {len(cohort.patients)} patients ({cohort.num_events} events); "
        f"{maps.unmapped_icd10} unmapped ICD-10 codes"
    )


if __name__ == "__main__":
    main()
