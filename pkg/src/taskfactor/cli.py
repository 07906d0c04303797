"""Command-line interface.

Subcommands cover each pipeline stage (normalize, embed, cluster, efa,
nfactors, residualize, robustness, rank, lengths, diversity) plus `run`,
which executes the whole pipeline from a TOML config. Outputs are plain
CSV/JSON files written with stable formatting: two runs with the same
inputs and config produce byte-identical files. Nothing here depends on
wall-clock time.

Exit codes: 0 success, 1 for data-format or validation problems, 2 for
numeric failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .clustering import cut_tree, to_merge_json, to_newick, ward_linkage
from .data_model import (
    LabeledMatrix,
    format_value,
    load_performance_table,
    load_task_metadata,
    read_labeled_csv,
    validate_dataset,
    write_labeled_csv,
)
from .embedding import TaskFeatures, cosine_similarity, mean_similarity_ranking, svd_task_features
from .errors import DataFormatError, NumericError, TaskFactorError, ValidationFailure
from .factor_analysis import (
    EfaModel,
    FactorCountReport,
    SignificantLoadings,
    communalities,
    factor_count_report,
    fit_efa,
    loo_robustness,
    residualize_dominant,
    resolve_factor_count,
    significant_loadings,
    varimax_criterion,
    varimax_rotate,
)
from .normalization import (
    AggregateMatrix,
    aggregate_models,
    normalize_table,
    read_aggregate_csv,
    write_aggregate_csv,
    zero_shot_means,
)
from .reporting import (
    LengthCrossTable,
    RankingTable,
    generalized_variance,
    harmonic_rank,
    length_group_table,
    read_token_counts_csv,
    read_token_counts_text,
    word_entropy,
)

FEATURES_CORNER = "target_task"


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Resolved pipeline configuration."""

    tables: list[tuple[str, Path]]
    metadata: Path
    embedding_rank: int = 8
    factors: int | str = 6
    cutoffs: tuple[float, ...] = (0.3, 0.6)
    seed: int | None = None
    replications: int = 100
    percentile: float = 95.0
    literal_eq1: bool = False
    center: bool = False
    strict: bool = False
    out_dir: Path = field(default_factory=lambda: Path("out"))

    def effective_seed(self) -> int:
        """The seed actually used; strict mode refuses to default it."""
        if self.seed is not None:
            return self.seed
        if self.strict:
            raise ValidationFailure(
                "config field 'seed' is required in strict mode because the "
                "factor-count step is stochastic"
            )
        warnings.warn(
            "no seed configured; defaulting to 0", RuntimeWarning, stacklevel=2
        )
        return 0


def load_config(path: str | Path) -> RunConfig:
    """Parse a TOML config; relative paths resolve against its directory."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise DataFormatError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise DataFormatError(f"{path}: invalid TOML ({exc})") from None
    base = path.parent

    inputs = doc.get("inputs", {})
    tables_raw = inputs.get("tables", {})
    if not isinstance(tables_raw, dict) or not tables_raw:
        raise ValidationFailure(
            f"{path}: [inputs.tables] must map model ids to CSV paths"
        )
    tables = [(model, base / p) for model, p in tables_raw.items()]
    metadata_raw = inputs.get("metadata")
    if not metadata_raw:
        raise ValidationFailure(f"{path}: inputs.metadata is required")

    analysis = doc.get("analysis", {})
    flags = doc.get("flags", {})
    output = doc.get("output", {})

    factors = analysis.get("factors", 6)
    if not (factors == "auto" or (isinstance(factors, int) and factors >= 1)):
        raise ValidationFailure(
            f"{path}: analysis.factors must be a positive integer or 'auto'"
        )
    cutoffs = tuple(float(c) for c in analysis.get("cutoffs", [0.3, 0.6]))
    for c in cutoffs:
        if not 0.0 < c < 1.0:
            raise ValidationFailure(f"{path}: cutoff {c} outside (0, 1)")
    seed = analysis.get("seed")
    if seed is not None and not isinstance(seed, int):
        raise ValidationFailure(f"{path}: analysis.seed must be an integer")

    return RunConfig(
        tables=tables,
        metadata=base / metadata_raw,
        embedding_rank=int(analysis.get("embedding_rank", 8)),
        factors=factors,
        cutoffs=cutoffs,
        seed=seed,
        replications=int(analysis.get("replications", 100)),
        percentile=float(analysis.get("percentile", 95.0)),
        literal_eq1=bool(flags.get("literal_eq1", False)),
        center=bool(flags.get("center", False)),
        strict=bool(flags.get("strict", False)),
        out_dir=base / output.get("directory", "out"),
    )


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    if getattr(args, "out", None):
        config.out_dir = Path(args.out)
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "factors", None) is not None:
        config.factors = args.factors if args.factors == "auto" else int(args.factors)
    if getattr(args, "rank", None) is not None:
        config.embedding_rank = args.rank
    if getattr(args, "cutoffs", None):
        config.cutoffs = tuple(float(c) for c in args.cutoffs.split(","))
    if getattr(args, "replications", None) is not None:
        config.replications = args.replications
    if getattr(args, "percentile", None) is not None:
        config.percentile = args.percentile
    if getattr(args, "literal_eq1", False):
        config.literal_eq1 = True
    if getattr(args, "center", False):
        config.center = True
    if getattr(args, "strict", False):
        config.strict = True
    return config


# ---------------------------------------------------------------------------
# serialization helpers


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def _write_json(doc: dict, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _write_csv_rows(path: Path, header: list[str], rows: list[list[str]]) -> None:
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x: float) -> str:
    return format_value(float(x))


def _features_matrix(features: TaskFeatures) -> LabeledMatrix:
    return LabeledMatrix.complete(
        features.task_ids,
        tuple(f"dim_{j + 1}" for j in range(features.rank)),
        features.features,
    )


def _features_from_matrix(matrix: LabeledMatrix) -> TaskFeatures:
    if matrix.missing.any():
        raise DataFormatError("feature matrix has missing cells")
    return TaskFeatures(task_ids=matrix.row_labels, features=matrix.values)


def _write_mean_similarity(ranking: list[tuple[str, float]], path: Path) -> None:
    _write_csv_rows(
        path,
        [FEATURES_CORNER, "mean_cosine"],
        [[task_id, _fmt(value)] for task_id, value in ranking],
    )


def _write_factor_counts(
    report: FactorCountReport, scree_path: Path, map_path: Path
) -> None:
    pa = report.parallel
    rows = [
        [str(i + 1), _fmt(pa.sample_eigenvalues[i]), _fmt(pa.thresholds[i])]
        for i in range(len(pa.sample_eigenvalues))
    ]
    _write_csv_rows(scree_path, ["rank", "eigenvalue", "noise_threshold"], rows)
    mp = report.map
    rows = []
    for m in range(len(mp.criteria)):
        value = "NA" if not mp.valid[m] else _fmt(mp.criteria[m])
        rows.append([str(m), value, "true" if mp.valid[m] else "false"])
    _write_csv_rows(map_path, ["n_partialled", "avg_sq_partial", "valid"], rows)


def _write_loadings(model: EfaModel, path: Path) -> None:
    matrix = LabeledMatrix.complete(
        model.target_ids,
        tuple(f"factor_{j + 1}" for j in range(model.n_factors)),
        model.loadings,
    )
    write_labeled_csv(matrix, path, corner=FEATURES_CORNER)


def _write_significant(sig: SignificantLoadings, path: Path) -> None:
    rows = [
        [e.task_id, str(e.factor), _fmt(e.loading), "true" if e.dominant else "false"]
        for e in sig.entries
    ]
    _write_csv_rows(path, [FEATURES_CORNER, "factor", "loading", "dominant"], rows)


def _write_communalities(model: EfaModel, path: Path) -> None:
    values = communalities(model)
    rows = [
        [task_id, _fmt(values[i])] for i, task_id in enumerate(model.target_ids)
    ]
    _write_csv_rows(path, [FEATURES_CORNER, "communality"], rows)


def _write_ranking(table: RankingTable, path: Path) -> None:
    header = ["source_task"]
    header += [f"rank_{m}" for m in table.model_ids]
    header.append("harmonic_score")
    rows = [
        [r.source_id, *[str(x) for x in r.ranks], _fmt(r.score)]
        for r in table.rows
    ]
    _write_csv_rows(path, header, rows)


def _write_length_table(table: LengthCrossTable, csv_path: Path, json_path: Path) -> None:
    label = dict(zip(table.bands, table.band_labels))
    rows = []
    for s_band in table.bands:
        for t_band in table.bands:
            cell = table.cells[(s_band, t_band)]
            rows.append(
                [
                    label[s_band],
                    label[t_band],
                    str(cell.n_pairs),
                    "NA" if cell.mean_all is None else _fmt(cell.mean_all),
                    "NA" if cell.mean_top is None else _fmt(cell.mean_top),
                ]
            )
    _write_csv_rows(
        csv_path,
        ["source_band", "target_band", "n_pairs", "mean_all", "mean_top"],
        rows,
    )
    doc = {
        "bands": list(table.band_labels),
        "cells": [
            {
                "source_band": label[s],
                "target_band": label[t],
                "n_pairs": table.cells[(s, t)].n_pairs,
                "mean_all": table.cells[(s, t)].mean_all,
                "mean_top": table.cells[(s, t)].mean_top,
                "top_sources": [
                    {"source_task": sid, "mean": mean}
                    for sid, mean in table.cells[(s, t)].top_sources
                ],
            }
            for s in table.bands
            for t in table.bands
        ],
        "target_band_top_sources": {
            label[t]: [
                {
                    "source_task": sid,
                    "mean": mean,
                    "mean_output_length": None if np.isnan(length) else length,
                }
                for sid, mean, length in table.target_band_top_sources[t]
            ]
            for t in table.bands
        },
    }
    _write_json(doc, json_path)


def _write_dominant(
    rows: tuple[tuple[str, str], ...],
    w: np.ndarray,
    beta: np.ndarray,
    gamma: np.ndarray,
    col_labels: tuple[str, ...],
    scores_path: Path,
    regression_path: Path,
) -> None:
    _write_csv_rows(
        scores_path,
        ["model", "source_task", "score"],
        [[m, s, _fmt(w[i])] for i, (m, s) in enumerate(rows)],
    )
    _write_csv_rows(
        regression_path,
        [FEATURES_CORNER, "slope", "intercept"],
        [
            [target, _fmt(beta[j]), _fmt(gamma[j])]
            for j, target in enumerate(col_labels)
        ],
    )


# ---------------------------------------------------------------------------
# pipeline


def _load_dataset(config: RunConfig):
    tables = [
        load_performance_table(path, model_id) for model_id, path in config.tables
    ]
    registry, in_domain = load_task_metadata(config.metadata)
    report = validate_dataset(tables, registry, in_domain, strict=False)
    if not report.passed:
        raise ValidationFailure(report.summary())
    if report.warnings:
        if config.strict:
            raise ValidationFailure(
                "strict mode treats validation warnings as failures:\n"
                + report.summary()
            )
        for finding in report.warnings:
            print(f"warning: {finding.code}: {finding.message}", file=sys.stderr)
    return tables, registry, in_domain


def _normalize_all(
    config: RunConfig, tables
) -> tuple[list[tuple[str, LabeledMatrix]], AggregateMatrix]:
    normalized = [
        (t.model_id, normalize_table(t, literal_eq1=config.literal_eq1))
        for t in tables
    ]
    return normalized, aggregate_models(normalized)


def run_pipeline(config: RunConfig) -> dict:
    """Execute every stage and write the full artifact set.

    Returns the consolidated report dictionary (also written to
    ``report.json``).
    """
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)

    tables, registry, in_domain = _load_dataset(config)
    normalized, aggregate = _normalize_all(config, tables)
    baselines = zero_shot_means(tables)

    features = svd_task_features(
        aggregate, rank=config.embedding_rank, center=config.center
    )
    similarity = cosine_similarity(features)
    sim_ranking = mean_similarity_ranking(similarity)
    dendrogram = ward_linkage(features)

    residual = residualize_dominant(aggregate.to_labeled())
    seed = config.effective_seed()
    counts = factor_count_report(
        residual.residuals,
        replications=config.replications,
        percentile=config.percentile,
        seed=seed,
    )
    if config.factors == "auto":
        n_factors = resolve_factor_count(counts, strict=config.strict)
    else:
        n_factors = int(config.factors)
    efa = fit_efa(residual.residuals, n_factors)
    rotated, _ = varimax_rotate(efa)
    significances = [significant_loadings(rotated, c) for c in config.cutoffs]

    robustness = [
        loo_robustness(aggregate, model_id, n_factors=n_factors)
        for model_id, _ in config.tables
    ]
    ranking = harmonic_rank(normalized)
    lengths = length_group_table(aggregate, registry, in_domain)

    # write everything in pipeline order
    for model_id, matrix in normalized:
        write_labeled_csv(
            matrix, out / f"normalized_{model_id}.csv", corner="source_task"
        )
    write_aggregate_csv(aggregate, out / "aggregate.csv")
    write_labeled_csv(
        _features_matrix(features), out / "features.csv", corner=FEATURES_CORNER
    )
    write_labeled_csv(similarity, out / "similarity.csv", corner=FEATURES_CORNER)
    _write_mean_similarity(sim_ranking, out / "mean_similarity.csv")
    (out / "dendrogram.newick").write_text(to_newick(dendrogram) + "\n", "utf-8")
    (out / "dendrogram.json").write_text(to_merge_json(dendrogram) + "\n", "utf-8")
    _write_factor_counts(counts, out / "factor_scree.csv", out / "factor_map.csv")
    write_aggregate_csv(
        AggregateMatrix(
            rows=aggregate.rows,
            col_labels=aggregate.col_labels,
            values=residual.residuals.values,
            missing=residual.residuals.missing,
        ),
        out / "residuals.csv",
    )
    _write_dominant(
        aggregate.rows,
        residual.w,
        residual.beta,
        residual.gamma,
        aggregate.col_labels,
        out / "dominant_scores.csv",
        out / "dominant_regression.csv",
    )
    _write_loadings(rotated, out / "loadings.csv")
    for cutoff, sig in zip(config.cutoffs, significances):
        _write_significant(sig, out / f"significant_loadings_{cutoff:g}.csv")
    _write_communalities(rotated, out / "communalities.csv")
    _write_csv_rows(
        out / "robustness.csv",
        ["held_out_model", "train_models", "n_test_rows", "error_l2"],
        [
            [
                r.held_out_model,
                "+".join(r.train_models),
                str(len(r.test_rows)),
                _fmt(r.error_l2),
            ]
            for r in robustness
        ],
    )
    _write_ranking(ranking, out / "ranking.csv")
    _write_length_table(lengths, out / "length_table.csv", out / "length_table.json")

    report = {
        "tool_version": __version__,
        "inputs": {
            "metadata": {"path": str(config.metadata), "sha256": _sha256(config.metadata)},
            "tables": [
                {"model": model_id, "path": str(path), "sha256": _sha256(path)}
                for model_id, path in config.tables
            ],
        },
        "config": {
            "embedding_rank": config.embedding_rank,
            "factors": config.factors,
            "factors_used": n_factors,
            "cutoffs": list(config.cutoffs),
            "seed": seed,
            "replications": config.replications,
            "percentile": config.percentile,
            "literal_eq1": config.literal_eq1,
            "center": config.center,
            "strict": config.strict,
        },
        "dataset": {
            "models": [model_id for model_id, _ in config.tables],
            "n_rows": aggregate.shape[0],
            "n_targets": aggregate.shape[1],
            "zero_shot_means": {m: baselines[m] for m, _ in config.tables},
        },
        "factor_selection": {
            "parallel_analysis": counts.parallel.retained,
            "velicer_map": counts.map.retained,
            "used": n_factors,
        },
        "efa": {
            "converged": rotated.converged,
            "iterations": rotated.n_iter,
            "rotation": rotated.rotation,
            "varimax_criterion": varimax_criterion(rotated.loadings),
            "unexplained_by_cutoff": {
                f"{cutoff:g}": list(sig.unexplained)
                for cutoff, sig in zip(config.cutoffs, significances)
            },
        },
        "robustness": {
            r.held_out_model: {"error_l2": r.error_l2, "n_test_rows": len(r.test_rows)}
            for r in robustness
        },
        "similarity": {
            "most_typical": sim_ranking[0][0],
            "least_typical": sim_ranking[-1][0],
        },
        "outputs": sorted(
            [f"normalized_{m}.csv" for m, _ in config.tables]
            + [f"significant_loadings_{c:g}.csv" for c in config.cutoffs]
            + [
                "aggregate.csv",
                "features.csv",
                "similarity.csv",
                "mean_similarity.csv",
                "dendrogram.newick",
                "dendrogram.json",
                "factor_scree.csv",
                "factor_map.csv",
                "residuals.csv",
                "dominant_scores.csv",
                "dominant_regression.csv",
                "loadings.csv",
                "communalities.csv",
                "robustness.csv",
                "ranking.csv",
                "length_table.csv",
                "length_table.json",
            ]
        ),
    }
    _write_json(report, out / "report.json")
    return report


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    report = run_pipeline(config)
    print(f"pipeline complete: {len(report['outputs']) + 1} files in {config.out_dir}")
    print(
        "factor counts: parallel analysis "
        f"{report['factor_selection']['parallel_analysis']}, MAP "
        f"{report['factor_selection']['velicer_map']}, used "
        f"{report['factor_selection']['used']}"
    )
    return 0


def cmd_normalize(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    tables, _, _ = _load_dataset(config)
    normalized, aggregate = _normalize_all(config, tables)
    for model_id, matrix in normalized:
        write_labeled_csv(
            matrix, out / f"normalized_{model_id}.csv", corner="source_task"
        )
    write_aggregate_csv(aggregate, out / "aggregate.csv")
    print(f"wrote {len(normalized)} normalized tables and aggregate.csv to {out}")
    return 0


def cmd_embed(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    aggregate = read_aggregate_csv(args.input)
    features = svd_task_features(aggregate, rank=args.rank, center=args.center)
    similarity = cosine_similarity(features)
    ranking = mean_similarity_ranking(similarity)
    write_labeled_csv(
        _features_matrix(features), out / "features.csv", corner=FEATURES_CORNER
    )
    write_labeled_csv(similarity, out / "similarity.csv", corner=FEATURES_CORNER)
    _write_mean_similarity(ranking, out / "mean_similarity.csv")
    print(f"embedded {len(features.task_ids)} tasks at rank {features.rank}")
    return 0


def cmd_cluster(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.similarity:
        matrix = read_labeled_csv(args.similarity, corner=FEATURES_CORNER)
    else:
        matrix = read_labeled_csv(args.features, corner=FEATURES_CORNER)
    features = _features_from_matrix(matrix)
    dendrogram = ward_linkage(features)
    (out / "dendrogram.newick").write_text(to_newick(dendrogram) + "\n", "utf-8")
    (out / "dendrogram.json").write_text(to_merge_json(dendrogram) + "\n", "utf-8")
    for k in args.cut or []:
        clusters = cut_tree(dendrogram, k)
        _write_json({"k": k, "clusters": clusters}, out / f"clusters_k{k}.json")
    print(f"clustered {dendrogram.n_leaves} tasks")
    return 0


def _factor_input(path: str) -> LabeledMatrix:
    aggregate = read_aggregate_csv(path)
    return aggregate.to_labeled()


def cmd_efa(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    matrix = _factor_input(args.input)
    if args.factors == "auto":
        if args.seed is None:
            raise ValidationFailure(
                "--seed is required with --factors auto (parallel analysis "
                "is stochastic)"
            )
        counts = factor_count_report(
            matrix,
            replications=args.replications,
            percentile=args.percentile,
            seed=args.seed,
        )
        print(
            f"parallel analysis retains {counts.parallel.retained}, "
            f"MAP retains {counts.map.retained}"
        )
        n_factors = resolve_factor_count(counts, strict=True)
    else:
        n_factors = int(args.factors)
    model = fit_efa(matrix, n_factors)
    rotated, _ = varimax_rotate(model)
    _write_loadings(rotated, out / "loadings.csv")
    _write_communalities(rotated, out / "communalities.csv")
    for cutoff in args.cutoff or [0.3]:
        sig = significant_loadings(rotated, cutoff)
        _write_significant(sig, out / f"significant_loadings_{cutoff:g}.csv")
    diagnostics = {
        "n_factors": n_factors,
        "n_obs": rotated.n_obs,
        "converged": rotated.converged,
        "iterations": rotated.n_iter,
        "rotation": rotated.rotation,
        "varimax_criterion": varimax_criterion(rotated.loadings),
        "uniquenesses": {
            t: rotated.uniquenesses[i] for i, t in enumerate(rotated.target_ids)
        },
        "communalities": {
            t: float(c)
            for t, c in zip(rotated.target_ids, communalities(rotated))
        },
    }
    _write_json(diagnostics, out / "factor_diagnostics.json")
    print(f"fitted {n_factors} factors on {rotated.n_obs} rows")
    return 0


def cmd_nfactors(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    matrix = _factor_input(args.input)
    counts = factor_count_report(
        matrix,
        replications=args.replications,
        percentile=args.percentile,
        seed=args.seed,
    )
    _write_factor_counts(counts, out / "factor_scree.csv", out / "factor_map.csv")
    print(f"parallel analysis retains {counts.parallel.retained}")
    print(f"velicer map retains {counts.map.retained}")
    return 0


def cmd_residualize(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    aggregate = read_aggregate_csv(args.input)
    residual = residualize_dominant(aggregate.to_labeled())
    write_aggregate_csv(
        AggregateMatrix(
            rows=aggregate.rows,
            col_labels=aggregate.col_labels,
            values=residual.residuals.values,
            missing=residual.residuals.missing,
        ),
        out / "residuals.csv",
    )
    _write_dominant(
        aggregate.rows,
        residual.w,
        residual.beta,
        residual.gamma,
        aggregate.col_labels,
        out / "dominant_scores.csv",
        out / "dominant_regression.csv",
    )
    print(f"residualized {aggregate.shape[0]} rows")
    return 0


def cmd_robustness(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    tables, _, _ = _load_dataset(config)
    _, aggregate = _normalize_all(config, tables)
    n_factors = int(config.factors) if config.factors != "auto" else 6
    held_out = [args.held_out] if args.held_out else [m for m, _ in config.tables]
    results = [loo_robustness(aggregate, m, n_factors=n_factors) for m in held_out]
    _write_csv_rows(
        out / "robustness.csv",
        ["held_out_model", "train_models", "n_test_rows", "error_l2"],
        [
            [
                r.held_out_model,
                "+".join(r.train_models),
                str(len(r.test_rows)),
                _fmt(r.error_l2),
            ]
            for r in results
        ],
    )
    for r in results:
        print(f"hold out {r.held_out_model}: reconstruction error {r.error_l2:.4f}")
    return 0


def cmd_rank(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    tables, _, _ = _load_dataset(config)
    normalized, _ = _normalize_all(config, tables)
    table = harmonic_rank(normalized)
    _write_ranking(table, out / "ranking.csv")
    best = table.rows[0]
    print(f"best source: {best.source_id} (score {best.score:.3f})")
    return 0


def cmd_lengths(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    tables, registry, in_domain = _load_dataset(config)
    _, aggregate = _normalize_all(config, tables)
    table = length_group_table(aggregate, registry, in_domain)
    _write_length_table(table, out / "length_table.csv", out / "length_table.json")
    print(f"wrote length cross table to {out}")
    return 0


def cmd_diversity(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc: dict = {}
    if args.tokens:
        if args.tokens.endswith(".csv"):
            counts = read_token_counts_csv(args.tokens)
        else:
            counts = read_token_counts_text(args.tokens, lowercase=args.lowercase)
        entropy = word_entropy(counts, natural=args.natural)
        unit = "nats" if args.natural else "bits"
        doc["word_entropy"] = {
            "value": entropy,
            "unit": unit,
            "n_types": len(counts),
        }
        print(f"word entropy: {entropy:.4f} {unit} over {len(counts)} types")
    if args.features:
        matrix = read_labeled_csv(args.features, corner=FEATURES_CORNER)
        if matrix.missing.any():
            raise NumericError("feature matrix has missing cells")
        top_k = args.top_k or matrix.values.shape[1]
        gv = generalized_variance(matrix.values, top_k)
        doc["generalized_variance"] = {"value": gv, "top_k": top_k}
        print(f"generalized variance (top {top_k}): {gv:.6g}")
    if not doc:
        raise ValidationFailure("diversity needs --tokens and/or --features")
    _write_json(doc, out / "diversity.json")
    return 0


FORMAT_NOTES = """\
file contracts
==============

performance table CSV (input, one per model)
  header: source_task,<target ids...>
  rows:   one per source task; reserved row id __zero_shot__ holds the
          no-transfer baseline and must be present
  cells:  decimal numbers; NA marks a missing measurement

task metadata JSON (input)
  {"tasks": [{"id", "display_name", "roles" (["source"|"target",...]),
              "eval_mode" ("generative"|"multiple_choice"|"not_applicable"),
              "category", "mean_output_length", "metric_name",
              optional "length_band" ("short"|"medium"|"long"|"other")}],
   "in_domain": [[source_id, target_id], ...]}
  length bands derive from mean_output_length when not set explicitly:
  short = [1, 3] words, medium = [6, 12], long = more than 40.

run config TOML
  [inputs]          metadata = "...json"
  [inputs.tables]   <model id> = "...csv"   (order fixes row-block order)
  [analysis]        embedding_rank (8), factors (6 or "auto"),
                    cutoffs ([0.3, 0.6]), seed, replications (100),
                    percentile (95.0)
  [flags]           literal_eq1, center, strict (all false)
  [output]          directory ("out")
  relative paths resolve against the config file's directory.

outputs (all deterministic; floats use shortest exact decimal form)
  normalized_<model>.csv   source_task x targets, NA for missing
  aggregate.csv            model,source_task,<targets...> stacked rows
  features.csv             target_task x dim_1..dim_D
  similarity.csv           target_task x target ids (cosine)
  mean_similarity.csv      target_task,mean_cosine (descending)
  dendrogram.newick/.json  ward merge tree, heights = merge cost
  factor_scree.csv         rank,eigenvalue,noise_threshold
  factor_map.csv           n_partialled,avg_sq_partial,valid
  residuals.csv            aggregate dialect, dominant factor removed
  dominant_scores.csv      model,source_task,score
  dominant_regression.csv  target_task,slope,intercept
  loadings.csv             target_task x factor_1..factor_L (varimax)
  significant_loadings_<cutoff>.csv  target_task,factor,loading,dominant
  communalities.csv        target_task,communality
  factor_scores.csv        model,source_task,factor_1..factor_L
  robustness.csv           held_out_model,train_models,n_test_rows,error_l2
  ranking.csv              source_task,rank_<model>...,harmonic_score
  length_table.csv/.json   band cross table with top-source lists
  report.json              provenance (sha256 of inputs), config, summary
"""


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taskfactor",
        description="Analytics for transfer-learning performance tables.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    parser.add_argument(
        "--describe-formats",
        action="store_true",
        help="print the input/output file contracts and exit",
    )
    sub = parser.add_subparsers(dest="command")

    def add_out(p: argparse.ArgumentParser, default: str = "out") -> None:
        p.add_argument("--out", default=default, help="output directory")

    p = sub.add_parser("run", help="execute the full pipeline from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--factors", default=None)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--cutoffs", default=None, help="comma-separated loading cutoffs")
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--percentile", type=float, default=None)
    p.add_argument("--literal-eq1", dest="literal_eq1", action="store_true")
    p.add_argument("--center", action="store_true")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("normalize", help="normalize per-model tables and stack")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--literal-eq1", dest="literal_eq1", action="store_true")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("embed", help="SVD task features and cosine similarity")
    p.add_argument("--input", required=True, help="aggregate CSV")
    p.add_argument("--rank", type=int, default=8)
    p.add_argument("--center", action="store_true")
    add_out(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("cluster", help="ward dendrogram over task features")
    p.add_argument("--features", help="features CSV from embed")
    p.add_argument(
        "--similarity",
        help="cluster on similarity-matrix rows instead of SVD features",
    )
    p.add_argument("--cut", type=int, action="append", help="also cut into k clusters")
    add_out(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("efa", help="factor extraction with varimax rotation")
    p.add_argument("--input", required=True, help="aggregate-dialect CSV")
    p.add_argument("--factors", default="6")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--replications", type=int, default=100)
    p.add_argument("--percentile", type=float, default=95.0)
    p.add_argument("--cutoff", type=float, action="append")
    add_out(p)
    p.set_defaults(func=cmd_efa)

    p = sub.add_parser("nfactors", help="parallel analysis and MAP factor counts")
    p.add_argument("--input", required=True, help="aggregate-dialect CSV")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--replications", type=int, default=100)
    p.add_argument("--percentile", type=float, default=95.0)
    add_out(p)
    p.set_defaults(func=cmd_nfactors)

    p = sub.add_parser("residualize", help="remove the dominant shared factor")
    p.add_argument("--input", required=True, help="aggregate CSV")
    add_out(p)
    p.set_defaults(func=cmd_residualize)

    p = sub.add_parser("robustness", help="leave-one-model-out reconstruction")
    p.add_argument("--config", required=True)
    p.add_argument("--held-out", dest="held_out", default=None)
    p.add_argument("--factors", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("rank", help="harmonic-mean source ranking")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("lengths", help="output-length band cross table")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_lengths)

    p = sub.add_parser("diversity", help="word entropy and generalized variance")
    p.add_argument("--tokens", help="text file (or .csv word,count table)")
    p.add_argument("--lowercase", action="store_true")
    p.add_argument("--natural", action="store_true", help="entropy in nats")
    p.add_argument("--features", help="labeled feature CSV")
    p.add_argument("--top-k", dest="top_k", type=int, default=None)
    add_out(p)
    p.set_defaults(func=cmd_diversity)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.describe_formats:
        print(FORMAT_NOTES, end="")
        return 0
    if not getattr(args, "command", None):
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except (DataFormatError, ValidationFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2
    except TaskFactorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
