"""
Experiment Commands.

Bodies of the ``latent-gate`` subcommands: dataset generation, training,
evaluation, the latent-width sweep, the method comparison, the linear
identity grid, the exact information checks and report re-rendering. Each
command takes a resolved RunConfig, writes its artifacts below
``config.out`` and returns a small result object for the CLI to print.
"""

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .checkpoint import check_compatible, load_checkpoint, save_checkpoint
from .config import RunConfig
from .exceptions import (
    ConfigError,
    LatentGateError,
    MissingArtifactError,
    SweepCellError,
    TheoryCheckError,
)
from .info_theory import (
    co_information,
    conditional_mi,
    copy_encoder,
    discard_lesion_encoder,
    encoder_triple_joint,
    latent_entropy_report,
    lesion_bit_world,
    mutual_information,
    noisy_lesion_encoder,
    verify_dpi_random,
    verify_prop2_discrete,
)
from .models import AEModel, ModelKind, build_model, reconstruct, train
from .prop1_verifier import (
    empirical_identity_probe,
    identity_witness,
    uniform_noise_images,
    verification_grid,
)
from .report import (
    SWEEP_COLUMNS,
    TrendCheck,
    aggregate_sweep,
    compare_trend_check,
    format_value,
    read_csv,
    render_compare_markdown,
    render_prop1_markdown,
    render_sweep_markdown,
    summarise_group,
    summary_columns,
    sweep_summary_from_rows,
    sweep_trend_checks,
    write_csv,
    write_metrics_toml,
    write_text,
)
from .scoring_metrics import ErrorMap, MetricsSummary, error_map, image_score, summarise
from .synth_data import (
    Dataset,
    DatasetManifest,
    build_dataset,
    load_dataset,
    stack_images,
    write_pgm,
)

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.ckpt"
CELL_SEED_STRIDE = 7919
RESIDUAL_TOLERANCE = 1e-3
EXACT_TOLERANCE = 1e-6
COMPARE_WIDTH = 16


def ensure_out_dir(path: str) -> Path:
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise ConfigError(f"output path {out} exists and is not a directory")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory {out}: {e}") from e
    return out


def cell_seed(base: int, repeat: int, d: int) -> int:
    return base + CELL_SEED_STRIDE * repeat + d


# -- generate / train / eval -----------------------------------------------------------


def cmd_generate(config: RunConfig) -> DatasetManifest:
    """Write the synthetic dataset to ``config.out``."""
    ensure_out_dir(config.out)
    return build_dataset(
        config.generator_config(),
        config.n_train,
        config.n_test_normal,
        config.n_test_abnormal,
        config.out,
        workers=config.workers,
    )


@dataclass
class TrainOutcome:
    checkpoint: Path
    loss_csv: Path
    loss_trace: list[float]


def cmd_train(config: RunConfig) -> TrainOutcome:
    """Train one model on the normal split; writes a checkpoint and ``loss.csv``."""
    dataset = load_dataset(config.dataset)
    out = ensure_out_dir(config.out)
    model = build_model(config.kind, config.arch_spec(), config.seed, config.model_options())
    result = train(model, dataset.train, config.train_config())

    metadata = {
        "seed": config.seed,
        "epochs_completed": len(result.loss_trace),
        "final_loss": result.loss_trace[-1],
        "initial_mse": result.initial_mse,
        "final_mse": result.final_mse,
    }
    checkpoint_path = out / CHECKPOINT_NAME
    save_checkpoint(model, checkpoint_path, metadata, result.adam)
    loss_path = out / "loss.csv"
    write_csv(
        loss_path,
        ["epoch", "mean_mse"],
        ({"epoch": i + 1, "mean_mse": loss} for i, loss in enumerate(result.loss_trace)),
    )
    return TrainOutcome(checkpoint_path, loss_path, result.loss_trace)


@dataclass
class Evaluation:
    summary: MetricsSummary
    normal_maps: list[ErrorMap]
    abnormal_maps: list[ErrorMap]


def _error_maps(model: AEModel, records: list[Any]) -> list[ErrorMap]:
    if not records:
        return []
    images = stack_images(records)
    recon = reconstruct(model, images)
    return [
        error_map(images[i], recon[i], record.record_id) for i, record in enumerate(records)
    ]


def evaluate_model(model: AEModel, dataset: Dataset) -> Evaluation:
    """Error maps and metrics on both test splits."""
    normal_maps = _error_maps(model, dataset.test_normal)
    abnormal_maps = _error_maps(model, dataset.test_abnormal)
    masks = [r.mask for r in dataset.test_abnormal] if dataset.has_masks else None
    return Evaluation(summarise(normal_maps, abnormal_maps, masks), normal_maps, abnormal_maps)


@dataclass
class EvalOutcome:
    summary: MetricsSummary
    out_dir: Path


def cmd_eval(config: RunConfig) -> EvalOutcome:
    """Score both test splits with a checkpoint; writes scores, error maps and metrics."""
    out = ensure_out_dir(config.out)
    checkpoint_path = Path(config.checkpoint) if config.checkpoint else out / CHECKPOINT_NAME
    if not checkpoint_path.is_file():
        raise MissingArtifactError(
            f"checkpoint {checkpoint_path} not found; run `latent-gate train` first"
        )
    checkpoint = load_checkpoint(checkpoint_path)
    # only architecture settings the user asked for are checked
    check_compatible(
        checkpoint,
        kind=config.kind if "model_kind" in config.explicit else None,
        latent_dim=config.latent_dim if "latent_dim" in config.explicit else None,
        bottleneck_width=(
            config.bottleneck_width if "bottleneck_width" in config.explicit else None
        ),
    )
    dataset = load_dataset(config.dataset)
    evaluation = evaluate_model(checkpoint.model, dataset)

    score_rows = [
        {"record_id": m.record_id, "label": label, "score": image_score(m)}
        for label, maps in (
            ("normal", evaluation.normal_maps),
            ("abnormal", evaluation.abnormal_maps),
        )
        for m in maps
    ]
    write_csv(out / "scores.csv", ["record_id", "label", "score"], score_rows)

    maps_dir = out / "error_maps"
    maps_dir.mkdir(exist_ok=True)
    for emap in evaluation.abnormal_maps:
        write_pgm(maps_dir / f"{emap.record_id}.pgm", emap.normalised())

    summary = evaluation.summary
    write_csv(out / "metrics.csv", list(summary.to_dict()), [summary.to_dict()])
    write_metrics_toml(
        out / "metrics.toml",
        summary,
        {
            "checkpoint": str(checkpoint_path),
            "dataset": config.dataset,
            "model_kind": checkpoint.kind.value,
            "latent_dim": checkpoint.model.spec.latent_dim,
            "bottleneck_width": checkpoint.model.spec.bottleneck_width,
        },
    )
    return EvalOutcome(summary, out)


# -- sweep cells -----------------------------------------------------------------------


def run_cell(config: RunConfig, kind: ModelKind, d: int, repeat: int) -> dict[str, Any]:
    """Train and evaluate one (model, width, repeat) cell."""
    seed = cell_seed(config.seed, repeat, d)
    dataset = load_dataset(config.dataset)
    model = build_model(kind, config.arch_spec(d), seed, config.model_options())
    result = train(model, dataset.train, config.train_config(seed))
    summary = evaluate_model(model, dataset).summary

    h_hat: Optional[float] = None
    if len(dataset.test_normal) >= 10 * config.entropy_k:
        h_hat = latent_entropy_report(model, dataset.test_normal, config.entropy_k).h_hat
    noise = uniform_noise_images(config.probe_noise, model.spec.input_size, seed)
    probe = empirical_identity_probe(
        model, dataset.train, dataset.test_normal, dataset.test_abnormal, noise
    )
    return {
        "kind": kind.value,
        "d": d,
        "repeat": repeat,
        "seed": seed,
        "auroc": summary.auroc,
        "ap": summary.ap,
        "ap_pix": summary.ap_pix,
        "best_dice": summary.best_dice,
        "dice_threshold": summary.dice_threshold,
        "final_train_mse": result.final_mse,
        "h_hat": h_hat,
        "mse_train_normal": probe.mse_train_normal,
        "mse_test_normal": probe.mse_test_normal,
        "mse_abnormal": probe.mse_abnormal,
        "mse_noise": probe.mse_noise,
        "ordering_holds": probe.ordering_holds,
    }


def _cell_name(kind: ModelKind, d: int, repeat: int) -> str:
    return f"{kind.value}-d{d:04d}-r{repeat}"


def cell_fingerprint(config: RunConfig) -> str:
    payload = json.dumps(config.cell_settings(), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def run_cells(
    config: RunConfig, cells: list[tuple[ModelKind, int, int]], cell_dir: Path
) -> dict[tuple[ModelKind, int, int], dict[str, Any]]:
    """Run every cell not already on disk; finished cells are kept as JSON for resumption.

    A stored cell is reused only if it was produced under the same cell settings.
    """
    cell_dir.mkdir(parents=True, exist_ok=True)
    fingerprint = cell_fingerprint(config)
    results: dict[tuple[ModelKind, int, int], dict[str, Any]] = {}
    pending = []
    for cell in cells:
        path = cell_dir / f"{_cell_name(*cell)}.json"
        stored = json.loads(path.read_text(encoding="utf-8")) if path.is_file() else None
        if stored is not None and stored.get("fingerprint") == fingerprint:
            results[cell] = stored
            logger.info("Skipping finished cell %s", _cell_name(*cell))
            continue
        if stored is not None:
            logger.warning("Re-running cell %s: stored under other settings", _cell_name(*cell))
        pending.append(cell)

    def _store(cell: tuple[ModelKind, int, int], row: dict[str, Any]) -> None:
        path = cell_dir / f"{_cell_name(*cell)}.json"
        row = {**row, "fingerprint": fingerprint}
        path.write_text(json.dumps(row, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        results[cell] = row
        logger.info("Finished cell %s: AUC %.4f", _cell_name(*cell), row["auroc"])

    if config.workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = {cell: pool.submit(run_cell, config, *cell) for cell in pending}
            for cell, future in futures.items():
                try:
                    _store(cell, future.result())
                except LatentGateError as e:
                    raise SweepCellError(_cell_name(*cell), e) from e
    else:
        for cell in pending:
            logger.info("Starting cell %s", _cell_name(*cell))
            try:
                _store(cell, run_cell(config, *cell))
            except LatentGateError as e:
                raise SweepCellError(_cell_name(*cell), e) from e
    return results


def _log_failed_checks(checks: list[TrendCheck]) -> None:
    for check in checks:
        if not check.holds:
            logger.warning("Trend check failed: %s", check.detail)


@dataclass
class SweepOutcome:
    rows: list[dict[str, Any]]
    d_optimal: int
    spearman_d_entropy: Optional[float]
    checks: list[TrendCheck]


def cmd_sweep(config: RunConfig) -> SweepOutcome:
    """Train and evaluate AE models for every width in ``config.sweep``."""
    out = ensure_out_dir(config.out)
    cells = [
        (ModelKind.AE, d, repeat) for d in config.sweep for repeat in range(config.repeats)
    ]
    results = run_cells(config, cells, out / "cells")
    rows = [results[cell] for cell in cells]

    write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    summary = aggregate_sweep(rows)
    checks = sweep_trend_checks(summary, rows)
    _log_failed_checks(checks)
    write_csv(out / "sweep_summary.csv", summary_columns(["d"]), summary.rows)
    write_text(out / "sweep.md", render_sweep_markdown(summary, checks))
    return SweepOutcome(rows, summary.d_optimal, summary.spearman_d_entropy, checks)


@dataclass
class CompareOutcome:
    rows: list[dict[str, Any]]
    d_optimal: int
    check: TrendCheck


def cmd_compare(config: RunConfig) -> CompareOutcome:
    """Baselines at d=16 next to the AE at the best width of an earlier sweep."""
    out = ensure_out_dir(config.out)
    summary_path = Path(config.sweep_dir or config.out) / "sweep_summary.csv"
    if not summary_path.is_file():
        raise MissingArtifactError(
            f"{summary_path} not found; run `latent-gate sweep` before `compare`"
        )
    d_optimal = sweep_summary_from_rows(read_csv(summary_path)).d_optimal

    methods = [
        (f"AE[d={COMPARE_WIDTH}]", ModelKind.AE, COMPARE_WIDTH),
        ("VAE", ModelKind.VAE, COMPARE_WIDTH),
        ("MemAE", ModelKind.MEMAE, COMPARE_WIDTH),
        ("CeAE", ModelKind.CEAE, COMPARE_WIDTH),
        (f"AE[d_optimal={d_optimal}]", ModelKind.AE, d_optimal),
    ]
    cells = sorted(
        {(kind, d, repeat) for _, kind, d in methods for repeat in range(config.repeats)},
        key=lambda c: (c[0].value, c[1], c[2]),
    )
    results = run_cells(config, cells, out / "compare_cells")

    rows = []
    for method, kind, d in methods:
        group = [results[(kind, d, repeat)] for repeat in range(config.repeats)]
        rows.append({"method": method, "kind": kind.value, "d": d, **summarise_group(group)})
    check = compare_trend_check(rows)
    _log_failed_checks([check])
    write_csv(out / "compare.csv", summary_columns(["method", "kind", "d"]), rows)
    write_text(out / "compare.md", render_compare_markdown(rows, check))
    return CompareOutcome(rows, d_optimal, check)


# -- theory checks ---------------------------------------------------------------------


PROP1_COLUMNS = [
    "D",
    "d",
    "paper_bound_blocks",
    "rank_bound_blocks",
    "exactly_solvable",
    "residual",
    "closed_form",
]


def prop1_failures(rows: list[dict[str, Any]]) -> list[str]:
    failures = []
    for row in rows:
        cell = f"D={row['D']} d={row['d']}"
        if row["paper_bound_blocks"] and not row["rank_bound_blocks"]:
            failures.append(f"{cell}: d < D/2 without d < D")
        if row["rank_bound_blocks"]:
            if abs(row["residual"] - row["closed_form"]) > RESIDUAL_TOLERANCE:
                failures.append(
                    f"{cell}: residual {row['residual']:.6f} != D - d = {row['closed_form']}"
                )
        elif row["residual"] >= EXACT_TOLERANCE:
            failures.append(f"{cell}: residual {row['residual']:.3g} is not ~0")
    return failures


def cmd_prop1(config: RunConfig) -> list[dict[str, Any]]:
    """Identity-residual grid; raises TheoryCheckError if any row disagrees with D - d."""
    out = ensure_out_dir(config.out)
    rows = verification_grid(
        config.prop1_dims, config.prop1_extra, config.prop1_iters, config.prop1_lr, config.seed
    )
    write_csv(out / "prop1.csv", PROP1_COLUMNS, rows)
    write_text(out / "prop1.md", render_prop1_markdown(rows))

    failures = prop1_failures(rows)
    for big_d in config.prop1_dims:
        witness = identity_witness(big_d, big_d)
        if np.max(np.abs(witness.w1 @ witness.w2 - np.eye(big_d))) > 1e-12:
            failures.append(f"D={big_d}: identity witness does not reproduce I")
    if failures:
        raise TheoryCheckError(failures)
    return rows


def cmd_mi_oracle(config: RunConfig) -> dict[str, Any]:
    """Exact DPI checks on random chains and the optimal-encoder conditions on a toy world."""
    out = ensure_out_dir(config.out)
    failures: list[str] = []

    dpi = verify_dpi_random(config.n_chains, config.max_alphabet, config.seed)
    for index, check in enumerate(dpi):
        if not check.holds:
            failures.append(
                f"chain {index}: I(X;Z)={check.i_xz:.12f} < I(X;X_hat)={check.i_xxhat:.12f}"
            )

    m_n = 4
    world = lesion_bit_world(m_n)
    encoders = {
        "discard_lesion": (discard_lesion_encoder(m_n), "optimal"),
        "copy": (copy_encoder(2 * m_n), "excess"),
        "noisy_lesion": (noisy_lesion_encoder(m_n, 0.1), "excess"),
    }
    cases: dict[str, Any] = {}
    for name, (encoder, expected) in encoders.items():
        report = verify_prop2_discrete(world, encoder)
        triple = encoder_triple_joint(world, encoder)
        chain_gap = report.i_xa_z - (conditional_mi(triple) + co_information(triple))
        cases[name] = {
            "h_xn": report.h_xn,
            "h_xa": report.h_xa,
            "h_z": report.h_z,
            "i_xn_z": report.i_xn_z,
            "i_xa_z": report.i_xa_z,
            "keeps_normal": report.keeps_normal,
            "bounded_by_normal": report.bounded_by_normal,
            "situation": report.situation,
            "chain_rule_gap": chain_gap,
        }
        if report.situation != expected:
            failures.append(f"encoder {name}: expected {expected}, got {report.situation}")
        if abs(chain_gap) > 1e-9:
            failures.append(f"encoder {name}: chain rule off by {chain_gap:.3g}")
    if abs(mutual_information(np.diag(np.full(4, 0.25))) - 2.0) > 1e-12:
        failures.append("I(X;X) != H(X) for a uniform 4-symbol X")

    result = {
        "seed": config.seed,
        "n_chains": config.n_chains,
        "max_alphabet": config.max_alphabet,
        "dpi_holds": sum(check.holds for check in dpi),
        "dpi_min_gap": min(check.i_xz - check.i_xxhat for check in dpi),
        "encoders": cases,
        "failures": failures,
    }
    write_text(out / "mi_oracle.json", json.dumps(result, indent=2, sort_keys=True) + "\n")
    if failures:
        raise TheoryCheckError(failures)
    return result


def cmd_report(config: RunConfig) -> list[Path]:
    """Re-render markdown tables from CSVs already in ``config.out``."""
    out = Path(config.out)
    written = []
    sweep_summary = out / "sweep_summary.csv"
    if sweep_summary.is_file():
        summary = sweep_summary_from_rows(read_csv(sweep_summary))
        cells_csv = out / "sweep.csv"
        checks = sweep_trend_checks(summary, read_csv(cells_csv)) if cells_csv.is_file() else []
        write_text(out / "sweep.md", render_sweep_markdown(summary, checks))
        written.append(out / "sweep.md")
    compare = out / "compare.csv"
    if compare.is_file():
        compare_rows = read_csv(compare)
        check = compare_trend_check(compare_rows)
        write_text(out / "compare.md", render_compare_markdown(compare_rows, check))
        written.append(out / "compare.md")
    prop1 = out / "prop1.csv"
    if prop1.is_file():
        write_text(out / "prop1.md", render_prop1_markdown(read_csv(prop1)))
        written.append(out / "prop1.md")
    if not written:
        raise MissingArtifactError(
            f"no sweep_summary.csv, compare.csv or prop1.csv in {out}; run sweep or compare first"
        )
    logger.info("Re-rendered %s", ", ".join(format_value(p.name) for p in written))
    return written
