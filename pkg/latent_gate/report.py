"""
Report Emission.

CSV tables (one header row, RFC 4180 quoting, floats written with ``repr``
so they read back exactly), the markdown renderings of the latent-width
sweep and the method comparison, and a commented TOML metrics summary.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import tomlkit
from scipy.stats import spearmanr

from .exceptions import ConfigError, MissingArtifactError
from .scoring_metrics import MetricsSummary

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SWEEP_COLUMNS = [
    "d",
    "repeat",
    "seed",
    "auroc",
    "ap",
    "ap_pix",
    "best_dice",
    "dice_threshold",
    "final_train_mse",
    "h_hat",
    "mse_train_normal",
    "mse_test_normal",
    "mse_abnormal",
    "mse_noise",
    "ordering_holds",
]

METRIC_LABELS = {
    "auroc": "AUC",
    "ap": "AP",
    "ap_pix": "AP_pix",
    "best_dice": "⌈Dice⌉",
}

SUMMARY_FIELDS = (
    "auroc",
    "ap",
    "ap_pix",
    "best_dice",
    "final_train_mse",
    "h_hat",
    "mse_train_normal",
    "mse_test_normal",
    "mse_abnormal",
    "mse_noise",
)


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def parse_value(text: str) -> Any:
    """Inverse of ``format_value`` for the scalar types the reports use."""
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def write_csv(path: PathLike, columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\r\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([format_value(row.get(column)) for column in columns])
    except OSError as e:
        raise ConfigError(f"cannot write {path}: {e}") from e


def read_csv(path: PathLike) -> list[dict[str, Any]]:
    target = Path(path)
    if not target.is_file():
        raise MissingArtifactError(f"missing report {target}")
    with open(target, encoding="utf-8", newline="") as f:
        return [
            {key: parse_value(value) for key, value in row.items()}
            for row in csv.DictReader(f)
        ]


def write_text(path: PathLike, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot write {path}: {e}") from e


def format_pm(mean: Optional[float], std: Optional[float]) -> str:
    """Percent cell such as ``72.9±2.1``; ``–`` when the metric is absent."""
    if mean is None or std is None:
        return "–"
    return f"{100.0 * mean:.1f}±{100.0 * std:.1f}"


def _mean_std(values: Sequence[Optional[float]]) -> tuple[Optional[float], Optional[float]]:
    present = [v for v in values if v is not None]
    if not present:
        return None, None
    arr = np.asarray(present, dtype=np.float64)
    # population standard deviation over repeats
    return float(arr.mean()), float(arr.std())


def summarise_group(rows: Sequence[Mapping[str, Any]]) -> dict[str, Any]:
    summary: dict[str, Any] = {"n": len(rows)}
    for name in SUMMARY_FIELDS:
        mean, std = _mean_std([row.get(name) for row in rows])
        summary[f"{name}_mean"] = mean
        summary[f"{name}_std"] = std
    return summary


def summary_columns(leading: Sequence[str]) -> list[str]:
    columns = list(leading) + ["n"]
    for name in SUMMARY_FIELDS:
        columns += [f"{name}_mean", f"{name}_std"]
    return columns


@dataclass
class SweepSummary:
    rows: list[dict[str, Any]]
    spearman_d_entropy: Optional[float]
    d_optimal: int


def d_optimal_from_summary(rows: Sequence[Mapping[str, Any]]) -> int:
    """Latent width with the highest mean AUC; ties go to the smaller width."""
    if not rows:
        raise MissingArtifactError("sweep summary has no rows")
    ordered = sorted(rows, key=lambda row: int(row["d"]))
    best = max(ordered, key=lambda row: row["auroc_mean"])
    return int(best["d"])


def aggregate_sweep(cells: Sequence[Mapping[str, Any]]) -> SweepSummary:
    widths = sorted({int(cell["d"]) for cell in cells})
    rows = []
    for d in widths:
        group = [cell for cell in cells if int(cell["d"]) == d]
        rows.append({"d": d, **summarise_group(group)})
    return sweep_summary_from_rows(rows)


def sweep_summary_from_rows(rows: list[dict[str, Any]]) -> SweepSummary:
    """Rank correlation of width and latent entropy, plus the best width."""
    widths = [int(row["d"]) for row in rows]
    entropies = [row["h_hat_mean"] for row in rows]
    rho: Optional[float] = None
    if len(rows) >= 2 and all(h is not None for h in entropies):
        rho = float(spearmanr(widths, entropies)[0])
    return SweepSummary(rows, rho, d_optimal_from_summary(rows))


# -- sweep and comparison trends -------------------------------------------------------

PEAK_WIDTHS = (2, 4, 8, 16)
MIN_GAIN_OVER_WIDEST = 0.05
MIN_GAIN_OVER_NARROWEST = 0.02
ORDERING_MAX_WIDTH = 64
ORDERING_MIN_GAP = 0.02
MIN_SPEARMAN = 0.8


@dataclass
class TrendCheck:
    name: str
    holds: bool
    detail: str

    def render(self) -> str:
        return f"{'✓' if self.holds else '✗'} {self.name}: {self.detail}"


def _ordered_with_gap(lower: float, upper: float) -> bool:
    return upper >= (1.0 + ORDERING_MIN_GAP) * lower


def sweep_trend_checks(
    summary: SweepSummary, cells: Sequence[Mapping[str, Any]]
) -> list[TrendCheck]:
    """Rise-then-fall of AUC over d, the error ordering per cell, and the entropy trend."""
    auc = {int(row["d"]): row["auroc_mean"] for row in summary.rows}
    best = summary.d_optimal
    narrowest, widest = min(auc), max(auc)
    checks = [
        TrendCheck(
            "peak_width",
            best in PEAK_WIDTHS,
            f"d_optimal={best}, expected one of {list(PEAK_WIDTHS)}",
        ),
        TrendCheck(
            "gain_over_widest",
            auc[best] - auc[widest] >= MIN_GAIN_OVER_WIDEST,
            f"AUC(d={best}) - AUC(d={widest}) = {auc[best] - auc[widest]:.4f}",
        ),
        TrendCheck(
            "gain_over_narrowest",
            auc[best] - auc[narrowest] >= MIN_GAIN_OVER_NARROWEST,
            f"AUC(d={best}) - AUC(d={narrowest}) = {auc[best] - auc[narrowest]:.4f}",
        ),
    ]

    out_of_order = [
        f"d={cell['d']} r={cell['repeat']}"
        for cell in cells
        if int(cell["d"]) <= ORDERING_MAX_WIDTH
        and not (
            _ordered_with_gap(cell["mse_train_normal"], cell["mse_test_normal"])
            and _ordered_with_gap(cell["mse_test_normal"], cell["mse_abnormal"])
        )
    ]
    checks.append(
        TrendCheck(
            "error_ordering",
            not out_of_order,
            "train < test normal < abnormal with 2% gaps"
            + (f"; fails for {', '.join(out_of_order)}" if out_of_order else ""),
        )
    )

    rho = summary.spearman_d_entropy
    checks.append(
        TrendCheck(
            "entropy_trend",
            rho is not None and rho >= MIN_SPEARMAN,
            "Spearman(d, H(Z)) unavailable" if rho is None else f"Spearman(d, H(Z)) = {rho:.3f}",
        )
    )
    return checks


def compare_trend_check(rows: Sequence[Mapping[str, Any]]) -> TrendCheck:
    """The AE at the best sweep width is no worse than the AE at the baseline width."""
    ae_rows = [row for row in rows if row["kind"] == "ae"]
    baseline, best = ae_rows[0], ae_rows[-1]
    gain = best["auroc_mean"] - baseline["auroc_mean"]
    return TrendCheck(
        "best_width_beats_baseline_width",
        gain >= 0.0,
        f"AUC({best['method']}) - AUC({baseline['method']}) = {gain:.4f}",
    )


def render_sweep_markdown(summary: SweepSummary, checks: Sequence[TrendCheck] = ()) -> str:
    widths = [row["d"] for row in summary.rows]
    lines = [
        "| Metric | " + " | ".join(f"d={d}" for d in widths) + " |",
        "|---|" + "---|" * len(widths),
    ]
    for key, label in METRIC_LABELS.items():
        if all(row.get(f"{key}_mean") is None for row in summary.rows):
            continue
        cells = [format_pm(row.get(f"{key}_mean"), row.get(f"{key}_std")) for row in summary.rows]
        lines.append(f"| {label} | " + " | ".join(cells) + " |")
    lines.append("")
    if summary.spearman_d_entropy is not None:
        lines.append(f"Spearman(d, H(Z)): {summary.spearman_d_entropy:.3f}")
    lines.append(f"d_optimal: {summary.d_optimal}")
    if checks:
        lines.append("")
        lines.extend(check.render() for check in checks)
    return "\n".join(lines) + "\n"


def render_compare_markdown(
    rows: Sequence[Mapping[str, Any]], check: Optional[TrendCheck] = None
) -> str:
    metrics = [
        (key, label)
        for key, label in METRIC_LABELS.items()
        if any(row.get(f"{key}_mean") is not None for row in rows)
    ]
    lines = [
        "| Method | " + " | ".join(label for _, label in metrics) + " |",
        "|---|" + "---|" * len(metrics),
    ]
    for row in rows:
        cells = [format_pm(row.get(f"{key}_mean"), row.get(f"{key}_std")) for key, _ in metrics]
        lines.append(f"| {row['method']} | " + " | ".join(cells) + " |")
    if check is not None:
        lines += ["", check.render()]
    return "\n".join(lines) + "\n"


def render_prop1_markdown(rows: Sequence[Mapping[str, Any]]) -> str:
    lines = [
        "| D | d | d < D/2 | d < D | residual | D - d |",
        "|---|---|---|---|---|---|",
    ]
    for row in rows:
        lines.append(
            f"| {row['D']} | {row['d']} | {format_value(row['paper_bound_blocks'])} "
            f"| {format_value(row['rank_bound_blocks'])} | {row['residual']:.6f} "
            f"| {row['closed_form']:.1f} |"
        )
    return "\n".join(lines) + "\n"


def write_metrics_toml(
    path: PathLike, summary: MetricsSummary, context: Mapping[str, Any]
) -> None:
    """Human-readable metrics summary with a comment per entry."""
    doc = tomlkit.document()
    doc.add(tomlkit.comment("Evaluation metrics"))
    doc.add(tomlkit.comment("Image scores are mean squared reconstruction error per image"))
    doc.add(tomlkit.nl())

    run = tomlkit.table()
    for key, value in context.items():
        if value is not None:
            run.add(key, value)
    doc.add("run", run)

    metrics = tomlkit.table()
    comments = {
        "auroc": "Probability an abnormal image outscores a normal one",
        "ap": "Image-level average precision",
        "ap_pix": "Pixel-level average precision over pooled test pixels",
        "best_dice": "Best pooled Dice over error thresholds",
        "dice_threshold": "Error threshold attaining best_dice",
    }
    for key, value in summary.to_dict().items():
        if value is None:
            continue
        if key in comments:
            metrics.add(tomlkit.comment(comments[key]))
        metrics.add(key, value)
    doc.add("metrics", metrics)
    write_text(path, tomlkit.dumps(doc))
