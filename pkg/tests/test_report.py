"""Tests for CSV tables, markdown renderings and the TOML metrics summary."""

from pathlib import Path

import pytest
import tomlkit

from latent_gate.exceptions import MissingArtifactError
from latent_gate.report import (
    SWEEP_COLUMNS,
    aggregate_sweep,
    compare_trend_check,
    d_optimal_from_summary,
    format_pm,
    parse_value,
    read_csv,
    render_compare_markdown,
    render_prop1_markdown,
    render_sweep_markdown,
    summarise_group,
    sweep_trend_checks,
    write_csv,
    write_metrics_toml,
)
from latent_gate.scoring_metrics import MetricsSummary


def _cell(d: int, repeat: int, auroc: float, h_hat: float) -> dict:
    return {"d": d, "repeat": repeat, "seed": 17, "auroc": auroc, "ap": auroc, "h_hat": h_hat}


class TestCsv:
    """Exact round trips through CSV text."""

    def test_values_read_back_exactly(self, tmp_path: Path) -> None:
        path = tmp_path / "sweep.csv"
        rows = [
            {
                "d": 4,
                "repeat": 0,
                "auroc": 0.1 + 0.2,
                "ap_pix": None,
                "ordering_holds": True,
                "kind": "ae",
            }
        ]
        write_csv(path, SWEEP_COLUMNS, rows)
        assert path.read_bytes().startswith(b"d,repeat,seed,auroc")
        assert b"\r\n" in path.read_bytes()
        (restored,) = read_csv(path)
        assert restored["auroc"] == 0.1 + 0.2
        assert restored["ap_pix"] is None
        assert restored["ordering_holds"] is True
        assert "kind" not in restored

    def test_parse_value(self) -> None:
        assert parse_value("3") == 3
        assert parse_value("1e-05") == 1e-05
        assert parse_value("false") is False
        assert parse_value("AE[d=16]") == "AE[d=16]"

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(MissingArtifactError):
            read_csv(tmp_path / "absent.csv")


class TestSweepSummary:
    """Aggregation over repeats."""

    def test_format_pm(self) -> None:
        assert format_pm(0.729, 0.021) == "72.9±2.1"
        assert format_pm(None, None) == "–"

    def test_population_std(self) -> None:
        summary = summarise_group([{"auroc": 0.6}, {"auroc": 0.8}])
        assert summary["auroc_mean"] == pytest.approx(0.7)
        assert summary["auroc_std"] == pytest.approx(0.1)
        assert summary["ap_pix_mean"] is None
        assert summary["n"] == 2

    def test_tie_goes_to_smaller_width(self) -> None:
        rows = [
            {"d": 8, "auroc_mean": 0.9},
            {"d": 2, "auroc_mean": 0.9},
            {"d": 4, "auroc_mean": 0.5},
        ]
        assert d_optimal_from_summary(rows) == 2

    def test_empty_summary(self) -> None:
        with pytest.raises(MissingArtifactError):
            d_optimal_from_summary([])

    def test_aggregate_and_render(self) -> None:
        cells = [
            _cell(1, 0, 0.60, 0.5),
            _cell(1, 1, 0.62, 0.6),
            _cell(4, 0, 0.80, 2.0),
            _cell(4, 1, 0.78, 2.1),
            _cell(16, 0, 0.70, 4.0),
            _cell(16, 1, 0.70, 4.2),
        ]
        summary = aggregate_sweep(cells)
        assert [row["d"] for row in summary.rows] == [1, 4, 16]
        assert summary.d_optimal == 4
        assert summary.spearman_d_entropy == pytest.approx(1.0)
        text = render_sweep_markdown(summary)
        assert "| AUC | 61.0±1.0 | 79.0±1.0 | 70.0±0.0 |" in text
        assert "AP_pix" not in text
        assert "d_optimal: 4" in text

    def test_no_entropy_no_correlation(self) -> None:
        cells = [{"d": 1, "auroc": 0.5}, {"d": 2, "auroc": 0.6}]
        assert aggregate_sweep(cells).spearman_d_entropy is None


class TestRenderings:
    """Comparison and identity tables."""

    def test_compare_table(self) -> None:
        rows = [
            {"method": "AE[d=16]", "auroc_mean": 0.7, "auroc_std": 0.01},
            {"method": "VAE", "auroc_mean": 0.65, "auroc_std": 0.02},
        ]
        text = render_compare_markdown(rows)
        assert text.splitlines()[0] == "| Method | AUC |"
        assert "| VAE | 65.0±2.0 |" in text

    def test_prop1_table(self) -> None:
        row = {
            "D": 4,
            "d": 1,
            "paper_bound_blocks": True,
            "rank_bound_blocks": True,
            "residual": 3.0000001,
            "closed_form": 3.0,
        }
        assert "| 4 | 1 | true | true | 3.000000 | 3.0 |" in render_prop1_markdown([row])


def _measured_cell(
    d: int, auroc: float, test_normal: float = 0.012, abnormal: float = 0.02
) -> dict:
    return {
        **_cell(d, 0, auroc, float(d)),
        "mse_train_normal": 0.01,
        "mse_test_normal": test_normal,
        "mse_abnormal": abnormal,
    }


class TestTrendChecks:
    """Pass/fail of the sweep and comparison trend checks."""

    def test_rise_and_fall_passes(self) -> None:
        aucs = {1: 0.70, 2: 0.78, 4: 0.80, 8: 0.76, 128: 0.70}
        cells = [_measured_cell(d, auc) for d, auc in aucs.items()]
        checks = sweep_trend_checks(aggregate_sweep(cells), cells)
        assert [check.name for check in checks] == [
            "peak_width",
            "gain_over_widest",
            "gain_over_narrowest",
            "error_ordering",
            "entropy_trend",
        ]
        assert all(check.holds for check in checks)

    def test_monotone_auc_fails_the_peak_checks(self) -> None:
        cells = [_measured_cell(d, 0.5 + 0.001 * d) for d in (1, 4, 32, 128)]
        checks = {c.name: c for c in sweep_trend_checks(aggregate_sweep(cells), cells)}
        assert not checks["peak_width"].holds
        assert not checks["gain_over_widest"].holds
        assert checks["entropy_trend"].holds

    def test_small_error_gap_names_the_cell(self) -> None:
        cells = [_measured_cell(1, 0.6), _measured_cell(4, 0.8, test_normal=0.0101)]
        checks = {c.name: c for c in sweep_trend_checks(aggregate_sweep(cells), cells)}
        assert not checks["error_ordering"].holds
        assert "d=4 r=0" in checks["error_ordering"].detail

    def test_wide_cells_are_not_ordered(self) -> None:
        """Widths above 64 may reconstruct abnormal images as well as normal ones."""
        cells = [_measured_cell(4, 0.8), _measured_cell(128, 0.6, abnormal=0.01)]
        checks = {c.name: c for c in sweep_trend_checks(aggregate_sweep(cells), cells)}
        assert checks["error_ordering"].holds

    def test_missing_entropy_fails(self) -> None:
        cells = [{**_measured_cell(d, 0.7), "h_hat": None} for d in (1, 4)]
        checks = {c.name: c for c in sweep_trend_checks(aggregate_sweep(cells), cells)}
        assert not checks["entropy_trend"].holds
        assert "unavailable" in checks["entropy_trend"].detail

    def test_rendered_in_sweep_markdown(self) -> None:
        cells = [_measured_cell(d, auc) for d, auc in {1: 0.7, 4: 0.8, 128: 0.7}.items()]
        summary = aggregate_sweep(cells)
        text = render_sweep_markdown(summary, sweep_trend_checks(summary, cells))
        assert "✓ peak_width: d_optimal=4" in text

    def test_compare_check(self) -> None:
        rows = [
            {"method": "AE[d=16]", "kind": "ae", "d": 16, "auroc_mean": 0.72},
            {"method": "VAE", "kind": "vae", "d": 16, "auroc_mean": 0.75},
            {"method": "AE[d_optimal=4]", "kind": "ae", "d": 4, "auroc_mean": 0.70},
        ]
        check = compare_trend_check(rows)
        assert not check.holds
        assert check.render().startswith("✗ best_width_beats_baseline_width")


class TestMetricsToml:
    """Commented metrics summary."""

    def test_comments_and_values(self, tmp_path: Path) -> None:
        path = tmp_path / "metrics.toml"
        summary = MetricsSummary(auroc=0.75, ap=0.7, n_normal=8, n_abnormal=8, ap_pix=0.4)
        write_metrics_toml(path, summary, {"kind": "ae", "latent_dim": 4, "checkpoint": None})
        text = path.read_text()
        assert "# Pixel-level average precision" in text
        doc = tomlkit.parse(text).unwrap()
        assert doc["run"] == {"kind": "ae", "latent_dim": 4}
        assert doc["metrics"]["auroc"] == 0.75
        assert "best_dice" not in doc["metrics"]
