"""Desk-scale sweep and comparison on the default phantom dataset; run with --run-slow."""

from pathlib import Path

import numpy as np
import pytest

from latent_gate import harness
from latent_gate.config import resolve_config
from latent_gate.models import ArchSpec, ModelKind, TrainConfig, build_model, train
from latent_gate.report import TrendCheck, read_csv
from latent_gate.synth_data import load_dataset

pytestmark = [pytest.mark.integration, pytest.mark.slow]


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory: pytest.TempPathFactory) -> dict[str, Path]:
    """Default dataset (2000/500/500, seed 17) plus a full sweep and comparison."""
    root = tmp_path_factory.mktemp("desk")
    data, out = root / "data", root / "sweep"
    harness.cmd_generate(resolve_config(overrides={"out": str(data)}))
    config = resolve_config(overrides={"dataset": str(data), "out": str(out)})
    harness.cmd_sweep(config)
    harness.cmd_compare(config)
    return {"data": data, "out": out}


@pytest.fixture(scope="module")
def sweep_checks(desk_run: dict[str, Path]) -> dict[str, TrendCheck]:
    config = resolve_config(
        overrides={"dataset": str(desk_run["data"]), "out": str(desk_run["out"])}
    )
    # every cell is already on disk, so this only re-aggregates
    outcome = harness.cmd_sweep(config)
    return {check.name: check for check in outcome.checks}


class TestSweepTrend:
    """AUC over latent width rises, peaks at a small width and falls again."""

    def test_peak_at_small_width(self, sweep_checks: dict[str, TrendCheck]) -> None:
        check = sweep_checks["peak_width"]
        assert check.holds, check.detail

    def test_peak_clears_widest(self, sweep_checks: dict[str, TrendCheck]) -> None:
        check = sweep_checks["gain_over_widest"]
        assert check.holds, check.detail

    def test_peak_clears_narrowest(self, sweep_checks: dict[str, TrendCheck]) -> None:
        check = sweep_checks["gain_over_narrowest"]
        assert check.holds, check.detail

    def test_error_ordering(self, sweep_checks: dict[str, TrendCheck]) -> None:
        check = sweep_checks["error_ordering"]
        assert check.holds, check.detail

    def test_latent_entropy_grows_with_width(self, sweep_checks: dict[str, TrendCheck]) -> None:
        check = sweep_checks["entropy_trend"]
        assert check.holds, check.detail

    def test_wider_code_fits_training_data_better(self, desk_run: dict[str, Path]) -> None:
        rows = read_csv(desk_run["out"] / "sweep_summary.csv")
        final_mse = {row["d"]: row["final_train_mse_mean"] for row in rows}
        assert final_mse[4] < final_mse[1]


class TestComparison:
    """The AE at the best sweep width against the baselines at d=16."""

    def test_best_width_is_no_worse_than_d16(self, desk_run: dict[str, Path]) -> None:
        rows = read_csv(desk_run["out"] / "compare.csv")
        assert [row["method"] for row in rows][:4] == ["AE[d=16]", "VAE", "MemAE", "CeAE"]
        baseline, best = rows[0], rows[-1]
        assert best["auroc_mean"] >= baseline["auroc_mean"]
        rendered = (desk_run["out"] / "compare.md").read_text()
        assert "✓ best_width_beats_baseline_width" in rendered


class TestDeskScaleTraining:
    """Fifty epochs on the full training split."""

    def test_error_drops_below_a_quarter(self, desk_run: dict[str, Path]) -> None:
        dataset = load_dataset(desk_run["data"])
        model = build_model(ModelKind.AE, ArchSpec(latent_dim=4), seed=17)
        result = train(model, dataset.train, TrainConfig(epochs=50, seed=17))
        assert np.isfinite(result.final_mse)
        assert result.final_mse < 0.25 * result.initial_mse
