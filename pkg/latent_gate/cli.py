"""
Latent Gate Command-Line Interface.

Click commands for generating the synthetic phantom dataset, training and
evaluating autoencoders, sweeping the latent width, comparing baseline
families and running the exact identity and information checks. Errors are
reported on stderr and mapped to the exit code of their error class.
"""

import logging
import sys
from typing import Any, Callable, Optional, TypeVar

import click

from . import __version__, harness
from .config import RunConfig, resolve_config
from .exceptions import ConfigError, LatentGateError

logger = logging.getLogger(__name__)

T = TypeVar("T")
F = TypeVar("F", bound=Callable[..., Any])


def _execute(
    body: Callable[[RunConfig], T], config_path: Optional[str], flags: dict[str, Any]
) -> tuple[RunConfig, T]:
    """Resolve the configuration and run ``body``; exits with the error's code on failure."""
    # an absent --paper-scale leaves the config file's choice in place
    if not flags.get("paper_scale"):
        flags.pop("paper_scale", None)
    try:
        config = resolve_config(config_path, flags)
        return config, body(config)
    except LatentGateError as e:
        click.echo(f"Error: {e}", err=True)
        if isinstance(e, ConfigError):
            for detail in e.errors:
                click.echo(f" - {detail}", err=True)
        sys.exit(e.exit_code)


def _parse_int_list(
    ctx: click.Context, param: click.Parameter, value: Optional[str]
) -> Optional[list[int]]:
    if value is None:
        return None
    try:
        return [int(item) for item in value.split(",") if item.strip()]
    except ValueError as e:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}") from e


def _apply(options: list[Callable[[F], F]], func: F) -> F:
    for option in reversed(options):
        func = option(func)
    return func


def common_options(func: F) -> F:
    """--config, --seed, --out and --workers, accepted by every command."""
    return _apply(
        [
            click.option(
                "--config",
                "config_path",
                type=click.Path(dir_okay=False),
                help="JSON or TOML run configuration",
            ),
            click.option("--seed", type=int, help="Base random seed"),
            click.option("--out", type=str, help="Output directory"),
            click.option("--workers", type=int, help="Parallel workers"),
        ],
        func,
    )


def model_options(func: F) -> F:
    return _apply(
        [
            click.option("--dataset", type=str, help="Dataset directory or manifest.json"),
            click.option(
                "--model-kind",
                type=click.Choice(["ae", "vae", "memae", "ceae"]),
                help="Model family",
            ),
            click.option("--latent-dim", type=int, help="Latent width d"),
            click.option("--bottleneck-width", type=int, help="Fully connected width D"),
        ],
        func,
    )


def training_options(func: F) -> F:
    return _apply(
        [
            click.option("--epochs", type=int, help="Training epochs"),
            click.option("--batch-size", type=int, help="Mini-batch size"),
            click.option("--lr", type=float, help="Adam learning rate"),
            click.option(
                "--paper-scale",
                is_flag=True,
                default=None,
                help="Full-length schedule: 250 epochs, 4000/1000/1000 split",
            ),
        ],
        func,
    )


@click.group()
@click.version_option(version=__version__)
@click.option("-v", "--verbose", is_flag=True, help="Log progress at INFO level")
def main(verbose: bool) -> None:
    """Latent Gate - information bottleneck experiments for anomaly-detecting autoencoders."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


@main.command()
@common_options
@click.option("--k-factors", type=int, help="Generative factors of normal phantoms")
@click.option("--noise-sigma", type=float, help="Additive Gaussian noise level")
@click.option("--n-train", type=int, help="Normal training images")
@click.option("--n-test-normal", type=int, help="Normal test images")
@click.option("--n-test-abnormal", type=int, help="Abnormal test images")
@click.option(
    "--paper-scale", is_flag=True, default=None, help="Full-length 4000/1000/1000 split"
)
def generate(config_path: Optional[str], **flags: Any) -> None:
    """Write the synthetic phantom dataset and its manifest."""
    _, manifest = _execute(harness.cmd_generate, config_path, flags)
    counts = ", ".join(f"{name}={len(items)}" for name, items in manifest.splits.items())
    click.echo(f"Wrote {len(manifest)} records ({counts}) to {manifest.path}")


@main.command(name="train")
@common_options
@model_options
@training_options
def train_command(config_path: Optional[str], **flags: Any) -> None:
    """Train one autoencoder on the normal training split."""
    config, outcome = _execute(harness.cmd_train, config_path, flags)
    click.echo(
        f"Trained {config.kind.display_name} (d={config.latent_dim}) for "
        f"{len(outcome.loss_trace)} epochs, final loss {outcome.loss_trace[-1]:.6f}"
    )
    click.echo(f"Checkpoint: {outcome.checkpoint}")


@main.command(name="eval")
@common_options
@model_options
@click.option("--checkpoint", type=str, help="Checkpoint to evaluate (default <out>/model.ckpt)")
def eval_command(config_path: Optional[str], **flags: Any) -> None:
    """Score the test splits with a trained checkpoint."""
    _, outcome = _execute(harness.cmd_eval, config_path, flags)
    for key, value in outcome.summary.to_dict().items():
        if value is not None:
            click.echo(f"{key}: {value}")
    click.echo(f"Reports written to {outcome.out_dir}")


@main.command()
@common_options
@click.option("--dataset", type=str, help="Dataset directory or manifest.json")
@click.option("--bottleneck-width", type=int, help="Fully connected width D")
@click.option(
    "--sweep", type=str, callback=_parse_int_list, help="Comma-separated widths, e.g. 1,2,4,8"
)
@click.option("--repeats", type=int, help="Seeds per latent width")
@training_options
def sweep(config_path: Optional[str], **flags: Any) -> None:
    """Train and evaluate AE models across latent widths."""
    _, outcome = _execute(harness.cmd_sweep, config_path, flags)
    click.echo(f"Finished {len(outcome.rows)} cells")
    if outcome.spearman_d_entropy is not None:
        click.echo(f"Spearman(d, H(Z)): {outcome.spearman_d_entropy:.3f}")
    click.echo(f"d_optimal: {outcome.d_optimal}")
    for check in outcome.checks:
        click.echo(check.render())


@main.command()
@common_options
@click.option("--dataset", type=str, help="Dataset directory or manifest.json")
@click.option("--sweep-dir", type=str, help="Directory holding sweep_summary.csv")
@click.option("--repeats", type=int, help="Seeds per method")
@training_options
def compare(config_path: Optional[str], **flags: Any) -> None:
    """Compare AE, VAE, MemAE and CeAE with the AE at the best sweep width."""
    _, outcome = _execute(harness.cmd_compare, config_path, flags)
    for row in outcome.rows:
        click.echo(f"{row['method']}: AUC {row['auroc_mean']:.4f} ± {row['auroc_std']:.4f}")
    click.echo(outcome.check.render())


@main.command()
@common_options
@click.option(
    "--dims",
    "prop1_dims",
    type=str,
    callback=_parse_int_list,
    help="Comma-separated input widths D",
)
@click.option("--iters", "prop1_iters", type=int, help="Gradient steps per (D, d)")
def prop1(config_path: Optional[str], **flags: Any) -> None:
    """Check that linear bottlenecks reach ||W1 W2 - I||^2 = D - d and no lower."""
    _, rows = _execute(harness.cmd_prop1, config_path, flags)
    click.echo(f"✓ {len(rows)} (D, d) cells agree with the closed-form residual")


@main.command(name="mi-oracle")
@common_options
@click.option("--n-chains", type=int, help="Random Markov chains to check")
@click.option("--max-alphabet", type=int, help="Largest alphabet of a random chain")
def mi_oracle(config_path: Optional[str], **flags: Any) -> None:
    """Exact information checks on random chains and a toy lesion world."""
    _, result = _execute(harness.cmd_mi_oracle, config_path, flags)
    click.echo(f"✓ data-processing inequality held on {result['dpi_holds']} chains")
    for name, case in result["encoders"].items():
        click.echo(f"✓ {name}: {case['situation']}")


@main.command()
@common_options
def report(config_path: Optional[str], **flags: Any) -> None:
    """Re-render markdown tables from existing CSV reports."""
    _, written = _execute(harness.cmd_report, config_path, flags)
    for path in written:
        click.echo(f"Wrote {path}")


if __name__ == "__main__":
    main()
