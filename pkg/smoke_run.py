#!/usr/bin/env python3
"""
Smoke run of the latent-gate pipeline on a tiny dataset.

Generates a few phantoms, trains a small AE for two epochs, evaluates it and
runs the exact theory checks, all through the command-line entry point.
"""

import subprocess
import sys
import tempfile
from pathlib import Path


def run(*args: str) -> bool:
    command = [sys.executable, "-m", "latent_gate.cli", *args]
    result = subprocess.run(command, capture_output=True, text=True)
    if result.returncode == 0:
        print(f"✓ latent-gate {args[0]}")
        return True
    print(f"✗ latent-gate {args[0]} exited {result.returncode}: {result.stderr.strip()}")
    return False


def main() -> None:
    print("Latent Gate Smoke Run")
    print("=" * 40)

    with tempfile.TemporaryDirectory() as tmp:
        data = str(Path(tmp) / "data")
        runs = str(Path(tmp) / "runs")
        success = run(
            "generate", "--out", data, "--n-train", "32",
            "--n-test-normal", "16", "--n-test-abnormal", "16",
        )
        success &= run(
            "train", "--dataset", data, "--out", runs, "--epochs", "2",
            "--batch-size", "8", "--latent-dim", "4",
        )
        success &= run("eval", "--dataset", data, "--out", runs)
        success &= run("prop1", "--out", runs, "--dims", "4", "--iters", "3000")
        success &= run("mi-oracle", "--out", runs, "--n-chains", "20")

        if success:
            metrics = Path(runs) / "metrics.toml"
            print("\nmetrics.toml preview:")
            print("-" * 30)
            print(metrics.read_text(encoding="utf-8")[:500])

    print("\n" + "=" * 40)
    if not success:
        print("✗ Smoke run failed. Please check the errors above.")
        sys.exit(1)
    print("✓ Smoke run passed.")


if __name__ == "__main__":
    main()
