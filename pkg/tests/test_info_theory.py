"""Tests for discrete information measures and the latent entropy estimator."""

import itertools

import numpy as np
import pytest

from latent_gate.exceptions import ContractError, DimensionError, PreconditionError
from latent_gate.info_theory import (
    MarkovChain,
    co_information,
    conditional_mi,
    copy_encoder,
    discard_lesion_encoder,
    encoder_triple_joint,
    entropy,
    knn_entropy,
    latent_entropy_report,
    lesion_bit_world,
    mutual_information,
    noisy_lesion_encoder,
    verify_dpi,
    verify_dpi_random,
    verify_prop2_discrete,
)
from latent_gate.models import AEModel


def _cmi_by_definition(p: np.ndarray) -> float:
    """Sum of p(x,y,z) log2 p(z)p(x,y,z) / (p(x,z)p(y,z))."""
    p_xz = p.sum(axis=1)
    p_yz = p.sum(axis=0)
    p_z = p.sum(axis=(0, 1))
    total = 0.0
    for x, y, z in itertools.product(*(range(n) for n in p.shape)):
        if p[x, y, z] > 0:
            total += p[x, y, z] * np.log2(p_z[z] * p[x, y, z] / (p_xz[x, z] * p_yz[y, z]))
    return total


class TestDiscreteMeasures:
    """Entropy, mutual information and their three-variable forms."""

    def test_entropy_in_bits(self) -> None:
        assert entropy(np.full(8, 1 / 8)) == pytest.approx(3.0)
        assert entropy(np.array([1.0, 0.0])) == 0.0

    def test_entropy_rejects_non_distributions(self) -> None:
        with pytest.raises(ContractError):
            entropy(np.array([0.5, 0.6]))
        with pytest.raises(ContractError):
            entropy(np.array([1.5, -0.5]))

    def test_mutual_information_examples(self) -> None:
        assert mutual_information(np.eye(4) / 4) == pytest.approx(2.0)
        assert mutual_information(np.full((3, 5), 1 / 15)) == pytest.approx(0.0, abs=1e-12)

    def test_mutual_information_needs_a_matrix(self) -> None:
        with pytest.raises(DimensionError):
            mutual_information(np.full(4, 0.25))

    def test_conditional_mi_matches_definition(self, rng: np.random.Generator) -> None:
        for _ in range(20):
            p = rng.dirichlet(np.ones(8)).reshape(2, 2, 2)
            assert conditional_mi(p) == pytest.approx(_cmi_by_definition(p), abs=1e-12)

    def test_xor_has_negative_co_information(self) -> None:
        p = np.zeros((2, 2, 2))
        for x, y in itertools.product(range(2), repeat=2):
            p[x, y, x ^ y] = 0.25
        assert co_information(p) == pytest.approx(-1.0)
        assert conditional_mi(p) == pytest.approx(1.0)


class TestDataProcessing:
    """I(X;Z) >= I(X;X_hat) on Markov chains."""

    def test_random_chains(self) -> None:
        reports = verify_dpi_random(n_chains=100, max_alphabet=8, seed=0)
        assert len(reports) == 100
        assert all(r.holds for r in reports)

    def test_identity_chain_is_tight(self) -> None:
        chain = MarkovChain(np.full(4, 0.25), np.eye(4), np.eye(4))
        report = verify_dpi(chain)
        assert report.i_xz == pytest.approx(2.0)
        assert report.i_xxhat == pytest.approx(2.0)
        assert report.holds

    def test_inconsistent_alphabets(self) -> None:
        with pytest.raises(DimensionError):
            MarkovChain(np.full(3, 1 / 3), np.eye(3), np.eye(4))


class TestOptimalEncoder:
    """Keep every normal bit and nothing beyond it."""

    def test_discarding_the_lesion_is_optimal(self) -> None:
        report = verify_prop2_discrete(lesion_bit_world(4), discard_lesion_encoder(4))
        assert report.situation == "optimal"
        assert report.h_xn == pytest.approx(2.0)
        assert report.h_xa == pytest.approx(3.0)

    def test_copying_is_excess(self) -> None:
        report = verify_prop2_discrete(lesion_bit_world(4), copy_encoder(8))
        assert report.situation == "excess"
        assert report.i_xa_z == pytest.approx(3.0)

    def test_noisy_lesion_bit_is_excess(self) -> None:
        report = verify_prop2_discrete(lesion_bit_world(4), noisy_lesion_encoder(4, 0.1))
        assert report.keeps_normal
        assert report.situation == "excess"

    def test_constant_encoder_is_deficient(self) -> None:
        report = verify_prop2_discrete(lesion_bit_world(4), np.ones((8, 1)))
        assert report.situation == "deficient"

    def test_world_precondition(self) -> None:
        with pytest.raises(PreconditionError):
            verify_prop2_discrete(np.full((2, 2), 0.25), copy_encoder(2))

    def test_chain_rule_on_triple(self) -> None:
        """I(Z;X_a) = I(Z;X_a|X_n) + I(Z;X_a;X_n)."""
        triple = encoder_triple_joint(lesion_bit_world(4), noisy_lesion_encoder(4, 0.1))
        direct = mutual_information(triple.sum(axis=2))
        assert conditional_mi(triple) + co_information(triple) == pytest.approx(direct, abs=1e-9)


class TestKnnEntropy:
    """Kozachenko-Leonenko estimates in nats."""

    def test_gaussian(self, rng: np.random.Generator) -> None:
        samples = rng.normal(size=(4000, 2))
        assert knn_entropy(samples, k=3) == pytest.approx(np.log(2 * np.pi * np.e), abs=0.1)

    def test_scaling_shifts_by_log_factor(self, rng: np.random.Generator) -> None:
        samples = rng.uniform(size=(2000, 3))
        shift = knn_entropy(2.0 * samples) - knn_entropy(samples)
        assert shift == pytest.approx(3 * np.log(2.0), abs=1e-9)

    def test_uniform_unit_interval_is_zero(self, rng: np.random.Generator) -> None:
        assert knn_entropy(rng.uniform(size=10_000)) == pytest.approx(0.0, abs=0.05)

    def test_standard_normal_1d(self, rng: np.random.Generator) -> None:
        expected = 0.5 * np.log(2 * np.pi * np.e)
        assert knn_entropy(rng.normal(size=10_000)) == pytest.approx(expected, abs=0.05)

    def test_translation_invariant(self, rng: np.random.Generator) -> None:
        samples = rng.normal(size=(1000, 2))
        assert knn_entropy(samples + 5.0) == pytest.approx(knn_entropy(samples), abs=1e-9)

    def test_repeated_rows_are_jittered(self, rng: np.random.Generator) -> None:
        """Coincident points give a finite, seed-determined estimate."""
        samples = np.repeat(rng.normal(size=(200, 2)), 4, axis=0)
        original = samples.copy()
        estimate = knn_entropy(samples, k=3, seed=7)
        assert np.isfinite(estimate)
        assert estimate == knn_entropy(samples, k=3, seed=7)
        np.testing.assert_array_equal(samples, original)

    def test_needs_enough_samples(self) -> None:
        with pytest.raises(ContractError, match="N >= 10k"):
            knn_entropy(np.zeros((29, 2)), k=3)

    def test_latent_report_on_given_codes(
        self, small_ae: AEModel, rng: np.random.Generator
    ) -> None:
        latents = rng.normal(size=(200, 4))
        report = latent_entropy_report(small_ae, [], k=3, latents=latents)
        assert report.d == 4
        assert report.n == 200
        assert report.h_hat == pytest.approx(knn_entropy(latents, 3))

    def test_latent_report_needs_records(self, small_ae: AEModel) -> None:
        with pytest.raises(ContractError, match="non-empty"):
            latent_entropy_report(small_ae, [])
