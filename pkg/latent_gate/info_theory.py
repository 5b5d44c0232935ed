"""
Information Measures.

Exact Shannon quantities on finite alphabets (bits), used to check the
data-processing inequality along ``X -> Z -> X_hat`` chains and the
information conditions an optimal autoencoder must meet on a toy world of
normal patterns plus a lesion bit. A Kozachenko-Leonenko nearest-neighbour
estimator (nats) gives the differential entropy of trained latent codes.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import digamma, gammaln
from scipy.stats import entropy as scipy_entropy
from sklearn.neighbors import KDTree

from .exceptions import ContractError, DimensionError, PreconditionError
from .models import AEModel, encode_array
from .synth_data import SampleRecord, stack_images

logger = logging.getLogger(__name__)

PROB_TOLERANCE = 1e-12
INFO_TOLERANCE = 1e-9
DPI_TOLERANCE = 1e-12
MIN_DISTANCE = 1e-12
TIE_JITTER = 1e-12


def check_distribution(p: np.ndarray, name: str = "distribution") -> np.ndarray:
    """Return ``p`` as float64 after checking it is a probability table."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.size == 0:
        raise ContractError(f"{name} is empty")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0:
        raise ContractError(f"{name} has negative or non-finite entries")
    total = float(arr.sum())
    if abs(total - 1.0) > PROB_TOLERANCE:
        raise ContractError(f"{name} sums to {total!r}, expected 1")
    return arr


def check_channel(channel: np.ndarray, name: str = "channel") -> np.ndarray:
    """Return a row-stochastic matrix P(out | in) as float64."""
    arr = np.asarray(channel, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a matrix", arr.shape)
    if arr.min() < 0.0:
        raise ContractError(f"{name} has negative entries")
    rows = arr.sum(axis=1)
    if np.any(np.abs(rows - 1.0) > PROB_TOLERANCE):
        raise ContractError(f"{name} rows do not sum to 1")
    return arr


def entropy(p: np.ndarray) -> float:
    """Shannon entropy in bits of a (possibly multi-dimensional) table."""
    arr = check_distribution(p)
    return float(scipy_entropy(arr.ravel(), base=2))


def mutual_information(joint: np.ndarray) -> float:
    """I(X;Y) = H(X) + H(Y) - H(X,Y) for a joint table P(X,Y)."""
    pxy = check_distribution(joint, "joint")
    if pxy.ndim != 2:
        raise DimensionError("mutual_information expects a 2-D joint", pxy.shape)
    return entropy(pxy.sum(axis=1)) + entropy(pxy.sum(axis=0)) - entropy(pxy)


def conditional_mi(joint: np.ndarray) -> float:
    """I(X;Y|Z) for a joint table P(X,Y,Z)."""
    pxyz = check_distribution(joint, "joint")
    if pxyz.ndim != 3:
        raise DimensionError("conditional_mi expects a 3-D joint", pxyz.shape)
    return (
        entropy(pxyz.sum(axis=1))
        + entropy(pxyz.sum(axis=0))
        - entropy(pxyz)
        - entropy(pxyz.sum(axis=(0, 1)))
    )


def co_information(joint: np.ndarray) -> float:
    """I(X;Y;Z) by inclusion-exclusion over the seven marginal entropies."""
    p = check_distribution(joint, "joint")
    if p.ndim != 3:
        raise DimensionError("co_information expects a 3-D joint", p.shape)
    singles = entropy(p.sum(axis=(1, 2))) + entropy(p.sum(axis=(0, 2))) + entropy(
        p.sum(axis=(0, 1))
    )
    pairs = entropy(p.sum(axis=2)) + entropy(p.sum(axis=1)) + entropy(p.sum(axis=0))
    return singles - pairs + entropy(p)


def joint_from_channel(p_in: np.ndarray, channel: np.ndarray) -> np.ndarray:
    """P(in, out) from a marginal P(in) and a channel P(out | in)."""
    p = check_distribution(p_in, "input distribution")
    c = check_channel(channel)
    if c.shape[0] != p.size:
        raise DimensionError("channel rows do not match the input alphabet", p.shape, c.shape)
    result: np.ndarray = p[:, None] * c
    return result


@dataclass
class MarkovChain:
    """X -> Z -> X_hat given by P(X) and two channels."""

    p_x: np.ndarray
    encoder: np.ndarray
    decoder: np.ndarray

    def __post_init__(self) -> None:
        self.p_x = check_distribution(self.p_x, "P(X)")
        self.encoder = check_channel(self.encoder, "encoder")
        self.decoder = check_channel(self.decoder, "decoder")
        if self.encoder.shape[0] != self.p_x.size or self.decoder.shape[0] != self.encoder.shape[1]:
            raise DimensionError(
                "chain alphabets are inconsistent", self.encoder.shape, self.decoder.shape
            )

    def end_to_end(self) -> np.ndarray:
        result: np.ndarray = self.encoder @ self.decoder
        return result


@dataclass
class DPIReport:
    i_xz: float
    i_xxhat: float
    holds: bool


def verify_dpi(chain: MarkovChain) -> DPIReport:
    """Check I(X;Z) >= I(X;X_hat) exactly."""
    i_xz = mutual_information(joint_from_channel(chain.p_x, chain.encoder))
    i_xxhat = mutual_information(joint_from_channel(chain.p_x, chain.end_to_end()))
    return DPIReport(i_xz, i_xxhat, i_xz >= i_xxhat - DPI_TOLERANCE)


def _random_rows(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    table = rng.dirichlet(np.full(cols, 0.5), size=rows)
    normalised: np.ndarray = table / table.sum(axis=1, keepdims=True)
    return normalised


def random_chain(rng: np.random.Generator, max_alphabet: int = 8) -> MarkovChain:
    """A chain with random alphabets in [2, max_alphabet] and Dirichlet rows."""
    m_x, m_z, m_xhat = (int(v) for v in rng.integers(2, max_alphabet + 1, size=3))
    p_x = _random_rows(rng, 1, m_x)[0]
    return MarkovChain(p_x, _random_rows(rng, m_x, m_z), _random_rows(rng, m_z, m_xhat))


def verify_dpi_random(
    n_chains: int = 100, max_alphabet: int = 8, seed: int = 0
) -> list[DPIReport]:
    rng = np.random.default_rng(seed)
    reports = [verify_dpi(random_chain(rng, max_alphabet)) for _ in range(n_chains)]
    failed = sum(not r.holds for r in reports)
    logger.info("Data-processing inequality held on %d/%d chains", n_chains - failed, n_chains)
    return reports


# -- optimal-encoder conditions on a toy world ------------------------------------------


def lesion_bit_world(m_n: int = 4, p_lesion: float = 0.5) -> np.ndarray:
    """Joint P(X_n, X_a) with X_n uniform over ``m_n`` and X_a = (X_n, lesion bit).

    Abnormal symbol ``2 * x_n + bit`` carries the normal pattern plus one bit.
    """
    if m_n < 1 or not 0.0 <= p_lesion <= 1.0:
        raise ContractError(f"invalid world: m_n={m_n}, p_lesion={p_lesion}")
    joint = np.zeros((m_n, 2 * m_n))
    for x_n in range(m_n):
        joint[x_n, 2 * x_n] = (1.0 - p_lesion) / m_n
        joint[x_n, 2 * x_n + 1] = p_lesion / m_n
    return joint


def copy_encoder(m_a: int) -> np.ndarray:
    """Z = X_a."""
    return np.eye(m_a)


def discard_lesion_encoder(m_n: int) -> np.ndarray:
    """Z = X_n: drop the lesion bit of X_a = (X_n, bit)."""
    channel = np.zeros((2 * m_n, m_n))
    channel[np.arange(2 * m_n), np.arange(2 * m_n) // 2] = 1.0
    return channel


def noisy_lesion_encoder(m_n: int, flip: float) -> np.ndarray:
    """Z = (X_n, bit flipped with probability ``flip``)."""
    channel = np.zeros((2 * m_n, 2 * m_n))
    for x_a in range(2 * m_n):
        channel[x_a, x_a] = 1.0 - flip
        channel[x_a, x_a ^ 1] += flip
    return channel


@dataclass
class OptimalityReport:
    h_xn: float
    h_xa: float
    h_z: float
    i_xn_z: float
    i_xa_z: float
    keeps_normal: bool
    bounded_by_normal: bool

    @property
    def optimal(self) -> bool:
        return self.keeps_normal and self.bounded_by_normal

    @property
    def situation(self) -> str:
        """``optimal``, ``excess`` (latent carries more than normal data) or ``deficient``."""
        if self.optimal:
            return "optimal"
        if self.i_xa_z > self.h_xn + INFO_TOLERANCE:
            return "excess"
        return "deficient"


def verify_prop2_discrete(world: np.ndarray, encoder: np.ndarray) -> OptimalityReport:
    """Check I(X_n;Z) = H(X_n) and I(X_a;Z) = H(X_n) for an encoder P(Z | X_a).

    The world P(X_n, X_a) must let every normal pattern appear inside an
    abnormal image, i.e. I(X_n; X_a) = H(X_n).
    """
    joint = check_distribution(world, "world")
    if joint.ndim != 2:
        raise DimensionError("world must be a 2-D joint P(X_n, X_a)", joint.shape)
    channel = check_channel(encoder, "encoder")
    if channel.shape[0] != joint.shape[1]:
        raise DimensionError("encoder rows must match the X_a alphabet", joint.shape, channel.shape)

    h_xn = entropy(joint.sum(axis=1))
    shared = mutual_information(joint)
    if abs(shared - h_xn) > INFO_TOLERANCE:
        raise PreconditionError(
            f"world violates I(X_n;X_a) = H(X_n): {shared:.12f} vs {h_xn:.12f} bits"
        )
    p_xa = joint.sum(axis=0)
    xa_z = p_xa[:, None] * channel
    xn_z = joint @ channel
    i_xn_z = mutual_information(xn_z)
    i_xa_z = mutual_information(xa_z)
    return OptimalityReport(
        h_xn=h_xn,
        h_xa=entropy(p_xa),
        h_z=entropy(xa_z.sum(axis=0)),
        i_xn_z=i_xn_z,
        i_xa_z=i_xa_z,
        keeps_normal=abs(i_xn_z - h_xn) <= INFO_TOLERANCE,
        bounded_by_normal=abs(i_xa_z - h_xn) <= INFO_TOLERANCE,
    )


def encoder_triple_joint(world: np.ndarray, encoder: np.ndarray) -> np.ndarray:
    """P(Z, X_a, X_n) for a world P(X_n, X_a) and encoder P(Z | X_a)."""
    joint = check_distribution(world, "world")
    channel = check_channel(encoder, "encoder")
    # [n, a, z] -> [z, a, n]
    triple = joint[:, :, None] * channel[None, :, :]
    result: np.ndarray = np.transpose(triple, (2, 1, 0))
    return result


# -- continuous estimator --------------------------------------------------------------


def log_unit_ball_volume(d: int) -> float:
    return float(d / 2.0 * np.log(np.pi) - gammaln(d / 2.0 + 1.0))


def knn_entropy(samples: np.ndarray, k: int = 3, seed: int = 0) -> float:
    """Kozachenko-Leonenko differential entropy estimate in nats (Euclidean).

    Repeated rows get a seeded jitter of ``TIE_JITTER`` so every point has a
    positive neighbour distance; samples without ties are used as given.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DimensionError("knn_entropy expects an [N×d] sample matrix", x.shape)
    n, d = x.shape
    if k < 1 or n < 10 * k:
        raise ContractError(f"knn_entropy needs N >= 10k samples, got N={n}, k={k}")
    if len(np.unique(x, axis=0)) < n:
        x = x + np.random.default_rng(seed).normal(0.0, TIE_JITTER, size=x.shape)
    tree = KDTree(x)
    distances, _ = tree.query(x, k=k + 1)
    eps = np.maximum(distances[:, k], MIN_DISTANCE)
    return float(
        digamma(n) - digamma(k) + log_unit_ball_volume(d) + d * np.mean(np.log(eps))
    )


@dataclass
class LatentEntropyReport:
    d: int
    h_hat: float
    n: int


def latent_entropy_report(
    model: AEModel,
    records: Sequence[SampleRecord],
    k: int = 3,
    latents: Optional[np.ndarray] = None,
) -> LatentEntropyReport:
    """Estimated entropy of the eval-mode latent codes of ``records``."""
    if latents is None:
        if not records:
            raise ContractError("latent entropy needs a non-empty split")
        latents = encode_array(model, stack_images(list(records)))
    h_hat = knn_entropy(latents, k)
    logger.info("Latent entropy d=%d: %.4f nats", model.spec.latent_dim, h_hat)
    return LatentEntropyReport(model.spec.latent_dim, h_hat, int(latents.shape[0]))
