"""Network generator: Gumbel-softmax sampling of symmetric adjacency matrices.

Each undirected pair ``i < j`` carries two logits (edge absent, edge present).
A sample relaxes the Bernoulli choice with temperature ``tau`` and mirrors the
edge-present weight into both triangles; the diagonal is always zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .numerics import tensor as T
from .numerics.tensor import Tensor

CLAMP = 1e-12
ABSENT, PRESENT = 0, 1


def sample_standard_gumbel(count, rng):
    """``-log(-log U)`` with ``U`` uniform on (0, 1) clamped by 1e-12."""
    if isinstance(count, (int, np.integer)):
        if count < 0:
            raise ContractError("count must be nonnegative")
    u = rng.random(count)
    return gumbel_from_uniform(u)


def gumbel_from_uniform(u):
    u = np.clip(np.asarray(u, dtype=np.float64), CLAMP, 1.0 - CLAMP)
    return -np.log(-np.log(u))


def gumbel_softmax_with_noise(logits, gumbels, tau):
    """Differentiable relaxed sample ``softmax((logits + g) / tau)`` along the last axis."""
    if not tau > 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    logits = T.as_tensor(logits)
    return T.softmax((logits + Tensor(gumbels)) * (1.0 / tau), axis=-1)


def gumbel_softmax(logits, tau, rng):
    logits = T.as_tensor(logits)
    if not tau > 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    g = sample_standard_gumbel(logits.shape, rng)
    return gumbel_softmax_with_noise(logits, g, tau)


def pair_indices(n):
    return np.triu_indices(n, k=1)


def _mirror_matrix(n):
    """Constant ``(P, n*n)`` map placing pair weight ``p`` at ``(i, j)`` and ``(j, i)``."""
    iu, ju = pair_indices(n)
    m = np.zeros((iu.size, n * n))
    rows = np.arange(iu.size)
    m[rows, iu * n + ju] = 1.0
    m[rows, ju * n + iu] = 1.0
    return m


@dataclass
class AdjacencyDistribution:
    """Free logits for the ``n(n-1)/2`` upper-triangle pairs, shape ``(P, 2)``."""

    n: int
    logits: np.ndarray
    tau: float = 1.0
    _mirror: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        p = self.n * (self.n - 1) // 2
        if self.logits.shape != (p, 2):
            raise ContractError(f"expected logits of shape {(p, 2)}, got {self.logits.shape}")
        if not self.tau > 0:
            raise ContractError("temperature must be positive")
        self._mirror = _mirror_matrix(self.n)

    @classmethod
    def init(cls, n, rng=None, scale=0.0, tau=1.0):
        p = n * (n - 1) // 2
        logits = np.zeros((p, 2))
        if rng is not None and scale > 0:
            logits = scale * rng.standard_normal((p, 2))
        return cls(n, logits, tau)

    @property
    def num_pairs(self):
        return self.logits.shape[0]

    def full_logits(self):
        """Dense ``(n, n, 2)`` view: mirrored pairs, diagonal pinned to certain absence."""
        out = np.zeros((self.n, self.n, 2))
        out[..., PRESENT] = -np.inf
        iu, ju = pair_indices(self.n)
        out[iu, ju] = self.logits
        out[ju, iu] = self.logits
        return out

    def edge_probabilities(self):
        """Noise-free edge-present probabilities as an ``n x n`` matrix."""
        z = self.logits[:, PRESENT] - self.logits[:, ABSENT]
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        return (p @ self._mirror).reshape(self.n, self.n)

    def with_logits(self, logits):
        return AdjacencyDistribution(self.n, logits, self.tau)


@dataclass(frozen=True)
class SampledAdjacency:
    weights: Tensor
    hard: bool = False

    @property
    def matrix(self):
        return np.array(self.weights.data)


def relaxed_adjacency(logits, n, tau, gumbels, hard=False):
    """Symmetric ``(n, n)`` adjacency tensor from pair logits and frozen Gumbel noise.

    With ``hard`` the forward value is rounded to {0, 1} while the gradient
    follows the soft sample (straight-through).
    """
    probs = gumbel_softmax_with_noise(logits, gumbels, tau)
    w = probs[:, PRESENT]
    if hard:
        w = T.straight_through(w, (w.data > 0.5).astype(np.float64))
    flat = T.matmul(T.reshape(w, (1, -1)), Tensor(_mirror_matrix(n)))
    return T.reshape(flat, (n, n))


def sample_adjacency(dist: AdjacencyDistribution, rng, hard=False, logits=None):
    """Draw one adjacency sample; ``logits`` may be a tape tensor to differentiate through."""
    g = sample_standard_gumbel(dist.logits.shape, rng)
    lg = dist.logits if logits is None else logits
    return SampledAdjacency(relaxed_adjacency(lg, dist.n, dist.tau, g, hard), hard)


def mode_adjacency(dist: AdjacencyDistribution, hard=True):
    """Noise-free adjacency: argmax edges when ``hard``, else ``softmax(logits / tau)``."""
    g = np.zeros_like(dist.logits)
    return SampledAdjacency(relaxed_adjacency(dist.logits, dist.n, dist.tau, g, hard), hard)


def annealed_tau(step, tau0=1.0, rate=0.98, floor=0.1):
    return max(floor, tau0 * rate ** step)


def adjacency_to_csv(matrix, path):
    m = np.asarray(matrix, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        for row in m:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def adjacency_from_csv(path):
    with open(path) as fh:
        rows = [[float(v) for v in line.strip().split(",")] for line in fh if line.strip()]
    return np.array(rows)
