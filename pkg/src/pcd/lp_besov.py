"""Littlewood-Paley blocks, Besov-Hoelder norms and empirical regularity."""

from __future__ import annotations

import functools
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientScales
from .lattice import LatticeSpec, SpectralField, random_field, to_grid

INNER = 0.75
OUTER = 4.0 / 3.0


def _flat_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


def chi(r):
    """Smoothed indicator: 1 on [0, 3/4], 0 on [4/3, inf)."""
    return 1.0 - _flat_step((np.asarray(r, dtype=float) - INNER) / (OUTER - INNER))


def theta(r):
    """Annulus profile chi(r/2) - chi(r), supported in [3/4, 8/3]."""
    r = np.asarray(r, dtype=float)
    return chi(0.5 * r) - chi(r)


def block_profile(r, j: int):
    """rho_j(r): chi(r) for j = -1, theta(2^-j r) otherwise."""
    if j == -1:
        return chi(r)
    return chi(np.ldexp(np.asarray(r, dtype=float), -j - 1)) - chi(np.ldexp(np.asarray(r, dtype=float), -j))


def top_index(rmax: float) -> int:
    """Largest j >= -1 whose annulus reaches radii <= rmax."""
    j = -1
    while rmax > INNER * 2.0 ** (j + 1):
        j += 1
    return j


def resonant_weight(r, j_top: int | None = None):
    """sum_{|i-j|<=1} rho_i(r) rho_j(r) over blocks -1..j_top."""
    r = np.asarray(r, dtype=float)
    if j_top is None:
        j_top = top_index(float(np.max(r, initial=0.0)))
    rho = [block_profile(r, j) for j in range(-1, j_top + 1)]
    w = np.zeros_like(r)
    for a, ra in enumerate(rho):
        for b in range(max(0, a - 1), min(len(rho), a + 2)):
            w = w + ra * rho[b]
    return w


@dataclass(frozen=True, eq=False)
class DyadicPartition:
    """The pair (chi, theta) bound to a lattice, with blocks j = -1..j_max."""

    spec: LatticeSpec
    j_max: int
    chi: object = field(default=chi, repr=False)
    theta: object = field(default=theta, repr=False)

    @property
    def indices(self) -> range:
        return range(-1, self.j_max + 1)

    @property
    def n_blocks(self) -> int:
        return self.j_max + 2

    def weights(self) -> np.ndarray:
        """Array (n_blocks, *shape) of rho_j(|k|), j = -1..j_max."""
        return _weights(self.spec, self.j_max)

    def weight(self, j: int) -> np.ndarray:
        if not -1 <= j <= self.j_max:
            raise IndexError(f"block index {j} outside [-1, {self.j_max}]")
        return self.weights()[j + 1]

    def low_pass(self, j: int) -> np.ndarray:
        """Multiplier of S_j = sum_{i <= j} Delta_i, i.e. chi(2^-j |k|)."""
        return chi(np.ldexp(self.spec.kabs(), -j))


@functools.lru_cache(maxsize=None)
def _weights(spec: LatticeSpec, j_max: int) -> np.ndarray:
    kabs = spec.kabs()
    w = np.stack([block_profile(kabs, j) for j in range(-1, j_max + 1)])
    w *= spec.retained()
    w.setflags(write=False)
    return w


def build_partition(spec: LatticeSpec) -> DyadicPartition:
    rmax = float(np.max(spec.kabs()[spec.retained()]))
    return DyadicPartition(spec, top_index(rmax))


@dataclass(frozen=True)
class BesovIndex:
    alpha: float
    p: float = math.inf
    q: float = math.inf

    def __post_init__(self):
        if not (self.p >= 1 and self.q >= 1):
            raise ValueError("Besov integrability indices must be >= 1")


def lp_block(u: SpectralField, j: int, part: DyadicPartition) -> SpectralField:
    if j < -1 or j > part.j_max:
        raise IndexError(f"block index {j} outside [-1, {part.j_max}]")
    return SpectralField._wrap(u.spec, u.data * part.weight(j))


def block_values(data: np.ndarray, part: DyadicPartition) -> np.ndarray:
    """Grid values of every block; output shape (n_blocks, *batch, *grid)."""
    w = part.weights()
    batch = data.shape[: data.ndim - part.spec.dim]
    wb = w.reshape((w.shape[0],) + (1,) * len(batch) + part.spec.shape)
    return to_grid(wb * data[None], part.spec)


def _lp_norm(values: np.ndarray, p: float, dim: int) -> np.ndarray:
    axes = tuple(range(-dim, 0))
    if math.isinf(p):
        return np.max(np.abs(values), axis=axes)
    return np.mean(np.abs(values) ** p, axis=axes) ** (1.0 / p)


def block_norms(data: np.ndarray, part: DyadicPartition, p: float = math.inf) -> np.ndarray:
    """||Delta_j u||_{L^p} for all blocks; shape (n_blocks, *batch)."""
    return _lp_norm(block_values(data, part), p, part.spec.dim)


def _aggregate(norms: np.ndarray, alpha: float, q: float, part: DyadicPartition) -> np.ndarray:
    j = np.arange(-1, part.j_max + 1, dtype=float)
    scaled = np.ldexp(1.0, 0) * (2.0 ** (j * alpha)).reshape((-1,) + (1,) * (norms.ndim - 1)) * norms
    if math.isinf(q):
        return np.max(scaled, axis=0)
    return np.sum(scaled**q, axis=0) ** (1.0 / q)


def besov_norm(u: SpectralField, idx: BesovIndex, part: DyadicPartition) -> float:
    """B^alpha_{p,q} proxy norm; L^p on the collocation grid (normalized measure)."""
    norms = block_norms(u.data, part, idx.p)
    return float(_aggregate(norms, idx.alpha, idx.q, part))


def holder_norm(u: SpectralField, alpha: float, part: DyadicPartition) -> float:
    """C^alpha = B^alpha_{inf,inf} proxy norm."""
    return besov_norm(u, BesovIndex(alpha), part)


def holder_norms(data: np.ndarray, alpha: float, part: DyadicPartition, chunk: int = 16) -> np.ndarray:
    """C^alpha proxy norms of a stack of snapshots (leading axis)."""
    out = np.empty(data.shape[0])
    for start in range(0, data.shape[0], chunk):
        sl = slice(start, start + chunk)
        out[sl] = _aggregate(block_norms(data[sl], part), alpha, math.inf, part)
    return out


def fit_range(part: DyadicPartition) -> range:
    return range(2, part.j_max)


def estimate_regularity(u: SpectralField, part: DyadicPartition) -> float:
    """Minus the least-squares slope of log2 ||Delta_j u||_inf over j in [2, j_max - 1]."""
    norms = block_norms(u.data, part)
    js = [j for j in fit_range(part) if norms[j + 1] > 0]
    if len(js) < 3:
        raise InsufficientScales(f"only {len(js)} usable blocks in [2, {part.j_max - 1}]")
    scale = float(np.max(norms))
    js = [j for j in js if norms[j + 1] > 1e-13 * scale]
    if len(js) < 3:
        raise InsufficientScales(f"only {len(js)} usable blocks in [2, {part.j_max - 1}]")
    y = np.log2([norms[j + 1] for j in js])
    slope = np.polyfit(np.asarray(js, dtype=float), y, 1)[0]
    return float(-slope)


def block_norms_csv(u: SpectralField, part: DyadicPartition) -> str:
    l2 = block_norms(u.data, part, 2.0)
    linf = block_norms(u.data, part)
    buf = io.StringIO()
    buf.write("j,l2_norm,linf_norm\n")
    for j, a, b in zip(part.indices, l2, linf):
        buf.write(f"{j},{a:.17g},{b:.17g}\n")
    return buf.getvalue()


def synthetic_field(spec: LatticeSpec, alpha: float, rng: np.random.Generator) -> SpectralField:
    """Gaussian field with u_hat(k) = zeta_k |k|^(-alpha - d/2); Hoelder regularity ~ alpha."""
    kabs = spec.kabs()
    amp = np.where(kabs > 0, np.where(kabs > 0, kabs, 1.0) ** (-alpha - spec.dim / 2.0), 0.0)
    return random_field(spec, rng, amp)


def aligned_field(spec: LatticeSpec, alpha: float) -> SpectralField:
    """Deterministic field with all phases aligned, u_hat(k) = |k|^(-alpha - d).

    Every block peaks at the origin, so the Hoelder norm at exponent alpha is
    saturated at every scale. Used by the exponent fits.
    """
    kabs = spec.kabs()
    amp = np.where(kabs > 0, np.where(kabs > 0, kabs, 1.0) ** (-alpha - spec.dim), 0.0)
    return SpectralField._wrap(spec, (amp * spec.retained()).astype(complex))
