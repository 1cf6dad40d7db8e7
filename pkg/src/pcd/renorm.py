"""Renormalization constants, the counter-function and the rough distribution.

Conventions: I(f)_t = int_0^t P_{t-s} f_s ds (positive sign), the stationary
per-mode variance of X is f(eps |k|)^2 / |k|^2, and

    C1 = sum_k f^2 / |k|^2,
    C2 = 2 sum_{k1, k2} f1^2 f2^2 / (|k1|^2 |k2|^2 Lambda),
    phi(t) = -2 sum_{k1, k2} w(|k1 + k2|) f1^2 f2^2 exp(-t Lambda) / (|k1|^2 |k2|^2 Lambda),

with Lambda = |k1|^2 + |k2|^2 + |k1 + k2|^2 and w the resonant block weight
sum_{|i-j|<=1} rho_i rho_j. For a stationary X and I started at 0,
E[pi_0(I(X^<>2), X^<>2)_t] = C2_block + phi(t) exactly, which is what the
subtraction in the fifth rough component cancels.

The double sums are evaluated exactly. Summands depend on (k1, k2) only
through quantities invariant under signed coordinate permutations applied to
both vectors, so k1 runs over orbit representatives with multiplicities, and
every pair is binned by the integer Lambda. C2 and phi(t) for any t then
follow from the Lambda histogram.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from . import gauss_ou
from .errors import GridMismatch, InvalidExponents, TruncationError
from .gauss_ou import MollifierProfile, OUSampler
from .lattice import LatticeSpec, TrajectoryField, band_lattice, from_grid, resample, to_grid
from .lp_besov import DyadicPartition, build_partition, resonant_weight
from .paracalc import (
    WeightedSeminormSpec,
    step_weights,
    _para_data,
    duhamel,
    duhamel_data,
    space_time_holder_norm,
    weighted_seminorm,
)

PLAIN = "plain"
BLOCK = "block"


@dataclass(frozen=True)
class RenormConstants:
    c1: float
    c2: float
    epsilon: float
    truncation: int
    c_combined: float = field(init=False)

    def __post_init__(self):
        if self.c1 < 0 or self.c2 < 0:
            raise ValueError("renormalization constants are nonnegative")
        object.__setattr__(self, "c_combined", 3.0 * (self.c1 - 3.0 * self.c2))


@dataclass(frozen=True, eq=False)
class CounterFunction:
    times: np.ndarray
    samples: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.samples, dtype=float)
        if t.shape != s.shape:
            raise ValueError("times and samples must have equal length")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "samples", s)

    @classmethod
    def zero(cls, times) -> "CounterFunction":
        t = np.asarray(times, dtype=float)
        return cls(t, np.zeros_like(t))

    def aligned(self, traj: TrajectoryField) -> np.ndarray:
        if self.times.size != len(traj) or not np.allclose(self.times, traj.times, rtol=0, atol=1e-12):
            raise GridMismatch("counter-function grid does not match the trajectory grid")
        return self.samples


# lattice sums -------------------------------------------------------------------


def default_truncation(epsilon: float, f: MollifierProfile) -> int:
    return int(math.ceil(f.support_radius / epsilon)) + 1


def _check_truncation(epsilon: float, f: MollifierProfile, truncation: int | None, lattice: LatticeSpec | None) -> int:
    if lattice is not None:
        return int(truncation) if truncation is not None else lattice.kmax * 4
    if not epsilon > 0:
        raise TruncationError("epsilon = 0 needs a lattice cutoff")
    if truncation is None:
        return default_truncation(epsilon, f)
    if epsilon * truncation < f.support_radius:
        raise TruncationError(
            f"truncation radius {truncation} does not cover the mollifier support {f.support_radius / epsilon:.6g}"
        )
    return int(truncation)


def _points(epsilon: float, f: MollifierProfile, radius: int, dim: int, lattice: LatticeSpec | None):
    """Integer points k != 0 with nonzero weight f(eps|k|)^2/|k|^2."""
    if lattice is not None:
        dim = lattice.dim
        kmax = lattice.kmax
    else:
        kmax = radius
    axis = np.arange(-kmax, kmax + 1)
    grid = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    ksq = np.sum(grid * grid, axis=1)
    keep = ksq > 0
    if lattice is None:
        keep &= ksq <= radius * radius
    grid, ksq = grid[keep], ksq[keep]
    prof = f(epsilon * np.sqrt(ksq)) if epsilon > 0 else np.ones(ksq.size)
    a = prof**2 / ksq
    nz = a > 0
    return grid[nz], ksq[nz], a[nz], kmax


def compute_c1(epsilon: float, f: MollifierProfile, truncation: int | None = None, dim: int = 3, lattice: LatticeSpec | None = None) -> float:
    """sum_{0 < |k| <= R} f(eps|k|)^2 / |k|^2 (or over the retained lattice modes)."""
    radius = _check_truncation(epsilon, f, truncation, lattice)
    _, _, a, _ = _points(epsilon, f, radius, dim, lattice)
    return math.fsum(a.tolist())


def _symmetry_reps(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orbit representatives under signed permutations and their orbit sizes."""
    canon = np.sort(np.abs(points), axis=1)
    uniq, inverse, counts = np.unique(canon, axis=0, return_inverse=True, return_counts=True)
    return uniq, counts


@functools.lru_cache(maxsize=64)
def _pair_histograms(epsilon: float, f: MollifierProfile, radius: int, dim: int, lattice: LatticeSpec | None):
    """Histograms over Lambda of sum a(k1) a(k2) (plain and block weighted)."""
    pts, ksq, a, kmax = _points(epsilon, f, radius, dim, lattice)
    if pts.shape[0] == 0:
        return np.zeros(1), np.zeros(1)
    reps, counts = _symmetry_reps(pts)
    lookup = {tuple(p): i for i, p in enumerate(pts.tolist())}
    rep_a = np.array([a[lookup[tuple(r)]] for r in reps.tolist()])
    rep_ksq = np.sum(reps * reps, axis=1)
    max12 = int(4 * np.max(ksq))
    wtable = resonant_weight(np.sqrt(np.arange(max12 + 1, dtype=float)))
    lam_max = int(2 * np.max(ksq) + max12)
    plain = np.zeros(lam_max + 1)
    block = np.zeros(lam_max + 1)
    chunk = max(1, 2_000_000 // pts.shape[0])
    for s in range(0, reps.shape[0], chunk):
        r = reps[s : s + chunk]
        k12 = r[:, None, :] + pts[None, :, :]
        k12sq = np.sum(k12 * k12, axis=2)
        mask = np.ones(k12sq.shape, dtype=bool)
        if lattice is not None:
            mask = np.all(np.abs(k12) <= kmax, axis=2)
        lam = rep_ksq[s : s + chunk, None] + ksq[None, :] + k12sq
        weight = (counts[s : s + chunk] * rep_a[s : s + chunk])[:, None] * a[None, :]
        weight = np.where(mask, weight, 0.0)
        plain += np.bincount(lam.ravel(), weights=weight.ravel(), minlength=lam_max + 1)
        block += np.bincount(lam.ravel(), weights=(weight * wtable[k12sq]).ravel(), minlength=lam_max + 1)
    return plain, block


def pair_histogram(epsilon: float, f: MollifierProfile, truncation: int | None = None, dim: int = 3, lattice: LatticeSpec | None = None, variant: str = BLOCK) -> np.ndarray:
    radius = _check_truncation(epsilon, f, truncation, lattice)
    plain, block = _pair_histograms(float(epsilon), f, radius, dim, lattice)
    return block if variant == BLOCK else plain


def compute_c2(epsilon: float, f: MollifierProfile, truncation: int | None = None, part: DyadicPartition | None = None, variant: str = BLOCK, dim: int = 3, lattice: LatticeSpec | None = None) -> float:
    """2 sum f1^2 f2^2 [w(|k12|)] / (|k1|^2 |k2|^2 Lambda).

    The block weight is evaluated with as many dyadic scales as |k1 + k2|
    requires (``part`` is accepted for interface symmetry; its profile
    functions are the module-wide chi/theta).
    """
    if variant not in (PLAIN, BLOCK):
        raise ValueError(f"unknown C2 variant {variant!r}")
    hist = pair_histogram(epsilon, f, truncation, dim, lattice, variant)
    lam = np.arange(hist.size, dtype=float)
    nz = hist != 0
    return 2.0 * math.fsum((hist[nz] / lam[nz]).tolist())


def compute_phi_eps(times, epsilon: float, f: MollifierProfile, truncation: int | None = None, part: DyadicPartition | None = None, dim: int = 3, lattice: LatticeSpec | None = None, variant: str = BLOCK) -> CounterFunction:
    """phi(t) = -2 sum w f1^2 f2^2 exp(-t Lambda) / (|k1|^2 |k2|^2 Lambda) on ``times``."""
    times = np.asarray(times, dtype=float)
    hist = pair_histogram(epsilon, f, truncation, dim, lattice, variant)
    lam = np.arange(hist.size, dtype=float)
    nz = np.flatnonzero(hist)
    if nz.size == 0:
        return CounterFunction.zero(times)
    coef = hist[nz] / lam[nz]
    vals = np.array([-2.0 * math.fsum((coef * np.exp(-t * lam[nz])).tolist()) for t in times])
    return CounterFunction(times, vals)


def minimal_exponent(epsilon: float, f: MollifierProfile, truncation: int | None = None, dim: int = 3, lattice: LatticeSpec | None = None) -> int:
    hist = pair_histogram(epsilon, f, truncation, dim, lattice, BLOCK)
    nz = np.flatnonzero(hist)
    return int(nz[0]) if nz.size else 0


def renorm_constants(epsilon: float, f: MollifierProfile, truncation: int | None = None, dim: int = 3, lattice: LatticeSpec | None = None, variant: str = BLOCK) -> RenormConstants:
    radius = _check_truncation(epsilon, f, truncation, lattice)
    c1 = compute_c1(epsilon, f, radius, dim, lattice)
    c2 = compute_c2(epsilon, f, radius, None, variant, dim, lattice)
    return RenormConstants(c1, c2, epsilon, radius)


# renormalized products --------------------------------------------------------------


def _square_data(data: np.ndarray, spec: LatticeSpec) -> np.ndarray:
    g = to_grid(data, spec, True)
    return from_grid(g * g, spec, True)


def _cube_data(data: np.ndarray, spec: LatticeSpec) -> np.ndarray:
    g = to_grid(data, spec, True)
    return from_grid(g * g * g, spec, True)


def _add_mean(data: np.ndarray, spec: LatticeSpec, values) -> np.ndarray:
    out = data.copy()
    out[(slice(None),) + (0,) * spec.dim] += np.asarray(values)
    return out


def wick_square_data(data: np.ndarray, spec: LatticeSpec, c1: float) -> np.ndarray:
    return _add_mean(_square_data(data, spec), spec, -c1)


def wick_cube_data(data: np.ndarray, spec: LatticeSpec, c1: float) -> np.ndarray:
    return _cube_data(data, spec) - 3.0 * c1 * data


def wick_square(X: TrajectoryField, c1: float) -> TrajectoryField:
    """X^2 - c1 per snapshot; the constant lands in the mean channel."""
    if c1 < 0:
        raise ValueError("c1 must be >= 0")
    return X.with_data(wick_square_data(X.data, X.spec, c1))


def diamond_cube_integrated(X: TrajectoryField, c1: float) -> TrajectoryField:
    """I(X^3 - 3 c1 X)."""
    return duhamel(X.with_data(wick_cube_data(X.data, X.spec, c1)))


def resonant_diamond_22(X: TrajectoryField, c1: float, c2: float, phi: CounterFunction, part: DyadicPartition) -> TrajectoryField:
    """pi_0(I(X^<>2), X^<>2) - c2 - phi(t)."""
    ph = phi.aligned(X)
    x2 = wick_square_data(X.data, X.spec, c1)
    i2 = duhamel_data(x2, X.times, X.spec.ksq().astype(float))
    res = _para_data(i2, x2, part, "diag")
    return X.with_data(_add_mean(res, X.spec, -(c2 + ph)))


def resonant_diamond_32(X: TrajectoryField, c1: float, c2: float, phi: CounterFunction, part: DyadicPartition) -> TrajectoryField:
    """pi_0(I(X^<>3), X^<>2) - 3 c2 X - 3 phi(t) X."""
    ph = phi.aligned(X)
    x2 = wick_square_data(X.data, X.spec, c1)
    i3 = duhamel_data(wick_cube_data(X.data, X.spec, c1), X.times, X.spec.ksq().astype(float))
    res = _para_data(i3, x2, part, "diag")
    shape = (-1,) + (1,) * X.spec.dim
    return X.with_data(res - 3.0 * (c2 + ph).reshape(shape) * X.data)


def resonant_mean(a: np.ndarray, b: np.ndarray, part: DyadicPartition) -> np.ndarray:
    """Spatial mean of pi_0(a, b) without forming the product.

    mean pi_0(a, b) = sum_k w(k) a(k) b(-k), w = sum_{|i-j|<=1} rho_i rho_j.
    """
    w = _resonant_weights(part)
    spec = part.spec
    batch = a.shape[: a.ndim - spec.dim]
    af = a.reshape(batch + (-1,))
    bf = b.reshape(batch + (-1,))[..., spec.negated()]
    return np.sum(w.ravel() * af * bf, axis=-1).real


@functools.lru_cache(maxsize=None)
def _resonant_weights(part: DyadicPartition) -> np.ndarray:
    rho = part.weights()
    w = np.zeros(part.spec.shape)
    for a in range(rho.shape[0]):
        w += rho[a] * rho[max(0, a - 1) : a + 2].sum(axis=0)
    return w


# rough distribution ---------------------------------------------------------------


@dataclass(frozen=True)
class RoughExponents:
    """K = (delta, delta', nu, rho)."""

    delta: float = 0.20
    delta_prime: float = 0.04
    nu: float = 0.10
    rho: float = 0.05

    def __post_init__(self):
        if not 0 < 4 * self.delta_prime < self.delta:
            raise InvalidExponents("need 0 < 4 delta' < delta")
        if self.nu < 0 or not 0 <= self.rho <= 1:
            raise InvalidExponents("need nu >= 0 and 0 <= rho <= 1")

    def space_exponents(self) -> tuple[float, ...]:
        """Spatial exponents of the six field components in the metric."""
        d = self.delta
        return (-0.5 - d, -1.0 - d, 0.5 - d, -0.5 - d, -1.0 - d, -1.0 - d)


COMPONENT_NAMES = ("X", "X2", "IX3", "pi0_IX3_X", "res22", "res32", "phi")


@dataclass(frozen=True, eq=False)
class RoughDistribution:
    """Seven components of R^phi_{a,b} X on a common time grid (positive I)."""

    x: TrajectoryField
    x2: TrajectoryField
    ix3: TrajectoryField
    pi0_ix3_x: TrajectoryField
    res22: TrajectoryField
    res32: TrajectoryField
    phi: CounterFunction
    a: float
    b: float
    K: RoughExponents = field(default_factory=RoughExponents)

    def __post_init__(self):
        for comp in self.fields()[1:]:
            if not self.x.same_grid(comp):
                raise GridMismatch("rough-distribution components are not aligned")
        self.phi.aligned(self.x)

    def fields(self) -> tuple[TrajectoryField, ...]:
        return (self.x, self.x2, self.ix3, self.pi0_ix3_x, self.res22, self.res32)

    @property
    def spec(self) -> LatticeSpec:
        return self.x.spec

    @property
    def times(self) -> np.ndarray:
        return self.x.times


def build_rough_distribution(X: TrajectoryField, a: float, b: float, phi: CounterFunction, part: DyadicPartition, K: RoughExponents | None = None) -> RoughDistribution:
    """R^phi_{a,b} X = (X, X^2 - a, I(X^3 - 3aX), pi_0(I(X^3 - 3aX), X),
    pi_0(I(X^2 - a), X^2 - a) - b - phi, pi_0(I(X^3 - 3aX), X^2 - a) - 3bX - 3 phi X, phi)."""
    K = K or RoughExponents()
    ph = phi.aligned(X)
    spec, lam = X.spec, X.spec.ksq().astype(float)
    x2 = wick_square_data(X.data, spec, a)
    i2 = duhamel_data(x2, X.times, lam)
    i3 = duhamel_data(wick_cube_data(X.data, spec, a), X.times, lam)
    c4 = _para_data(i3, X.data, part, "diag")
    c5 = _add_mean(_para_data(i2, x2, part, "diag"), spec, -(b + ph))
    shape = (-1,) + (1,) * spec.dim
    c6 = _para_data(i3, x2, part, "diag") - 3.0 * (b + ph).reshape(shape) * X.data
    w = X.with_data
    return RoughDistribution(X, w(x2), w(i3), w(c4), w(c5), w(c6), phi, float(a), float(b), K)


def rough_distance_components(A: RoughDistribution, B: RoughDistribution, K: RoughExponents | None = None, part: DyadicPartition | None = None) -> dict:
    """Per-component terms of d_{T,K}(A, B), keyed by COMPONENT_NAMES."""
    K = K or A.K
    if not A.x.same_grid(B.x):
        raise GridMismatch("rough distributions live on different grids")
    part = part or build_partition(A.spec)
    out = {}
    for name, fa, fb, beta in zip(COMPONENT_NAMES, A.fields(), B.fields(), K.space_exponents()):
        out[name] = space_time_holder_norm(fa.with_data(fa.data - fb.data), K.delta_prime, beta, part)
    out["phi"] = weighted_seminorm(A.phi.samples - B.phi.samples, A.times, WeightedSeminormSpec(K.nu, K.rho))
    return out


def rough_distance(A: RoughDistribution, B: RoughDistribution, K: RoughExponents | None = None, part: DyadicPartition | None = None) -> float:
    """d_{T,K}(A, B): six space-time Hoelder distances plus the phi seminorm."""
    return math.fsum(rough_distance_components(A, B, K, part).values())


def zero_rough_distribution(spec: LatticeSpec, t0: float, t1: float, n_steps: int, K: RoughExponents | None = None) -> RoughDistribution:
    z = TrajectoryField.zeros(spec, t0, t1, n_steps)
    return RoughDistribution(z, z, z, z, z, z, CounterFunction.zero(z.times), 0.0, 0.0, K or RoughExponents())


# Monte Carlo -------------------------------------------------------------------------


@dataclass
class VarianceReport:
    quantity: str
    theta: float
    qs: list
    lags: list
    estimates: np.ndarray
    std_errors: np.ndarray
    bounds: np.ndarray
    ratios: np.ndarray
    replicas: int
    max_over_median: float
    median_over_min: float
    passed: bool

    def rows(self):
        for i, q in enumerate(self.qs):
            for j, lag in enumerate(self.lags):
                yield q, lag, self.estimates[i, j], self.std_errors[i, j], self.bounds[i, j], self.ratios[i, j]


def _block_l2sq(data: np.ndarray, part: DyadicPartition, q: int) -> np.ndarray:
    """||Delta_q u||_{L^2}^2 (normalized measure) via Parseval."""
    w = part.weight(q)
    batch = data.shape[: data.ndim - part.spec.dim]
    flat = data.reshape(batch + (-1,))
    return np.sum((w.ravel() ** 2) * np.abs(flat) ** 2, axis=-1)


def mc_variance_check(
    quantity_id: str,
    qs,
    lags,
    replicas: int,
    spec: LatticeSpec,
    epsilons=(0.0,),
    f: MollifierProfile | None = None,
    theta: float = 0.25,
    s: float = 0.0,
    seed: int = 0,
    factor: float = 3.0,
) -> VarianceReport:
    """MC estimate of E||Delta_q (Q_t - Q_s)||_{L^2}^2 against |t-s|^theta 2^{2q(1+2 theta)}.

    ``quantity_id`` is "X" or "X2" (X^<>2 with the lattice-consistent C1).
    The estimate is the maximum over ``epsilons`` (sup over the mollification
    scale) of the replica mean. The check passes when the largest ratio is
    within ``factor`` of the median ratio.
    """
    if quantity_id not in ("X", "X2"):
        raise ValueError("quantity_id must be 'X' or 'X2'")
    f = f or MollifierProfile()
    part = build_partition(spec)
    qs, lags = list(qs), list(lags)
    times = np.concatenate([[s], s + np.asarray(lags, dtype=float)])
    order = np.argsort(times)
    c1 = {e: compute_c1(e, f, lattice=spec) for e in epsilons}
    acc = np.zeros((len(epsilons), len(qs), len(lags)))
    acc2 = np.zeros_like(acc)
    base = OUSampler(spec, gauss_ou.STATIONARY, 0.0, seed, 0, f)
    for r in range(replicas):
        sampler = base.with_stream(r)
        reps = list(gauss_ou.iter_unmollified(sampler, times[order]))
        reps = [reps[i] for i in np.argsort(order)]
        for ie, eps in enumerate(epsilons):
            w = gauss_ou.rep_profile(sampler, eps)
            fields = np.stack([gauss_ou.scatter(spec, x, w) for x in reps])
            if quantity_id == "X2":
                fields = wick_square_data(fields, spec, c1[eps])
            diff = fields[1:] - fields[0]
            for iq, q in enumerate(qs):
                v = _block_l2sq(diff, part, q)
                acc[ie, iq] += v
                acc2[ie, iq] += v * v
    mean = acc / replicas
    var = np.maximum(acc2 / replicas - mean**2, 0.0)
    se = np.sqrt(var / replicas)
    best = np.argmax(mean, axis=0)
    est = np.take_along_axis(mean, best[None], 0)[0]
    err = np.take_along_axis(se, best[None], 0)[0]
    qa = np.asarray(qs, dtype=float)[:, None]
    la = np.asarray(lags, dtype=float)[None, :]
    bound = la**theta * 2.0 ** (2 * qa * (1 + 2 * theta))
    # a zero lag has a zero bound and carries no shape information
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(bound > 0, est / bound, np.nan)
    finite = ratios[np.isfinite(ratios)]
    if finite.size == 0:
        finite = np.zeros(1)
    med = float(np.median(finite))
    mx = float(np.max(finite))
    mn = float(np.min(finite))
    max_over_med = mx / med if med > 0 else math.inf
    med_over_min = med / mn if mn > 0 else math.inf
    return VarianceReport(quantity_id, theta, qs, lags, est, err, bound, ratios, replicas, max_over_med, med_over_min, max_over_med <= factor)


def mc_wick_mean(spec: LatticeSpec, epsilon: float, replicas: int, f: MollifierProfile | None = None, seed: int = 0):
    """Replica mean and standard error of the spatial mean of X^2 at one time."""
    f = f or MollifierProfile()
    sampler = OUSampler(spec, gauss_ou.STATIONARY, epsilon, seed, 0, f)
    vals = np.empty(replicas)
    for r in range(replicas):
        x = gauss_ou.sample_ou_at(sampler.with_stream(r), [0.0])[0]
        vals[r] = float(np.sum(np.abs(x) ** 2))
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(replicas))


def graded_times(t: float, h_min: float, per_level: int = 8) -> np.ndarray:
    """Increasing nodes on [0, t] with step h_min near t, doubling every ``per_level`` steps backwards."""
    nodes = [t]
    h, cur = h_min, t
    while cur > 0:
        for _ in range(per_level):
            cur -= h
            if cur <= 1e-15:
                cur = 0.0
                break
            nodes.append(cur)
        if cur <= 0:
            break
        h *= 2
    nodes.append(0.0)
    out = np.unique(np.asarray(nodes))
    return out


def _support_component(spec: LatticeSpec, f: MollifierProfile, epsilon: float) -> int:
    """Largest wavenumber component carried by the mollified field."""
    if epsilon == 0:
        return spec.kmax
    return min(spec.kmax, int(math.ceil(f.support_radius / epsilon)))


def mc_resonant_means(
    spec: LatticeSpec,
    epsilons,
    t: float,
    replicas: int,
    f: MollifierProfile | None = None,
    seed: int = 0,
    h_min: float | None = None,
    per_level: int = 8,
):
    """Replica means of mean pi_0(I(X^<>2), X^<>2)_t, raw and minus (C2 + phi(t)).

    All epsilon levels share one noise realization per replica. Constants are
    the lattice-consistent ones. I is integrated on a graded grid that is
    finest near t. Each level is squared on the smallest lattice that is exact
    for its band.
    """
    f = f or MollifierProfile()
    part = build_partition(spec)
    epsilons = list(epsilons)
    if h_min is None:
        h_min = 1.0 / (16.0 * spec.dim * spec.kmax**2)
    times = graded_times(t, h_min, per_level)
    levels = []
    for eps in epsilons:
        c1 = compute_c1(eps, f, lattice=spec)
        c2 = compute_c2(eps, f, lattice=spec)
        ph = float(compute_phi_eps([t], eps, f, lattice=spec).samples[0])
        band = band_lattice(spec, _support_component(spec, f, eps))
        w = resonant_weight(band.kabs(), part.j_max) * band.retained()
        levels.append((c1, c2, ph, band, w))
    raw = np.zeros((replicas, len(epsilons)))
    base = OUSampler(spec, gauss_ou.STATIONARY, 0.0, seed, 0, f)
    profiles = [gauss_ou.rep_profile(base, e) for e in epsilons]
    for r in range(replicas):
        acc = [None] * len(epsilons)
        prev = [None] * len(epsilons)
        for n, x in enumerate(gauss_ou.iter_unmollified(base.with_stream(r), times)):
            for ie, (c1, _, _, band, _) in enumerate(levels):
                xs = resample(gauss_ou.scatter(spec, x, profiles[ie]), spec, band)
                x2 = wick_square_data(xs[None], band, c1)[0]
                if n == 0:
                    acc[ie] = np.zeros_like(x2)
                else:
                    e, wb, wa = _cached_weights(band, times[n] - times[n - 1])
                    acc[ie] = e * acc[ie] + wb * prev[ie] + wa * x2
                prev[ie] = x2
        for ie, lev in enumerate(levels):
            band, w = lev[3], lev[4]
            raw[r, ie] = float(np.sum(w * acc[ie] * np.conj(prev[ie])).real)
    c2s = np.array([lev[1] for lev in levels])
    phis = np.array([lev[2] for lev in levels])
    sub = raw - (c2s + phis)
    return {
        "epsilons": epsilons,
        "raw": raw.mean(axis=0),
        "raw_se": raw.std(axis=0, ddof=1) / math.sqrt(replicas),
        "subtracted": sub.mean(axis=0),
        "subtracted_se": sub.std(axis=0, ddof=1) / math.sqrt(replicas),
        "raw_samples": raw,
        "c1": np.array([lev[0] for lev in levels]),
        "c2": c2s,
        "phi": phis,
        "n_nodes": times.size,
    }


def resonant_mean_expectation(spec: LatticeSpec, epsilon: float, times, f: MollifierProfile | None = None) -> float:
    """Exact expectation of the discrete estimator used by ``mc_resonant_means``.

    E[I_n(k) conj(A_t(k))] with A = X^<>2 only needs the covariance
    Cov(A_s(k), A_t(k)) = 2 (c_tau * c_tau)(k), c_tau(k) = f^2 e^{-|k|^2 tau} / |k|^2,
    so the quadrature is applied to these deterministic functions.
    """
    f = f or MollifierProfile()
    part = build_partition(spec)
    times = np.asarray(times, dtype=float)
    t = times[-1]
    lam = spec.ksq().astype(float)
    prof = f.on_lattice(spec, epsilon) ** 2
    safe = np.where(lam > 0, lam, 1.0)
    w = resonant_weight(spec.kabs(), part.j_max) * spec.retained()

    def cov(tau):
        c = np.where(lam > 0, prof * np.exp(-lam * tau) / safe, 0.0)
        g = to_grid(c.astype(complex), spec, True)
        return 2.0 * from_grid(g * g, spec, True).real

    total = np.zeros(spec.shape)
    covs = [cov(t - s) for s in times]
    for j in range(times.size - 1):
        e, wb, wa = step_weights(lam, times[j + 1] - times[j])
        decay = np.exp(-lam * (t - times[j + 1]))
        total += decay * (wb * covs[j] + wa * covs[j + 1])
    return float(np.sum(w * total))


_weight_cache: dict = {}


def _cached_weights(spec: LatticeSpec, h: float):
    key = (spec, round(h, 15))
    if key not in _weight_cache:
        if len(_weight_cache) > 256:
            _weight_cache.clear()
        _weight_cache[key] = step_weights(spec.ksq().astype(float), h)
    return _weight_cache[key]
