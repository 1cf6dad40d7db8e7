"""Bony paraproducts, commutators, the heat semigroup and Duhamel integration.

Paraproducts are assembled in physical space on the padded grid: every block
Delta_j is transformed once, the block sums are accumulated pointwise and a
single forward transform truncates the result to the retained modes. The zero
mode is kept (resonant products have a nonzero mean, which is exactly what the
renormalization subtracts).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, InvalidTime, SpecMismatch
from .lattice import LatticeSpec, SpectralField, TrajectoryField, from_grid, to_grid
from .lp_besov import DyadicPartition, holder_norms

_CHUNK_BYTES = 192 * 2**20


@dataclass(frozen=True)
class HeatParams:
    t: float

    def __post_init__(self):
        if not (math.isfinite(self.t) and self.t >= 0):
            raise InvalidTime(f"heat time must be finite and >= 0, got {self.t}")


@dataclass(frozen=True)
class WeightedSeminormSpec:
    nu: float
    rho: float

    def __post_init__(self):
        if self.nu < 0 or not 0 <= self.rho <= 1:
            raise ValueError("need nu >= 0 and 0 <= rho <= 1")


# paraproducts -----------------------------------------------------------------


def _check(part: DyadicPartition, *fields):
    for f in fields:
        if f.spec != part.spec:
            raise SpecMismatch(f"field lattice {f.spec} does not match partition lattice {part.spec}")


def padded_blocks(data: np.ndarray, part: DyadicPartition) -> np.ndarray:
    """Values of every block on the padded grid; shape (n_blocks, *batch, *grid)."""
    w = part.weights()
    batch = data.shape[: data.ndim - part.spec.dim]
    wb = w.reshape((w.shape[0],) + (1,) * len(batch) + part.spec.shape)
    return to_grid(wb * data[None], part.spec, padded=True)


def _lt_grid(fb: np.ndarray, gb: np.ndarray) -> np.ndarray:
    """sum_j S_{j-1} f * Delta_j g from block values (index 0 is j = -1)."""
    out = np.zeros(fb.shape[1:])
    low = np.zeros(fb.shape[1:])
    for a in range(2, fb.shape[0]):
        low += fb[a - 2]
        out += low * gb[a]
    return out


def _diag_grid(fb: np.ndarray, gb: np.ndarray) -> np.ndarray:
    nb = fb.shape[0]
    out = np.zeros(fb.shape[1:])
    for a in range(nb):
        near = fb[max(0, a - 1) : min(nb, a + 2)].sum(axis=0)
        out += near * gb[a]
    return out


def _grid_ops(fb, gb, which: str) -> np.ndarray:
    if which == "lt":
        return _lt_grid(fb, gb)
    if which == "gt":
        return _lt_grid(gb, fb)
    if which == "diag":
        return _diag_grid(fb, gb)
    raise ValueError(which)


def _para_multi(fd: np.ndarray, gd: np.ndarray, part: DyadicPartition, whichs, gblocks: np.ndarray | None = None) -> tuple:
    """Several paraproducts of (f, g) from one set of block transforms.

    ``gblocks`` may carry precomputed ``padded_blocks(gd, part)``.
    """
    spec = part.spec
    if fd.ndim == spec.dim:
        fb = padded_blocks(fd, part)
        gb = padded_blocks(gd, part) if gblocks is None else gblocks
        return tuple(from_grid(_grid_ops(fb, gb, w), spec, padded=True) for w in whichs)
    per = 2 * part.n_blocks * spec.padded_size**spec.dim * 8
    chunk = max(1, _CHUNK_BYTES // per)
    outs = tuple(np.empty(fd.shape, dtype=complex) for _ in whichs)
    for s in range(0, fd.shape[0], chunk):
        sl = slice(s, s + chunk)
        fb = padded_blocks(fd[sl], part)
        gb = padded_blocks(gd[sl], part) if gblocks is None else gblocks[:, sl]
        for out, w in zip(outs, whichs):
            out[sl] = from_grid(_grid_ops(fb, gb, w), spec, padded=True)
    return outs


def _para_data(fd: np.ndarray, gd: np.ndarray, part: DyadicPartition, which: str) -> np.ndarray:
    """Paraproduct of coefficient stacks (leading batch axis allowed)."""
    return _para_multi(fd, gd, part, (which,))[0]


def para_lt(f: SpectralField, g: SpectralField, part: DyadicPartition) -> SpectralField:
    """pi_<(f, g) = sum_j S_{j-1} f Delta_j g."""
    _check(part, f, g)
    return SpectralField._wrap(part.spec, _para_data(f.data, g.data, part, "lt"))


def para_gt(f: SpectralField, g: SpectralField, part: DyadicPartition) -> SpectralField:
    """pi_>(f, g) = pi_<(g, f)."""
    return para_lt(g, f, part)


def para_diag(f: SpectralField, g: SpectralField, part: DyadicPartition) -> SpectralField:
    """pi_0(f, g) = sum_{|i-j|<=1} Delta_i f Delta_j g."""
    _check(part, f, g)
    return SpectralField._wrap(part.spec, _para_data(f.data, g.data, part, "diag"))


def paraproducts(f: SpectralField, g: SpectralField, part: DyadicPartition):
    """(pi_<, pi_0, pi_>) of (f, g) sharing one set of block transforms."""
    _check(part, f, g)
    fb, gb = padded_blocks(f.data, part), padded_blocks(g.data, part)
    spec = part.spec
    return tuple(SpectralField._wrap(spec, from_grid(_grid_ops(fb, gb, w), spec, padded=True)) for w in ("lt", "diag", "gt"))


def product_data(fd: np.ndarray, gd: np.ndarray, spec: LatticeSpec) -> np.ndarray:
    """Dealiased product of coefficient stacks, zero mode kept."""
    return from_grid(to_grid(fd, spec, True) * to_grid(gd, spec, True), spec, True)


def commutator_R(f: SpectralField, x: SpectralField, y: SpectralField, part: DyadicPartition) -> SpectralField:
    """R(f, x, y) = pi_0(pi_<(f, x), y) - f pi_0(x, y)."""
    _check(part, f, x, y)
    first = _para_data(_para_data(f.data, x.data, part, "lt"), y.data, part, "diag")
    second = product_data(f.data, _para_data(x.data, y.data, part, "diag"), part.spec)
    return SpectralField._wrap(part.spec, first - second)


# heat semigroup ---------------------------------------------------------------


def heat_multiplier(spec: LatticeSpec, t: float) -> np.ndarray:
    return np.exp(-t * spec.ksq())


def heat_apply(u: SpectralField, hp: HeatParams) -> SpectralField:
    """P_t u: multiply every coefficient by exp(-|k|^2 t)."""
    if not isinstance(hp, HeatParams):
        hp = HeatParams(float(hp))
    return SpectralField._wrap(u.spec, u.data * heat_multiplier(u.spec, hp.t))


def multiplier_para_commutator(f: SpectralField, g: SpectralField, mult: np.ndarray, part: DyadicPartition) -> SpectralField:
    """m(D) pi_<(f, g) - pi_<(f, m(D) g) for a Fourier multiplier array m."""
    _check(part, f, g)
    lhs = _para_data(f.data, g.data, part, "lt") * mult
    rhs = _para_data(f.data, g.data * mult, part, "lt")
    return SpectralField._wrap(part.spec, lhs - rhs)


def heat_para_commutator(f: SpectralField, g: SpectralField, hp: HeatParams, part: DyadicPartition) -> SpectralField:
    """P_t pi_<(f, g) - pi_<(f, P_t g)."""
    if not isinstance(hp, HeatParams):
        hp = HeatParams(float(hp))
    return multiplier_para_commutator(f, g, heat_multiplier(part.spec, hp.t), part)


# Duhamel quadrature -----------------------------------------------------------

_SERIES_Z = 0.05
_SERIES_TERMS = 12


def phi1(z: np.ndarray) -> np.ndarray:
    """(1 - exp(-z)) / z, continuous at 0."""
    z = np.asarray(z, dtype=float)
    small = z < _SERIES_Z
    zs = np.where(small, 0.0, z)
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = -np.expm1(-zs) / np.where(small, 1.0, zs)
    series = np.zeros_like(z)
    term = np.ones_like(z)
    for n in range(_SERIES_TERMS):
        series += term / (n + 1)
        term = term * (-z) / (n + 1)
    return np.where(small, series, direct)


def _weight_b(z: np.ndarray) -> np.ndarray:
    """int_0^1 exp(-z s) s ds = (1 - (1 + z) exp(-z)) / z^2."""
    z = np.asarray(z, dtype=float)
    small = z < _SERIES_Z
    zs = np.where(small, 1.0, z)
    direct = (-np.expm1(-zs) - zs * np.exp(-zs)) / zs**2
    series = np.zeros_like(z)
    term = np.ones_like(z)
    for n in range(_SERIES_TERMS):
        series += term / (n + 2)
        term = term * (-z) / (n + 1)
    return np.where(small, series, direct)


def step_weights(lam: np.ndarray, h: float):
    """(decay, w_old, w_new) for one step of the exact piecewise-linear rule.

    int_{t}^{t+h} exp(-lam (t+h-s)) g(s) ds = h (w_old g(t) + w_new g(t+h))
    when g is linear on the step.
    """
    z = lam * h
    b = _weight_b(z)
    a = phi1(z) - b
    return np.exp(-z), h * b, h * a


def duhamel_data(values: np.ndarray, times: np.ndarray, lam: np.ndarray, initial: np.ndarray | None = None) -> np.ndarray:
    """I(g)_{t_n} on an arbitrary increasing time grid, per mode rate ``lam``."""
    out = np.empty(values.shape, dtype=complex)
    acc = np.zeros(values.shape[1:], dtype=complex) if initial is None else np.array(initial, dtype=complex)
    out[0] = acc
    steps = np.diff(times)
    cache = {}
    for n, h in enumerate(steps):
        key = float(h)
        if key not in cache:
            cache[key] = step_weights(lam, key)
        e, wb, wa = cache[key]
        acc = e * acc + wb * values[n] + wa * values[n + 1]
        out[n + 1] = acc
    return out


def duhamel(f: TrajectoryField, initial: SpectralField | None = None) -> TrajectoryField:
    """I(f)_t = int_{t0}^t P_{t-s} f_s ds with I(f)_{t0} = initial (default 0)."""
    init = None if initial is None else initial.data
    return f.with_data(duhamel_data(f.data, f.times, f.spec.ksq().astype(float), init))


def heat_flow(u0: SpectralField, times: np.ndarray) -> np.ndarray:
    """Stack of P_{t - t_0} u0 over ``times``."""
    ksq = u0.spec.ksq()
    return np.stack([u0.data * np.exp(-(t - times[0]) * ksq) for t in times])


def _traj_check(*trajs):
    first = trajs[0]
    for t in trajs[1:]:
        if not first.same_grid(t):
            raise GridMismatch("trajectories are not on aligned time grids")


def traj_para(f: TrajectoryField, g: TrajectoryField, part: DyadicPartition, which: str) -> TrajectoryField:
    _traj_check(f, g)
    return f.with_data(_para_data(f.data, g.data, part, which))


def b_lt(fprime: TrajectoryField, g: TrajectoryField, part: DyadicPartition) -> TrajectoryField:
    """B_<(f, g) = I(pi_<(f, g))."""
    return duhamel(traj_para(fprime, g, part, "lt"))


def b_diag(f: TrajectoryField, g: TrajectoryField, part: DyadicPartition) -> TrajectoryField:
    """B_0(f, g) = I(pi_0(f, g))."""
    return duhamel(traj_para(f, g, part, "diag"))


def b_gt(f: TrajectoryField, g: TrajectoryField, part: DyadicPartition) -> TrajectoryField:
    """B_>(f, g) = I(pi_>(f, g))."""
    return duhamel(traj_para(f, g, part, "gt"))


# seminorms --------------------------------------------------------------------


def dyadic_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (i, i + 2^m) covering all dyadic gaps on n + 1 nodes."""
    lo, hi = [], []
    gap = 1
    while gap <= n:
        i = np.arange(0, n + 1 - gap)
        lo.append(i)
        hi.append(i + gap)
        gap *= 2
    if not lo:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    return np.concatenate(lo), np.concatenate(hi)


def weighted_seminorm(phi, times, spec: WeightedSeminormSpec) -> float:
    """sup_t t^nu |phi_t| + sup_{s<t} s^nu |phi_t - phi_s| / |t - s|^rho (dyadic gaps)."""
    phi = np.asarray(phi, dtype=float)
    times = np.asarray(times, dtype=float)
    w = np.where(times > 0, np.abs(times) ** spec.nu, 1.0 if spec.nu == 0 else 0.0)
    first = float(np.max(w * np.abs(phi), initial=0.0))
    lo, hi = dyadic_pairs(phi.size - 1)
    if lo.size == 0:
        return first
    inc = w[lo] * np.abs(phi[hi] - phi[lo]) / np.abs(times[hi] - times[lo]) ** spec.rho
    return first + float(np.max(inc, initial=0.0))


def space_time_holder_norm(u: TrajectoryField, alpha_time: float, beta_space: float, part: DyadicPartition) -> float:
    """d_{alpha,beta}(u, 0): Hoelder-in-time increments of C^beta norms plus sup_t ||u_t||_beta."""
    data = u.data
    sup = float(np.max(holder_norms(data, beta_space, part)))
    lo, hi = dyadic_pairs(u.n_steps)
    times = u.times
    inc = 0.0
    for s in range(0, lo.size, 32):
        a, b = lo[s : s + 32], hi[s : s + 32]
        norms = holder_norms(data[b] - data[a], beta_space, part)
        inc = max(inc, float(np.max(norms / np.abs(times[b] - times[a]) ** alpha_time)))
    return inc + sup
