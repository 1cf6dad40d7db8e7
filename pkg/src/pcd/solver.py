"""Direct and paracontrolled solution of the renormalized cubic equation.

Both routes solve

    du = (Delta u - u^3 + 3a u + s 9b u) dt + xi,    s = -1 by default,

on the lattice. Route A integrates it directly with exponential Euler. Route B
writes u = X + Phi with X the stationary O.U. field and iterates the fixed-point
map Gamma on the controlled ansatz

    Phi = J(X^<>3) + B_<(Phi', X^<>2) + Phi#,

where J(g) = -int_0^t P_{t-s} g_s ds and B_<(f, g) = J(pi_<(f, g)). With this
sign Gamma(Phi)' = 3 Phi. The rough distribution stores its integrated
components with the positive integral, so they enter here with a flipped sign.
Gamma realizes the s = -1 equation; the other sign corresponds to b -> -b.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gauss_ou
from .errors import GridMismatch, InvalidControlled, NoLocalSolution
from .gauss_ou import OUSampler
from .lattice import LatticeSpec, SpectralField, TrajectoryField, from_grid, to_grid
from .lp_besov import DyadicPartition, build_partition, holder_norms
from .paracalc import _para_data, _para_multi, duhamel_data, dyadic_pairs, padded_blocks, product_data, step_weights
from .renorm import RoughDistribution

CONVERGED = "converged"
MAX_ITER = "max_iter"
NO_LOCAL_SOLUTION = "no_local_solution"
_BLOCK_CACHE_BYTES = 512 * 2**20


@dataclass(frozen=True)
class ControlWeights:
    """L = (delta, gamma, kappa, a, b, c, d, eta)."""

    delta: float = 0.05
    gamma: float = 0.05
    kappa: float = 0.10
    a: float = 0.10
    b: float = 0.05
    c: float = 0.10
    d: float = 0.05
    eta: float = 0.08

    def __post_init__(self):
        vals = (self.delta, self.gamma, self.kappa, self.a, self.b, self.c, self.d, self.eta)
        if any(not 0 <= v <= 1 for v in vals):
            raise ValueError("control weights must lie in [0, 1]")
        if 2 * self.d > self.c or 2 * self.b > self.a:
            raise ValueError("need 2d <= c and 2b <= a")

    @classmethod
    def from_tuple(cls, vals) -> "ControlWeights":
        if len(vals) != 8:
            raise ValueError("need 8 control weights")
        return cls(*[float(v) for v in vals])

    def as_tuple(self) -> tuple:
        return (self.delta, self.gamma, self.kappa, self.a, self.b, self.c, self.d, self.eta)


def _check_z(z: float) -> float:
    if not 0.5 < z < 2.0 / 3.0:
        raise ValueError(f"z must lie in (1/2, 2/3), got {z}")
    return float(z)


@dataclass(frozen=True)
class SolveConfig:
    T: float = 0.1
    dt: float = 1e-3
    z: float = 0.6
    L: ControlWeights = field(default_factory=ControlWeights)
    max_picard: int = 12
    contraction_tol: float = 1e-10
    blowup_threshold: float = 1e6
    sign_b: int = -1
    cubic: bool = True
    diamond: str = "compact"
    identity_tol: float = 1e-8
    record_every: int = 1

    def __post_init__(self):
        if not self.dt > 0 or not self.T > 0:
            raise ValueError("need dt > 0 and T > 0")
        _check_z(self.z)
        if self.sign_b not in (-1, 1):
            raise ValueError("sign_b must be +1 or -1")
        if self.diamond not in ("compact", "expanded"):
            raise ValueError("diamond must be 'compact' or 'expanded'")
        if self.max_picard < 1:
            raise ValueError("max_picard must be >= 1")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.T / self.dt)))


@dataclass(frozen=True, eq=False)
class ControlledDistribution:
    phi: TrajectoryField
    gubinelli_derivative: TrajectoryField
    remainder: TrajectoryField
    weights: ControlWeights = field(default_factory=ControlWeights)
    z: float = 0.6

    def __post_init__(self):
        _check_z(self.z)
        if not (self.phi.same_grid(self.gubinelli_derivative) and self.phi.same_grid(self.remainder)):
            raise GridMismatch("controlled components are not aligned")

    @property
    def prime(self) -> TrajectoryField:
        return self.gubinelli_derivative

    @property
    def sharp(self) -> TrajectoryField:
        return self.remainder


# direct route -------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OUForcing:
    """Exact stochastic-convolution increments X_{n+1} - e^{-|k|^2 h} X_n of an O.U. path."""

    X: TrajectoryField

    @property
    def spec(self) -> LatticeSpec:
        return self.X.spec

    @property
    def times(self) -> np.ndarray:
        return self.X.times

    def increments(self) -> np.ndarray:
        h = np.diff(self.X.times)
        lam = self.X.spec.ksq().astype(float)
        data = self.X.data
        out = np.empty((len(h),) + data.shape[1:], dtype=complex)
        for n, hn in enumerate(h):
            out[n] = data[n + 1] - np.exp(-lam * hn) * data[n]
        return out


@dataclass
class DirectStatus:
    status: str
    blowup_time: float | None = None

    def __str__(self):
        if self.blowup_time is None:
            return self.status
        return f"blowup({self.blowup_time:.6g})"


def linear_coefficient(a: float, b: float, sign_b: int = -1) -> float:
    return 3.0 * a + sign_b * 9.0 * b


def _sampler_increments(sampler: OUSampler, times: np.ndarray):
    """Stochastic-convolution increments streamed from a sampler, one per step."""
    spec = sampler.spec
    w = gauss_ou.rep_profile(sampler)
    lam = spec.ksq().ravel()[spec.representatives()].astype(float)
    it = gauss_ou.iter_unmollified(sampler, times)
    prev = next(it)
    for n, x in enumerate(it):
        yield gauss_ou.scatter(spec, x - np.exp(-lam * (times[n + 1] - times[n])) * prev, w)
        prev = x


def solve_direct(u0: SpectralField, xi, a: float, b: float, cfg: SolveConfig, return_status: bool = False):
    """Exponential Euler for du = Delta u + N(u) + xi, N(u) = -u^3 + (3a + s 9b) u.

    ``xi`` is None (no forcing), a TrajectoryField of forcing values, an
    OUForcing (white noise through the exact stochastic convolution of a stored
    O.U. path) or an OUSampler (the same, streamed on the ``cfg`` grid). Every
    ``cfg.record_every``-th state is kept. Once the sup norm exceeds
    ``cfg.blowup_threshold`` the state is frozen.
    """
    spec = u0.spec
    if xi is None or isinstance(xi, OUSampler):
        times = cfg.dt * np.arange(cfg.n_steps + 1)
    else:
        times = np.asarray(xi.times, dtype=float)
        if not math.isclose(float(times[1] - times[0]), cfg.dt, rel_tol=1e-9):
            raise GridMismatch("forcing grid step does not match cfg.dt")
    if xi is not None and xi.spec != spec:
        raise GridMismatch("forcing and initial datum live on different lattices")
    if isinstance(xi, OUSampler):
        noise = _sampler_increments(xi, times)
    elif isinstance(xi, OUForcing):
        noise = iter(xi.increments())
    else:
        noise = None
    forcing = xi.data if isinstance(xi, TrajectoryField) else None
    lam = spec.ksq().astype(float)
    coef = linear_coefficient(a, b, cfg.sign_b)
    stride = cfg.record_every
    n_steps = times.size - 1
    if n_steps % stride:
        raise GridMismatch("record_every must divide the number of steps")
    out = np.empty((n_steps // stride + 1,) + spec.shape, dtype=complex)
    u = u0.data.astype(complex)
    out[0] = u
    status = DirectStatus(CONVERGED)
    cache = {}
    for n in range(n_steps):
        h = float(times[n + 1] - times[n])
        if h not in cache:
            e, wb, wa = step_weights(lam, h)
            cache[h] = (e, wb + wa)
        e, p1 = cache[h]
        grid = to_grid(u, spec, True)
        if not np.all(np.isfinite(grid)) or np.max(np.abs(grid)) > cfg.blowup_threshold:
            status = DirectStatus("blowup", float(times[n]))
            out[-(-n // stride):] = u
            break
        nl = coef * u
        if cfg.cubic:
            nl = nl - from_grid(grid**3, spec, True)
        if forcing is not None:
            nl = nl + forcing[n]
        u = e * u + p1 * nl
        if noise is not None:
            u = u + next(noise)
        if (n + 1) % stride == 0:
            out[(n + 1) // stride] = u
    traj = TrajectoryField(spec, float(times[0]), float(times[-1]), out)
    return (traj, status) if return_status else traj


# paracontrolled route ------------------------------------------------------------------


def _J(values: np.ndarray, times: np.ndarray, spec: LatticeSpec) -> np.ndarray:
    return -duhamel_data(values, times, spec.ksq().astype(float))


def _mul(f: np.ndarray, g: np.ndarray, spec: LatticeSpec) -> np.ndarray:
    return product_data(f, g, spec)


def _triple(f: np.ndarray, g: np.ndarray, h: np.ndarray, spec: LatticeSpec) -> np.ndarray:
    return from_grid(to_grid(f, spec, True) * to_grid(g, spec, True) * to_grid(h, spec, True), spec, True)


def _mean_shape(spec: LatticeSpec):
    return (-1,) + (1,) * spec.dim


class RoughData:
    """Phi-independent pieces of Gamma, derived once from a rough distribution.

    Stored integrals flip sign (J = -I):
      Y       = J(X^<>3)                             = -ix3
      P0YX    = pi_0(Y, X)                           = -pi0_ix3_x
      K22     = pi_0(J(X^<>2), X^<>2) + b            = -(res22 + phi)
      K32     = pi_0(Y, X^<>2) + 3bX                 = -res32 - 3 phi X
    """

    def __init__(self, XX: RoughDistribution, part: DyadicPartition, n_steps: int | None = None):
        n = XX.x.n_steps if n_steps is None else n_steps
        if n > XX.x.n_steps:
            raise GridMismatch("horizon beyond the rough distribution")
        self.XX = XX
        self.part = part
        self.spec = spec = XX.spec
        sl = slice(0, n + 1)
        self.times = XX.times[sl]
        self.t0, self.t1 = float(self.times[0]), float(self.times[-1])
        ph = XX.phi.samples[sl].reshape(_mean_shape(spec))
        self.X = XX.x.data[sl]
        self.X2 = XX.x2.data[sl]
        self.Y = -XX.ix3.data[sl]
        self.P0YX = -XX.pi0_ix3_x.data[sl]
        zero = (slice(None),) + (0,) * spec.dim
        k22 = -XX.res22.data[sl].copy()
        k22[zero] -= ph.reshape(-1)
        self.K22 = k22
        self.K32 = -XX.res32.data[sl] - 3.0 * ph * self.X
        self.JX2 = _J(self.X2, self.times, spec)
        self.P0JX2 = _para_data(self.JX2, self.X2, part, "diag")
        lt, gt = _para_multi(self.Y, self.X, part, ("lt", "gt"))
        self.YX = lt + gt + self.P0YX
        self.Y2X = self._y2x()
        nbytes = part.n_blocks * self.X2.shape[0] * spec.padded_size**spec.dim * 8
        self.x2_blocks = padded_blocks(self.X2, part) if nbytes <= _BLOCK_CACHE_BYTES else None

    def para_x2(self, fd: np.ndarray, whichs) -> tuple:
        """Paraproducts of f against X^<>2, reusing cached blocks when available."""
        return _para_multi(fd, self.X2, self.part, whichs, self.x2_blocks)

    def _y2x(self) -> np.ndarray:
        """I(X^<>3)^2 X through pi_0(Y, X) from the rough distribution.

        Y^2 X = pi_0(Y, Y) X + 2 pi_<(pi_<(Y, Y), X) + 2 pi_>(pi_<(Y, Y), X)
              + 2 Y pi_0(Y, X) + 2 R(Y, Y, X),
        R(f, g, h) = pi_0(pi_<(f, g), h) - f pi_0(g, h).
        """
        spec, part = self.spec, self.part
        Y, X = self.Y, self.X
        lt_yy, d_yy = _para_multi(Y, Y, part, ("lt", "diag"))
        lt2, gt2, d2 = _para_multi(lt_yy, X, part, ("lt", "gt", "diag"))
        d_yx = _para_data(Y, X, part, "diag")
        comm = d2 - _mul(Y, d_yx, spec)
        return _mul(d_yy, X, spec) + 2.0 * lt2 + 2.0 * gt2 + 2.0 * _mul(Y, self.P0YX, spec) + 2.0 * comm

    def traj(self, data: np.ndarray) -> TrajectoryField:
        return TrajectoryField(self.spec, self.t0, self.t1, data)


def _as_rough_data(XX, part=None, n_steps=None) -> RoughData:
    if isinstance(XX, RoughData):
        return XX
    return RoughData(XX, part or build_partition(XX.spec), n_steps)



def _check_aligned(Phi: ControlledDistribution, rd: RoughData):
    if Phi.phi.spec != rd.spec or len(Phi.phi) != rd.times.size or not np.allclose(Phi.phi.times, rd.times, rtol=0, atol=1e-12):
        raise GridMismatch("controlled distribution and rough distribution grids differ")


def structural_residual(Phi: ControlledDistribution, rd: RoughData) -> float:
    """max |Phi - J(X^<>3) - B_<(Phi', X^<>2) - Phi#| relative to max(1, |Phi|)."""
    blt = _J(rd.para_x2(Phi.prime.data, ("lt",))[0], rd.times, rd.spec)
    res = Phi.phi.data - rd.Y - blt - Phi.sharp.data
    return float(np.max(np.abs(res)) / max(1.0, float(np.max(np.abs(Phi.phi.data)))))


def controlled_from(phi: np.ndarray, prime: np.ndarray, rd: RoughData, L: ControlWeights, z: float) -> ControlledDistribution:
    """Controlled distribution with given Phi and Phi'; Phi# is the residual."""
    blt = _J(rd.para_x2(prime, ("lt",))[0], rd.times, rd.spec)
    return ControlledDistribution(rd.traj(phi), rd.traj(prime), rd.traj(phi - rd.Y - blt), L, z)


def diamond_weights(times: np.ndarray, lam: np.ndarray, n: int) -> list:
    """Per-mode weights omega_{n,m}: J-free Duhamel value at t_n is sum_m omega_{n,m} g_m."""
    out = [np.zeros_like(lam) for _ in range(n + 1)]
    for j in range(n):
        e, wb, wa = step_weights(lam, times[j + 1] - times[j])
        decay = np.exp(-lam * (times[n] - times[j + 1]))
        out[j] = out[j] + decay * wb
        out[j + 1] = out[j + 1] + decay * wa
    return out


def diamond_operator(prime: np.ndarray, rd: RoughData, expanded: bool = False) -> np.ndarray:
    """X^<>(Phi') on the grid of ``rd``.

    Compact: J(Phi' K22 + pi_0(B_<(Phi', X^<>2), X^<>2) - Phi' pi_0(J(X^<>2), X^<>2)).
    Expanded: the bracket is written as the double time sum of
      (Phi'_m - Phi'_n) pi_0(X^<>2_n, M X^<>2_m)
      + pi_0(R1_M(Phi'_m, X^<>2_m), X^<>2_n)
      + R2(Phi'_m, M X^<>2_m, X^<>2_n),
    with M = omega_{n,m} the quadrature multiplier, R1_M(f, g) = M pi_<(f, g) - pi_<(f, M g)
    and R2 the commutator R. Both forms agree to rounding.
    """
    spec, part, times = rd.spec, rd.part, rd.times
    first = _mul(prime, rd.K22, spec)
    if not expanded:
        blt = _J(rd.para_x2(prime, ("lt",))[0], times, spec)
        bracket = rd.para_x2(blt, ("diag",))[0] - _mul(prime, rd.P0JX2, spec)
        return _J(first + bracket, times, spec)
    lam = spec.ksq().astype(float)
    bracket = np.zeros_like(prime)
    for n in range(times.size):
        omegas = diamond_weights(times, lam, n)
        acc = np.zeros(spec.shape, dtype=complex)
        xn = rd.X2[n]
        for m in range(n + 1):
            M = omegas[m]
            if not np.any(M):
                continue
            fm, gm = prime[m], rd.X2[m]
            mg = M * gm
            t2 = _mul(fm - prime[n], _para_data(xn, mg, part, "diag"), spec)
            r1 = M * _para_data(fm, gm, part, "lt") - _para_data(fm, mg, part, "lt")
            t3 = _para_data(r1, xn, part, "diag")
            t4 = _para_data(_para_data(fm, mg, part, "lt"), xn, part, "diag") - _mul(fm, _para_data(mg, xn, part, "diag"), spec)
            acc += t2 + t3 + t4
        bracket[n] = -acc
    return _J(first + bracket, times, spec)


def gamma_map(Phi: ControlledDistribution, XX, Psi: TrajectoryField, part: DyadicPartition | None = None, diamond: str = "compact", identity_tol: float = 1e-8) -> ControlledDistribution:
    """Gamma(Phi) = J(X^<>3) + 3 J(Phi <> X^<>2) + 3 J(Phi^2 X) + J(Phi^3) + Psi.

    J(Phi <> X^<>2) = B_<(Phi, X2) + B_>(Phi, X2) + B_0<>(J(X^<>3), X2) + X^<>(Phi') + B_0(Phi#, X2),
    J(Phi^2 X)     = J(Y^2 X) + J(theta#^2 X) + 2 J(theta# Y X),  theta# = B_<(Phi', X2) + Phi#.
    """
    rd = _as_rough_data(XX, part, len(Phi.phi) - 1)
    _check_aligned(Phi, rd)
    if not Psi.same_grid(Phi.phi):
        raise GridMismatch("Psi is not on the controlled grid")
    spec, part, times = rd.spec, rd.part, rd.times
    P, Pp, Ps = Phi.phi.data, Phi.prime.data, Phi.sharp.data
    lt_p, gt_p = rd.para_x2(P, ("lt", "gt"))
    blt_prime = _J(rd.para_x2(Pp, ("lt",))[0], times, spec)
    resid = P - rd.Y - blt_prime - Ps
    scale = max(1.0, float(np.max(np.abs(P))))
    if float(np.max(np.abs(resid))) > identity_tol * scale:
        raise InvalidControlled(f"structural identity violated by {float(np.max(np.abs(resid))) / scale:.3e}")
    theta = blt_prime + Ps
    if diamond == "compact":
        diam_int = _mul(Pp, rd.K22 - rd.P0JX2, spec) + rd.para_x2(theta, ("diag",))[0]
        integrand = diam_int
    else:
        integrand = rd.para_x2(Ps, ("diag",))[0]
    integrand = integrand + lt_p + gt_p + rd.K32
    integrand = 3.0 * integrand
    integrand = integrand + 3.0 * (rd.Y2X + _triple(theta, theta, rd.X, spec) + 2.0 * _mul(theta, rd.YX, spec))
    integrand = integrand + _triple(P, P, P, spec)
    gamma = rd.Y + Psi.data + _J(integrand, times, spec)
    if diamond == "expanded":
        gamma = gamma + 3.0 * diamond_operator(Pp, rd, expanded=True)
    prime = 3.0 * P
    sharp = gamma - rd.Y - 3.0 * _J(lt_p, times, spec)
    return ControlledDistribution(rd.traj(gamma), rd.traj(prime), rd.traj(sharp), Phi.weights, Phi.z)


# norms and the contraction metric -------------------------------------------------------


def _time_weight(times: np.ndarray, power: float) -> np.ndarray:
    return np.where(times > 0, np.abs(times) ** power, 0.0)


def _sup_weighted(data, times, alpha, power, part) -> float:
    keep = times > 0
    if not np.any(keep):
        return 0.0
    return float(np.max(_time_weight(times[keep], power) * holder_norms(data[keep], alpha, part)))


def _holder_increments(data, times, alpha, b, power, part) -> float:
    lo, hi = dyadic_pairs(times.size - 1)
    keep = times[lo] > 0
    lo, hi = lo[keep], hi[keep]
    best = 0.0
    for s in range(0, lo.size, 32):
        i, j = lo[s : s + 32], hi[s : s + 32]
        norms = holder_norms(data[j] - data[i], alpha, part)
        vals = _time_weight(times[i], power) * norms / np.abs(times[j] - times[i]) ** b
        best = max(best, float(np.max(vals, initial=0.0)))
    return best


def sharp_norm(data: np.ndarray, times: np.ndarray, L: ControlWeights, z: float, part: DyadicPartition) -> float:
    """||Phi#||_{*,1,L,T}."""
    keep = times > 0
    t, d = times[keep], data[keep]
    sup = 0.0
    if t.size:
        total = (
            _time_weight(t, (1 + L.delta + z) / 2) * holder_norms(d, 1 + L.delta, part)
            + _time_weight(t, 0.25 + (L.gamma + z) / 2) * holder_norms(d, 0.5 + L.gamma, part)
            + _time_weight(t, (L.kappa + z) / 2) * holder_norms(d, L.kappa, part)
        )
        sup = float(np.max(total))
    return sup + _holder_increments(data, times, L.a - 2 * L.b, L.b, (z + L.a) / 2, part)


def prime_norm(data: np.ndarray, times: np.ndarray, L: ControlWeights, z: float, part: DyadicPartition) -> float:
    """||Phi'||_{*,2,L,T}."""
    inc = _holder_increments(data, times, L.c - 2 * L.d, L.d, (z + L.c) / 2, part)
    return inc + _sup_weighted(data, times, L.eta, (L.eta + z) / 2, part)


def controlled_norms(Phi: ControlledDistribution, XX=None, T: float | None = None, part: DyadicPartition | None = None) -> dict:
    """Weighted star norms of Phi# and Phi' on [0, T] (t = 0 node skipped)."""
    part = part or build_partition(Phi.phi.spec)
    times = Phi.phi.times
    n = times.size if T is None else int(np.searchsorted(times, T + 1e-12))
    t = times[:n]
    L, z = Phi.weights, Phi.z
    sharp = sharp_norm(Phi.sharp.data[:n], t, L, z, part)
    prime = prime_norm(Phi.prime.data[:n], t, L, z, part)
    return {"sharp": sharp, "prime": prime, "total": sharp + prime}


def controlled_distance(A: ControlledDistribution, B: ControlledDistribution, part: DyadicPartition | None = None) -> float:
    """d_{L,T}(A, B) = ||A' - B'||_* + ||A# - B#||_*."""
    part = part or build_partition(A.phi.spec)
    times = A.phi.times
    L, z = A.weights, A.z
    sharp = sharp_norm(A.sharp.data - B.sharp.data, times, L, z, part)
    return sharp + prime_norm(A.prime.data - B.prime.data, times, L, z, part)


# Picard -----------------------------------------------------------------------------


@dataclass
class PicardStatus:
    status: str
    T: float
    iterations: int
    distances: list
    ratios: list
    bisections: int = 0

    @property
    def rate(self) -> float:
        """Geometric-mean contraction ratio after the first step."""
        d = [x for x in self.distances[1:] if x > 0]
        if len(d) < 2:
            return 0.0
        return float((d[-1] / d[0]) ** (1.0 / (len(d) - 1)))

    def __str__(self):
        return f"{self.status} T={self.T:.6g} iterations={self.iterations}"


def initial_psi(u0: SpectralField, rd: RoughData) -> TrajectoryField:
    """P_t (u0 - X_0): the heat flow of the initial mismatch with the stationary field."""
    lam = rd.spec.ksq().astype(float)
    base = u0.data - rd.X[0]
    dt = rd.times - rd.times[0]
    return rd.traj(np.stack([base * np.exp(-lam * t) for t in dt]))


def _iterate(u0, rd: RoughData, cfg: SolveConfig):
    """Run the iteration on one horizon; outcome is CONVERGED, MAX_ITER or None (no contraction)."""
    psi = initial_psi(u0, rd)
    phi0 = rd.Y + psi.data
    Phi = controlled_from(phi0, 3.0 * phi0, rd, cfg.L, cfg.z)
    dists, ratios = [], []
    scale = None
    for _ in range(cfg.max_picard):
        new = gamma_map(Phi, rd, psi, rd.part, cfg.diamond, cfg.identity_tol)
        d = controlled_distance(new, Phi, rd.part)
        Phi = new
        if not math.isfinite(d):
            return Phi, dists + [d], ratios, None
        if dists:
            ratios.append(d / dists[-1] if dists[-1] > 0 else 0.0)
        dists.append(d)
        if scale is None:
            scale = max(1.0, controlled_norms(Phi, part=rd.part)["total"])
        if d <= cfg.contraction_tol * scale:
            return Phi, dists, ratios, CONVERGED
        if len(ratios) >= 2 and ratios[-1] >= 1 and ratios[-2] >= 1:
            return Phi, dists, ratios, None
    if ratios and ratios[-1] < 1 and dists[-1] < dists[0]:
        return Phi, dists, ratios, MAX_ITER
    return Phi, dists, ratios, None


def picard_solve(u0: SpectralField, XX: RoughDistribution, cfg: SolveConfig, part: DyadicPartition | None = None):
    """Picard iteration of Gamma; halves the horizon until the iterates contract."""
    part = part or build_partition(XX.spec)
    if not math.isclose(float(XX.times[1] - XX.times[0]), cfg.dt, rel_tol=1e-9):
        raise GridMismatch("rough distribution step does not match cfg.dt")
    n = min(cfg.n_steps, XX.x.n_steps)
    trace = []
    bisections = 0
    while n >= 4:
        rd = RoughData(XX, part, n)
        Phi, dists, ratios, outcome = _iterate(u0, rd, cfg)
        T = float(rd.times[-1] - rd.times[0])
        trace.append((T, ratios))
        if outcome is not None:
            return Phi, PicardStatus(outcome, T, len(dists), dists, ratios, bisections)
        n //= 2
        bisections += 1
    raise NoLocalSolution("no contraction down to T = 4 dt", ratios=trace)


def solution_field(Phi: ControlledDistribution, XX) -> TrajectoryField:
    """u = X + Phi on the controlled grid."""
    n = len(Phi.phi)
    return Phi.phi.with_data(XX.x.data[:n] + Phi.phi.data)


# continuity --------------------------------------------------------------------------


def negative_holder_distance(A: TrajectoryField, B: TrajectoryField, z: float, part: DyadicPartition | None = None) -> float:
    """sup_t ||A_t - B_t||_{C^{-z}}."""
    if not A.same_grid(B):
        raise GridMismatch("trajectories are not aligned")
    part = part or build_partition(A.spec)
    return float(np.max(holder_norms(A.data - B.data, -z, part)))


def continuity_probe(u0_A: SpectralField, u0_B: SpectralField, XX_A, XX_B, cfg: SolveConfig, part: DyadicPartition | None = None) -> dict:
    """(d_out, d_in): solution distance against rough distance + initial-datum distance."""
    from .renorm import rough_distance

    part = part or build_partition(u0_A.spec)
    PA, sa = picard_solve(u0_A, XX_A, cfg, part)
    PB, sb = picard_solve(u0_B, XX_B, cfg, part)
    n = min(len(PA.phi), len(PB.phi))
    T = min(sa.T, sb.T)
    uA = solution_field(PA, XX_A)
    uB = solution_field(PB, XX_B)
    ua = TrajectoryField(uA.spec, 0.0, float(uA.times[n - 1]), uA.data[:n])
    ub = TrajectoryField(uB.spec, 0.0, float(uB.times[n - 1]), uB.data[:n])
    d_out = negative_holder_distance(ua, ub, cfg.z, part)
    d_rough = rough_distance(XX_A, XX_B, part=part)
    diff0 = u0_A.data - u0_B.data
    d_init = float(holder_norms(diff0[None], -cfg.z, part)[0])
    return {"d_out": d_out, "d_in": d_rough + d_init, "d_rough": d_rough, "d_init": d_init, "T": T}
