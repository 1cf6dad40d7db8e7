"""Exact per-mode sampling of the (mollified) Ornstein-Uhlenbeck free field.

Each mode pair {k, -k} evolves as an exact AR(1) chain,

    X(t + h) = exp(-|k|^2 h) X(t) + sqrt(v (1 - exp(-2 |k|^2 h))) z,

with stationary variance v = 1 / |k|^2 (noise intensity sigma^2 = 2) and z a
standard complex Gaussian. The mollifier f(eps |k|) is applied after sampling,
so two mollification levels drawn from the same (seed, stream_id) share the
same underlying noise.

Randomness is counter based: the Philox key is (seed, stream_id) and the
counter carries the time-step index, so any step of any replica can be
regenerated independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ZeroMode
from .lattice import LatticeSpec, SpectralField, TrajectoryField, write_trajectory
from .lp_besov import _flat_step

NOISE_INTENSITY = 2.0
STATIONARY = "stationary"
ZERO_START = "zero_start"


@dataclass(frozen=True)
class MollifierProfile:
    """Radial plateau profile: 1 on [0, r0], smooth descent to 0 at support_radius."""

    support_radius: float = 1.0
    plateau: float | None = None

    def __post_init__(self):
        if not self.support_radius > 0:
            raise ValueError("support_radius must be positive")
        r0 = 0.5 * self.support_radius if self.plateau is None else float(self.plateau)
        if not 0 < r0 < self.support_radius:
            raise ValueError("plateau must lie in (0, support_radius)")
        object.__setattr__(self, "plateau", r0)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return 1.0 - _flat_step((r - self.plateau) / (self.support_radius - self.plateau))

    def on_lattice(self, spec: LatticeSpec, epsilon: float) -> np.ndarray:
        if epsilon == 0:
            return spec.retained().astype(float)
        return self(epsilon * spec.kabs()) * spec.retained()


@dataclass(frozen=True)
class OUSampler:
    spec: LatticeSpec
    mode: str = STATIONARY
    epsilon: float = 0.0
    seed: int = 0
    stream_id: int = 0
    profile: MollifierProfile = field(default_factory=MollifierProfile)

    def __post_init__(self):
        if self.mode not in (STATIONARY, ZERO_START):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        for name in ("seed", "stream_id"):
            v = int(getattr(self, name))
            if not 0 <= v < 2**64:
                raise ValueError(f"{name} must be a 64-bit unsigned integer")

    def with_epsilon(self, epsilon: float) -> "OUSampler":
        return OUSampler(self.spec, self.mode, epsilon, self.seed, self.stream_id, self.profile)

    def with_stream(self, stream_id: int) -> "OUSampler":
        return OUSampler(self.spec, self.mode, self.epsilon, self.seed, stream_id, self.profile)


def _normals(sampler: OUSampler, step: int, count: int) -> np.ndarray:
    bitgen = np.random.Philox(key=[int(sampler.seed), int(sampler.stream_id)], counter=[0, 0, int(step), 0])
    z = np.random.Generator(bitgen).standard_normal(2 * count)
    return (z[:count] + 1j * z[count:]) * np.sqrt(0.5)


def _rep_rates(spec: LatticeSpec) -> np.ndarray:
    return spec.ksq().ravel()[spec.representatives()].astype(float)


def iter_unmollified(sampler: OUSampler, times) -> Iterator[np.ndarray]:
    """Representative-mode values of the unit-profile OU field at each time."""
    spec = sampler.spec
    times = np.asarray(times, dtype=float)
    lam = _rep_rates(spec)
    var = NOISE_INTENSITY / (2.0 * lam)
    n = lam.size
    if sampler.mode == STATIONARY:
        x = np.sqrt(var) * _normals(sampler, 0, n)
    else:
        x = np.sqrt(var * -np.expm1(-2.0 * lam * times[0])) * _normals(sampler, 0, n)
    yield x
    for step in range(1, times.size):
        h = times[step] - times[step - 1]
        x = np.exp(-lam * h) * x + np.sqrt(var * -np.expm1(-2.0 * lam * h)) * _normals(sampler, step, n)
        yield x


def scatter(spec: LatticeSpec, reps: np.ndarray, weight: np.ndarray | None = None) -> np.ndarray:
    """Full hermitian coefficient array(s) from representative values."""
    idx = spec.representatives()
    batch = reps.shape[:-1]
    flat = np.zeros(batch + (spec.size,), dtype=complex)
    vals = reps if weight is None else reps * weight
    flat[..., idx] = vals
    flat[..., spec.negated()[idx]] = np.conj(vals)
    return flat.reshape(batch + spec.shape)


def rep_profile(sampler: OUSampler, epsilon: float | None = None) -> np.ndarray:
    eps = sampler.epsilon if epsilon is None else epsilon
    return sampler.profile.on_lattice(sampler.spec, eps).ravel()[sampler.spec.representatives()]


def sample_ou_at(sampler: OUSampler, times) -> np.ndarray:
    """Stack of full coefficient arrays at arbitrary increasing times."""
    w = rep_profile(sampler)
    return np.stack([scatter(sampler.spec, x, w) for x in iter_unmollified(sampler, times)])


def uniform_times(t0: float, t1: float, n_steps: int) -> np.ndarray:
    if not (t1 > t0 >= 0) or n_steps < 1:
        raise ValueError("need t1 > t0 >= 0 and n_steps >= 1")
    return t0 + (t1 - t0) / n_steps * np.arange(n_steps + 1)


def sample_ou(sampler: OUSampler, t0: float, t1: float, n_steps: int) -> TrajectoryField:
    times = uniform_times(t0, t1, n_steps)
    return TrajectoryField(sampler.spec, t0, t1, sample_ou_at(sampler, times))


def sample_ou_strided(sampler: OUSampler, t0: float, t1: float, n_steps: int, stride: int) -> TrajectoryField:
    """Every ``stride``-th state of the fine chain on ``n_steps`` steps.

    The result coincides with the path a streaming consumer of the fine chain
    sees, without holding all fine states in memory.
    """
    if stride < 1 or n_steps % stride:
        raise ValueError("stride must divide n_steps")
    w = rep_profile(sampler)
    keep = [scatter(sampler.spec, x, w) for n, x in enumerate(iter_unmollified(sampler, uniform_times(t0, t1, n_steps))) if n % stride == 0]
    return TrajectoryField(sampler.spec, t0, t1, np.stack(keep))


def coupled_pair(sampler: OUSampler, eps1: float, eps2: float, t0: float, t1: float, n_steps: int):
    """Two mollifications of one underlying noise realization."""
    times = uniform_times(t0, t1, n_steps)
    spec = sampler.spec
    w1, w2 = rep_profile(sampler, eps1), rep_profile(sampler, eps2)
    a, b = [], []
    for x in iter_unmollified(sampler, times):
        a.append(scatter(spec, x, w1))
        b.append(scatter(spec, x, w2))
    return TrajectoryField(spec, t0, t1, np.stack(a)), TrajectoryField(spec, t0, t1, np.stack(b))


def covariance_oracle(k, t: float, s: float, mode: str = STATIONARY, epsilon: float = 0.0, f: MollifierProfile | None = None) -> float:
    """E[X_t(k) conj(X_s(k))] for the mollified field."""
    k = np.asarray(k, dtype=float)
    lam = float(np.dot(k, k))
    if lam == 0:
        raise ZeroMode("the zero mode is not part of the O.U. field")
    f = f or MollifierProfile()
    weight = float(f(epsilon * np.sqrt(lam))) ** 2 if epsilon > 0 else 1.0
    var = NOISE_INTENSITY / (2.0 * lam)
    cov = var * np.exp(-lam * abs(t - s))
    if mode == ZERO_START:
        cov *= -np.expm1(-2.0 * lam * min(t, s))
    elif mode != STATIONARY:
        raise ValueError(f"unknown mode {mode!r}")
    return weight * cov


def mollify(u: SpectralField, f: MollifierProfile, epsilon: float) -> SpectralField:
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if epsilon == 0:
        return u
    m = f(epsilon * u.spec.kabs())
    return SpectralField._wrap(u.spec, u.data * m)


def mollify_data(data: np.ndarray, spec: LatticeSpec, f: MollifierProfile, epsilon: float) -> np.ndarray:
    return data if epsilon == 0 else data * f(epsilon * spec.kabs())


def dump_trajectory(path, traj: TrajectoryField, sampler: OUSampler) -> None:
    meta = {"seed": int(sampler.seed), "stream_id": int(sampler.stream_id), "epsilon": float(sampler.epsilon)}
    write_trajectory(path, traj, meta)
