"""Truncated Fourier representation of real fields on the periodic torus.

Fields live on the 2*pi-periodic torus T^d with integer wavenumbers, so
``|k|^2`` is the literal squared norm of an integer vector. Coefficients are
stored in FFT order (index ``k mod N`` along each axis) with the convention

    u(x) = sum_k u_hat(k) exp(i k.x),   u_hat(k) = mean_x u(x) exp(-i k.x).

A :class:`SpectralField` carries its zero mode as a separate scalar ``mean``;
``coeffs`` always has ``coeffs[0] == 0``. Most fields have ``mean == 0``; the
renormalized (diamond) products use the mean channel to hold subtracted
constants exactly. The Nyquist planes (any component equal to ``-N/2``) are
not retained and are always zero.
"""

from __future__ import annotations

import functools
import json
import os
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.fft as sfft

from .errors import GridMismatch, InvalidField, SpecMismatch

_MAGIC = b"PCD1"
_HERMITIAN_RTOL = 1e-12
_workers = int(os.environ.get("PCD_THREADS", "1") or 1)


def set_threads(n: int) -> None:
    """Set the number of FFT worker threads used by every transform."""
    global _workers
    _workers = max(1, int(n))


def get_threads() -> int:
    return _workers


@dataclass(frozen=True)
class LatticeSpec:
    """Discretization of T^d by N modes per axis."""

    dim: int
    modes_per_axis: int
    dealias_factor: Fraction = Fraction(2)

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        n = self.modes_per_axis
        if int(n) != n or n < 8 or n % 2:
            raise ValueError(f"modes_per_axis must be an even integer >= 8, got {n}")
        object.__setattr__(self, "modes_per_axis", int(n))
        factor = Fraction(self.dealias_factor).limit_denominator(8)
        if factor not in (Fraction(1), Fraction(3, 2), Fraction(2)):
            raise ValueError(f"dealias_factor must be 1, 3/2 or 2, got {factor}")
        if (factor * n).denominator != 1:
            raise ValueError("dealias_factor * N must be an integer")
        object.__setattr__(self, "dealias_factor", factor)

    @property
    def n(self) -> int:
        return self.modes_per_axis

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.modes_per_axis,) * self.dim

    @property
    def padded_size(self) -> int:
        return int(self.dealias_factor * self.modes_per_axis)

    @property
    def size(self) -> int:
        return self.modes_per_axis**self.dim

    @property
    def kmax(self) -> int:
        """Largest retained wavenumber component."""
        return self.modes_per_axis // 2 - 1

    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        return _geometry(self.dim, self.n).k

    def ksq(self) -> np.ndarray:
        return _geometry(self.dim, self.n).ksq

    def kabs(self) -> np.ndarray:
        return _geometry(self.dim, self.n).kabs

    def retained(self) -> np.ndarray:
        return _geometry(self.dim, self.n).retained

    def representatives(self) -> np.ndarray:
        """Flat indices of one representative per retained pair {k, -k}, k != 0."""
        return _geometry(self.dim, self.n).reps

    def negated(self) -> np.ndarray:
        """Flat index of -k for every flat index k."""
        return _geometry(self.dim, self.n).neg

    def index_of(self, k: Sequence[int]) -> tuple[int, ...]:
        if len(k) != self.dim:
            raise ValueError(f"wavevector {k} has wrong dimension for d={self.dim}")
        if any(abs(int(c)) > self.kmax for c in k):
            raise ValueError(f"wavevector {k} is not retained at N={self.n}")
        return tuple(int(c) % self.n for c in k)


class _Geometry:
    def __init__(self, dim: int, n: int):
        k1 = np.fft.fftfreq(n, 1.0 / n).round().astype(np.int64)
        self.k = tuple(np.meshgrid(*([k1] * dim), indexing="ij"))
        self.ksq = sum(c * c for c in self.k)
        self.kabs = np.sqrt(self.ksq.astype(float))
        retained = np.ones((n,) * dim, dtype=bool)
        for c in self.k:
            retained &= c != -n // 2
        self.retained = retained
        self.neg = np.ravel_multi_index(tuple((-c) % n for c in self.k), (n,) * dim).ravel()
        positive = _lexi_positive(self.k)
        self.positive = positive
        self.reps = np.flatnonzero((positive & retained).ravel())
        for arr in (self.ksq, self.kabs, self.retained, self.neg, self.reps, self.positive, *self.k):
            arr.setflags(write=False)


def _lexi_positive(k: tuple[np.ndarray, ...]) -> np.ndarray:
    """True where the last nonzero component of k is positive."""
    out = np.zeros(k[0].shape, dtype=bool)
    decided = np.zeros(k[0].shape, dtype=bool)
    for c in reversed(k):
        out |= ~decided & (c > 0)
        decided |= c != 0
    return out


@functools.lru_cache(maxsize=None)
def _geometry(dim: int, n: int) -> _Geometry:
    return _Geometry(dim, n)


class _PadMaps:
    """Index maps between the N^d coefficient array and a half-spectrum of size m."""

    def __init__(self, dim: int, n: int, m: int):
        geo = _geometry(dim, n)
        self.half_shape = (m,) * (dim - 1) + (m // 2 + 1,)
        self.grid_shape = (m,) * dim
        flat_ret = geo.retained.ravel()
        klast = geo.k[-1].ravel()
        coords = [c.ravel() % m for c in geo.k[:-1]]
        src = np.flatnonzero(flat_ret & (klast >= 0))
        self.src = src
        self.dst = np.ravel_multi_index(tuple(c[src] for c in coords) + (klast[src],), self.half_shape)
        # gather: positive-side k read directly, others as conj of -k
        pos = geo.positive.ravel() | (np.arange(n**dim) == 0)
        kk = [np.where(pos, c.ravel(), -c.ravel()) for c in geo.k]
        idx = np.ravel_multi_index(tuple(c % m for c in kk[:-1]) + (kk[-1],), self.half_shape)
        self.gather = np.where(flat_ret, idx, 0)
        self.conj = ~pos
        self.mask = flat_ret.astype(float)


@functools.lru_cache(maxsize=None)
def _pad_maps(dim: int, n: int, m: int) -> _PadMaps:
    return _PadMaps(dim, n, m)


def _grid_size(spec: LatticeSpec, padded: bool) -> int:
    return spec.padded_size if padded else spec.n


def to_grid(data: np.ndarray, spec: LatticeSpec, padded: bool = False) -> np.ndarray:
    """Full coefficient array(s) (mean in slot 0) to real grid values.

    Leading batch axes are allowed. With ``padded`` the grid has
    ``dealias_factor * N`` points per axis.
    """
    m = _grid_size(spec, padded)
    maps = _pad_maps(spec.dim, spec.n, m)
    batch = data.shape[: data.ndim - spec.dim]
    half = np.zeros(batch + (int(np.prod(maps.half_shape)),), dtype=complex)
    half[..., maps.dst] = data.reshape(batch + (-1,))[..., maps.src]
    half = half.reshape(batch + maps.half_shape)
    axes = tuple(range(-spec.dim, 0))
    return sfft.irfftn(half, s=maps.grid_shape, axes=axes, norm="forward", workers=_workers)


def from_grid(values: np.ndarray, spec: LatticeSpec, padded: bool = False) -> np.ndarray:
    """Real grid values to the full retained coefficient array (mean in slot 0)."""
    m = _grid_size(spec, padded)
    maps = _pad_maps(spec.dim, spec.n, m)
    batch = values.shape[: values.ndim - spec.dim]
    axes = tuple(range(-spec.dim, 0))
    half = sfft.rfftn(values, axes=axes, norm="forward", workers=_workers)
    flat = half.reshape(batch + (-1,))[..., maps.gather]
    flat[..., maps.conj] = flat[..., maps.conj].conj()
    flat *= maps.mask
    flat[..., 0] = flat[..., 0].real
    return flat.reshape(batch + spec.shape)


def hermitian_residual(data: np.ndarray, spec: LatticeSpec) -> float:
    flat = data.reshape(data.shape[: data.ndim - spec.dim] + (-1,))
    return float(np.max(np.abs(flat - flat[..., spec.negated()].conj()), initial=0.0))


def _symmetrize(data: np.ndarray, spec: LatticeSpec) -> np.ndarray:
    batch = data.shape[: data.ndim - spec.dim]
    flat = data.reshape(batch + (-1,))
    out = 0.5 * (flat + flat[..., spec.negated()].conj())
    out *= spec.retained().ravel()
    return out.reshape(data.shape)


def _check_spectrum(data: np.ndarray, spec: LatticeSpec) -> np.ndarray:
    data = np.asarray(data, dtype=complex)
    if data.shape[-spec.dim :] != spec.shape:
        raise InvalidField(f"coefficient shape {data.shape} does not match lattice {spec.shape}")
    if not np.all(np.isfinite(data)):
        raise InvalidField("non-finite coefficients")
    scale = float(np.max(np.abs(data), initial=0.0))
    if hermitian_residual(data, spec) > _HERMITIAN_RTOL * max(scale, 1e-300):
        raise InvalidField("coefficients are not hermitian symmetric")
    return _symmetrize(data, spec)


class SpectralField:
    """Fourier coefficients of a real field; the zero mode is kept in ``mean``."""

    __slots__ = ("spec", "_data")

    def __init__(self, spec: LatticeSpec, coeffs: np.ndarray, mean: float = 0.0):
        data = _check_spectrum(coeffs, spec)
        if data.ndim != spec.dim:
            raise InvalidField("a SpectralField holds a single snapshot")
        scale = float(np.max(np.abs(data), initial=0.0))
        if abs(data.flat[0]) > _HERMITIAN_RTOL * max(scale, 1e-300):
            raise InvalidField("zero mode must be 0; pass constants through `mean`")
        if not np.isfinite(mean):
            raise InvalidField("non-finite mean")
        data.flat[0] = float(mean)
        self._init(spec, data)

    def _init(self, spec, data):
        data.setflags(write=False)
        object.__setattr__(self, "spec", spec)
        object.__setattr__(self, "_data", data)

    def __setattr__(self, name, value):
        raise AttributeError("SpectralField is immutable")

    @classmethod
    def _wrap(cls, spec: LatticeSpec, data: np.ndarray) -> "SpectralField":
        """Trusted constructor: ``data`` is hermitian with the mean in slot 0."""
        obj = object.__new__(cls)
        obj._init(spec, data)
        return obj

    @classmethod
    def zeros(cls, spec: LatticeSpec, mean: float = 0.0) -> "SpectralField":
        data = np.zeros(spec.shape, dtype=complex)
        data.flat[0] = mean
        return cls._wrap(spec, data)

    @classmethod
    def from_modes(cls, spec: LatticeSpec, modes: dict, mean: float = 0.0) -> "SpectralField":
        """Build from ``{k: value}``; the conjugate partner of each k is filled in."""
        data = np.zeros(spec.shape, dtype=complex)
        for k, value in modes.items():
            if not any(k):
                raise InvalidField("use `mean` for the zero mode")
            data[spec.index_of(k)] += value
            data[spec.index_of(tuple(-c for c in k))] += np.conj(value)
        data.flat[0] = mean
        return cls._wrap(spec, data)

    @property
    def coeffs(self) -> np.ndarray:
        out = self._data.copy()
        out.flat[0] = 0.0
        return out

    @property
    def mean(self) -> float:
        return float(self._data.flat[0].real)

    @property
    def data(self) -> np.ndarray:
        """Read-only full array with the mean in the zero slot."""
        return self._data

    def without_mean(self) -> "SpectralField":
        return SpectralField._wrap(self.spec, _zero_mean(self._data, self.spec.dim))

    def __repr__(self):
        return f"SpectralField(d={self.spec.dim}, N={self.spec.n}, mean={self.mean:.6g})"


def _zero_mean(data: np.ndarray, dim: int) -> np.ndarray:
    out = data.copy()
    out[(Ellipsis,) + (0,) * dim] = 0.0
    return out


@dataclass(frozen=True, eq=False)
class PhysicalField:
    """Real values on the N^d collocation grid."""

    spec: LatticeSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.spec.shape:
            raise InvalidField(f"grid shape {values.shape} does not match {self.spec.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def _same_spec(*fields) -> LatticeSpec:
    spec = fields[0].spec
    for f in fields[1:]:
        if f.spec != spec:
            raise SpecMismatch(f"lattice mismatch: {spec} vs {f.spec}")
    return spec


def to_physical(u: SpectralField) -> PhysicalField:
    """Grid values of the mean-zero part of ``u``."""
    data = u.data
    if hermitian_residual(data, u.spec) > _HERMITIAN_RTOL * max(float(np.max(np.abs(data))), 1e-300):
        raise InvalidField("coefficients are not hermitian symmetric")
    values = to_grid(_zero_mean(data, u.spec.dim), u.spec)
    return PhysicalField(u.spec, values)


def to_spectral(v: PhysicalField) -> SpectralField:
    """Forward transform; the grid mean is removed."""
    if not np.all(np.isfinite(v.values)):
        raise InvalidField("non-finite grid values")
    data = from_grid(v.values, v.spec)
    data.flat[0] = 0.0
    return SpectralField._wrap(v.spec, data)


def field_values(u: SpectralField, padded: bool = False) -> np.ndarray:
    """Grid values including the mean channel."""
    return to_grid(u.data, u.spec, padded)


def pointwise_product(u: SpectralField, v: SpectralField, keep_mean: bool = False) -> SpectralField:
    """Dealiased product u*v restricted to the retained modes.

    Means of the inputs take part in the product. The zero mode of the result
    is projected out unless ``keep_mean`` is set.
    """
    spec = _same_spec(u, v)
    grid = to_grid(u.data, spec, True) * to_grid(v.data, spec, True)
    data = from_grid(grid, spec, True)
    if not keep_mean:
        data.flat[0] = 0.0
    return SpectralField._wrap(spec, data)


def triple_product(u: SpectralField, v: SpectralField, w: SpectralField, keep_mean: bool = False) -> SpectralField:
    """u*v*w formed on the padded grid, then truncated once.

    With padding factor 2 this equals the triple convolution restricted to the
    retained modes.
    """
    spec = _same_spec(u, v, w)
    if spec.dealias_factor != 2:
        raise ValueError("cubic products need dealias_factor 2")
    gu = to_grid(u.data, spec, True)
    gv = gu if v is u else to_grid(v.data, spec, True)
    gw = gu if w is u else to_grid(w.data, spec, True)
    data = from_grid(gu * gv * gw, spec, True)
    if not keep_mean:
        data.flat[0] = 0.0
    return SpectralField._wrap(spec, data)


def cube(u: SpectralField, keep_mean: bool = False) -> SpectralField:
    return triple_product(u, u, u, keep_mean)


def axpy(a: float, u: SpectralField, v: SpectralField) -> SpectralField:
    """a*u + v, including the mean channel."""
    spec = _same_spec(u, v)
    return SpectralField._wrap(spec, a * u.data + v.data)


def scale(a: float, u: SpectralField) -> SpectralField:
    return SpectralField._wrap(u.spec, a * u.data)


def sup_norm(u: SpectralField) -> float:
    """max |u| on the collocation grid, mean included."""
    return float(np.max(np.abs(field_values(u))))


def random_field(spec: LatticeSpec, rng: np.random.Generator, amplitude=None) -> SpectralField:
    """Hermitian field with i.i.d. standard complex Gaussian coefficients.

    ``amplitude`` may be an array over the lattice (e.g. a power of |k|) that
    multiplies the coefficients.
    """
    flat = np.zeros(spec.size, dtype=complex)
    reps = spec.representatives()
    z = (rng.standard_normal(reps.size) + 1j * rng.standard_normal(reps.size)) / np.sqrt(2.0)
    flat[reps] = z
    flat[spec.negated()[reps]] = z.conj()
    data = flat.reshape(spec.shape)
    if amplitude is not None:
        data = data * amplitude
    return SpectralField._wrap(spec, data)


class TrajectoryField:
    """Snapshots of a field at t_i = t0 + i (t1 - t0)/n_steps, i = 0..n_steps."""

    __slots__ = ("spec", "t0", "t1", "n_steps", "_data")

    def __init__(self, spec: LatticeSpec, t0: float, t1: float, data: np.ndarray):
        data = np.asarray(data)
        if data.ndim != spec.dim + 1 or data.shape[1:] != spec.shape:
            raise InvalidField(f"trajectory array shape {data.shape} does not match lattice {spec.shape}")
        n_steps = data.shape[0] - 1
        if n_steps < 1:
            raise InvalidField("a trajectory needs n_steps >= 1")
        if not t1 > t0:
            raise InvalidField("trajectory needs t1 > t0")
        data.setflags(write=False)
        object.__setattr__(self, "spec", spec)
        object.__setattr__(self, "t0", float(t0))
        object.__setattr__(self, "t1", float(t1))
        object.__setattr__(self, "n_steps", n_steps)
        object.__setattr__(self, "_data", data)

    def __setattr__(self, name, value):
        raise AttributeError("TrajectoryField is immutable")

    @classmethod
    def from_snapshots(cls, snapshots: Sequence[SpectralField], t0: float, t1: float) -> "TrajectoryField":
        spec = _same_spec(*snapshots)
        return cls(spec, t0, t1, np.stack([s.data for s in snapshots]))

    @classmethod
    def zeros(cls, spec: LatticeSpec, t0: float, t1: float, n_steps: int) -> "TrajectoryField":
        return cls(spec, t0, t1, np.zeros((n_steps + 1,) + spec.shape, dtype=complex))

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def means(self) -> np.ndarray:
        return self._data.reshape(self.n_steps + 1, -1)[:, 0].real.copy()

    def snapshot(self, i: int) -> SpectralField:
        return SpectralField._wrap(self.spec, self._data[i])

    @property
    def snapshots(self) -> list[SpectralField]:
        return [self.snapshot(i) for i in range(self.n_steps + 1)]

    def __len__(self):
        return self.n_steps + 1

    def same_grid(self, other: "TrajectoryField") -> bool:
        return (
            self.spec == other.spec
            and self.n_steps == other.n_steps
            and np.isclose(self.t0, other.t0, rtol=0, atol=1e-12)
            and np.isclose(self.t1, other.t1, rtol=0, atol=1e-12)
        )

    def with_data(self, data: np.ndarray) -> "TrajectoryField":
        return TrajectoryField(self.spec, self.t0, self.t1, data)

    def __repr__(self):
        return f"TrajectoryField(d={self.spec.dim}, N={self.spec.n}, t=[{self.t0}, {self.t1}], n_steps={self.n_steps})"


def traj_axpy(a: float, u: TrajectoryField, v: TrajectoryField) -> TrajectoryField:
    if not u.same_grid(v):
        raise GridMismatch("trajectories live on different grids")
    return v.with_data(a * u.data + v.data)


# binary dumps ---------------------------------------------------------------


def _shifted(data: np.ndarray, dim: int) -> np.ndarray:
    return np.fft.fftshift(data, axes=tuple(range(-dim, 0)))


def dumps(u: SpectralField) -> bytes:
    """Serialize one field; the k=0 slot carries the mean channel."""
    spec = u.spec
    coeffs = np.ascontiguousarray(_shifted(u.data, spec.dim)).ravel()
    head = _MAGIC + struct.pack("<IIQ", spec.dim, spec.n, coeffs.size)
    body = np.empty(2 * coeffs.size, dtype="<f8")
    body[0::2] = coeffs.real
    body[1::2] = coeffs.imag
    return head + body.tobytes()


def loads(buf: bytes, offset: int = 0) -> tuple[SpectralField, int]:
    """Parse one field starting at ``offset``; returns (field, next offset)."""
    if buf[offset : offset + 4] != _MAGIC:
        raise InvalidField("bad magic bytes (expected PCD1)")
    dim, n, count = struct.unpack_from("<IIQ", buf, offset + 4)
    if dim not in (1, 2, 3) or count != n**dim:
        raise InvalidField("corrupt header")
    start = offset + 20
    end = start + 16 * count
    if end > len(buf):
        raise InvalidField("truncated field dump")
    body = np.frombuffer(buf, dtype="<f8", count=2 * count, offset=start)
    spec = LatticeSpec(dim, n)
    coeffs = (body[0::2] + 1j * body[1::2]).reshape((n,) * dim)
    data = np.fft.ifftshift(coeffs, axes=tuple(range(dim)))
    mean = float(data.flat[0].real)
    data = data.copy()
    data.flat[0] = 0.0
    return SpectralField(spec, data, mean), end


def write_field(path, u: SpectralField) -> None:
    Path(path).write_bytes(dumps(u))


def read_field(path) -> SpectralField:
    field, _ = loads(Path(path).read_bytes())
    return field


def write_trajectory(path, traj: TrajectoryField, meta: dict | None = None) -> None:
    """Concatenated field dumps plus a JSON-lines sidecar ``<path>.jsonl``."""
    path = Path(path)
    meta = dict(meta or {})
    with path.open("wb") as fh:
        for i in range(len(traj)):
            fh.write(dumps(traj.snapshot(i)))
    with Path(str(path) + ".jsonl").open("w") as fh:
        for t in traj.times:
            fh.write(json.dumps({"t": float(t), **meta}, sort_keys=True) + "\n")


def read_trajectory(path) -> tuple[TrajectoryField, list[dict]]:
    path = Path(path)
    buf = path.read_bytes()
    fields, offset = [], 0
    while offset < len(buf):
        f, offset = loads(buf, offset)
        fields.append(f)
    rows = [json.loads(line) for line in Path(str(path) + ".jsonl").read_text().splitlines() if line]
    times = [r["t"] for r in rows]
    return TrajectoryField.from_snapshots(fields, times[0], times[-1]), rows


def iter_snapshots(traj: TrajectoryField) -> Iterable[SpectralField]:
    for i in range(len(traj)):
        yield traj.snapshot(i)


def resample(data: np.ndarray, src: LatticeSpec, dst: LatticeSpec) -> np.ndarray:
    """Copy the modes retained by both lattices; the rest of ``dst`` is zero."""
    if src.dim != dst.dim:
        raise GridMismatch("lattices of different dimension")
    kk = min(src.kmax, dst.kmax)
    ks = np.arange(-kk, kk + 1)
    batch = data.shape[: data.ndim - src.dim]
    out = np.zeros(batch + dst.shape, dtype=complex)
    si = np.ix_(*([ks % src.n] * src.dim))
    di = np.ix_(*([ks % dst.n] * dst.dim))
    out[(Ellipsis,) + di] = data[(Ellipsis,) + si]
    return out


def band_lattice(spec: LatticeSpec, k_in: int) -> LatticeSpec:
    """Smallest lattice on which the square of a field with |k_i| <= k_in is exact on spec's modes."""
    k_out = min(2 * k_in, spec.kmax)
    if k_out >= spec.kmax:
        return spec
    n = max(8, 2 * k_out + 2)
    return LatticeSpec(spec.dim, n, Fraction(3, 2))
