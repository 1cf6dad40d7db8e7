import json
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from pcd.errors import ZeroMode
from pcd.gauss_ou import (
    STATIONARY,
    ZERO_START,
    MollifierProfile,
    OUSampler,
    coupled_pair,
    covariance_oracle,
    dump_trajectory,
    mollify,
    sample_ou,
    sample_ou_at,
    sample_ou_strided,
)
from pcd.lattice import LatticeSpec, random_field

F = MollifierProfile()


def _mode_samples(spec, k, times, replicas, eps=0.0, mode=STATIONARY, seed=0):
    base = OUSampler(spec, mode, eps, seed, 0, F)
    idx = spec.index_of(k)
    out = np.empty((replicas, len(times)), dtype=complex)
    for r in range(replicas):
        out[r] = sample_ou_at(base.with_stream(r), times)[(slice(None),) + idx]
    return out


class TestProfile:
    def test_shape(self):
        r = np.linspace(0, 2, 2001)
        v = F(r)
        assert F(0.0) == 1.0
        assert np.all(v[r <= 0.5] == 1.0) and np.all(v[r >= 1.0] == 0.0)
        assert np.all(np.diff(v) <= 0)

    @pytest.mark.parametrize("args", [(0.0,), (1.0, 1.0), (1.0, 0.0), (-1.0,)])
    def test_rejects(self, args):
        with pytest.raises(ValueError):
            MollifierProfile(*args)


class TestSampler:
    def test_mollifier_kills_everything(self):
        spec = LatticeSpec(3, 8)
        tr = sample_ou(OUSampler(spec, epsilon=1.0, seed=3), 0, 0.1, 5)
        assert np.all(tr.data == 0)

    def test_stationary_variance(self):
        spec = LatticeSpec(3, 8)
        eps = 0.7
        x = _mode_samples(spec, (1, 0, 0), [0.0], 10_000, eps)[:, 0]
        v = np.abs(x) ** 2
        target = covariance_oracle((1, 0, 0), 0, 0, STATIONARY, eps, F)
        assert target == pytest.approx(float(F(0.7)) ** 2)
        assert abs(v.mean() - target) < 4 * v.std(ddof=1) / math.sqrt(v.size)

    def test_lag_covariance(self):
        spec = LatticeSpec(3, 8)
        eps = 0.3
        x = _mode_samples(spec, (2, 0, 0), [0.0, 0.2], 10_000, eps)
        prod = (x[:, 1] * np.conj(x[:, 0])).real
        target = float(F(0.6)) ** 2 * math.exp(-0.8) / 4
        assert covariance_oracle((2, 0, 0), 0.2, 0.0, STATIONARY, eps, F) == pytest.approx(target, rel=1e-14)
        assert abs(prod.mean() - target) < 4 * prod.std(ddof=1) / math.sqrt(prod.size)

    def test_zero_start_variance(self):
        spec = LatticeSpec(2, 8)
        x = _mode_samples(spec, (1, 1), [0.0, 0.05, 0.3], 4000, mode=ZERO_START)
        assert np.all(x[:, 0] == 0)
        for i, t in ((1, 0.05), (2, 0.3)):
            v = np.abs(x[:, i]) ** 2
            target = covariance_oracle((1, 1), t, t, ZERO_START)
            assert abs(v.mean() - target) < 4 * v.std(ddof=1) / math.sqrt(v.size)

    def test_determinism(self):
        spec = LatticeSpec(3, 8)
        s = OUSampler(spec, seed=11, stream_id=5, epsilon=0.2)
        a, b = sample_ou(s, 0, 0.1, 7), sample_ou(s, 0, 0.1, 7)
        assert a.data.tobytes() == b.data.tobytes()
        c = sample_ou(s.with_stream(6), 0, 0.1, 7)
        assert not np.array_equal(a.data, c.data)

    def test_hermitian_and_mean_free(self):
        spec = LatticeSpec(2, 16)
        tr = sample_ou(OUSampler(spec, seed=2), 0, 0.1, 3)
        for s in tr.snapshots:
            assert s.mean == 0.0
            assert np.max(np.abs(np.fft.ifft2(s.data, norm="forward").imag)) < 1e-12

    def test_stationarity(self):
        spec = LatticeSpec(2, 8)
        base = OUSampler(spec, seed=1)
        times = np.linspace(0, 0.5, 6)
        norms = np.array([np.sum(np.abs(sample_ou_at(base.with_stream(r), times)) ** 2, axis=(1, 2)) for r in range(2000)])
        mean, se = norms.mean(axis=0), norms.std(axis=0, ddof=1) / math.sqrt(norms.shape[0])
        overall = mean.mean()
        assert np.all(np.abs(mean - overall) < 3 * se * math.sqrt(2))

    def test_gaussian_fourth_moment(self):
        spec = LatticeSpec(1, 16)
        x = _mode_samples(spec, (3,), [0.0], 10_000)[:, 0].real
        m2 = np.mean(x**2)
        kurt = np.mean(x**4) / m2**2
        # delta-method standard error of the normalized fourth moment for a Gaussian
        se = math.sqrt(96.0 / x.size)
        assert abs(kurt - 3.0) < 5 * se

    def test_time_regularity_half(self):
        spec = LatticeSpec(1, 16)
        lags = np.array([1e-4, 2e-4, 4e-4, 8e-4, 1.6e-3])
        times = np.concatenate([[0.0], lags])
        x = _mode_samples(spec, (1,), times, 2000)
        rms = np.sqrt(np.mean(np.abs(x[:, 1:] - x[:, :1]) ** 2, axis=0))
        slope = np.polyfit(np.log(lags), np.log(rms), 1)[0]
        assert slope == pytest.approx(0.5, abs=0.1)

    def test_strided_matches_subsampled(self):
        spec = LatticeSpec(2, 8)
        s = OUSampler(spec, seed=9, epsilon=0.3)
        fine = sample_ou(s, 0, 0.2, 12)
        coarse = sample_ou_strided(s, 0, 0.2, 12, 4)
        assert np.array_equal(coarse.data, fine.data[::4])
        with pytest.raises(ValueError):
            sample_ou_strided(s, 0, 0.2, 12, 5)

    def test_dump_sidecar(self, tmp_path):
        spec = LatticeSpec(1, 16)
        s = OUSampler(spec, seed=4, stream_id=2, epsilon=0.25)
        tr = sample_ou(s, 0, 0.1, 2)
        dump_trajectory(tmp_path / "x.pcd", tr, s)
        rows = [json.loads(l) for l in (tmp_path / "x.pcd.jsonl").read_text().splitlines()]
        assert rows[1] == {"t": 0.05, "seed": 4, "stream_id": 2, "epsilon": 0.25}

    @pytest.mark.parametrize("kw", [{"mode": "bogus"}, {"epsilon": -1.0}, {"seed": -1}, {"stream_id": 2**64}])
    def test_sampler_validation(self, kw):
        with pytest.raises(ValueError):
            OUSampler(LatticeSpec(1, 16), **kw)


class TestOracle:
    def test_stationary_equal_times(self):
        assert covariance_oracle((1, 2, 2), 0.3, 0.3) == pytest.approx(1 / 9, rel=1e-15)

    def test_zero_start_origin(self):
        assert covariance_oracle((1, 0, 0), 0.0, 0.0, ZERO_START) == 0.0

    def test_zero_start_against_lyapunov_ode(self):
        # d/dt E|X|^2 = -2 |k|^2 E|X|^2 + sigma^2 with sigma^2 = 2 for a complex mode
        sol = solve_ivp(lambda t, p: -2.0 * p + 2.0, (0, 1), [0.0], rtol=1e-12, atol=1e-14)
        assert covariance_oracle((1, 0, 0), 1.0, 1.0, ZERO_START) == pytest.approx(sol.y[0, -1], abs=1e-8)

    def test_zero_mode(self):
        with pytest.raises(ZeroMode):
            covariance_oracle((0, 0, 0), 0.1, 0.1)


class TestMollify:
    def test_identity_and_kill(self, rng):
        spec = LatticeSpec(3, 16)
        u = random_field(spec, rng)
        assert np.array_equal(mollify(u, F, 0.0).data, u.data)
        assert np.all(mollify(u, F, 1.0).data == 0)

    def test_per_coefficient(self, rng):
        spec = LatticeSpec(2, 16)
        u = random_field(spec, rng)
        out = mollify(u, F, 0.13).data
        kx, ky = spec.wavenumbers()
        for i in range(16):
            for j in range(16):
                r = math.hypot(kx[i, j], ky[i, j])
                assert out[i, j] == pytest.approx(float(F(0.13 * r)) * u.data[i, j], abs=1e-16)


class TestCoupledPair:
    def test_equal_levels(self):
        s = OUSampler(LatticeSpec(3, 8), seed=1)
        a, b = coupled_pair(s, 0.3, 0.3, 0, 0.1, 4)
        assert np.array_equal(a.data, b.data)

    def test_levels_inside_plateau(self):
        spec = LatticeSpec(3, 16)
        s = OUSampler(spec, seed=1)
        a, b = coupled_pair(s, 0.01, 0.02, 0, 0.1, 4)
        assert np.array_equal(a.data, b.data)

    def test_difference_variance(self):
        spec = LatticeSpec(1, 16)
        idx = spec.index_of((3,))
        diffs = []
        for r in range(10_000):
            a, b = coupled_pair(OUSampler(spec, seed=5, stream_id=r), 0.2, 0.3, 0, 0.1, 1)
            diffs.append(a.data[0][idx] - b.data[0][idx])
        v = np.abs(np.asarray(diffs)) ** 2
        target = (float(F(0.6)) - float(F(0.9))) ** 2 / 9
        assert abs(v.mean() - target) < 4 * v.std(ddof=1) / math.sqrt(v.size)
