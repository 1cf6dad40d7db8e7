import math

import numpy as np
import pytest

from pcd.errors import GridMismatch, InvalidControlled, NoLocalSolution
from pcd.lattice import LatticeSpec, SpectralField, TrajectoryField, from_grid, to_grid
from pcd.lp_besov import build_partition, holder_norm
from pcd.paracalc import duhamel_data
from pcd.renorm import CounterFunction, build_rough_distribution, zero_rough_distribution
from pcd.solver import (
    ControlWeights,
    RoughData,
    SolveConfig,
    continuity_probe,
    controlled_distance,
    controlled_from,
    controlled_norms,
    gamma_map,
    initial_psi,
    linear_coefficient,
    picard_solve,
    prime_norm,
    solution_field,
    solve_direct,
    structural_residual,
)


def _cos1(spec, amp):
    return SpectralField.from_modes(spec, {(1,) + (0,) * (spec.dim - 1): amp / 2})


class TestConfig:
    def test_weights(self):
        assert ControlWeights.from_tuple(ControlWeights().as_tuple()) == ControlWeights()
        with pytest.raises(ValueError):
            ControlWeights(d=0.2, c=0.1)
        with pytest.raises(ValueError):
            ControlWeights(a=1.5)
        with pytest.raises(ValueError):
            ControlWeights.from_tuple((0.1,) * 7)

    @pytest.mark.parametrize(
        "kw", [dict(dt=0), dict(T=-1), dict(z=0.5), dict(z=0.7), dict(sign_b=0), dict(diamond="x"), dict(max_picard=0), dict(record_every=0)]
    )
    def test_solve_config_rejects(self, kw):
        with pytest.raises(ValueError):
            SolveConfig(**kw)

    def test_linear_coefficient_sign(self):
        assert linear_coefficient(1.0, 1.0) == 3.0 - 9.0
        assert linear_coefficient(1.0, 1.0, 1) == 12.0


class TestDirect:
    def test_zero_stays_zero(self):
        spec = LatticeSpec(3, 8)
        u = solve_direct(SpectralField.zeros(spec), None, 0.0, 0.0, SolveConfig(T=0.01, dt=1e-3))
        assert np.all(u.data == 0)
        assert len(u) == 11

    def test_linear_mode_decays_exactly(self):
        """Without the cubic term and with a = b = 0 the integrator is exact."""
        spec = LatticeSpec(2, 8)
        u = solve_direct(_cos1(spec, 1.0), None, 0.0, 0.0, SolveConfig(T=0.2, dt=0.01, cubic=False))
        np.testing.assert_allclose(u.data[:, 1, 0].real, 0.5 * np.exp(-u.times), rtol=1e-12)

    def test_first_order_in_dt(self):
        spec = LatticeSpec(1, 16)
        u0 = _cos1(spec, 2.0)
        ref = solve_direct(u0, None, 0.3, 0.0, SolveConfig(T=0.2, dt=0.2 / 3200)).data[-1]
        errs = [np.max(np.abs(solve_direct(u0, None, 0.3, 0.0, SolveConfig(T=0.2, dt=0.2 / n)).data[-1] - ref)) for n in (50, 100, 200)]
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.15)
        assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.15)

    def test_cubic_against_ode(self):
        """Spatially constant data solve u' = -u^3 + c u."""
        spec = LatticeSpec(1, 8)
        u0 = SpectralField.from_modes(spec, {}, mean=1.5)
        c = linear_coefficient(0.5, 0.1)
        u = solve_direct(u0, None, 0.5, 0.1, SolveConfig(T=0.5, dt=1e-4))
        # closed form of the Bernoulli equation
        t = u.times
        exact = 1.0 / np.sqrt(np.exp(-2 * c * t) / 1.5**2 + (1 - np.exp(-2 * c * t)) / c)
        np.testing.assert_allclose(u.data[:, 0].real, exact, rtol=1e-3)

    def test_forcing_field(self):
        spec = LatticeSpec(1, 8)
        n = 20
        data = np.zeros((n + 1,) + spec.shape, complex)
        data[:, 0] = 1.0
        f = TrajectoryField(spec, 0, 0.2, data)
        u = solve_direct(SpectralField.zeros(spec), f, 0.0, 0.0, SolveConfig(T=0.2, dt=0.01, cubic=False))
        np.testing.assert_allclose(u.data[:, 0].real, u.times, atol=1e-13)
        with pytest.raises(GridMismatch):
            solve_direct(SpectralField.zeros(spec), f, 0.0, 0.0, SolveConfig(T=0.2, dt=0.02))
        with pytest.raises(GridMismatch):
            solve_direct(SpectralField.zeros(LatticeSpec(1, 16)), f, 0.0, 0.0, SolveConfig(T=0.2, dt=0.01))

    def test_blowup_freezes_state(self):
        spec = LatticeSpec(1, 8)
        cfg = SolveConfig(T=1.0, dt=0.01, cubic=False, blowup_threshold=1e3)
        u, status = solve_direct(_cos1(spec, 1.0), None, 20.0, 0.0, cfg, return_status=True)
        assert status.status == "blowup"
        assert 0 < status.blowup_time < 1.0
        assert np.all(u.data[-1] == u.data[-2])
        assert str(status).startswith("blowup(")

    def test_record_every(self):
        spec = LatticeSpec(1, 8)
        full = solve_direct(_cos1(spec, 1.0), None, 0.0, 0.0, SolveConfig(T=0.1, dt=0.01))
        thin = solve_direct(_cos1(spec, 1.0), None, 0.0, 0.0, SolveConfig(T=0.1, dt=0.01, record_every=5))
        np.testing.assert_array_equal(thin.data, full.data[::5])
        with pytest.raises(GridMismatch):
            solve_direct(_cos1(spec, 1.0), None, 0.0, 0.0, SolveConfig(T=0.1, dt=0.01, record_every=3))


def _smooth_rough(a, b, n=8, T=0.05):
    """Band-limited X on a lattice large enough that no product is truncated."""
    spec = LatticeSpec(2, 32)
    part = build_partition(spec)
    base = SpectralField.from_modes(spec, {(1, 0): 0.3, (0, 1): 0.2j, (1, 1): 0.1})
    times = np.linspace(0, T, n + 1)
    X = TrajectoryField(spec, 0, T, np.stack([math.cos(2 * t) * base.data for t in times]))
    return build_rough_distribution(X, a, b, CounterFunction.zero(times), part), part


def _plain_gamma(XX, Phi, Psi, a, b):
    spec = XX.spec
    u = to_grid(XX.x.data + Phi, spec)
    rhs = from_grid(u**3 - 3 * a * u + 9 * b * u, spec)
    return Psi - duhamel_data(rhs, XX.times, spec.ksq().astype(float))


class TestGamma:
    @pytest.mark.parametrize("a,b", [(0.0, 0.0), (0.4, 0.05)])
    @pytest.mark.parametrize("diamond", ["compact", "expanded"])
    def test_matches_plain_products(self, a, b, diamond):
        XX, part = _smooth_rough(a, b)
        rd = RoughData(XX, part)
        spec = XX.spec
        u0 = SpectralField.from_modes(spec, {(0, 2): 0.1})
        Psi = initial_psi(u0, rd)
        phi0 = rd.Y + Psi.data
        Phi = controlled_from(phi0, 3.0 * phi0, rd, ControlWeights(), 0.6)
        out = gamma_map(Phi, rd, Psi, diamond=diamond)
        ref = _plain_gamma(XX, phi0, Psi.data, a, b)
        err = np.max(np.abs(out.phi.data - ref)) / np.max(np.abs(ref))
        assert err < 1e-8
        np.testing.assert_allclose(out.prime.data, 3.0 * phi0, atol=0)
        assert structural_residual(out, rd) < 1e-12

    def test_compact_equals_expanded_on_iterate(self):
        XX, part = _smooth_rough(0.2, 0.02, n=6)
        rd = RoughData(XX, part)
        Psi = initial_psi(SpectralField.zeros(XX.spec), rd)
        Phi = controlled_from(rd.Y, 3 * rd.Y, rd, ControlWeights(), 0.6)
        Phi = gamma_map(Phi, rd, Psi)
        A = gamma_map(Phi, rd, Psi, diamond="compact")
        B = gamma_map(Phi, rd, Psi, diamond="expanded")
        assert np.max(np.abs(A.phi.data - B.phi.data)) < 1e-10 * max(1.0, np.max(np.abs(A.phi.data)))

    def test_zero_input(self):
        spec = LatticeSpec(2, 8)
        XX = zero_rough_distribution(spec, 0, 0.1, 5)
        rd = RoughData(XX, build_partition(spec))
        z = rd.traj(np.zeros((6,) + spec.shape, complex))
        Phi = controlled_from(z.data, z.data, rd, ControlWeights(), 0.6)
        out = gamma_map(Phi, rd, z)
        assert np.all(out.phi.data == 0) and np.all(out.sharp.data == 0)

    def test_structural_identity_is_enforced(self):
        XX, part = _smooth_rough(0.0, 0.0, n=4)
        rd = RoughData(XX, part)
        Psi = initial_psi(SpectralField.zeros(XX.spec), rd)
        Phi = controlled_from(rd.Y, 3 * rd.Y, rd, ControlWeights(), 0.6)
        from pcd.solver import ControlledDistribution

        bad = ControlledDistribution(Phi.phi, Phi.prime, Phi.sharp.with_data(Phi.sharp.data + 0.01), Phi.weights, Phi.z)
        with pytest.raises(InvalidControlled):
            gamma_map(bad, rd, Psi)
        with pytest.raises(GridMismatch):
            gamma_map(Phi, rd, TrajectoryField.zeros(XX.spec, 0, 0.05, 8))


class TestPicard:
    def test_zero_data_converges_immediately(self):
        spec = LatticeSpec(2, 8)
        XX = zero_rough_distribution(spec, 0, 0.05, 10)
        Phi, status = picard_solve(SpectralField.zeros(spec), XX, SolveConfig(T=0.05, dt=0.005))
        assert status.status == "converged" and status.iterations == 1
        assert np.all(Phi.phi.data == 0)

    def test_smooth_matches_direct_route(self):
        XX, part = _smooth_rough(0.0, 0.0, n=40, T=0.04)
        u0 = SpectralField.from_modes(XX.spec, {(0, 2): 0.1})
        Phi, status = picard_solve(u0, XX, SolveConfig(T=0.04, dt=0.001), part)
        assert status.status == "converged" and status.rate < 0.5
        u = solution_field(Phi, XX)
        # X itself is not an O.U. path here, so compare with the forced direct equation
        lam = XX.spec.ksq().astype(float)
        forcing = np.gradient(XX.x.data, XX.times, axis=0) + lam * XX.x.data
        v = solve_direct(u0, TrajectoryField(XX.spec, 0, 0.04, forcing), 0.0, 0.0, SolveConfig(T=0.04, dt=0.001))
        assert np.max(np.abs(u.data - v.data)) < 2e-3

    def test_no_local_solution(self):
        spec = LatticeSpec(1, 16)
        XX = zero_rough_distribution(spec, 0, 0.16, 16)
        with pytest.raises(NoLocalSolution) as info:
            picard_solve(_cos1(spec, 1e3), XX, SolveConfig(T=0.16, dt=0.01, max_picard=4))
        assert info.value.ratios

    def test_grid_checked(self):
        spec = LatticeSpec(1, 16)
        XX = zero_rough_distribution(spec, 0, 0.1, 10)
        with pytest.raises(GridMismatch):
            picard_solve(SpectralField.zeros(spec), XX, SolveConfig(T=0.1, dt=0.02))


class TestNorms:
    def test_constant_prime_norm(self):
        spec = LatticeSpec(2, 16)
        part = build_partition(spec)
        c = _cos1(spec, 1.0)
        times = np.linspace(0, 0.1, 11)
        data = np.stack([c.data] * 11)
        L, z = ControlWeights(), 0.6
        want = 0.1 ** ((L.eta + z) / 2) * holder_norm(c, L.eta, part)
        assert prime_norm(data, times, L, z, part) == pytest.approx(want, rel=1e-12)

    def test_distance_and_norms(self):
        XX, part = _smooth_rough(0.0, 0.0, n=4)
        rd = RoughData(XX, part)
        Phi = controlled_from(rd.Y, 3 * rd.Y, rd, ControlWeights(), 0.6)
        n = controlled_norms(Phi, part=part)
        assert n["total"] == pytest.approx(n["sharp"] + n["prime"])
        assert controlled_distance(Phi, Phi, part) == 0.0
        Z = controlled_from(0 * rd.Y, 0 * rd.Y, rd, ControlWeights(), 0.6)
        # sharp of Z is -Y, so the distance is the norm of Phi' plus the norm of Phi# + Y
        d = controlled_distance(Phi, Z, part)
        assert d > 0 and math.isfinite(d)

    def test_continuity_probe_identical_inputs(self):
        spec = LatticeSpec(1, 16)
        XX = zero_rough_distribution(spec, 0, 0.05, 10)
        u0 = _cos1(spec, 0.2)
        out = continuity_probe(u0, u0, XX, XX, SolveConfig(T=0.05, dt=0.005))
        assert out["d_out"] == 0.0 and out["d_in"] == 0.0
        out = continuity_probe(u0, _cos1(spec, 0.21), XX, XX, SolveConfig(T=0.05, dt=0.005))
        assert 0 < out["d_out"] <= 1.5 * out["d_init"]
