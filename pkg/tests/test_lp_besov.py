import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pcd.errors import InsufficientScales
from pcd.lattice import LatticeSpec, SpectralField, axpy, random_field, scale
from pcd.lp_besov import (
    BesovIndex,
    besov_norm,
    block_norms_csv,
    block_profile,
    build_partition,
    chi,
    estimate_regularity,
    holder_norm,
    lp_block,
    synthetic_field,
    theta,
)


@pytest.fixture(scope="module")
def part32():
    return build_partition(LatticeSpec(3, 32))


def test_profiles_at_origin():
    assert chi(0.0) == 1.0
    assert all(block_profile(0.0, j) == 0.0 for j in range(8))


def test_profile_supports():
    r = np.linspace(0, 5, 5001)
    assert np.all(chi(r[r <= 0.75]) == 1.0)
    assert np.all(chi(r[r >= 4 / 3]) == 0.0)
    th = theta(r)
    assert np.all(th[(r <= 0.75) | (r >= 8 / 3)] == 0.0)
    assert np.all((th >= 0) & (th <= 1))


def test_partition_of_unity_full_lattice(part32):
    total = part32.weights().sum(axis=0)
    ret = part32.spec.retained()
    assert np.max(np.abs(total[ret] - 1.0)) <= 1e-12


def test_support_separation(part32):
    w = part32.weights()
    for i in range(w.shape[0]):
        for j in range(i + 2, w.shape[0]):
            assert np.max(w[i] * w[j]) == 0.0


def test_block_reconstruction(part32, rng):
    u = random_field(part32.spec, rng)
    total = sum(lp_block(u, j, part32).data for j in part32.indices)
    assert np.max(np.abs(total - u.data)) <= 1e-14 * np.max(np.abs(u.data))


def test_almost_orthogonality(part32, rng):
    u = random_field(part32.spec, rng)
    for i in part32.indices:
        for j in part32.indices:
            if abs(i - j) >= 2:
                assert np.max(np.abs(lp_block(lp_block(u, j, part32), i, part32).data)) == 0.0


def test_single_mode_blocks():
    spec = LatticeSpec(3, 16)
    part = build_partition(spec)
    u = SpectralField.from_modes(spec, {(4, 0, 0): 0.5})
    hit = []
    for j in part.indices:
        expected = float(block_profile(4.0, j))
        b = lp_block(u, j, part)
        np.testing.assert_allclose(b.data, expected * u.data, atol=1e-16)
        if expected:
            hit.append(j)
    assert hit == [1, 2]


def test_block_index_range(part32):
    u = SpectralField.zeros(part32.spec)
    with pytest.raises(IndexError):
        lp_block(u, -2, part32)
    with pytest.raises(IndexError):
        lp_block(u, part32.j_max + 1, part32)
    assert np.all(lp_block(u, 0, part32).data == 0)


def test_besov_index_validation():
    with pytest.raises(ValueError):
        BesovIndex(0.5, p=0.5)


def test_zero_norm(part32):
    assert besov_norm(SpectralField.zeros(part32.spec), BesovIndex(-0.5), part32) == 0.0


@pytest.mark.parametrize("k0,alpha", [((3, 0, 0), 0.5), ((5, 2, 1), -0.7), ((1, 1, 0), 1.2)])
def test_single_mode_holder_norm(k0, alpha):
    spec = LatticeSpec(3, 16)
    part = build_partition(spec)
    u = SpectralField.from_modes(spec, {k0: 0.5})
    r = math.sqrt(sum(c * c for c in k0))
    expected = max(2.0 ** (j * alpha) * float(block_profile(r, j)) for j in part.indices)
    # cos(k0.x) attains 1 at the grid origin
    assert holder_norm(u, alpha, part) == pytest.approx(expected, rel=1e-12)


@given(seed=st.integers(0, 2**32 - 1), lam=st.floats(-4, 4).filter(lambda x: x == 0 or abs(x) > 1e-6), alpha=st.floats(-1.5, 1.5))
def test_homogeneity_and_triangle(seed, lam, alpha):
    rng = np.random.default_rng(seed)
    spec = LatticeSpec(2, 16)
    part = build_partition(spec)
    u, v = random_field(spec, rng), random_field(spec, rng)
    for idx in (BesovIndex(alpha), BesovIndex(alpha, 2.0, 2.0), BesovIndex(alpha, 1.0, 3.0)):
        nu = besov_norm(u, idx, part)
        assert besov_norm(scale(lam, u), idx, part) == pytest.approx(abs(lam) * nu, rel=1e-12, abs=1e-300)
        assert besov_norm(axpy(1.0, u, v), idx, part) <= nu + besov_norm(v, idx, part) + 1e-12


@given(seed=st.integers(0, 2**32 - 1), a1=st.floats(-2, 2), gap=st.floats(0, 2))
def test_monotonicity(seed, a1, gap):
    rng = np.random.default_rng(seed)
    spec = LatticeSpec(1, 64)
    part = build_partition(spec)
    u = random_field(spec, rng)
    a2 = a1 + gap
    bound = holder_norm(u, a2, part) * max(2.0 ** (j * (a1 - a2)) for j in part.indices)
    assert holder_norm(u, a1, part) <= bound * (1 + 1e-12)


def test_besov_embedding_fitted_constant(rng):
    """||u||_{alpha - d/p} <= C ||u||_{B^alpha_{p,p}} with one constant over 100 fields."""
    spec = LatticeSpec(2, 32)
    part = build_partition(spec)
    alpha, p = 0.3, 2.0
    ratios = []
    for i in range(100):
        u = synthetic_field(spec, -0.5 + 0.02 * i, rng)
        lhs = holder_norm(u, alpha - spec.dim / p, part)
        rhs = besov_norm(u, BesovIndex(alpha, p, p), part)
        ratios.append(lhs / rhs)
    C = max(ratios)
    print(f"fitted embedding constant C = {C:.4f}")
    assert C < 5.0
    assert min(ratios) > 0


@pytest.mark.parametrize("alpha", [0.5, 1.0])
def test_estimate_regularity_synthetic(alpha, rng):
    spec = LatticeSpec(1, 64)
    part = build_partition(spec)
    est = np.mean([estimate_regularity(synthetic_field(spec, alpha, rng), part) for _ in range(20)])
    assert abs(est - alpha) <= 0.15


@pytest.mark.xfail(
    strict=True,
    reason="top annuli in d=3 are cut by the cube of retained modes, flattening the fit (-0.63 at N=32, -1.18 at N=128)",
)
def test_estimate_regularity_white_noise_d3(rng):
    spec = LatticeSpec(3, 32)
    part = build_partition(spec)
    est = np.mean([estimate_regularity(random_field(spec, rng), part) for _ in range(5)])
    assert abs(est + 1.5) <= 0.2


def test_white_noise_interior_blocks_scale_like_minus_three_halves(rng):
    """Blocks whose annulus lies inside the retained cube do carry the -d/2 scaling."""
    spec = LatticeSpec(3, 64)
    part = build_partition(spec)
    from pcd.lp_besov import block_norms

    norms = np.mean([block_norms(random_field(spec, rng).data, part) for _ in range(3)], axis=0)
    # annuli j = 1..3 reach radius 2^j * 8/3 <= 21.4 < kmax = 31
    js = np.array([1, 2, 3])
    slope = np.polyfit(js, np.log2(norms[js + 1]), 1)[0]
    assert -slope == pytest.approx(-1.5, abs=0.2)


def test_single_mode_insufficient_scales():
    spec = LatticeSpec(1, 64)
    part = build_partition(spec)
    with pytest.raises(InsufficientScales):
        estimate_regularity(SpectralField.from_modes(spec, {(5,): 0.5}), part)


def test_block_norms_csv(rng):
    spec = LatticeSpec(1, 32)
    part = build_partition(spec)
    text = block_norms_csv(random_field(spec, rng), part)
    lines = text.strip().split("\n")
    assert lines[0] == "j,l2_norm,linf_norm"
    assert len(lines) == part.n_blocks + 1
    for line in lines[1:]:
        j, l2, linf = line.split(",")
        assert float(l2) <= float(linf) + 1e-12
