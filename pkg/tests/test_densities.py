import itertools

import numpy as np
import pytest

from oracles import MixtureOracle, random_amps
from tdrasscf.densities import (
    build_a_tensor,
    build_densities,
    build_rho1,
    build_rho2,
    build_rho_inter,
    build_zeta,
)
from tdrasscf.eom import WaveFunction
from tdrasscf.fockspace import ConfigSpace, RasSpec, Scheme
from tdrasscf.model import HamiltonianTerms


def _oracle(specs, particles):
    """Dense oracle on a 'grid' whose sites are the orbitals themselves."""
    ms = [s.n_orbitals for s in specs]
    n_sites = max(ms)
    terms = HamiltonianTerms(h=tuple(np.zeros((n_sites, n_sites)) for _ in ms), v=(None,) * len(ms))
    oracle = MixtureOracle(n_sites, particles, terms)
    orbitals = [np.eye(n_sites)[:m] for m in ms]
    return oracle, orbitals


def _dense_ops(oracle, kappa, m):
    f = oracle.focks[kappa]
    n = oracle.particles[kappa]
    e = np.eye(f.n_sites)
    one = {(i, j): oracle.one_body_op(kappa, e[i], e[j]) for i in range(m) for j in range(m)}
    two = {}
    if n >= 2:
        for i, k, l, j in itertools.product(range(m), repeat=4):
            two[(i, k, l, j)] = (
                f.create(e[i], n - 1) @ f.create(e[k], n - 2) @ f.destroy(e[l], n - 1) @ f.destroy(e[j], n)
            )
    return one, two


def _expect(oracle, psi, op, kappa):
    return np.vdot(psi, oracle.apply_species(op, psi, kappa))


def _single(space, configs):
    amps = np.zeros(space.product_size, complex)
    amps[space.index_of(configs)] = 1.0
    return amps


def test_rho1_single_configuration():
    space = ConfigSpace.build([RasSpec(1, 2, Scheme.GENERAL, 2)], [5])
    np.testing.assert_array_equal(build_rho1(0, _single(space, [(5, 0, 0)]), space), np.diag([5.0, 0, 0]))


def test_rho1_even_superposition_is_diagonal():
    space = ConfigSpace.build([RasSpec.fci(2)], [2])
    amps = (_single(space, [(2, 0)]) + _single(space, [(0, 2)])) / np.sqrt(2)
    np.testing.assert_allclose(build_rho1(0, amps, space), np.eye(2), atol=1e-15)


def test_rho2_examples():
    space = ConfigSpace.build([RasSpec.fci(3)], [4])
    r2 = build_rho2(0, _single(space, [(4, 0, 0)]), space)
    expected = np.zeros((3, 3, 3, 3))
    expected[0, 0, 0, 0] = 12.0
    np.testing.assert_allclose(r2, expected, atol=1e-14)
    space = ConfigSpace.build([RasSpec.fci(2)], [1])
    amps = np.array([0.6, 0.8j])
    assert not np.any(np.abs(build_rho2(0, amps, space)) > 1e-15)


def test_rho_inter_examples():
    space = ConfigSpace.build([RasSpec.fci(2), RasSpec.fci(3)], [3, 2])
    r = build_rho_inter(0, 1, _single(space, [(3, 0), (2, 0, 0)]), space)
    assert r[0, 0, 0, 0] == pytest.approx(6.0)
    assert np.count_nonzero(np.abs(r) > 1e-14) == 1
    with pytest.raises(ValueError):
        build_rho_inter(1, 1, _single(space, [(3, 0), (2, 0, 0)]), space)


def test_rho_inter_factorizes_for_product_states():
    rng = np.random.default_rng(2)
    space = ConfigSpace.build([RasSpec(1, 2, Scheme.GENERAL, 2), RasSpec.fci(2)], [3, 3])
    a = random_amps(rng, len(space.species[0]))
    b = random_amps(rng, len(space.species[1]))
    amps = np.outer(a, b).reshape(-1)
    dens = build_densities(amps, space)
    ref = np.einsum("ik,jl->ijkl", dens.rho1[0], dens.rho1[1])
    np.testing.assert_allclose(dens.rho_inter[(0, 1)], ref, atol=1e-13)
    np.testing.assert_allclose(dens.inter(1, 0), ref.transpose(1, 0, 3, 2), atol=1e-13)


@pytest.mark.parametrize("specs,particles", [
    ([RasSpec.fci(3), RasSpec.fci(2)], (3, 2)),
    ([RasSpec(1, 2, Scheme.GENERAL, 2), RasSpec(1, 1, Scheme.EVEN_ONLY, 2)], (4, 3)),
    ([RasSpec(2, 1, Scheme.EVEN_ONLY, 2), RasSpec(1, 2, Scheme.GENERAL, 1)], (3, 2)),
])
def test_densities_against_dense_operators(specs, particles):
    rng = np.random.default_rng(13)
    space = ConfigSpace.build(specs, particles)
    oracle, orbitals = _oracle(specs, particles)
    amps = random_amps(rng, space.product_size)
    psi = oracle.state(space, WaveFunction(amps, orbitals))
    dens = build_densities(amps, space)
    ops = [_dense_ops(oracle, k, s.n_orbitals) for k, s in enumerate(specs)]
    for kappa, (one, two) in enumerate(ops):
        for (i, j), op in one.items():
            assert abs(dens.rho1[kappa][i, j] - _expect(oracle, psi, op, kappa)) < 1e-12
        for (i, k, l, j), op in two.items():
            assert abs(dens.rho2[kappa][i, k, j, l] - _expect(oracle, psi, op, kappa)) < 1e-12
    one0, one1 = ops[0][0], ops[1][0]
    for (i, k), (j, l) in itertools.product(one0, one1):
        ref = np.vdot(psi, oracle.apply_species(one0[(i, k)], oracle.apply_species(one1[(j, l)], psi, 1), 0))
        assert abs(dens.rho_inter[(0, 1)][i, j, k, l] - ref) < 1e-12


def _random_space(rng):
    specs, particles = [], []
    for _ in range(2):
        n = int(rng.integers(1, 6))
        m1 = int(rng.integers(1, 3))
        m2 = int(rng.integers(0, 3))
        scheme = Scheme.EVEN_ONLY if rng.random() < 0.5 else Scheme.GENERAL
        nmax = int(rng.integers(0, n + 1)) if m2 else 0
        specs.append(RasSpec(m1, m2, scheme, nmax))
        particles.append(n)
    return ConfigSpace.build(specs, particles)


def test_density_properties_over_random_states():
    """Traces, partial traces, hermiticity, spectra and even-scheme selection rule."""
    rng = np.random.default_rng(2024)
    for _ in range(120):
        space = _random_space(rng)
        amps = random_amps(rng, space.product_size)
        dens = build_densities(amps, space)
        assert abs(dens.norm2 - 1.0) < 1e-13
        for kappa, s in enumerate(space.species):
            n = s.n_particles
            r1, r2 = dens.rho1[kappa], dens.rho2[kappa]
            assert abs(np.trace(r1) - n) < 1e-12
            assert np.array_equal(r1, r1.conj().T)
            ev = np.linalg.eigvalsh(r1)
            assert ev.min() > -1e-12 and ev.max() < n + 1e-12
            np.testing.assert_allclose(np.einsum("ikjk->ij", r2), (n - 1) * r1, rtol=0, atol=1e-12)
            np.testing.assert_allclose(r2, r2.transpose(1, 0, 3, 2), rtol=0, atol=1e-12)
            gamma = 1 - kappa
            ng = space.species[gamma].n_particles
            ri = dens.inter(kappa, gamma)
            np.testing.assert_allclose(np.einsum("ijkj->ik", ri), ng * r1, rtol=0, atol=1e-12)
            if s.spec.scheme is Scheme.EVEN_ONLY:
                m1 = s.spec.m1
                assert not np.any(r1[:m1, m1:]) and not np.any(r1[m1:, :m1])


def _dense_zeta_setup(spec, n, other_spec, n_other, seed):
    rng = np.random.default_rng(seed)
    specs = [spec, other_spec]
    space = ConfigSpace.build(specs, [n, n_other])
    oracle, orbitals = _oracle(specs, (n, n_other))
    amps = random_amps(rng, space.product_size)
    psi = oracle.state(space, WaveFunction(amps, orbitals))
    basis = oracle.config_basis(space, orbitals)  # orthonormal columns spanning the space
    proj = basis @ basis.conj().T
    comp = np.eye(proj.shape[0]) - proj
    return space, oracle, amps, psi, comp


def _apply(oracle, op, psi, kappa):
    return oracle.apply_species(op, psi, kappa)


@pytest.mark.parametrize("spec,n", [(RasSpec(1, 1, Scheme.GENERAL, 1), 3), (RasSpec(1, 2, Scheme.GENERAL, 2), 4)])
def test_zeta_against_dense_projector_complement(spec, n):
    other = RasSpec.fci(2)
    space, oracle, amps, psi, comp = _dense_zeta_setup(spec, n, other, 2, seed=21)
    zeta = build_zeta(0, amps, space)
    m1, m2, m = spec.m1, spec.m2, spec.n_orbitals
    one, two = _dense_ops(oracle, 0, m)
    one_g, _ = _dense_ops(oracle, 1, 2)
    shape = psi.shape

    def bra(a, b):
        return comp @ _apply(oracle, one[(m1 + b, a)], psi, 0).reshape(-1)

    for a, b in itertools.product(range(m1), range(m2)):
        left = bra(a, b)
        for c, d in itertools.product(range(m2), range(m1)):
            ket = _apply(oracle, one[(m1 + c, d)], psi, 0).reshape(-1)
            assert abs(zeta.zeta4[a, b, c, d] - np.vdot(left, comp @ ket)) < 1e-12
            for r, s in itertools.product(range(2), repeat=2):
                inner = _apply(oracle, one_g[(r, s)], psi, 1)
                ket = _apply(oracle, one[(m1 + c, d)], inner, 0).reshape(-1)
                assert abs(zeta.zeta6_inter[1][a, b, c, d, r, s] - np.vdot(left, comp @ ket)) < 1e-12
        for k, mm, l, nn in itertools.product(range(m), repeat=4):
            ket = _apply(oracle, two[(k, mm, nn, l)], psi, 0).reshape(-1)
            assert abs(zeta.zeta6_intra[a, b, k, mm, l, nn] - np.vdot(left, comp @ ket)) < 1e-12
    assert shape == psi.shape


def test_zeta_vanishes_in_unrestricted_limit():
    rng = np.random.default_rng(3)
    space = ConfigSpace.build([RasSpec(1, 2, Scheme.GENERAL, 3), RasSpec.fci(2)], [3, 2])
    zeta = build_zeta(0, random_amps(rng, space.product_size), space)
    assert not np.any(zeta.zeta4) and not np.any(zeta.zeta6_intra)
    assert all(not np.any(z) for z in zeta.zeta6_inter.values())


def test_zeta_vanishes_for_configuration_below_boundary():
    space = ConfigSpace.build([RasSpec(1, 2, Scheme.GENERAL, 2), RasSpec.fci(2)], [5, 2])
    zeta = build_zeta(0, _single(space, [(5, 0, 0), (2, 0)]), space)
    assert not np.any(zeta.zeta4) and not np.any(zeta.zeta6_intra)
    assert not np.any(zeta.zeta6_inter[1])


def test_zeta_nonzero_at_boundary():
    space = ConfigSpace.build([RasSpec(1, 1, Scheme.GENERAL, 1)], [3])
    zeta = build_zeta(0, _single(space, [(2, 1)]), space)
    # E_{10} moves (2,1) to (1,2): amplitude sqrt(2*2); zeta4 = 4
    assert zeta.zeta4[0, 0, 0, 0] == pytest.approx(4.0)


def test_a_tensor_examples():
    spec = RasSpec(1, 1)
    a = build_a_tensor(np.diag([7.0, 0.0]), spec)
    assert a[0, 0, 0, 0] == 7.0
    assert not np.any(build_a_tensor(np.zeros((2, 2)), spec))


def test_a_tensor_against_direct_formula():
    rng = np.random.default_rng(4)
    for m1, m2 in [(1, 1), (2, 1), (2, 3), (3, 2)]:
        spec = RasSpec(m1, m2, Scheme.EVEN_ONLY, 2)
        m = m1 + m2
        x = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
        rho = x @ x.conj().T
        a = build_a_tensor(rho, spec)
        for i, j, k, l in itertools.product(range(m1), range(m2), range(m2), range(m1)):
            ref = (rho[i, l] if j == k else 0) - (rho[m1 + k, m1 + j] if l == i else 0)
            assert a[i, j, k, l] == ref
