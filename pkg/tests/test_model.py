import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from lindblad_syk.errors import InvalidArgumentError, ResourceLimitError
from lindblad_syk.majorana import build_majoranas
from lindblad_syk.model import (
    DisorderRealization,
    GeneratorOperator,
    build_hamiltonian,
    build_liouvillian,
    coupling_sigma,
    fixed_disorder,
    n4_closed_form_block,
    n4_gap_subblock,
    sample_disorder,
    vectorized_identity,
    verify_conventions,
)


def direct_superoperator(d, mu):
    """Lindbladian with jump operators sqrt(mu) psi_i acting on rho as a
    matrix, vectorized row-major: vec(A rho B) = (A kron B^T) vec(rho)."""
    m = build_majoranas(d.n_majorana)
    h = build_hamiltonian(d, m).to_dense()
    dim = h.shape[0]
    eye = np.eye(dim)
    sup = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for op in m.ops:
        p = op.to_dense()
        pdp = p.conj().T @ p
        sup += mu * (np.kron(p, p.conj()) - 0.5 * np.kron(pdp, eye) - 0.5 * np.kron(eye, pdp.T))
    return sup


def multiset_distance(a, b):
    from scipy.optimize import linear_sum_assignment

    cost = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(cost)
    return cost[r, c].max()


def test_coupling_counts():
    assert len(sample_disorder(4, 4, 1).couplings) == 1
    assert len(sample_disorder(8, 4, 1).couplings) == 70
    assert coupling_sigma(4, 4) == pytest.approx(math.sqrt(6 / 64))


def test_disorder_statistics_n4():
    # half-normal mean sigma sqrt(2/pi) = 0.244301 for sigma^2 = 6/64
    vals = np.array([next(iter(sample_disorder(4, 4, s).couplings.values())) for s in range(20000)])
    assert np.std(vals) == pytest.approx(0.30618621784789724, rel=0.02)
    assert np.mean(np.abs(vals)) == pytest.approx(0.24430125595145996, rel=0.02)


def test_sample_disorder_deterministic_and_roundtrip():
    a = sample_disorder(8, 4, 42)
    b = sample_disorder(8, 4, 42)
    assert a.couplings == b.couplings
    c = DisorderRealization.from_text(a.to_text())
    assert c.couplings == a.couplings and c.seed == 42


@pytest.mark.parametrize("n,q", [(3, 4), (4, 3), (4, 6), (0, 2)])
def test_invalid_nq(n, q):
    with pytest.raises(InvalidArgumentError):
        sample_disorder(n, q, 0)


def test_n4_hamiltonian_spectrum():
    J = 0.37
    h = build_hamiltonian(fixed_disorder(4, 4, J), build_majoranas(4)).to_dense()
    assert np.allclose(np.sort(np.linalg.eigvalsh(h)), [-J / 4, -J / 4, J / 4, J / 4], atol=1e-15)


@pytest.mark.parametrize("n", [4, 6, 8])
def test_hamiltonian_hermitian(n):
    h = build_hamiltonian(sample_disorder(n, 4, 3), build_majoranas(n))
    assert (h - h.dagger()).max_abs() < 1e-12


def test_zero_couplings():
    h = build_hamiltonian(fixed_disorder(6, 4, 0.0), build_majoranas(6))
    assert h.nnz == 0


def test_mu_zero_spectrum_from_energy_differences():
    J = 0.5
    b = build_liouvillian(fixed_disorder(4, 4, J), 0.0)
    ev = np.linalg.eigvals(b.L.to_dense())
    e = np.linalg.eigvalsh(b.H.to_dense())
    # commutator spectrum: -i(E_m - E_n) (the sign of H- does not change the set)
    want = np.array([-1j * (x - y) for x in e for y in e])
    assert multiset_distance(ev, want) < 1e-12
    assert np.sum(np.abs(ev - 0.5j * J) < 1e-12) == 4
    assert np.sum(np.abs(ev) < 1e-12) == 8


@pytest.mark.parametrize("n", [4, 6, 8])
def test_steady_state(n):
    b = build_liouvillian(sample_disorder(n, 4, 11), 0.3)
    ident = vectorized_identity(n)
    assert np.linalg.norm(b.L.mat @ ident) < 1e-12
    ev = np.linalg.eigvals(b.steady_block.to_dense())
    assert np.sum(np.abs(ev) < 1e-9) == 1
    assert np.all(np.linalg.eigvals(b.gap_block.to_dense()).real < -1e-9)


@pytest.mark.parametrize("n", [4, 6])
def test_spectrum_matches_direct_superoperator(n):
    d = sample_disorder(n, 4, 5)
    mu = 0.21
    ours = np.linalg.eigvals(build_liouvillian(d, mu).L.to_dense())
    ref = np.linalg.eigvals(direct_superoperator(d, mu))
    assert multiset_distance(ours, ref) < 1e-9


def test_eq5_block():
    J, mu = 0.244, 0.05
    got, basis = n4_gap_subblock(build_liouvillian(fixed_disorder(4, 4, J), mu))
    want = np.array([[-0.5j * J - 2 * mu, -mu], [-mu, 0.5j * J - 2 * mu]])
    assert np.abs(got - want).max() < 1e-12
    assert np.allclose(n4_closed_form_block(J, mu), want)
    assert verify_conventions()


@pytest.mark.parametrize("n", [4, 6, 8])
def test_parity_blocks(n):
    b = build_liouvillian(sample_disorder(n, 4, 2), 0.17)
    assert b.block_plus.dim + b.block_minus.dim == 2 ** n
    assert b.block_plus.dim == b.block_minus.dim == 2 ** (n - 1)
    if n <= 6:
        full = np.linalg.eigvals(b.L.to_dense())
        parts = np.concatenate([np.linalg.eigvals(b.block_plus.to_dense()),
                                np.linalg.eigvals(b.block_minus.to_dense())])
        assert multiset_distance(full, parts) < 1e-9


@pytest.mark.parametrize("n", [4, 6, 8])
def test_matrix_free_operator_matches_blocks(n, rng):
    d = sample_disorder(n, 4, 9)
    b = build_liouvillian(d, 0.3)
    for lab in ("plus", "minus"):
        op = GeneratorOperator(d, 0.3, lab)
        idx = op.pack_indices()
        assert np.array_equal(np.sort(idx), b.block_index[lab])
        ref = b.L.mat[idx][:, idx]
        x = rng.standard_normal(op.shape[0]) + 1j * rng.standard_normal(op.shape[0])
        assert np.allclose(op.matvec(x), ref @ x, atol=1e-12)
        assert np.allclose(op.matvec(x.real), ref @ x.real, atol=1e-12)


def test_invalid_mu_and_size():
    with pytest.raises(InvalidArgumentError):
        build_liouvillian(sample_disorder(4, 4, 0), -0.1)
    with pytest.raises(ResourceLimitError):
        build_liouvillian(sample_disorder(16, 4, 0), 0.1)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(0.0, 1.0))
def test_eq5_block_property(J, mu):
    got, _ = n4_gap_subblock(build_liouvillian(fixed_disorder(4, 4, J), mu))
    assert np.abs(got - n4_closed_form_block(J, mu)).max() < 1e-12
    # both eigenvalues follow -2 mu +- sqrt(mu^2 - (J/2)^2)
    root = np.sqrt(complex(mu ** 2 - (J / 2) ** 2))
    want = np.array([-2 * mu + root, -2 * mu - root])
    # at mu = J/2 the block is defective and eigenvalues carry ~sqrt(eps) error
    assert multiset_distance(sla.eigvals(got), want) < 1e-7
