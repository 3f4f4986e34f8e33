import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lindblad_syk.errors import InvalidArgumentError, ResourceLimitError
from lindblad_syk.majorana import (
    SparseOperator,
    anticommutator_check,
    build_majoranas,
    op_add_scaled,
    op_mul,
    op_product,
)

# independent dense Jordan-Wigner construction
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]])
Z = np.diag([1.0, -1.0]).astype(complex)
I2 = np.eye(2, dtype=complex)


def dense_majoranas(n):
    nq = n // 2
    out = []
    for k in range(nq):
        for p in (X, Y):
            m = np.ones((1, 1), dtype=complex)
            for f in [Z] * k + [p] + [I2] * (nq - k - 1):
                m = np.kron(m, f)
            out.append(m / np.sqrt(2))
    return out


def test_n2_relations():
    m = build_majoranas(2)
    assert m.dim == 2 and len(m) == 2
    eye = np.eye(2)
    for i in range(2):
        assert np.allclose(op_mul(m[i], m[i]).to_dense(), eye / 2, atol=1e-15)
    anti = op_mul(m[0], m[1]) + op_mul(m[1], m[0])
    assert anti.max_abs() < 1e-15


def test_n4_quartic_square_matches_dense_oracle():
    m = build_majoranas(4)
    p = op_product([m[0], m[1], m[2], m[3]])
    d = dense_majoranas(4)
    pd = d[0] @ d[1] @ d[2] @ d[3]
    assert np.allclose(p.to_dense(), pd, atol=1e-15)
    assert np.allclose((p @ p).to_dense(), np.eye(4) / 16, atol=1e-15)


@pytest.mark.parametrize("n", [2, 4, 6, 8])
def test_matches_dense_construction_and_traceless(n):
    m = build_majoranas(n)
    for a, b in zip(m.ops, dense_majoranas(n)):
        assert np.allclose(a.to_dense(), b, atol=1e-15)
        assert abs(a.trace()) < 1e-14
        assert a.is_hermitian()


def test_op_mul_examples():
    m = build_majoranas(4)
    eye = SparseOperator.identity(4)
    assert np.allclose((eye @ m[2]).to_dense(), m[2].to_dense())
    pair = op_mul(m[0], m[1])
    assert np.allclose(op_mul(pair, pair).to_dense(), -np.eye(4) / 4, atol=1e-15)


def test_op_add_scaled_examples():
    m = build_majoranas(4)
    a, b = m[0], m[1]
    assert np.allclose(op_add_scaled(a, 0.0, b).to_dense(), a.to_dense())
    assert op_add_scaled(a, -1.0, a).nnz == 0
    s = op_add_scaled(a, 1j, b)
    dense = a.to_dense() + 1j * b.to_dense()
    assert np.allclose(s.dagger().to_dense(), dense.conj().T)
    assert np.allclose(s.dagger().to_dense(), op_add_scaled(a, -1j, b).to_dense())


def test_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        op_mul(build_majoranas(2)[0], build_majoranas(4)[0])
    with pytest.raises(InvalidArgumentError):
        op_add_scaled(build_majoranas(2)[0], 1.0, build_majoranas(4)[0])


@pytest.mark.parametrize("n", [0, 3, -2])
def test_invalid_n(n):
    with pytest.raises(InvalidArgumentError):
        build_majoranas(n)


def test_resource_limit():
    with pytest.raises(ResourceLimitError):
        build_majoranas(8, max_qubits=3)


def test_anticommutator_check_examples():
    m = build_majoranas(6)
    assert anticommutator_check(m, 1e-12)
    assert not anticommutator_check(m.scaled(0, 1.01), 1e-3)
    assert anticommutator_check(m.swapped(1, 4), 1e-12)


def test_serialization_roundtrip():
    m = build_majoranas(6)
    op = op_add_scaled(m[0], 0.3 - 0.2j, op_mul(m[2], m[5]))
    back = SparseOperator.from_coordinate_text(op.to_coordinate_text())
    assert np.array_equal(back.mat.toarray(), op.mat.toarray())


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([2, 4, 6]), st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
       st.data())
def test_linearity_property(n, c, data):
    m = build_majoranas(n)
    i = data.draw(st.integers(0, n - 1))
    j = data.draw(st.integers(0, n - 1))
    got = op_add_scaled(m[i], c, m[j]).to_dense()
    assert np.allclose(got, m[i].to_dense() + c * m[j].to_dense(), atol=1e-12)
    # {psi_i, psi_j} = delta_ij
    anti = (op_mul(m[i], m[j]) + op_mul(m[j], m[i])).to_dense()
    assert np.allclose(anti, np.eye(m.dim) * (i == j), atol=1e-15)
