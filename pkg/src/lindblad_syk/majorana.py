"""Majorana operators as sparse matrices.

Majoranas are built with the Jordan-Wigner chain: for qubit ``k``,

    psi_{2k}   = Z x ... x Z x X x I x ... x I / sqrt(2)
    psi_{2k+1} = Z x ... x Z x Y x I x ... x I / sqrt(2)

so that ``{psi_i, psi_j} = delta_ij`` (hence ``psi_i**2 = 1/2``). Qubit 0
is the most significant bit of the basis index.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError, ResourceLimitError

DROP_TOL = 1e-15
DENSE_FALLBACK_DIM = 256
# n/2 qubits; 2**24 rows with one entry each is ~400 MB per operator
MAX_QUBITS = 24

_I2 = sp.csr_matrix(np.eye(2, dtype=complex))
_X = sp.csr_matrix(np.array([[0, 1], [1, 0]], dtype=complex))
_Y = sp.csr_matrix(np.array([[0, -1j], [1j, 0]], dtype=complex))
_Z = sp.csr_matrix(np.array([[1, 0], [0, -1]], dtype=complex))


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _canonical(mat, drop_tol: float) -> sp.csr_matrix:
    mat = sp.csr_matrix(mat, dtype=complex, copy=True)
    mat.sum_duplicates()
    if mat.nnz:
        mat.data[np.abs(mat.data) <= drop_tol] = 0.0
    mat.eliminate_zeros()
    mat.sort_indices()
    mat.data.flags.writeable = False
    mat.indices.flags.writeable = False
    mat.indptr.flags.writeable = False
    return mat


class SparseOperator:
    """Immutable complex sparse matrix of power-of-two dimension.

    Entries with magnitude at or below ``drop_tol`` are removed on
    construction, and indices are kept sorted so two operators built the
    same way have byte-identical storage.
    """

    __slots__ = ("_mat", "hermitian_hint")

    def __init__(self, mat, hermitian_hint: bool | None = None, drop_tol: float = DROP_TOL):
        if sp.issparse(mat):
            m = mat
        else:
            m = np.asarray(mat)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidArgumentError(f"operator must be square, got shape {m.shape}")
        if not _is_power_of_two(m.shape[0]):
            raise InvalidArgumentError(f"dimension {m.shape[0]} is not a power of two")
        self._mat = _canonical(m, drop_tol)
        self.hermitian_hint = hermitian_hint

    @classmethod
    def identity(cls, dim: int) -> "SparseOperator":
        return cls(sp.identity(dim, dtype=complex, format="csr"), hermitian_hint=True)

    @classmethod
    def zeros(cls, dim: int) -> "SparseOperator":
        return cls(sp.csr_matrix((dim, dim), dtype=complex), hermitian_hint=True)

    @property
    def dim(self) -> int:
        return self._mat.shape[0]

    @property
    def nnz(self) -> int:
        return self._mat.nnz

    @property
    def mat(self) -> sp.csr_matrix:
        """Underlying CSR matrix (read-only buffers)."""
        return self._mat

    def entries(self) -> dict[tuple[int, int], complex]:
        coo = self._mat.tocoo()
        return {(int(r), int(c)): complex(v) for r, c, v in zip(coo.row, coo.col, coo.data)}

    def to_dense(self) -> np.ndarray:
        return self._mat.toarray()

    def dagger(self) -> "SparseOperator":
        return SparseOperator(self._mat.conj().T, hermitian_hint=self.hermitian_hint)

    def trace(self) -> complex:
        return complex(self._mat.diagonal().sum())

    def max_abs(self) -> float:
        return float(np.abs(self._mat.data).max()) if self._mat.nnz else 0.0

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return op_add_scaled(self, -1.0, self.dagger()).max_abs() < tol

    def apply(self, vec: np.ndarray) -> np.ndarray:
        return self._mat @ vec

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            return op_mul(self, other)
        return self._mat @ other

    def __add__(self, other: "SparseOperator") -> "SparseOperator":
        return op_add_scaled(self, 1.0, other)

    def __sub__(self, other: "SparseOperator") -> "SparseOperator":
        return op_add_scaled(self, -1.0, other)

    def __mul__(self, c) -> "SparseOperator":
        hint = self.hermitian_hint if np.isreal(c) else None
        return SparseOperator(self._mat * c, hermitian_hint=hint)

    __rmul__ = __mul__

    def __neg__(self) -> "SparseOperator":
        return self * -1.0

    def __repr__(self) -> str:
        return f"SparseOperator(dim={self.dim}, nnz={self.nnz})"

    def to_coordinate_text(self) -> str:
        """Serialize as ``dim nnz`` followed by ``row col re im`` lines."""
        coo = self._mat.tocoo()
        buf = io.StringIO()
        buf.write(f"{self.dim} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            buf.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")
        return buf.getvalue()

    @classmethod
    def from_coordinate_text(cls, text: str) -> "SparseOperator":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        dim, nnz = (int(x) for x in lines[0].split())
        if len(lines) - 1 != nnz:
            raise InvalidArgumentError(f"header announces {nnz} entries, found {len(lines) - 1}")
        rows, cols, vals = [], [], []
        for ln in lines[1:]:
            r, c, re, im = ln.split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(complex(float(re), float(im)))
        return cls(sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim)))


def op_mul(a: SparseOperator, b: SparseOperator) -> SparseOperator:
    if a.dim != b.dim:
        raise InvalidArgumentError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return SparseOperator(a.mat @ b.mat)


def op_add_scaled(a: SparseOperator, c: complex, b: SparseOperator) -> SparseOperator:
    """Return ``a + c*b``."""
    if a.dim != b.dim:
        raise InvalidArgumentError(f"dimension mismatch: {a.dim} vs {b.dim}")
    hint = None
    if a.hermitian_hint and b.hermitian_hint and np.isreal(c):
        hint = True
    return SparseOperator(a.mat + c * b.mat, hermitian_hint=hint)


def op_product(ops: Sequence[SparseOperator]) -> SparseOperator:
    """Ordered product ``ops[0] @ ops[1] @ ...``."""
    if not ops:
        raise InvalidArgumentError("empty product")
    mat = ops[0].mat
    for op in ops[1:]:
        if op.dim != ops[0].dim:
            raise InvalidArgumentError("dimension mismatch in product")
        mat = mat @ op.mat
    return SparseOperator(mat)


@dataclass(frozen=True)
class MajoranaSet:
    n: int
    ops: tuple[SparseOperator, ...]

    @property
    def dim(self) -> int:
        return self.ops[0].dim

    def __getitem__(self, i: int) -> SparseOperator:
        return self.ops[i]

    def __len__(self) -> int:
        return self.n

    def swapped(self, i: int, j: int) -> "MajoranaSet":
        ops = list(self.ops)
        ops[i], ops[j] = ops[j], ops[i]
        return MajoranaSet(self.n, tuple(ops))

    def scaled(self, i: int, factor: float) -> "MajoranaSet":
        ops = list(self.ops)
        ops[i] = ops[i] * factor
        return MajoranaSet(self.n, tuple(ops))


def _kron_chain(factors: Iterable[sp.spmatrix]) -> sp.csr_matrix:
    out = None
    for f in factors:
        out = f if out is None else sp.kron(out, f, format="csr")
    return out


def build_majoranas(n: int, max_qubits: int = MAX_QUBITS) -> MajoranaSet:
    """Jordan-Wigner Majoranas for ``n`` (even) modes on ``n/2`` qubits."""
    if not isinstance(n, (int, np.integer)) or n < 2 or n % 2:
        raise InvalidArgumentError(f"number of Majoranas must be even and >= 2, got {n!r}")
    nq = n // 2
    if nq > max_qubits:
        raise ResourceLimitError(f"{nq} qubits exceeds the budget of {max_qubits}")
    ops = []
    scale = 1.0 / np.sqrt(2.0)
    for k in range(nq):
        left = [_Z] * k
        right = [_I2] * (nq - k - 1)
        for pauli in (_X, _Y):
            mat = _kron_chain(left + [pauli] + right) * scale
            ops.append(SparseOperator(mat, hermitian_hint=True))
    return MajoranaSet(n, tuple(ops))


def anticommutator_check(mset: MajoranaSet, tol: float) -> bool:
    """True iff ``max_ij ||{psi_i, psi_j} - delta_ij I||_max < tol``."""
    dim = mset.dim
    eye = sp.identity(dim, dtype=complex, format="csr")
    worst = 0.0
    for i in range(mset.n):
        a = mset.ops[i].mat
        for j in range(i, mset.n):
            b = mset.ops[j].mat
            anti = a @ b + b @ a
            if i == j:
                anti = anti - eye
            if anti.nnz:
                worst = max(worst, float(np.abs(anti.data).max()))
            if worst >= tol:
                return False
    return worst < tol
