"""SYK Hamiltonian, vectorized Lindblad generator and its parity blocks.

The doubled space of ``N`` system Majoranas is represented with ``2N``
Jordan-Wigner Majoranas ``chi`` on ``N`` qubits: ``psi+_i = chi_i`` and
``psi-_i = chi_{N+i}``. Because the first ``N/2`` qubits carry the ``+``
copy, ``H(psi+) = H (x) I`` and ``H(psi-) = I (x) H`` (the Jordan-Wigner
string of the ``-`` copy cancels in any even product). The generator is

    L = -i H+ + i (-1)^(q/2) H- + i mu sum_i psi+_i psi-_i - mu N/2.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Literal

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConsistencyError, InvalidArgumentError, ResourceLimitError
from .majorana import MajoranaSet, SparseOperator, build_majoranas

BlockLabel = Literal["plus", "minus"]

COMMUTATION_TOL = 1e-10
# N (system Majoranas) for which the sparse doubled-space generator is assembled
MAX_ASSEMBLED_N = 14


@dataclass(frozen=True)
class DisorderRealization:
    """One draw of the SYK couplings, keyed by sorted index tuples."""

    n_majorana: int
    q: int
    seed: int | None
    couplings: dict[tuple[int, ...], float] = field(repr=False)

    @property
    def sigma(self) -> float:
        return coupling_sigma(self.n_majorana, self.q)

    def index_array(self) -> np.ndarray:
        return np.array(list(self.couplings.keys()), dtype=np.int64).reshape(-1, self.q)

    def value_array(self) -> np.ndarray:
        return np.array(list(self.couplings.values()), dtype=float)

    def to_text(self) -> str:
        """Self-describing record; floats are written with ``repr`` so a
        round trip is bit-exact."""
        lines = [
            f"n {self.n_majorana}",
            f"q {self.q}",
            f"seed {self.seed if self.seed is not None else 'none'}",
            f"count {len(self.couplings)}",
        ]
        for idx, val in self.couplings.items():
            lines.append(" ".join(str(i) for i in idx) + " " + repr(float(val)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DisorderRealization":
        lines = [ln.split() for ln in text.splitlines() if ln.strip()]
        head = {ln[0]: ln[1] for ln in lines[:4]}
        n, q, count = int(head["n"]), int(head["q"]), int(head["count"])
        seed = None if head["seed"] == "none" else int(head["seed"])
        couplings = {}
        for ln in lines[4:]:
            couplings[tuple(int(x) for x in ln[:q])] = float(ln[q])
        if len(couplings) != count:
            raise InvalidArgumentError(f"expected {count} couplings, read {len(couplings)}")
        return cls(n, q, seed, couplings)


def coupling_sigma(n: int, q: int) -> float:
    """Standard deviation sqrt((q-1)!/N^(q-1)) of the couplings."""
    return math.sqrt(math.factorial(q - 1) / n ** (q - 1))


def _check_nq(n: int, q: int) -> None:
    if n < 2 or n % 2:
        raise InvalidArgumentError(f"N must be even and >= 2, got {n}")
    if q < 2 or q % 2:
        raise InvalidArgumentError(f"q must be even and >= 2, got {q}")
    if q > n:
        raise InvalidArgumentError(f"q={q} exceeds N={n}")


def sample_disorder(n: int, q: int, seed: int) -> DisorderRealization:
    """Gaussian couplings, zero mean, variance ``(q-1)!/N^(q-1)``."""
    _check_nq(n, q)
    idx = list(combinations(range(n), q))
    rng = np.random.default_rng(seed)
    vals = rng.normal(0.0, coupling_sigma(n, q), size=len(idx))
    return DisorderRealization(n, q, int(seed), {k: float(v) for k, v in zip(idx, vals)})


def fixed_disorder(n: int, q: int, couplings, seed: int | None = None) -> DisorderRealization:
    """Realization with user-chosen couplings.

    ``couplings`` is either a mapping from sorted index tuples to values
    (missing tuples are zero) or a scalar used for every tuple.
    """
    _check_nq(n, q)
    idx = list(combinations(range(n), q))
    if np.isscalar(couplings):
        table = {k: float(couplings) for k in idx}
    else:
        table = {k: 0.0 for k in idx}
        for k, v in dict(couplings).items():
            k = tuple(sorted(k))
            if k not in table:
                raise InvalidArgumentError(f"invalid coupling index {k}")
            table[k] = float(v)
    return DisorderRealization(n, q, seed, table)


def build_hamiltonian(d: DisorderRealization, m: MajoranaSet) -> SparseOperator:
    """``H = i^(q/2) sum_{i1<...<iq} J psi_i1 ... psi_iq``."""
    if m.n != d.n_majorana:
        raise InvalidArgumentError(f"MajoranaSet has {m.n} modes, realization has {d.n_majorana}")
    mats = [op.mat for op in m.ops]
    acc = sp.csr_matrix((m.dim, m.dim), dtype=complex)
    for idx, val in d.couplings.items():
        if val == 0.0:
            continue
        term = mats[idx[0]]
        for i in idx[1:]:
            term = term @ mats[i]
        acc = acc + val * term
    acc = acc * (1j ** (d.q // 2))
    # round-off can leave a ~1e-17 anti-Hermitian part; project it out
    acc = 0.5 * (acc + acc.conj().T)
    return SparseOperator(acc, hermitian_hint=True)


@functools.lru_cache(maxsize=8)
def _single_copy_majoranas(n: int) -> MajoranaSet:
    return build_majoranas(n)


@functools.lru_cache(maxsize=4)
def doubled_majoranas(n: int) -> MajoranaSet:
    """The ``2N`` Majoranas of the doubled space; ``psi+_i = chi_i``,
    ``psi-_i = chi_{N+i}``."""
    return build_majoranas(2 * n)


@functools.lru_cache(maxsize=8)
def bath_generator(n: int) -> SparseOperator:
    """``i sum_i psi+_i psi-_i`` on the doubled space (Hermitian)."""
    chi = doubled_majoranas(n)
    acc = sp.csr_matrix((chi.dim, chi.dim), dtype=complex)
    for i in range(n):
        acc = acc + chi[i].mat @ chi[n + i].mat
    return SparseOperator(1j * acc, hermitian_hint=True)


@functools.lru_cache(maxsize=8)
def vectorized_identity(n: int) -> np.ndarray:
    """Doubled-space image of the identity operator.

    It is the unique joint eigenvector of ``2i psi+_i psi-_i`` with
    eigenvalue +1 for every ``i`` (the infinite-temperature thermofield
    double). Normalized to unit length with its first nonzero entry real
    and positive.
    """
    chi = doubled_majoranas(n)
    pairs = [2j * (chi[i].mat @ chi[n + i].mat) for i in range(n)]
    dim = chi.dim
    for start in range(dim):
        v = np.zeros(dim, dtype=complex)
        v[start] = 1.0
        for p in pairs:
            v = 0.5 * (v + p @ v)
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            v /= norm
            first = v[np.flatnonzero(np.abs(v) > 1e-12)[0]]
            v *= abs(first) / first
            v.flags.writeable = False
            return v
    raise ConsistencyError("no joint +1 eigenvector of the pair operators")


@dataclass(frozen=True)
class LiouvillianBundle:
    """Vectorized generator plus its parity decomposition.

    ``unitary_part`` is ``-i H+ + i(-1)^(q/2) H-`` and ``bath`` is
    ``i sum psi+ psi-`` (without the factor mu), so that
    ``L = unitary_part + mu * bath - mu N/2``. ``block_index`` maps a block
    label to the doubled-space basis indices spanning it.
    """

    L: SparseOperator
    H: SparseOperator
    mu: float
    n_majorana: int
    q: int
    seed: int | None
    unitary_part: SparseOperator = field(repr=False)
    bath: SparseOperator = field(repr=False)
    parity_op: SparseOperator | None = field(default=None, repr=False)
    block_plus: SparseOperator | None = field(default=None, repr=False)
    block_minus: SparseOperator | None = field(default=None, repr=False)
    steady_block_label: BlockLabel | None = None
    block_index: dict = field(default_factory=dict, repr=False)

    @property
    def gap_block_label(self) -> BlockLabel:
        return "minus" if self.steady_block_label == "plus" else "plus"

    def block(self, label: BlockLabel) -> SparseOperator:
        return self.block_plus if label == "plus" else self.block_minus

    @property
    def steady_block(self) -> SparseOperator:
        return self.block(self.steady_block_label)

    @property
    def gap_block(self) -> SparseOperator:
        return self.block(self.gap_block_label)

    def restrict(self, op: SparseOperator, label: BlockLabel) -> SparseOperator:
        """``V^dagger op V`` for the isometry ``V`` onto a parity block."""
        idx = self.block_index[label]
        return SparseOperator(op.mat[idx][:, idx])


def _assemble(d: DisorderRealization, mu: float, sign_minus: float, sign_bath: float):
    n = d.n_majorana
    h = build_hamiltonian(d, _single_copy_majoranas(n))
    dim1 = h.dim
    eye = sp.identity(dim1, dtype=complex, format="csr")
    h_plus = sp.kron(h.mat, eye, format="csr")
    h_minus = sp.kron(eye, h.mat, format="csr")
    unitary = -1j * h_plus + sign_minus * 1j * (-1) ** (d.q // 2) * h_minus
    bath = bath_generator(n).mat * sign_bath
    full = unitary + mu * bath - (mu * n / 2.0) * sp.identity(dim1 * dim1, dtype=complex, format="csr")
    return h, SparseOperator(full), SparseOperator(unitary), SparseOperator(bath, hermitian_hint=True)


def build_liouvillian(d: DisorderRealization, mu: float, decompose: bool = True) -> LiouvillianBundle:
    """Assemble the vectorized generator for realization ``d`` at bath
    coupling ``mu`` and (by default) split it into parity blocks."""
    if not np.isfinite(mu) or mu < 0:
        raise InvalidArgumentError(f"mu must be a finite non-negative number, got {mu}")
    if d.n_majorana > MAX_ASSEMBLED_N:
        raise ResourceLimitError(
            f"N={d.n_majorana} exceeds the sparse assembly limit {MAX_ASSEMBLED_N}; "
            "use GeneratorOperator for matrix-free products"
        )
    verify_conventions()
    h, full, unitary, bath = _assemble(d, float(mu), 1.0, 1.0)
    bundle = LiouvillianBundle(
        L=full, H=h, mu=float(mu), n_majorana=d.n_majorana, q=d.q, seed=d.seed,
        unitary_part=unitary, bath=bath,
    )
    return parity_decompose(bundle) if decompose else bundle


@functools.lru_cache(maxsize=8)
def parity_operator(n: int) -> SparseOperator:
    """Product of all ``2N`` Majoranas, rescaled and phased so that it is
    Hermitian and squares to one."""
    chi = doubled_majoranas(n)
    prod = chi[0].mat
    for op in chi.ops[1:]:
        prod = prod @ op.mat
    prod = prod * (2.0 ** n)
    eye = sp.identity(chi.dim, dtype=complex, format="csr")
    for k in range(4):
        cand = prod * (1j ** k)
        herm = abs(cand - cand.conj().T).max() if (cand - cand.conj().T).nnz else 0.0
        sq = cand @ cand - eye
        sq_err = abs(sq).max() if sq.nnz else 0.0
        if herm < 1e-12 and sq_err < 1e-12:
            return SparseOperator(cand, hermitian_hint=True)
    raise ConsistencyError("no phase makes the Majorana product a Hermitian involution")


def parity_decompose(b: LiouvillianBundle) -> LiouvillianBundle:
    """Split ``b.L`` into the +1 and -1 eigenspaces of the parity operator."""
    n = b.n_majorana
    par = parity_operator(n)
    comm = b.L.mat @ par.mat - par.mat @ b.L.mat
    err = abs(comm).max() if comm.nnz else 0.0
    if err > COMMUTATION_TOL:
        raise ConsistencyError(f"[L, P] = {err:.3e} exceeds {COMMUTATION_TOL}")
    diag = par.mat.diagonal()
    if par.nnz != par.dim or np.abs(np.abs(diag) - 1).max() > 1e-12:
        raise ConsistencyError("parity operator is not diagonal in the qubit basis")
    # the qubit basis diagonalizes P, so the isometries are column selections
    index = {
        "plus": np.flatnonzero(diag.real > 0),
        "minus": np.flatnonzero(diag.real < 0),
    }
    blocks = {lab: SparseOperator(b.L.mat[idx][:, idx]) for lab, idx in index.items()}
    steady = vectorized_identity(n)
    overlap_plus = np.linalg.norm(steady[index["plus"]])
    label: BlockLabel = "plus" if overlap_plus > 0.5 else "minus"
    return LiouvillianBundle(
        L=b.L, H=b.H, mu=b.mu, n_majorana=n, q=b.q, seed=b.seed,
        unitary_part=b.unitary_part, bath=b.bath, parity_op=par,
        block_plus=blocks["plus"], block_minus=blocks["minus"],
        steady_block_label=label, block_index=index,
    )


def n4_gap_subblock(b: LiouvillianBundle) -> tuple[np.ndarray, np.ndarray]:
    """Two-state sub-block of the gap block for ``N = q = 4``.

    Returns ``(M, basis)`` where ``basis`` holds two orthonormal gap-block
    vectors: ``a`` in the ``-iJ/2`` eigenspace of the unitary part and
    ``b = -(bath) a``. ``M = basis^dagger L basis`` is the 2x2 matrix
    ``[[-iJ/2 - 2mu, -mu], [-mu, iJ/2 - 2mu]]``.
    """
    if b.n_majorana != 4 or b.q != 4:
        raise InvalidArgumentError("the two-state sub-block exists for N = q = 4 only")
    (j,) = tuple(fixed_couplings_values(b))
    lab = b.gap_block_label
    k = b.restrict(b.unitary_part, lab).to_dense()
    bath = b.restrict(b.bath, lab).to_dense()
    lgap = b.gap_block.to_dense()
    dim = k.shape[0]
    if j == 0.0:
        raise InvalidArgumentError("J = 0 has no distinguished sub-block")
    proj = (k - 0.5j * j * np.eye(dim)) / (-1j * j)
    for col in range(dim):
        a = proj[:, col]
        if np.linalg.norm(a) > 1e-6:
            break
    a = a / np.linalg.norm(a)
    bvec = -(bath @ a)
    bvec = bvec / np.linalg.norm(bvec)
    basis = np.column_stack([a, bvec])
    return basis.conj().T @ lgap @ basis, basis


def fixed_couplings_values(b: LiouvillianBundle) -> list[float]:
    """Recover couplings of an N = q = 4 bundle from the Hamiltonian.

    For ``N = q = 4``, ``H = -J psi1 psi2 psi3 psi4`` has eigenvalues
    ``+-J/4``; the sign is read off the overlap with the Majorana product.
    """
    m = _single_copy_majoranas(b.n_majorana)
    prod = (m[0].mat @ m[1].mat @ m[2].mat @ m[3].mat).toarray()
    h = b.H.to_dense()
    # H = -J prod and Tr(prod^dag prod) = dim/16
    j = -np.vdot(prod, h) / (np.vdot(prod, prod))
    return [float(j.real)]


class GeneratorOperator(spla.LinearOperator):
    """Matrix-free action of one parity block of the generator.

    Vectors of the doubled space are reshaped to ``d x d`` matrices ``V``
    (row index = ``+`` copy), on which

        L(V) = -i H V + i s V H^T + i mu sum_i (psi_i G) V psi_i^T - mu N/2 V,

    with ``G`` the single-copy chirality string and ``s = (-1)^(q/2)``.
    Single-copy parity splits ``V`` into four quadrants; a block of total
    parity keeps either the diagonal or the off-diagonal pair.
    """

    def __init__(self, d: DisorderRealization, mu: float, label: BlockLabel):
        if mu < 0:
            raise InvalidArgumentError("mu must be non-negative")
        n = d.n_majorana
        m = _single_copy_majoranas(n)
        h = build_hamiltonian(d, m).mat.toarray()
        dim1 = h.shape[0]
        pop = np.array([bin(i).count("1") & 1 for i in range(dim1)])
        even, odd = np.flatnonzero(pop == 0), np.flatnonzero(pop == 1)
        self._even, self._odd = even, odd
        half = dim1 // 2
        self.mu = float(mu)
        self.n = n
        gamma = sp.diags(np.where(pop == 0, 1.0, -1.0).astype(complex))
        s = (-1) ** (d.q // 2)
        # total parity of basis state (r1, r2) is pop(r1) xor pop(r2); P = (-1)^(N/2) Z...Z
        sign = (-1) ** (n // 2)
        plus_is_diagonal = sign > 0
        self.diagonal_quadrants = (label == "plus") == plus_is_diagonal
        if self.diagonal_quadrants:
            rows = (even, odd)
            cols = (even, odd)
        else:
            rows = (even, odd)
            cols = (odd, even)
        self._rows, self._cols = rows, cols
        self._h_rows = [h[np.ix_(r, r)] for r in rows]
        self._ht_cols = [s * h[np.ix_(c, c)].T for c in cols]
        # (psi_i G) couples rows[0] <-> rows[1]; psi_i^T couples cols[0] <-> cols[1]
        self._terms = []
        for op in m.ops:
            left = (op.mat @ gamma).tocsr()
            right_t = op.mat.T.tocsr()
            self._terms.append((
                left[rows[0]][:, rows[1]], left[rows[1]][:, rows[0]],
                right_t[cols[1]][:, cols[0]], right_t[cols[0]][:, cols[1]],
            ))
        self._half = half
        dim = 2 * half * half
        super().__init__(dtype=complex, shape=(dim, dim))

    def pack_indices(self) -> np.ndarray:
        """Doubled-space basis index of each packed coordinate."""
        dim1 = 2 * self._half
        out = []
        for r, c in zip(self._rows, self._cols):
            out.append((r[:, None] * dim1 + c[None, :]).ravel())
        return np.concatenate(out)

    def _matvec(self, x):
        x = np.asarray(x, dtype=complex).reshape(-1)
        h2 = self._half * self._half
        v0 = x[:h2].reshape(self._half, self._half)
        v1 = x[h2:].reshape(self._half, self._half)
        out0 = -1j * (self._h_rows[0] @ v0) + 1j * (v0 @ self._ht_cols[0])
        out1 = -1j * (self._h_rows[1] @ v1) + 1j * (v1 @ self._ht_cols[1])
        out0 -= (self.mu * self.n / 2.0) * v0
        out1 -= (self.mu * self.n / 2.0) * v1
        if self.mu:
            acc0 = np.zeros_like(v0)
            acc1 = np.zeros_like(v1)
            for l01, l10, rt10, rt01 in self._terms:
                acc0 += l01 @ (rt10.T @ v1.T).T
                acc1 += l10 @ (rt01.T @ v0.T).T
            out0 += 1j * self.mu * acc0
            out1 += 1j * self.mu * acc1
        return np.concatenate([out0.ravel(), out1.ravel()])


@functools.lru_cache(maxsize=1)
def verify_conventions() -> bool:
    """Self-test of the sign conventions of the generator.

    Requires, at ``N = q = 4`` with a fixed coupling and ``mu > 0``: a single
    zero eigenvalue whose eigenvector is the vectorized identity, a
    vanishing left action on the vectorized identity, and the closed-form
    two-state sub-block of the gap block.
    """
    j, mu = 0.7, 0.23
    d = fixed_disorder(4, 4, j)
    _, full, unitary, bath = _assemble(d, mu, 1.0, 1.0)
    dense = full.to_dense()
    ev = np.linalg.eigvals(dense)
    zeros = int(np.sum(np.abs(ev) < 1e-9))
    ident = vectorized_identity(4)
    right = np.linalg.norm(dense @ ident)
    left = np.linalg.norm(ident.conj() @ dense)
    if zeros != 1 or right > 1e-9 or left > 1e-9:
        raise ConsistencyError(
            f"convention self-test failed: {zeros} zero modes, |L I| = {right:.2e}, |I L| = {left:.2e}"
        )
    bundle = parity_decompose(LiouvillianBundle(
        L=full, H=build_hamiltonian(d, _single_copy_majoranas(4)), mu=mu, n_majorana=4, q=4,
        seed=None, unitary_part=unitary, bath=bath,
    ))
    got, _ = n4_gap_subblock(bundle)
    want = n4_closed_form_block(j, mu)
    if np.abs(got - want).max() > 1e-12:
        raise ConsistencyError(f"two-state sub-block mismatch:\n{got}\nvs\n{want}")
    return True


def n4_closed_form_block(j: float, mu: float) -> np.ndarray:
    return np.array([[-0.5j * j - 2 * mu, -mu], [-mu, 0.5j * j - 2 * mu]])
