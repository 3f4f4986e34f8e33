"""Spectra of the vectorized generator and the dissipative gap.

Small blocks are diagonalized densely. Eigenvalues of larger assembled
blocks near a chosen point come from shift-invert Arnoldi with a sparse LU
factorization of ``L - sigma``. The gap of a large block is its eigenvalue
of largest real part, found by Arnoldi on the assembled block or, beyond
the assembly limit, through the matrix-free
:class:`~lindblad_syk.model.GeneratorOperator`.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, InvalidArgumentError, ResourceLimitError
from .majorana import SparseOperator
from .model import (
    BlockLabel,
    DisorderRealization,
    GeneratorOperator,
    build_liouvillian,
    vectorized_identity,
)

log = logging.getLogger(__name__)

DENSE_LIMIT = 4096
RESIDUAL_TOL = 1e-8
PAIRING_TOL = 1e-8
NEAR_DEFECTIVE_D = 1e-6
# above this block size the gap alone is cheaper by Arnoldi than by full diagonalization
GAP_DENSE_LIMIT = 1024

Classification = Literal["real", "complex_pair_member"]


@dataclass(frozen=True)
class SpectrumResult:
    """Eigenvalues of one block, sorted by ``|Re|`` then ``Im``.

    ``eigenvectors`` (when present) holds unit-norm right eigenvectors as
    columns in the same order. ``warnings`` records non-fatal findings
    such as unpaired complex eigenvalues or near-defective pairs.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None = field(default=None, repr=False)
    block_label: str | None = None
    method: Literal["dense", "krylov_shift_invert", "arnoldi_largest_real"] = "dense"
    mu: float | None = None
    realization_id: int | None = None
    classification: tuple | None = None
    residuals: np.ndarray | None = field(default=None, repr=False)
    warnings: tuple = ()

    def __len__(self) -> int:
        return len(self.eigenvalues)


@dataclass(frozen=True)
class GapValue:
    gamma0: float
    mu: float | None
    n_total: int | None
    realization_id: int | None


def _order(vals: np.ndarray) -> np.ndarray:
    # round away last-bit noise so ties in |Re| are broken by Im deterministically
    key_re = np.round(np.abs(vals.real), 12)
    return np.lexsort((vals.imag, key_re))


def _sorted_result(vals, vecs, **kw) -> SpectrumResult:
    order = _order(vals)
    vals = np.asarray(vals)[order]
    if vecs is not None:
        vecs = vecs[:, order]
        vecs = vecs / np.linalg.norm(vecs, axis=0)
    return SpectrumResult(vals, vecs, **kw)


def _as_matrix(block):
    if isinstance(block, SparseOperator):
        return block.mat
    if sp.issparse(block):
        return block.tocsr()
    arr = np.asarray(block)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise InvalidArgumentError(f"block must be square, got shape {arr.shape}")
    return arr


def dense_spectrum(
    block,
    want_vectors: bool = False,
    dense_limit: int = DENSE_LIMIT,
    block_label: str | None = None,
    mu: float | None = None,
    realization_id: int | None = None,
) -> SpectrumResult:
    """All eigenvalues (and optionally right eigenvectors) of a block."""
    mat = _as_matrix(block)
    dim = mat.shape[0]
    if dim > dense_limit:
        raise ResourceLimitError(f"block dimension {dim} exceeds the dense limit {dense_limit}")
    arr = mat.toarray() if sp.issparse(mat) else np.asarray(mat, dtype=complex)
    if want_vectors:
        vals, vecs = np.linalg.eig(arr)
        res = np.linalg.norm(arr @ vecs - vecs * vals, axis=0)
    else:
        vals, vecs, res = np.linalg.eigvals(arr), None, None
    out = _sorted_result(vals, vecs, block_label=block_label, method="dense", mu=mu,
                         realization_id=realization_id)
    if res is not None:
        out = replace(out, residuals=res[_order(vals)])
    return out


def krylov_near_zero(
    block,
    k: int,
    shift: complex = 0.0,
    tol: float = RESIDUAL_TOL,
    maxiter: int | None = None,
    block_label: str | None = None,
    mu: float | None = None,
    realization_id: int | None = None,
) -> SpectrumResult:
    """The ``k`` eigenvalues nearest ``shift`` by shift-invert Arnoldi.

    ``(L - shift)`` is factorized once with sparse LU. Each returned pair
    satisfies ``|L v - lambda v| < tol``; otherwise a
    :class:`ConvergenceError` carries the worst residual. For ``k`` at or
    beyond ``dim - 1`` the full dense spectrum is returned.
    """
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    mat = _as_matrix(block)
    mat = sp.csc_matrix(mat, dtype=complex)
    dim = mat.shape[0]
    kw = dict(block_label=block_label, mu=mu, realization_id=realization_id)
    if k >= dim - 1:
        return dense_spectrum(mat, want_vectors=True, dense_limit=max(dim, DENSE_LIMIT), **kw)
    lu = spla.splu(mat - shift * sp.identity(dim, dtype=complex, format="csc"))
    op = spla.LinearOperator((dim, dim), matvec=lu.solve, dtype=complex)
    # ARPACK's tolerance is relative to the (inverted) Ritz values; ask for more
    # than the residual bound needs and check the bound explicitly
    rng = np.random.default_rng(0)
    v0 = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    ncv = min(dim, max(2 * k + 1, 20))
    try:
        theta, vecs = spla.eigs(op, k=k, which="LM", v0=v0, ncv=ncv, tol=tol * 1e-3,
                                maxiter=maxiter)
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(
            f"shift-invert Arnoldi found {len(exc.eigenvalues)} of {k} eigenvalues",
            best_residual=float("inf"),
        ) from exc
    vals = shift + 1.0 / theta
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    res = np.linalg.norm(mat @ vecs - vecs * vals, axis=0)
    if res.max() >= tol:
        raise ConvergenceError(f"eigenpair residual {res.max():.2e} above {tol:.0e}",
                               best_residual=float(res.max()))
    out = _sorted_result(vals, vecs, method="krylov_shift_invert", **kw)
    return replace(out, residuals=res[_order(vals)])


def steady_label_matrix_free(n: int) -> BlockLabel:
    """Parity block containing the vectorized identity, without assembling."""
    ident = vectorized_identity(n)
    # any realization gives the same block structure
    from .model import sample_disorder

    d = sample_disorder(n, 4 if n >= 4 else 2, 0)
    plus_idx = GeneratorOperator(d, 0.0, "plus").pack_indices()
    weight = np.linalg.norm(ident[plus_idx])
    return "plus" if weight > 0.5 else "minus"


def largest_real_eigs(
    op: spla.LinearOperator,
    k: int = 2,
    tol: float = 1e-10,
    ncv: int | None = None,
    maxiter: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of largest real part by implicitly restarted Arnoldi.

    Returns eigenvalues sorted by decreasing real part and their unit
    right eigenvectors, with residuals checked against ``RESIDUAL_TOL``.
    """
    dim = op.shape[0]
    rng = np.random.default_rng(0)
    v0 = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    # a wide Krylov space pays off: the right edge of the spectrum is crowded at small mu
    ncv = ncv or min(dim, max(4 * k, 80))
    try:
        vals, vecs = spla.eigs(op, k=k, which="LR", v0=v0, ncv=ncv, tol=tol, maxiter=maxiter)
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(
            f"Arnoldi found {len(exc.eigenvalues)} of {k} eigenvalues", best_residual=float("inf")
        ) from exc
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    res = np.linalg.norm(op.matmat(vecs) - vecs * vals, axis=0)
    order = np.argsort(-vals.real, kind="stable")
    return vals[order], vecs[:, order], res[order]


def gap_matrix_free(d: DisorderRealization, mu: float, k: int = 2, tol: float = 1e-10) -> "GapValue":
    """Dissipative gap of a realization too large to assemble.

    The gap block of the generator has ``Re lambda < 0`` throughout, so
    ``Gamma0`` is minus the largest real part.
    """
    if mu <= 0:
        raise InvalidArgumentError("the matrix-free gap needs mu > 0")
    steady = steady_label_matrix_free(d.n_majorana)
    gap_label: BlockLabel = "minus" if steady == "plus" else "plus"
    op = GeneratorOperator(d, mu, gap_label)
    vals, _, res = largest_real_eigs(op, k=k, tol=tol)
    if res[0] >= RESIDUAL_TOL:
        raise ConvergenceError(f"gap eigenpair residual {res[0]:.2e}", best_residual=float(res[0]))
    return GapValue(float(-vals[0].real), float(mu), 2 * d.n_majorana, d.seed)


def dissipative_gap(s: SpectrumResult, steady_block: bool = False, n_total: int | None = None) -> GapValue:
    """``Gamma0 = min |Re lambda|`` over a gap-block spectrum."""
    if steady_block:
        raise InvalidArgumentError("the steady block always contains 0; pass the gap block")
    if len(s.eigenvalues) == 0:
        raise InvalidArgumentError("empty spectrum")
    return GapValue(float(np.abs(s.eigenvalues.real).min()), s.mu, n_total, s.realization_id)


def gap_of_realization(d: DisorderRealization, mu: float, method: str = "auto") -> GapValue:
    """``Gamma0`` for one realization: dense for small blocks, Arnoldi on the
    assembled block beyond the dense limit, matrix-free beyond that."""
    from .model import MAX_ASSEMBLED_N

    n = d.n_majorana
    block_dim = 2 ** (n - 1)
    if method == "auto":
        if block_dim <= GAP_DENSE_LIMIT:
            method = "dense"
        elif n <= MAX_ASSEMBLED_N:
            method = "krylov"
        else:
            method = "matrix_free"
    if method == "matrix_free":
        return gap_matrix_free(d, mu)
    bundle = build_liouvillian(d, mu)
    if method == "dense":
        s = dense_spectrum(bundle.gap_block, mu=mu, realization_id=d.seed)
    elif method == "krylov":
        # the gap is set by the largest real part, not by the smallest |lambda|
        op = spla.aslinearoperator(bundle.gap_block.mat)
        vals, _, res = largest_real_eigs(op)
        if res[0] >= RESIDUAL_TOL:
            raise ConvergenceError(f"gap eigenpair residual {res[0]:.2e}", best_residual=float(res[0]))
        return GapValue(float(-vals[0].real), float(mu), 2 * n, d.seed)
    else:
        raise InvalidArgumentError(f"unknown method {method!r}")
    return dissipative_gap(s, n_total=2 * n)


def eigenvector_distance(v1, v2) -> float:
    """``D = 1 - |<v1|v2>|`` for unit vectors (clipped to ``[0, 1]``)."""
    v1 = np.asarray(v1, dtype=complex).ravel()
    v2 = np.asarray(v2, dtype=complex).ravel()
    if v1.shape != v2.shape:
        raise InvalidArgumentError(f"dimension mismatch: {v1.size} vs {v2.size}")
    for v in (v1, v2):
        if abs(np.linalg.norm(v) - 1.0) > 1e-8:
            raise InvalidArgumentError("vectors must be unit-normalized")
    return float(np.clip(1.0 - abs(np.vdot(v1, v2)), 0.0, 1.0))


def subspace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """``1 - cos`` of the largest principal angle between two subspaces.

    Reduces to :func:`eigenvector_distance` for single vectors; used when a
    coalescing pair is itself degenerate with another pair.
    """
    qa, _ = np.linalg.qr(np.atleast_2d(np.asarray(a, dtype=complex).T).T)
    qb, _ = np.linalg.qr(np.atleast_2d(np.asarray(b, dtype=complex).T).T)
    sv = np.linalg.svd(qa.conj().T @ qb, compute_uv=False)
    return float(np.clip(1.0 - sv.min(), 0.0, 1.0))


def spectral_scale(s: SpectrumResult) -> float:
    return float(np.abs(s.eigenvalues).max()) if len(s.eigenvalues) else 0.0


def classify_real(s: SpectrumResult, eps_im: float | None = None,
                  pairing_tol: float = PAIRING_TOL) -> SpectrumResult:
    """Label each eigenvalue ``real`` (``|Im| < eps_im``) or
    ``complex_pair_member``.

    ``eps_im`` defaults to ``1e-8`` times the largest ``|lambda|``. Complex
    eigenvalues without a conjugate partner within ``pairing_tol`` (scaled
    the same way) are reported in ``warnings``. Pairs whose eigenvectors
    are nearly parallel (``D < 1e-6``) are flagged as near-defective.
    """
    vals = s.eigenvalues
    if len(vals) == 0:
        raise InvalidArgumentError("no eigenvalues to classify")
    scale = max(spectral_scale(s), 1.0)
    eps = 1e-8 * scale if eps_im is None else eps_im
    is_real = np.abs(vals.imag) < eps
    labels = tuple("real" if r else "complex_pair_member" for r in is_real)
    warnings = list(s.warnings)
    cplx = vals[~is_real]
    if cplx.size:
        dist = np.abs(cplx[:, None] - cplx.conj()[None, :]).min(axis=1)
        unpaired = int(np.sum(dist > pairing_tol * scale))
        if unpaired:
            warnings.append(f"{unpaired} complex eigenvalues without a conjugate partner")
    if s.eigenvectors is not None and len(vals) > 1:
        vecs = s.eigenvectors
        gram = np.abs(vecs.conj().T @ vecs)
        np.fill_diagonal(gram, 0.0)
        close = np.argwhere(1.0 - gram < NEAR_DEFECTIVE_D)
        pairs = sorted({tuple(sorted(p)) for p in close.tolist()})
        if pairs:
            cond = float(np.linalg.cond(vecs))
            warnings.append(
                f"near-defective: {len(pairs)} eigenvector pairs with D < {NEAR_DEFECTIVE_D:g}, "
                f"eigenvector matrix condition number {cond:.3g}"
            )
    return replace(s, classification=labels, warnings=tuple(warnings))


def count_real(s: SpectrumResult, eps_im: float | None = None) -> int:
    c = classify_real(s, eps_im)
    return sum(lab == "real" for lab in c.classification)


def spectra_to_csv(results: Sequence[SpectrumResult], eps_im: float | None = None) -> str:
    """CSV with columns ``mu, seed, block, re, im, classification``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mu", "seed", "block", "re", "im", "classification"])
    for s in results:
        c = s if s.classification is not None else classify_real(s, eps_im)
        for lam, lab in zip(c.eigenvalues, c.classification):
            w.writerow([repr(float(c.mu)) if c.mu is not None else "",
                        "" if c.realization_id is None else c.realization_id,
                        c.block_label or "", f"{lam.real:.15e}", f"{lam.imag:.15e}", lab])
    return buf.getvalue()
