"""Eigenvalue branches in mu and exceptional points of the gap block.

Branches are continued between consecutive couplings by optimal
(Hungarian) assignment in the complex plane, with local step halving
where an assignment is both long and ambiguous. Degenerate branches that
coincide along the whole sweep are merged into one trace carrying a
multiplicity. An exceptional point is a coupling where a complex
conjugate pair reaches the real axis and its eigenvectors coalesce.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import schur
from scipy.optimize import linear_sum_assignment

from .errors import InvalidArgumentError, NoEPFoundError
from .majorana import SparseOperator
from .model import DisorderRealization, build_liouvillian
from .spectral import DENSE_LIMIT, krylov_near_zero, subspace_distance

log = logging.getLogger(__name__)

BlockFamily = Callable[[float], object]

COALESCENCE_D = 1e-4
EP_WIDTH = 1e-6


def gap_block_family(d: DisorderRealization) -> BlockFamily:
    """``mu -> gap block`` of the generator for one realization.

    The block is affine in ``mu``; its two parts are assembled once.
    """
    bundle = build_liouvillian(d, 0.0)
    lab = bundle.gap_block_label
    unitary = bundle.restrict(bundle.unitary_part, lab).mat
    bath = bundle.restrict(bundle.bath, lab).mat
    eye = sp.identity(unitary.shape[0], dtype=complex, format="csr")
    n = d.n_majorana

    def family(mu: float):
        if mu < 0:
            raise InvalidArgumentError(f"mu must be non-negative, got {mu}")
        return SparseOperator(unitary + mu * bath - (mu * n / 2.0) * eye)

    family.seed = d.seed
    return family


def matrix_family(fn: Callable[[float], np.ndarray]) -> BlockFamily:
    """Wrap a function returning a dense matrix (synthetic families)."""
    return fn


def _dense(block) -> np.ndarray:
    if isinstance(block, SparseOperator):
        return block.to_dense()
    if hasattr(block, "toarray"):
        return block.toarray()
    return np.asarray(block, dtype=complex)


def _eig(family: BlockFamily, mu: float, k: int | None, want_vectors: bool = False):
    block = family(mu)
    dim = block.shape[0] if hasattr(block, "shape") else block.dim
    if dim <= DENSE_LIMIT:
        arr = _dense(block)
        if want_vectors:
            vals, vecs = np.linalg.eig(arr)
        else:
            vals, vecs = np.linalg.eigvals(arr), None
        if k is not None and k < dim:
            keep = np.argsort(np.abs(vals), kind="stable")[:k]
            vals = vals[keep]
            vecs = None if vecs is None else vecs[:, keep]
        return vals, vecs
    if k is None:
        raise InvalidArgumentError(f"block of dimension {dim} needs a finite k")
    s = krylov_near_zero(block, k)
    return s.eigenvalues, s.eigenvectors


@dataclass
class BranchTrace:
    """One eigenvalue followed in ``mu``.

    ``multiplicity`` counts coinciding copies merged into this trace.
    ``partner_id`` is the conjugate partner at the last complex sample and
    ``became_real_at`` the first sample at which the branch is real after
    having been complex.
    """

    branch_id: int
    mu_grid: list
    values: list
    partner_id: int | None = None
    became_real_at: float | None = None
    multiplicity: int = 1

    def value_at(self, mu: float) -> complex | None:
        for m, v in zip(self.mu_grid, self.values):
            if abs(m - mu) <= 1e-12 * max(1.0, abs(mu)):
                return v
        return None

    def is_real(self, eps_im: float) -> np.ndarray:
        return np.abs(np.imag(self.values)) < eps_im


@dataclass
class EPEvent:
    mu_ep: float
    lambda_ep: complex
    branch_ids: tuple
    d_trace: list
    refinement_width: float
    multiplicity: int = 1
    d_monotone: bool = True

    def to_record(self, seed=None, block: str = "gap") -> dict:
        return {
            "seed": seed,
            "block": block,
            "mu_ep": self.mu_ep,
            "lambda_ep": [self.lambda_ep.real, self.lambda_ep.imag],
            "branch_ids": list(self.branch_ids),
            "multiplicity": self.multiplicity,
            "refinement_width": self.refinement_width,
            "d_trace": [[m, dd] for m, dd in self.d_trace],
        }


@dataclass
class SweepResult:
    traces: list
    mu_grid: list
    sampled_mu: list
    eps_im: float
    warnings: list = field(default_factory=list)


def _match(prev: np.ndarray, cur: np.ndarray):
    cost = np.abs(prev[:, None] - cur[None, :])
    rows, cols = linear_sum_assignment(cost)
    return rows, cols, cost


def _ambiguous(cost: np.ndarray, vals_b: np.ndarray, r: int, c: int, tie_tol: float) -> bool:
    """A match is ambiguous if a distinct eigenvalue (not degenerate with
    the chosen one) lies within twice the matched distance."""
    distinct = np.abs(vals_b - vals_b[c]) > tie_tol
    return bool(np.any(cost[r, distinct] < 2.0 * cost[r, c]))


def _clusters(vals: np.ndarray, tol: float):
    """Group coinciding eigenvalues; returns (centres, multiplicities, labels)."""
    order = np.lexsort((vals.imag, vals.real))
    labels = np.full(vals.size, -1)
    centres, mults = [], []
    for i in order:
        if labels[i] >= 0:
            continue
        members = np.flatnonzero((np.abs(vals - vals[i]) < tol) & (labels < 0))
        labels[members] = len(centres)
        centres.append(vals[members].mean())
        mults.append(members.size)
    return np.array(centres), np.array(mults), labels


def sweep_branches(
    family: BlockFamily | DisorderRealization,
    mu_grid: Sequence[float],
    k: int | None = None,
    radius_factor: float = 3.0,
    min_step: float = 1e-5,
    eps_im: float | None = None,
    cluster_tol: float = 1e-7,
) -> SweepResult:
    """Follow the ``k`` eigenvalues nearest zero (all when ``k`` is None)
    across an ascending ``mu`` grid.

    Coinciding eigenvalues (within ``cluster_tol`` times the spectral
    scale) form one branch with a multiplicity. Copies are matched between
    samples by optimal assignment; the branches passing through a cluster
    are handed on to the clusters its copies flow into, in a fixed order,
    which keeps the result deterministic when branches meet (at an
    exceptional point sampled exactly). A step is refined by halving when
    some copy moves further than ``radius_factor`` times the median motion
    of the previous step and its assignment is ambiguous (a distinct
    eigenvalue within twice the distance). Below ``min_step`` the step is
    accepted with a warning.
    """
    if isinstance(family, DisorderRealization):
        family = gap_block_family(family)
    mus = [float(m) for m in mu_grid]
    if len(mus) < 2 or any(b <= a for a, b in zip(mus, mus[1:])):
        raise InvalidArgumentError("mu grid must be ascending with at least two points")
    warnings: list[str] = []
    vals0, _ = _eig(family, mus[0], k)
    scale = max(1.0, float(np.abs(vals0).max()))
    tol = cluster_tol * scale
    samples: list[tuple[float, np.ndarray]] = [(mus[0], np.asarray(vals0))]
    prev_motion = None

    def advance(mu_a, cur_a, mu_b):
        nonlocal prev_motion
        vals_b, _ = _eig(family, mu_b, k)
        rows, cols, cost = _match(cur_a, vals_b)
        dist = cost[rows, cols]
        bad = False
        if prev_motion is not None:
            radius = max(radius_factor * prev_motion, 1e-12 * scale)
            for r, c, dd in zip(rows, cols, dist):
                if dd > radius and _ambiguous(cost, vals_b, r, c, tol):
                    bad = True
                    break
        if bad and (mu_b - mu_a) / 2 >= min_step:
            mid = 0.5 * (mu_a + mu_b)
            cur_mid = advance(mu_a, cur_a, mid)
            return advance(mid, cur_mid, mu_b)
        if bad:
            warnings.append(f"ambiguous matching accepted at mu={mu_b:.6g} (step {mu_b - mu_a:.2e})")
        out = np.empty_like(cur_a)
        out[rows] = vals_b[cols]
        prev_motion = max(float(np.median(dist)) if dist.size else 0.0, 1e-12 * scale)
        samples.append((mu_b, out))
        return out

    current = samples[0][1]
    for a, b in zip(mus, mus[1:]):
        current = advance(a, current, b)

    sampled = [m for m, _ in samples]
    table = np.vstack([v for _, v in samples])  # (n_samples, n_copies), copies aligned
    scale = max(scale, float(np.abs(table).max()))
    eps = 1e-8 * scale if eps_im is None else eps_im
    traces = _traces_from_copies(sampled, table, tol, warnings)
    _assign_partners(traces, eps)
    return SweepResult(traces, mus, sampled, eps, warnings)


def _flows(holders, lab, lab_b) -> dict[int, dict[int, int]]:
    """Number of copies sent from each cluster to each next cluster."""
    out = {}
    for c_prev in holders:
        flow: dict[int, int] = {}
        for cp in np.flatnonzero(lab == c_prev):
            flow[int(lab_b[cp])] = flow.get(int(lab_b[cp]), 0) + 1
        out[c_prev] = flow
    return out


def _regroup_flows(flows, cent_a, cent_b) -> dict[int, dict[int, int]]:
    """Re-route copies inside groups of clusters that all exchange copies.

    When every source cluster of a connected group sends copies to every
    target (degenerate clusters meeting at an exceptional point), the
    copy matching carries no information on which copies belong together;
    filling targets in a fixed order keeps degenerate branches whole
    wherever the multiplicities allow it.
    """
    flows = {a: dict(f) for a, f in flows.items()}
    seen: set = set()
    for start in sorted(flows):
        if start in seen:
            continue
        srcs, tgts, stack = {start}, set(), [("a", start)]
        while stack:
            side, c = stack.pop()
            if side == "a":
                for t in flows[c]:
                    if t not in tgts:
                        tgts.add(t)
                        stack.append(("b", t))
            else:
                for a, f in flows.items():
                    if c in f and a not in srcs:
                        srcs.add(a)
                        stack.append(("a", a))
        seen |= srcs
        if len(srcs) < 2 or len(tgts) < 2 or any(set(flows[a]) != tgts for a in srcs):
            continue
        src_order = sorted(srcs, key=lambda c: (cent_a[c].real, cent_a[c].imag))
        tgt_order = sorted(tgts, key=lambda c: (cent_b[c].real, cent_b[c].imag))
        cap = {t: sum(flows[a][t] for a in srcs) for t in tgt_order}
        for a in src_order:
            need = sum(flows[a].values())
            new: dict[int, int] = {}
            for t in tgt_order:
                take = min(cap[t], need)
                if take:
                    new[t] = take
                    cap[t] -= take
                    need -= take
            flows[a] = new
    return flows


def _traces_from_copies(sampled, table, tol, warnings) -> list[BranchTrace]:
    """Collapse aligned copies into branches with multiplicities."""
    n_s = len(sampled)
    cent, mult, lab = _clusters(table[0], tol)
    # each trace: (values list, multiplicity); clusters hold trace ids in order
    traces: list[tuple[list, int]] = []
    holders: dict[int, list[int]] = {}
    for c in range(len(cent)):
        traces.append(([complex(cent[c])], int(mult[c])))
        holders[c] = [len(traces) - 1]
    for s in range(1, n_s):
        cent_b, mult_b, lab_b = _clusters(table[s], tol)
        new_holders: dict[int, list[int]] = {c: [] for c in range(len(cent_b))}
        flows = _regroup_flows(_flows(holders, lab, lab_b), cent, cent_b)
        for c_prev, tids in holders.items():
            flow = flows[c_prev]
            targets = sorted(flow, key=lambda c: (cent_b[c].real, cent_b[c].imag))
            cap = {c: flow[c] for c in targets}
            for tid in sorted(tids):
                vals, m = traces[tid]
                need = m
                first = True
                for c in targets:
                    if need == 0:
                        break
                    if cap[c] == 0:
                        continue
                    take = min(cap[c], need)
                    cap[c] -= take
                    need -= take
                    if first:
                        traces[tid] = (vals + [complex(cent_b[c])], take)
                        new_holders[c].append(tid)
                        first = False
                    else:
                        # a degeneracy lifted: the remainder becomes its own branch
                        traces.append((vals + [complex(cent_b[c])], take))
                        new_holders[c].append(len(traces) - 1)
                        warnings.append(f"degenerate branch split at mu={sampled[s]:.6g}")
        holders, lab, cent = new_holders, lab_b, cent_b
    return [BranchTrace(i, list(sampled), v, multiplicity=m) for i, (v, m) in enumerate(traces)]


def _assign_partners(traces: list[BranchTrace], eps: float) -> None:
    if not traces:
        return
    vals = np.array([t.values for t in traces])  # (branches, samples)
    mus = traces[0].mu_grid
    for i, tr in enumerate(traces):
        real = np.abs(vals[i].imag) < eps
        partner = None
        for s in range(len(mus)):
            if not real[s]:
                d = np.abs(vals[:, s] - np.conj(vals[i, s]))
                d[i] = np.inf
                partner = int(np.argmin(d))
        tr.partner_id = partner
        for s in range(1, len(mus)):
            if real[s] and not real[s - 1]:
                tr.became_real_at = float(mus[s])


def _pair_near(family, mu, centre, count, want_vectors=False):
    vals, _ = _eig(family, mu, None, False)
    idx = np.argsort(np.abs(vals - centre), kind="stable")[: 2 * count]
    return vals[idx], None


def _pair_distance(family, mu, centre, count) -> tuple[float, complex]:
    """Eigenvector distance of the pair nearest ``centre`` at ``mu``.

    The two members (each ``count``-fold) are separated by the sign of
    their imaginary part, or by real part once real; each spans an
    invariant subspace taken from a reordered Schur form, which stays
    well conditioned for nearly defective and degenerate clusters.
    """
    arr = _dense(family(mu))
    vals = np.linalg.eigvals(arr)
    idx = np.argsort(np.abs(vals - centre), kind="stable")[: 2 * count]
    pair = vals[idx]
    if np.abs(pair.imag).max() > np.abs(pair.real - pair.real.mean()).max():
        order = np.argsort(pair.imag, kind="stable")
    else:
        order = np.argsort(pair.real, kind="stable")
    g1 = pair[order[:count]].mean()
    g2 = pair[order[count:]].mean()
    r = 0.5 * abs(g1 - g2)
    bases = []
    for g in (g1, g2):
        t, z, sdim = schur(arr, output="complex", sort=lambda x, g=g: abs(x - g) < r)
        bases.append(z[:, :sdim])
    if bases[0].shape[1] != count or bases[1].shape[1] != count:
        raise NoEPFoundError(f"pair near {centre:.6g} is not isolated at mu={mu:.6g}")
    return subspace_distance(bases[0], bases[1]), complex(pair.mean())


def locate_ep(
    b1: BranchTrace,
    b2: BranchTrace,
    family: BlockFamily | DisorderRealization,
    eps_im: float | None = None,
    width: float = EP_WIDTH,
    d_threshold: float = COALESCENCE_D,
) -> EPEvent:
    """Refine the coupling where partners ``b1``, ``b2`` meet the real axis.

    Bisects on the squared imaginary part of the pair from fresh
    diagonalizations until the bracket is narrower than ``width``, then
    samples the eigenvector distance on the complex side approaching the
    EP. Raises :class:`NoEPFoundError` if the pair never turns real inside
    the sweep, or if the eigenvectors do not coalesce (``D`` at the
    closest sample above ``d_threshold``): then the pair met the axis
    without being an exceptional point.
    """
    if isinstance(family, DisorderRealization):
        family = gap_block_family(family)
    if b1.mu_grid != b2.mu_grid:
        raise InvalidArgumentError("traces sampled on different grids")
    mus = b1.mu_grid
    v1 = np.array(b1.values)
    v2 = np.array(b2.values)
    scale = max(1.0, float(np.abs(np.concatenate([v1, v2])).max()))
    eps = 1e-8 * scale if eps_im is None else eps_im
    count = b1.multiplicity
    bracket = None
    for s in range(len(mus) - 1):
        cplx_now = abs(v1[s].imag) >= eps and abs(v2[s].imag) >= eps
        real_next = abs(v1[s + 1].imag) < eps and abs(v2[s + 1].imag) < eps
        if cplx_now and real_next:
            bracket = s
            break
    if bracket is None:
        raise NoEPFoundError("imaginary parts do not vanish inside the sweep")

    def pair(mu, want_vectors=False):
        # the pair's centre moves smoothly; interpolate it from the bracket
        lo_mu, hi_mu = mus[bracket], mus[bracket + 1]
        w = (mu - lo_mu) / (hi_mu - lo_mu)
        c_lo = 0.5 * (v1[bracket] + v2[bracket]).real
        c_hi = 0.5 * (v1[bracket + 1] + v2[bracket + 1]).real
        return _pair_near(family, mu, c_lo + w * (c_hi - c_lo), count, want_vectors)

    def im2(mu):
        vals, _ = pair(mu)
        return float(np.max(vals.imag ** 2))

    lo, hi = mus[bracket], mus[bracket + 1]
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if im2(mid) >= eps * eps:
            lo = mid
        else:
            hi = mid
    mu_ep = 0.5 * (lo + hi)
    vals_hi, _ = pair(hi)
    lam = complex(vals_hi.mean().real, vals_hi.imag.mean())

    # eigenvector distance on the complex side, approaching the EP geometrically
    span = mus[bracket + 1] - mus[bracket]
    deltas = []
    dlt = max(span, width)
    while dlt > (mu_ep - lo) * 1.0001:
        deltas.append(dlt)
        dlt /= 10.0
    samples = [mu_ep - dd for dd in deltas if mu_ep - dd >= mus[bracket] - 1e-15] + [lo]
    centre = complex(pair(hi)[0].mean())
    d_trace = []
    for mu in samples:
        dd, centre = _pair_distance(family, mu, centre, count)
        d_trace.append((float(mu), dd))
    ds = [dd for _, dd in d_trace]
    monotone = all(y < x for x, y in zip(ds, ds[1:]))
    if ds[-1] >= d_threshold:
        raise NoEPFoundError(
            f"pair becomes real near mu={mu_ep:.6g} but eigenvectors stay apart (D={ds[-1]:.2e})"
        )
    return EPEvent(mu_ep, lam, (b1.branch_id, b2.branch_id), d_trace, hi - lo, count, monotone)


def _coalescence_trace(family, mu_ep, lo, bound, start, centre, count):
    """``D`` sampled on the complex side at geometrically shrinking distance
    from ``mu_ep`` (not below ``bound``), ending at the bracket end ``lo``."""
    samples = []
    dlt = start
    while mu_ep - dlt < bound - 1e-15 and dlt > 0:
        dlt /= 10.0
    while dlt > (mu_ep - lo) * 1.0001:
        samples.append(mu_ep - dlt)
        dlt /= 10.0
    samples.append(lo)
    out = []
    for mu in samples[::-1]:
        # walk outward from the EP so the pair centre is followed reliably
        dd, centre = _pair_distance(family, mu, centre, count)
        out.append((float(mu), dd))
    return out[::-1]


def find_eps(
    family: BlockFamily | DisorderRealization,
    mu_grid: Sequence[float],
    eps_im: float | None = None,
    width: float = EP_WIDTH,
    d_threshold: float = COALESCENCE_D,
    cluster_tol: float = 1e-7,
) -> tuple[list[EPEvent], list[str]]:
    """Exceptional points from changes in the number of real eigenvalues.

    Grid intervals where the count of real eigenvalues rises are bisected
    until each holds a single event (or the rise is simultaneous to
    ``1e-12``). The eigenvalues that are real at the right end but have no
    real predecessor at the left end are grouped into coalescing pairs,
    each located by bisection on the pair's imaginary part to ``width``
    and kept if its eigenvectors coalesce (``D`` below ``d_threshold`` on
    the final approach). Returns the events and a list of warnings
    (pairs that do not coalesce, intervals where the count drops).
    """
    if isinstance(family, DisorderRealization):
        family = gap_block_family(family)
    mus = [float(m) for m in mu_grid]
    if len(mus) < 2 or any(b <= a for a, b in zip(mus, mus[1:])):
        raise InvalidArgumentError("mu grid must be ascending with at least two points")
    cache: dict = {}

    def spec(mu):
        if mu not in cache:
            cache[mu] = _eig(family, mu, None)[0]
        return cache[mu]

    scale = max(1.0, max(float(np.abs(spec(m)).max()) for m in (mus[0], mus[-1])))
    eps = 1e-8 * scale if eps_im is None else eps_im
    tol = cluster_tol * scale

    def reals(mu):
        v = spec(mu)
        return np.sort(v[np.abs(v.imag) < eps].real)

    warnings: list[str] = []
    elementary = []

    def refine(a, b):
        da, db = reals(a).size, reals(b).size
        if db == da:
            return
        if db - da <= 2 * _max_mult(reals(b), tol) and b - a < 1e-4 or b - a < 1e-12:
            elementary.append((a, b))
            return
        mid = 0.5 * (a + b)
        refine(a, mid)
        refine(mid, b)

    for a, b in zip(mus, mus[1:]):
        refine(a, b)

    events = []
    for a, b in elementary:
        ra, rb = reals(a), reals(b)
        if rb.size < ra.size:
            warnings.append(f"{(ra.size - rb.size) // 2} pair(s) leave the real axis in "
                            f"[{a:.6g}, {b:.6g}]")
            continue
        new = _unmatched(ra, rb)
        for centre, count in _pairs_of(new, tol, warnings, a, b):
            try:
                events.append(_locate_pair(family, a, b, centre, count, eps, width, d_threshold))
            except NoEPFoundError as exc:
                warnings.append(str(exc))
    events.sort(key=lambda e: (e.mu_ep, e.lambda_ep.real))
    return events, warnings


def _max_mult(r: np.ndarray, tol: float) -> int:
    if r.size == 0:
        return 1
    _, mult, _ = _clusters(r.astype(complex), tol)
    return int(mult.max())


def _unmatched(ra: np.ndarray, rb: np.ndarray) -> np.ndarray:
    """Real eigenvalues at the right end without a partner at the left."""
    if ra.size == 0:
        return rb
    cost = np.abs(ra[:, None] - rb[None, :])
    rows, cols = linear_sum_assignment(cost)
    keep = np.ones(rb.size, dtype=bool)
    keep[cols] = False
    return rb[keep]


def _pairs_of(new: np.ndarray, tol: float, warnings, a, b):
    """Group newly real eigenvalues into (centre, multiplicity) pairs.

    Members of a pair that has just split differ by about the square root
    of the distance to its exceptional point, which can fall inside the
    general cluster tolerance; exact degenerate copies agree far more
    closely, so a much tighter tolerance separates the two cases.
    """
    cent, mult, _ = _clusters(new.astype(complex), 1e-3 * tol)
    order = np.argsort(cent.real)
    cent, mult = cent.real[order], mult[order]
    out = []
    i = 0
    while i + 1 < cent.size:
        if mult[i] != mult[i + 1]:
            warnings.append(f"unequal multiplicities among new real eigenvalues in [{a:.6g}, {b:.6g}]")
        out.append((0.5 * (cent[i] + cent[i + 1]), int(min(mult[i], mult[i + 1]))))
        i += 2
    if i < cent.size:
        if mult[i] % 2 == 0:
            # the pair sits exactly at its exceptional point
            out.append((float(cent[i]), int(mult[i] // 2)))
        else:
            warnings.append(f"odd number of new real eigenvalues in [{a:.6g}, {b:.6g}]")
    return out


def _locate_pair(family, a, b, centre, count, eps, width, d_threshold) -> EPEvent:
    state = {"c": complex(centre)}

    def im2(mu):
        vals, _ = _pair_near(family, mu, state["c"], count)
        state["c"] = complex(vals.real.mean())
        return float(np.max(vals.imag ** 2))

    lo, hi = a, b
    im2(hi)
    if im2(a) < eps * eps:
        raise NoEPFoundError(f"pair near {centre:.6g} is already real at mu={a:.6g}")
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if im2(mid) >= eps * eps:
            lo = mid
        else:
            hi = mid
    # pairs with a small splitting scale alpha have D ~ (mu_ep - mu) / alpha;
    # narrow the bracket further until coalescence is resolved
    while True:
        mu_ep = 0.5 * (lo + hi)
        vals_hi, _ = _pair_near(family, hi, state["c"], count)
        lam = complex(vals_hi.real.mean(), vals_hi.imag.mean())
        d_lo, _ = _pair_distance(family, lo, complex(lam.real), count)
        if d_lo < d_threshold or hi - lo < 1e-13:
            break
        for _ in range(4):
            mid = 0.5 * (lo + hi)
            if im2(mid) >= eps * eps:
                lo = mid
            else:
                hi = mid
    d_trace = _coalescence_trace(family, mu_ep, lo, a, max(b - a, width), complex(lam.real), count)
    ds = [d for _, d in d_trace]
    if ds[-1] >= d_threshold:
        raise NoEPFoundError(
            f"pair becomes real near mu={mu_ep:.6g} but eigenvectors stay apart (D={ds[-1]:.2e})"
        )
    monotone = all(y < x for x, y in zip(ds, ds[1:]))
    return EPEvent(mu_ep, lam, (), d_trace, hi - lo, count, monotone)


def detect_eps(sweep: SweepResult, family, **kw) -> list[EPEvent]:
    """Exceptional points over the sweep's grid (see :func:`find_eps`),
    labelled with the ids of the traced branches that take part."""
    if isinstance(family, DisorderRealization):
        family = gap_block_family(family)
    events, warns = find_eps(family, sweep.sampled_mu, eps_im=kw.get("eps_im", sweep.eps_im),
                             width=kw.get("width", EP_WIDTH),
                             d_threshold=kw.get("d_threshold", COALESCENCE_D))
    sweep.warnings.extend(warns)
    for ev in events:
        # the sample after the EP where the pair is already real
        s = next((i for i, m in enumerate(sweep.sampled_mu) if m >= ev.mu_ep), None)
        if s is None:
            continue
        cand = [(abs(t.values[s] - ev.lambda_ep), t.branch_id) for t in sweep.traces
                if abs(t.values[s].imag) < sweep.eps_im and t.became_real_at is not None]
        cand.sort()
        ev.branch_ids = tuple(sorted(bid for _, bid in cand[:2]))
    return events


def n4_oracle_gap(J: float, mu: float) -> float:
    """Closed-form gap at ``N = q = 4``: ``2 mu`` below ``J/2``, then
    ``2 mu - sqrt(mu^2 - (J/2)^2)``."""
    if not J > 0:
        raise InvalidArgumentError(f"J must be positive, got {J}")
    if mu < 0:
        raise InvalidArgumentError(f"mu must be non-negative, got {mu}")
    half = 0.5 * J
    if mu <= half:
        return 2.0 * mu
    return 2.0 * mu - math.sqrt((mu - half) * (mu + half))


def n4_oracle_branches(J: float, mu: float) -> tuple[complex, complex]:
    """``-2 mu +- sqrt(mu^2 - (J/2)^2)`` (upper branch first)."""
    root = np.sqrt(complex((mu - J / 2) * (mu + J / 2)))
    return complex(-2 * mu + root), complex(-2 * mu - root)


@dataclass
class RealCountSummary:
    mu: float
    n_real: int
    n_ep_born: int
    n_intruders: int
    n_real_distinct: int
    n_ep_born_distinct: int = 0
    n_intruders_distinct: int = 0


def count_real_and_intruders(sweep: SweepResult, mu_grid: Sequence[float] | None = None,
                             eps_im: float | None = None) -> list[RealCountSummary]:
    """Per-coupling counts of real eigenvalues.

    ``n_real`` counts eigenvalues with multiplicity; ``n_ep_born`` and
    ``n_intruders`` count eigenvalues on branches that turned real at or
    before ``mu`` and on branches real at every sampled coupling. The
    ``*_distinct`` fields count branches instead.
    """
    eps = sweep.eps_im if eps_im is None else eps_im
    grid = sweep.mu_grid if mu_grid is None else [float(m) for m in mu_grid]
    out = []
    always_real = {t.branch_id: bool(np.all(t.is_real(eps))) for t in sweep.traces}
    for mu in grid:
        n_real = n_born = n_intr = n_dist = d_born = d_intr = 0
        for tr in sweep.traces:
            v = tr.value_at(mu)
            if v is None or abs(v.imag) >= eps:
                continue
            n_real += tr.multiplicity
            n_dist += 1
            if always_real[tr.branch_id]:
                n_intr += tr.multiplicity
                d_intr += 1
            elif tr.became_real_at is not None and tr.became_real_at <= mu + 1e-15:
                n_born += tr.multiplicity
                d_born += 1
        out.append(RealCountSummary(mu, n_real, n_born, n_intr, n_dist, d_born, d_intr))
    return out


def traces_to_csv(sweep: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["branch_id", "mu", "re", "im", "multiplicity", "partner_id", "became_real_at"])
    for tr in sweep.traces:
        for mu, v in zip(tr.mu_grid, tr.values):
            w.writerow([tr.branch_id, repr(mu), f"{v.real:.15e}", f"{v.imag:.15e}", tr.multiplicity,
                        "" if tr.partner_id is None else tr.partner_id,
                        "" if tr.became_real_at is None else repr(tr.became_real_at)])
    return buf.getvalue()


def events_to_json(events: Sequence[EPEvent], seed=None, block: str = "gap") -> str:
    return json.dumps([e.to_record(seed, block) for e in events], indent=2, sort_keys=True)
