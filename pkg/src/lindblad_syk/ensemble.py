"""Disorder ensembles of the dissipative gap and finite-size scaling.

Each ``(N, sample)`` pair gets one disorder realization shared by every
``mu`` in the grid, so the gap curve of a sample is a smooth function of
``mu`` and adding couplings never changes existing samples. Completed
tasks are appended to a JSON-lines journal; rerunning with the same
journal skips them.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConsistencyError, InvalidArgumentError, LindbladSYKError
from .model import sample_disorder
from .spectral import GapValue, gap_of_realization

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnsembleSpec:
    """``samples`` is a count per point, or a mapping from ``N`` to a count."""

    n_list: tuple
    mu_list: tuple
    samples: int | dict = 1
    base_seed: int = 0
    q: int = 4

    def __post_init__(self):
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        object.__setattr__(self, "mu_list", tuple(float(m) for m in self.mu_list))
        if not self.n_list or not self.mu_list:
            raise InvalidArgumentError("n_list and mu_list must be non-empty")
        if any(n < 2 or n % 2 for n in self.n_list):
            raise InvalidArgumentError(f"N values must be even, got {self.n_list}")
        if any(not (math.isfinite(m) and m >= 0) for m in self.mu_list):
            raise InvalidArgumentError("mu values must be finite and non-negative")
        for n in self.n_list:
            if self.samples_for(n) < 1:
                raise InvalidArgumentError(f"need at least one sample at N={n}")

    def samples_for(self, n: int) -> int:
        if isinstance(self.samples, dict):
            if n not in self.samples:
                raise InvalidArgumentError(f"no sample count given for N={n}")
            return int(self.samples[n])
        return int(self.samples)


def sample_seed(base_seed: int, n: int, sample: int) -> int:
    """Stable 63-bit seed from ``(base_seed, N, sample)`` (BLAKE2b)."""
    h = hashlib.blake2b(struct.pack("<qqq", base_seed, n, sample), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


@dataclass(frozen=True)
class Task:
    n: int
    mu: float
    sample: int
    seed: int

    @property
    def key(self) -> tuple:
        return (self.n, repr(self.mu), self.sample, self.seed)


def tasks(spec: EnsembleSpec) -> list[Task]:
    out = []
    for n in spec.n_list:
        for s in range(spec.samples_for(n)):
            seed = sample_seed(spec.base_seed, n, s)
            for mu in spec.mu_list:
                out.append(Task(n, mu, s, seed))
    return out


@dataclass
class EnsembleResult:
    values: list
    failures: list = field(default_factory=list)

    def table(self) -> dict:
        """``{(N, mu): array of gamma0}`` over successful samples."""
        out: dict = {}
        for v in self.values:
            out.setdefault((v.n_total // 2, v.mu), []).append(v.gamma0)
        return {k: np.array(v) for k, v in out.items()}


def _run_task(args) -> dict:
    task, q, gap_fn = args
    rec = {"n": task.n, "mu": task.mu, "sample": task.sample, "seed": task.seed}
    try:
        d = sample_disorder(task.n, q, task.seed)
        g = gap_fn(d, task.mu)
        rec.update(status="ok", gamma0=g.gamma0)
    except LindbladSYKError as exc:
        rec.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return rec


def read_journal(path: str) -> list[dict]:
    """Records of a journal. A truncated final line (interrupted write) is
    dropped with a warning; any other malformed line is an error."""
    if not os.path.exists(path):
        return []
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    lines = text.split("\n")
    records = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            if not {"n", "mu", "sample", "seed", "status"} <= set(rec):
                raise ValueError("missing fields")
        except ValueError as exc:
            if i == len(lines) - 1:
                log.warning("dropping truncated last journal line")
                continue
            raise ConsistencyError(f"corrupt journal {path}, line {i + 1}: {exc}") from exc
        records.append(rec)
    return records


def _key(rec: dict) -> tuple:
    return (int(rec["n"]), repr(float(rec["mu"])), int(rec["sample"]), int(rec["seed"]))


def run_ensemble(
    spec: EnsembleSpec,
    journal: str | None = None,
    gap_fn: Callable = gap_of_realization,
    workers: int = 1,
) -> EnsembleResult:
    """One gap value per ``(N, mu, sample)``.

    Failures (non-convergence, resource limits) are recorded per task and
    returned without aborting the ensemble. With ``journal`` set, tasks
    already recorded there are not recomputed and new records are appended
    as they complete.
    """
    done: dict = {}
    if journal is not None:
        if os.path.exists(journal):
            with open(journal, "rb") as fh:
                raw = fh.read()
            if raw and not raw.endswith(b"\n"):
                # cut an interrupted write so appends start on a fresh line
                with open(journal, "wb") as fh:
                    fh.write(raw[: raw.rfind(b"\n") + 1])
        for rec in read_journal(journal):
            done[_key(rec)] = rec
    todo = [t for t in tasks(spec) if t.key not in done]
    fh = open(journal, "a", encoding="utf-8") if journal is not None else None
    try:
        args = [(t, spec.q, gap_fn) for t in todo]
        if workers > 1 and len(args) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = pool.map(_run_task, args)
                for rec in results:
                    _record(done, rec, fh)
        else:
            for a in args:
                _record(done, _run_task(a), fh)
    finally:
        if fh is not None:
            fh.close()
    values, failures = [], []
    for t in tasks(spec):
        rec = done[t.key]
        if rec["status"] == "ok":
            values.append(GapValue(float(rec["gamma0"]), t.mu, 2 * t.n, t.seed))
        else:
            failures.append(rec)
    return EnsembleResult(values, failures)


def _record(done: dict, rec: dict, fh) -> None:
    done[_key(rec)] = rec
    if fh is not None:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
        fh.flush()


def point_statistics(values: Sequence[GapValue]) -> dict:
    """``{(n_total, mu): (mean, sem, count)}``; sem is 0 for one sample."""
    groups: dict = {}
    for v in values:
        groups.setdefault((v.n_total, v.mu), []).append(v.gamma0)
    out = {}
    for key in sorted(groups):
        arr = np.sort(np.array(groups[key]))  # order-independent summation
        sem = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
        out[key] = (float(arr.mean()), sem, int(arr.size))
    return out


@dataclass(frozen=True)
class ScalingFit:
    mu: float
    gamma0_inf: float
    b: float
    stderr_gamma0: float
    stderr_b: float
    points: tuple
    weighted: bool
    chi2_red: float


def fit_scaling(points: Sequence[tuple], mu: float) -> ScalingFit:
    """Fit ``Gamma0(N_tot) = Gamma0 + b / N_tot``.

    Weighted by ``1/sem^2`` when every sem is positive, unweighted
    otherwise. Parameter errors come from the fit covariance; in the
    weighted case it is inflated by the reduced chi-square when that
    exceeds one (scatter beyond the quoted sem).
    """
    pts = sorted((int(n), float(m), float(s)) for n, m, s in points)
    ns = [p[0] for p in pts]
    if len(set(ns)) < 3 or len(ns) != len(set(ns)):
        raise InvalidArgumentError("need at least three distinct N_tot values")
    x = 1.0 / np.array(ns, dtype=float)
    y = np.array([p[1] for p in pts])
    sem = np.array([p[2] for p in pts])
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(sem)):
        raise InvalidArgumentError("non-finite means or errors")
    weighted = bool(np.all(sem > 0))
    w = 1.0 / sem ** 2 if weighted else np.ones_like(y)
    X = np.vstack([np.ones_like(x), x]).T
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    resid = y - X @ coef
    dof = len(y) - 2
    chi2 = float(np.sum(w * resid ** 2))
    chi2_red = chi2 / dof if dof > 0 else 0.0
    cov = np.linalg.inv(X.T @ (X * w[:, None]))
    if weighted:
        cov = cov * max(1.0, chi2_red)
    else:
        cov = cov * chi2_red
    err = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return ScalingFit(float(mu), float(coef[0]), float(coef[1]), float(err[0]), float(err[1]),
                      tuple(pts), weighted, chi2_red)


def scaling_fits(values: Sequence[GapValue], min_n_total: int = 0) -> list[ScalingFit]:
    stats = point_statistics(values)
    mus = sorted({mu for _, mu in stats})
    fits = []
    for mu in mus:
        pts = [(n, m, s) for (n, mm), (m, s, _) in stats.items() if mm == mu and n >= min_n_total]
        fits.append(fit_scaling(pts, mu))
    return fits


@dataclass
class GapCurve:
    mu: np.ndarray
    gamma0: np.ndarray
    stderr: np.ndarray
    local_maxima: list
    local_minima: list

    @property
    def monotone(self) -> bool:
        return not self.local_maxima and not self.local_minima


def local_extrema(y: Sequence[float]) -> tuple[list[int], list[int]]:
    """Indices of interior strict local maxima and minima."""
    y = np.asarray(y, dtype=float)
    mx, mn = [], []
    for i in range(1, len(y) - 1):
        if y[i] > y[i - 1] and y[i] > y[i + 1]:
            mx.append(i)
        elif y[i] < y[i - 1] and y[i] < y[i + 1]:
            mn.append(i)
    return mx, mn


def gap_curve(fits: Sequence[ScalingFit]) -> GapCurve:
    """Extrapolated ``Gamma0(mu)`` with its interior local extrema."""
    fits = sorted(fits, key=lambda f: f.mu)
    mu = np.array([f.mu for f in fits])
    g = np.array([f.gamma0_inf for f in fits])
    e = np.array([f.stderr_gamma0 for f in fits])
    mx, mn = local_extrema(g)
    return GapCurve(mu, g, e, [float(mu[i]) for i in mx], [float(mu[i]) for i in mn])


def summary_csv(fits: Sequence[ScalingFit], failures: Sequence[dict] = ()) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mu", "gamma0_inf", "stderr", "b", "stderr_b", "chi2_red", "n_points"])
    for f in sorted(fits, key=lambda f: f.mu):
        w.writerow([repr(f.mu), f"{f.gamma0_inf:.12g}", f"{f.stderr_gamma0:.6g}", f"{f.b:.12g}",
                    f"{f.stderr_b:.6g}", f"{f.chi2_red:.6g}", len(f.points)])
    for rec in failures:
        w.writerow([f"# failed: N={rec['n']} mu={rec['mu']} sample={rec['sample']}: "
                    f"{rec.get('error', '')}"])
    return buf.getvalue()
