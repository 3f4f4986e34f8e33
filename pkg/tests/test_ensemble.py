import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lindblad_syk.ensemble import (
    EnsembleSpec,
    fit_scaling,
    gap_curve,
    local_extrema,
    point_statistics,
    read_journal,
    run_ensemble,
    sample_seed,
    scaling_fits,
    summary_csv,
    tasks,
)
from lindblad_syk.ep import n4_oracle_gap
from lindblad_syk.errors import ConsistencyError, ConvergenceError, InvalidArgumentError
from lindblad_syk.model import sample_disorder
from lindblad_syk.spectral import GapValue

MUS = (0.05, 0.1, 0.122, 0.2, 0.3)


def test_n4_ensemble_reproduces_closed_form():
    res = run_ensemble(EnsembleSpec([4], MUS, 1, base_seed=5))
    assert not res.failures and len(res.values) == len(MUS)
    J = abs(next(iter(sample_disorder(4, 4, res.values[0].realization_id).couplings.values())))
    for v in res.values:
        tol = 1e-7 if abs(v.mu - J / 2) < 1e-3 else 1e-9
        assert v.gamma0 == pytest.approx(n4_oracle_gap(J, v.mu), abs=tol)


def test_seeds_shared_across_mu_and_stable():
    spec = EnsembleSpec([4, 6], (0.1, 0.2), {4: 2, 6: 3})
    ts = tasks(spec)
    assert len(ts) == 2 * 2 + 3 * 2
    by_sample = {}
    for t in ts:
        by_sample.setdefault((t.n, t.sample), set()).add(t.seed)
    assert all(len(s) == 1 for s in by_sample.values())
    assert sample_seed(0, 8, 3) == sample_seed(0, 8, 3) != sample_seed(0, 8, 4)
    assert 0 <= sample_seed(7, 8, 3) < 2 ** 63


def test_spec_validation():
    with pytest.raises(InvalidArgumentError):
        EnsembleSpec([5], (0.1,))
    with pytest.raises(InvalidArgumentError):
        EnsembleSpec([4], (-0.1,))
    with pytest.raises(InvalidArgumentError):
        EnsembleSpec([4, 6], (0.1,), {4: 1})


def test_deterministic_and_journal_resume(tmp_path):
    spec = EnsembleSpec([4, 6], (0.1, 0.3), 3, base_seed=1)
    j1, j2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    r1 = run_ensemble(spec, journal=str(j1))
    r2 = run_ensemble(spec, journal=str(j2))
    assert j1.read_bytes() == j2.read_bytes()
    assert summary_csv([]) == summary_csv([])
    calls = []

    def counting(d, mu):
        calls.append((d.n_majorana, mu))
        raise AssertionError("should not recompute")

    r3 = run_ensemble(spec, journal=str(j1), gap_fn=counting)
    assert not calls
    assert [v.gamma0 for v in r3.values] == [v.gamma0 for v in r1.values]
    assert [v.gamma0 for v in r2.values] == [v.gamma0 for v in r1.values]


def test_truncated_and_corrupt_journal(tmp_path):
    spec = EnsembleSpec([4], (0.1, 0.2), 2)
    j = tmp_path / "j.jsonl"
    run_ensemble(spec, journal=str(j))
    text = j.read_text()
    lines = text.splitlines()
    # interrupted write: last line cut in half
    j.write_text("\n".join(lines[:-1]) + "\n" + lines[-1][: len(lines[-1]) // 2])
    assert len(read_journal(str(j))) == len(lines) - 1
    res = run_ensemble(spec, journal=str(j))
    assert len(res.values) == 4 and len(read_journal(str(j))) == 4
    j.write_text("garbage\n" + text)
    with pytest.raises(ConsistencyError):
        read_journal(str(j))


def test_failures_are_recorded(tmp_path):
    def flaky(d, mu):
        if mu > 0.15:
            raise ConvergenceError("no luck", best_residual=1.0)
        return GapValue(2 * mu, mu, 2 * d.n_majorana, d.seed)

    res = run_ensemble(EnsembleSpec([4], (0.1, 0.2), 2), gap_fn=flaky)
    assert len(res.values) == 2 and len(res.failures) == 2
    assert all(f["status"] == "failed" and "ConvergenceError" in f["error"] for f in res.failures)
    assert "# failed" in summary_csv([], res.failures)


def test_sem_shrinks_with_samples():
    spec = EnsembleSpec([8, 10, 12], (0.1,), 50, base_seed=3)
    res = run_ensemble(spec)
    for n in (8, 10, 12):
        vals = np.array([v.gamma0 for v in res.values if v.n_total == 2 * n])
        full = vals.std(ddof=1) / np.sqrt(vals.size)
        halves = [h.std(ddof=1) / np.sqrt(h.size) for h in (vals[:25], vals[25:])]
        ratio = np.mean(halves) / full
        assert 1.0 < ratio < 2.0  # sqrt(2) for i.i.d. means


def test_fit_exact_and_constant():
    pts = [(n, 0.2 + 1.2 / n, 0.01) for n in (24, 28, 32, 36, 40, 44)]
    f = fit_scaling(pts, 0.1)
    assert f.gamma0_inf == pytest.approx(0.2, abs=1e-12)
    assert f.b == pytest.approx(1.2, abs=1e-10)
    f = fit_scaling([(n, 0.7, 0.0) for n in (16, 20, 24)], 0.1)
    assert f.gamma0_inf == pytest.approx(0.7, abs=1e-14) and abs(f.b) < 1e-12
    assert not f.weighted
    with pytest.raises(InvalidArgumentError):
        fit_scaling([(16, 0.1, 0.01), (20, 0.1, 0.01)], 0.1)


def test_fit_stderr_calibration():
    rng = np.random.default_rng(2024)
    ns = np.array([16, 20, 24, 28, 32])
    hits = 0
    for _ in range(1000):
        y = 0.3 + 0.8 / ns + rng.normal(0.0, 0.01, ns.size)
        f = fit_scaling([(n, m, 0.01) for n, m in zip(ns, y)], 0.1)
        hits += abs(f.gamma0_inf - 0.3) < 3 * f.stderr_gamma0
    assert hits >= 990


def test_gap_curve_extrema():
    assert local_extrema([1, 2, 3, 4]) == ([], [])
    fits = [fit_scaling([(n, g, 0.0) for n in (8, 12, 16)], mu) for mu, g in
            [(0.1, 0.1), (0.2, 0.3), (0.3, 0.35)]]
    assert gap_curve(fits).monotone
    # closed-form N=4 curve: rises as 2 mu, dips after mu = J/2, minimum at J/sqrt(3)
    J = 0.244
    mus = np.round(np.linspace(0.02, 0.4, 20), 10)
    mus = np.sort(np.append(mus, 0.122))
    fits = [fit_scaling([(n, n4_oracle_gap(J, mu), 0.0) for n in (8, 12, 16)], mu) for mu in mus]
    c = gap_curve(fits)
    assert c.local_maxima == [0.122]
    (mn,) = c.local_minima
    assert abs(mn - J / np.sqrt(3)) <= 0.02


def test_point_statistics_and_scaling_fits():
    vals = [GapValue(0.5 + 1.0 / nt + 0.001 * s, 0.1, nt, s) for nt in (16, 20, 24) for s in range(4)]
    stats = point_statistics(vals)
    assert stats[(16, 0.1)][2] == 4
    (f,) = scaling_fits(vals)
    assert f.gamma0_inf == pytest.approx(0.5015, abs=1e-9)
    assert f.b == pytest.approx(1.0, abs=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.floats(-1, 1), st.floats(-5, 5), st.floats(1e-4, 0.1))
def test_fit_recovers_noiseless_lines(a, b, s):
    pts = [(n, a + b / n, s) for n in (16, 20, 24, 28)]
    f = fit_scaling(pts, 0.2)
    assert f.gamma0_inf == pytest.approx(a, abs=1e-9)
    assert f.b == pytest.approx(b, abs=1e-7)
