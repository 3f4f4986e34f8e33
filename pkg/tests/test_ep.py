import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lindblad_syk.errors import InvalidArgumentError, NoEPFoundError
from lindblad_syk.ep import (
    count_real_and_intruders,
    detect_eps,
    events_to_json,
    find_eps,
    gap_block_family,
    locate_ep,
    matrix_family,
    n4_oracle_branches,
    n4_oracle_gap,
    sweep_branches,
    traces_to_csv,
)
from lindblad_syk.model import build_liouvillian, fixed_disorder, sample_disorder

J = 0.244


def test_oracle_gap_values():
    assert n4_oracle_gap(J, 0.05) == pytest.approx(0.1, abs=1e-15)
    assert n4_oracle_gap(J, 0.122) == pytest.approx(0.244, abs=1e-15)
    assert n4_oracle_gap(J, 0.2) == pytest.approx(0.24151971731473978, abs=1e-14)
    with pytest.raises(InvalidArgumentError):
        n4_oracle_gap(0.0, 0.1)
    with pytest.raises(InvalidArgumentError):
        n4_oracle_gap(J, -0.1)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 3.0), st.floats(0.0, 5.0))
def test_oracle_gap_continuous_and_bounded(j, mu):
    g = n4_oracle_gap(j, mu)
    assert mu - 1e-12 <= g <= 2 * mu + 1e-12
    assert abs(n4_oracle_gap(j, mu + 1e-9) - g) < 1e-4


def test_gap_block_family_matches_assembly():
    d = sample_disorder(6, 4, 1)
    fam = gap_block_family(d)
    for mu in (0.0, 0.37):
        want = build_liouvillian(d, mu).gap_block.to_dense()
        assert np.abs(fam(mu).to_dense() - want).max() < 1e-13


def test_n4_sweep_branches_match_closed_form():
    fam = gap_block_family(fixed_disorder(4, 4, J))
    grid = np.linspace(0.0, 2 * J, 40)  # does not sample mu = J/2 exactly
    sweep = sweep_branches(fam, grid)
    assert len(sweep.traces) == 2
    assert all(t.multiplicity == 4 for t in sweep.traces)
    for i, mu in enumerate(grid):
        vals = np.array([t.value_at(mu) for t in sweep.traces])
        for lam in n4_oracle_branches(J, mu):
            assert np.abs(vals - lam).min() < 1e-10


@pytest.mark.parametrize("j,grid", [
    (J, np.linspace(0.0, 2 * J, 41)),
    (J, np.linspace(0.001, 2 * J, 40)),
    (1.0, np.linspace(0.0, 1.0, 21)),
])
def test_n4_ep_location(j, grid):
    events, warnings = find_eps(gap_block_family(fixed_disorder(4, 4, j)), grid)
    assert not warnings
    assert len(events) == 1
    ev = events[0]
    assert abs(ev.mu_ep - j / 2) < 1e-6
    assert ev.multiplicity == 4
    ds = [d for _, d in ev.d_trace]
    assert ev.d_monotone and ds[-1] < 1e-4


def test_synthetic_two_level_ep():
    alpha = 0.3
    fam = matrix_family(lambda mu: np.array([[-1j * alpha - 2 * mu, -mu], [-mu, 1j * alpha - 2 * mu]]))
    events, _ = find_eps(fam, np.linspace(0.0, 1.0, 11))
    assert len(events) == 1
    assert events[0].mu_ep == pytest.approx(0.3, abs=1e-6)


def test_locate_ep_from_traces():
    fam = gap_block_family(fixed_disorder(4, 4, J))
    sweep = sweep_branches(fam, np.linspace(0.0, 2 * J, 40))
    a, b = sweep.traces
    ev = locate_ep(a, b, fam)
    assert abs(ev.mu_ep - J / 2) < 1e-6
    with pytest.raises(NoEPFoundError):
        weak = sweep_branches(fam, np.linspace(0.0, 0.1, 5))
        locate_ep(weak.traces[0], weak.traces[1], fam)


def test_strong_and_weak_coupling_grids():
    fam = gap_block_family(fixed_disorder(4, 4, J))
    strong = sweep_branches(fam, np.linspace(0.2, 0.5, 7))
    assert all(np.all(t.is_real(strong.eps_im)) for t in strong.traces)
    weak = sweep_branches(fam, np.linspace(0.0, 0.1, 6))
    assert detect_eps(weak, fam) == []


def test_n4_counts():
    fam = gap_block_family(fixed_disorder(4, 4, J))
    grid = np.linspace(0.0, 2 * J, 40)
    sweep = sweep_branches(fam, grid)
    for row in count_real_and_intruders(sweep):
        assert row.n_intruders == 0
        if row.mu > J / 2:
            assert row.n_ep_born_distinct == 2 and row.n_ep_born == 8
        else:
            assert row.n_real == 0


def test_hermitian_generator_all_real():
    # J = 0 leaves the bath term, which is Hermitian up to the real shift
    fam = gap_block_family(fixed_disorder(6, 4, 0.0))
    for mu in (0.0, 0.1, 0.7):
        assert np.abs(np.linalg.eigvals(fam(mu).to_dense()).imag).max() < 1e-12


def test_n8_grid_refinement_consistency():
    fam = gap_block_family(sample_disorder(8, 4, 3))
    coarse, wc = find_eps(fam, np.linspace(0.0, 0.3, 7))
    fine, wf = find_eps(fam, np.linspace(0.0, 0.3, 13))
    assert not wc and not wf
    assert [round(e.mu_ep, 6) for e in coarse] == [round(e.mu_ep, 6) for e in fine]
    # every pair turns real once and none leaves the axis, so the events
    # account for the whole change in the number of real eigenvalues
    def n_real(mu):
        v = np.linalg.eigvals(fam(mu).to_dense())
        return int(np.sum(np.abs(v.imag) < 1e-8 * max(1.0, np.abs(v).max())))
    assert 2 * sum(e.multiplicity for e in coarse) == n_real(0.3) - n_real(0.0)
    assert all(e.d_monotone and e.d_trace[-1][1] < 1e-4 for e in coarse)


def test_outputs_are_deterministic():
    fam = gap_block_family(fixed_disorder(4, 4, J))
    grid = np.linspace(0.0, 2 * J, 21)
    s1, s2 = sweep_branches(fam, grid), sweep_branches(fam, grid)
    assert traces_to_csv(s1) == traces_to_csv(s2)
    e1, e2 = detect_eps(s1, fam), detect_eps(s2, fam)
    assert events_to_json(e1, seed=7) == events_to_json(e2, seed=7)
    rec = json.loads(events_to_json(e1, seed=7))[0]
    assert rec["seed"] == 7 and len(rec["branch_ids"]) == 2


def test_grid_validation():
    fam = gap_block_family(fixed_disorder(4, 4, J))
    with pytest.raises(InvalidArgumentError):
        sweep_branches(fam, [0.2, 0.1])
    with pytest.raises(InvalidArgumentError):
        find_eps(fam, [0.1])
