import numpy as np
import pytest
from scipy import stats

from levyldp.noise import MarkSpace
from levyldp.prm import (Control, JumpStream, compensator_term, girsanov_log_density,
                         restrict_to_admissible, sample_controlled_prm, sample_prm,
                         trajectory_rng)


@pytest.fixture
def unit():
    return MarkSpace.discrete([0.0], [1.0])


def test_expected_count(unit):
    counts = [len(sample_prm(unit, 0.1, 1.0, s)) for s in range(2000)]
    assert abs(np.mean(counts) - 10.0) < 3 * np.sqrt(10.0 / 2000)


def test_huge_eps_gives_almost_no_events(unit):
    counts = np.array([len(sample_prm(unit, 1e6, 1.0, s)) for s in range(10_000)])
    assert counts.sum() <= 3   # Poisson(1e-2) in total


def test_mark_frequencies_follow_masses():
    marks = MarkSpace.discrete([0.0, 1.0], [1.0, 3.0])
    st = sample_prm(marks, 1.0 / 25_000, 1.0, 0)
    assert len(st) > 90_000
    frac = np.mean(st.atom_index == 1)
    assert abs(frac - 0.75) < 3 * np.sqrt(0.75 * 0.25 / len(st))


def test_times_uniform_and_ordered(unit):
    st = sample_prm(unit, 1e-4, 2.0, 3)
    assert np.all(np.diff(st.times) >= 0)
    assert st.times.min() > 0 and st.times.max() <= 2.0
    assert stats.kstest(st.times / 2.0, "uniform").pvalue > 0.001


def test_event_cap(unit):
    with pytest.raises(ValueError, match="raise eps"):
        sample_prm(unit, 1e-9, 1.0, 0)
    with pytest.raises(ValueError):
        sample_prm(unit, 0.0, 1.0, 0)


def test_determinism_and_replay(unit, tmp_path):
    a, b = sample_prm(unit, 0.05, 1.0, 42), sample_prm(unit, 0.05, 1.0, 42)
    assert a.times.tobytes() == b.times.tobytes() and a.aux_r.tobytes() == b.aux_r.tobytes()
    a.to_csv(tmp_path / "s.csv")
    c = JumpStream.from_csv(tmp_path / "s.csv", a.intensity_scale, a.horizon)
    assert np.array_equal(c.times, a.times) and np.array_equal(c.aux_r, a.aux_r)


def test_trajectory_zero_matches_standalone(unit):
    a = sample_prm(unit, 0.1, 1.0, 5)
    b = sample_prm(unit, 0.1, 1.0, trajectory_rng(5, 0))
    c = sample_prm(unit, 0.1, 1.0, trajectory_rng(5, 1))
    assert np.array_equal(a.times, b.times)
    assert not np.array_equal(a.times, c.times)


def test_unit_control_reproduces_plain_stream(unit):
    g = Control.constant(unit, 1.0, 1.0)
    for seed in range(20):
        a = sample_prm(unit, 0.1, 1.0, seed)
        b = sample_controlled_prm(unit, 0.1, g, 1.0, seed)
        assert np.array_equal(a.times, b.times)


def test_zero_control_is_empty(unit):
    g = Control.constant(unit, 1.0, 0.0)
    assert all(len(sample_controlled_prm(unit, 0.01, g, 1.0, s)) == 0 for s in range(50))


def test_constant_control_count(unit):
    g = Control.constant(unit, 1.0, 2.0)
    counts = [len(sample_controlled_prm(unit, 1.0, g, 1.0, s)) for s in range(10_000)]
    assert abs(np.mean(counts) - 2.0) < 3 * np.sqrt(2.0 / 10_000)


def test_thinning_superposition_recovers_dominating_law(unit):
    g = Control([0.0, 0.5, 1.0], [[3.0], [0.5]], atom_cell=[0])
    totals = []
    for s in range(4000):
        kept, rej = sample_controlled_prm(unit, 0.5, g, 1.0, s, return_rejected=True)
        assert np.all(kept.aux_r <= g(kept.times, kept.marks, kept.atom_index))
        assert np.all(rej.aux_r > g(rej.times, rej.marks, rej.atom_index))
        totals.append(len(kept) + len(rej))
    lam = 3.0 / 0.5
    assert abs(np.mean(totals) - lam) < 3 * np.sqrt(lam / 4000)
    assert abs(np.var(totals) / lam - 1) < 0.1


def test_time_varying_control_intensity(unit):
    g = Control([0.0, 0.5, 1.0], [[3.0], [0.5]], atom_cell=[0])
    early = late = 0
    for s in range(3000):
        st = sample_controlled_prm(unit, 1.0, g, 1.0, s)
        early += np.sum(st.times <= 0.5)
        late += np.sum(st.times > 0.5)
    assert abs(early / 3000 - 1.5) < 3 * np.sqrt(1.5 / 3000)
    assert abs(late / 3000 - 0.25) < 3 * np.sqrt(0.25 / 3000)


def test_girsanov_examples(unit):
    one = Control.constant(unit, 1.0, 1.0)
    st = sample_prm(unit, 0.1, 1.0, 0)
    assert girsanov_log_density(st, one, 0.1, unit) == 0.0
    empty = JumpStream(np.zeros(0), np.zeros(0), np.zeros(0, int), np.zeros(0), 1.0, 1.0)
    masses = MarkSpace.discrete([0.0], [2.5])
    c, eps, t = 1.7, 0.3, 0.6
    g = Control.constant(masses, 1.0, c)
    # compensator-only term: integral of (1 - 1/c) c m / eps over [0, t]
    assert girsanov_log_density(empty, g, eps, masses, t) == pytest.approx((1 - 1 / c) * c * 2.5 * t / eps)
    single = JumpStream(np.array([0.2]), np.array([0.0]), np.array([0]), np.array([0.1]), 1.0, 1.0)
    g2 = Control.constant(unit, 1.0, 2.0)
    want = -np.log(2.0) + compensator_term(g2, 0.5, unit, 1.0)
    assert girsanov_log_density(single, g2, 0.5, unit) == pytest.approx(want)
    assert compensator_term(g2, 0.5, unit, 1.0) == pytest.approx(2.0)


def test_girsanov_rejects_event_in_zero_cell(unit):
    g = Control([0.0, 0.5, 1.0], [[0.0], [1.0]], atom_cell=[0])
    st = JumpStream(np.array([0.25]), np.array([0.0]), np.array([0]), np.array([0.0]), 1.0, 1.0)
    with pytest.raises(ValueError, match="vanishes"):
        girsanov_log_density(st, g, 0.1, unit)


def test_importance_identity_on_counts(unit):
    # E[phi(N)] under the plain law vs E[phi(N) exp(logw)] under a tilted control
    eps, n = 0.5, 40_000
    g = Control.constant(unit, 1.0, 1.8)
    phi = lambda k: np.minimum(k, 4) / 4.0  # noqa: E731
    plain = np.array([phi(len(sample_prm(unit, eps, 1.0, s))) for s in range(n)])
    tilted = []
    for s in range(n, 2 * n):
        st = sample_controlled_prm(unit, eps, g, 1.0, s)
        tilted.append(phi(len(st)) * np.exp(girsanov_log_density(st, g, eps, unit)))
    tilted = np.array(tilted)
    se = np.hypot(plain.std() / np.sqrt(n), tilted.std() / np.sqrt(n))
    assert abs(plain.mean() - tilted.mean()) <= 3 * se
    exact = np.sum(phi(np.arange(60)) * stats.poisson.pmf(np.arange(60), 2.0))
    assert abs(plain.mean() - exact) <= 3 * plain.std() / np.sqrt(n)


def test_restrict_to_admissible(unit):
    marks = MarkSpace.discrete([0.0, 1.0, 2.0], [1.0, 1.0, 1.0])
    one = Control.constant(marks, 1.0, 1.0)
    assert np.array_equal(restrict_to_admissible(one, 10).values, one.values)
    g = Control([0.0, 1.0], [[1e6, 0.0, 5.0]], atom_cell=[0, 1, 2])
    assert restrict_to_admissible(g, 10).values[0, 0] == 10.0
    assert restrict_to_admissible(g, 4).values[0, 1] == 0.25
    out = restrict_to_admissible(g, 4, compact=[True, True, False])
    assert out.values[0, 2] == 1.0
    with pytest.raises(ValueError):
        restrict_to_admissible(g, 0)


def test_control_validation_and_roundtrip(unit, tmp_path):
    with pytest.raises(ValueError):
        Control([0.0, 1.0], [[-1.0]], atom_cell=[0])
    with pytest.raises(ValueError):
        Control([0.0, 1.0], [[np.inf]], atom_cell=[0])
    with pytest.raises(ValueError):
        Control([0.5, 1.0], [[1.0]], atom_cell=[0])
    g = Control([0.0, 0.3, 1.0], [[2.0, 1.0], [0.5, 3.0]], z_edges=[0.0, 0.4, 1.0])
    g.to_file(tmp_path / "g.json")
    h = Control.from_file(tmp_path / "g.json")
    assert np.array_equal(h.values, g.values) and np.array_equal(h.z_edges, g.z_edges)


def test_time_average_is_exact_for_piecewise_constant():
    marks = MarkSpace.discrete([0.0], [1.0])
    g = Control([0.0, 0.25, 1.0], [[4.0], [1.0]], atom_cell=[0])
    assert g.time_average(0.0, 0.5)[0] == pytest.approx((4 * 0.25 + 0.25) / 0.5)
    assert g.time_average(0.3, 0.7)[0] == 1.0
    assert g.time_average(0.25, 0.25)[0] == 1.0
    assert g.time_average(0.0, 0.0)[0] == 4.0
    assert np.allclose(g.averaging_matrix([0.0, 0.5, 1.0]), [[0.5, 0.5], [0.0, 1.0]])
    assert g.cell_weights(marks).sum() == pytest.approx(1.0)
