import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from conftest import make_cohort
from tdpaf.aalen_johansen import aalen_johansen, cif_censor_at_exposure, constant_hazard_oracle
from tdpaf.cohort import FourfoldTable, LandmarkGrid, fourfold_table
from tdpaf.estimators import (BootstrapError, CounterfactualPAF, CrudePAF, LandmarkPAF,
                              ObservablePAF, bootstrap_band)
from tdpaf.glm import UndefinedEstimandError
from tdpaf.hazards import Constant, HazardSet
from tdpaf.paf import (InfeasibleGridError, paf_c_curve, paf_crude, paf_lm_separate,
                       paf_lm_supermodel, paf_o_curve, relative_risk,
                       smooth_landmark_estimates)
from tdpaf.simulation import scenario_registry, simulate_cohort

ICU_COUNTS = FourfoldTable(2746, 8320 - 2746, 22203, 71027 - 22203)


# --- crude ----------------------------------------------------------------

def test_crude_examples():
    assert paf_crude(FourfoldTable(10, 30, 20, 60)) == pytest.approx(0.0, abs=1e-15)
    assert paf_crude(FourfoldTable(1, 0, 0, 1)) == 1.0


def test_crude_icu_counts_reference_values():
    paf = paf_crude(ICU_COUNTS)
    assert round(100 * paf, 1) == 0.6
    assert round(paf * 24949) == 145


def test_crude_errors():
    with pytest.raises(UndefinedEstimandError):
        paf_crude(FourfoldTable(0, 5, 0, 5))
    with pytest.raises(ValueError):
        paf_crude(FourfoldTable(3, 5, 0, 0))
    with pytest.raises(ValueError):
        paf_crude(FourfoldTable(0, 0, 0, 0))


def test_relative_risk_form():
    t = FourfoldTable(30, 70, 20, 180)
    rr = relative_risk(t)
    prev = t.n_exp_died / t.n_died
    assert paf_crude(t) == pytest.approx(prev * (rr - 1) / rr, abs=1e-14)


# --- curves ---------------------------------------------------------------

@pytest.mark.parametrize("sid", [1, 4, 7, 10])
def test_paf_o_at_tau_equals_crude(sid):
    c = simulate_cohort(sid, 5000, seed=sid)
    curve = paf_o_curve(aalen_johansen(c))
    assert curve(c.tau) == pytest.approx(paf_crude(fourfold_table(c)), abs=1e-12)


uncensored = st.lists(
    st.tuples(st.one_of(st.none(), st.integers(1, 8)), st.integers(0, 8), st.booleans()),
    min_size=2, max_size=15,
)


def _cohort(draws, censor=()):
    rows = []
    for i, (inf, extra, died) in enumerate(draws):
        cens = i in censor
        if inf is None:
            rows.append((None, float(extra + 1), "death" if died else "discharge", cens))
        else:
            rows.append((float(inf), float(inf + extra), "death" if died else "discharge", cens))
    return make_cohort(rows)


@settings(max_examples=200, deadline=None)
@given(draws=uncensored)
def test_paf_o_identity_property(draws):
    c = _cohort(draws)
    t = fourfold_table(c)
    if t.n_died == 0 or t.n_unexposed == 0:
        return
    assert paf_o_curve(aalen_johansen(c))(c.tau) == pytest.approx(paf_crude(t), abs=1e-12)


def _no_infection(sid, n, seed):
    hs = scenario_registry(sid).hazard_set
    return simulate_cohort(HazardSet(Constant(0.0), hs.a02, hs.a03, hs.a14, hs.a15), n, seed)


def test_curves_vanish_without_infection():
    c = _no_infection(4, 2000, 1)
    cur = aalen_johansen(c)
    o = paf_o_curve(cur)
    pc = paf_c_curve(cur, cif_censor_at_exposure(c))
    assert np.all(np.abs(o.values[o.defined]) <= 1e-12)
    assert np.all(pc.values[pc.defined] == 0.0)


def test_undefined_before_first_death():
    c = make_cohort([(None, 2.0, "discharge"), (1.0, 5.0, "death"), (None, 7.0, "death")])
    o = paf_o_curve(aalen_johansen(c))
    assert np.isnan(o(4.9)) and not np.isnan(o(5.0))
    assert o.first_defined == 5.0


def test_paf_c_mismatched_cohorts():
    a = simulate_cohort(4, 100, seed=1)
    b = simulate_cohort(4, 120, seed=1)
    with pytest.raises(ValueError, match="different size"):
        paf_c_curve(aalen_johansen(a), cif_censor_at_exposure(b))


@pytest.mark.parametrize("sid", range(1, 11))
def test_bounds_and_finite(sid):
    c = simulate_cohort(sid, 2000, seed=3)
    cur = aalen_johansen(c)
    for curve in (paf_o_curve(cur), paf_c_curve(cur, cif_censor_at_exposure(c))):
        v = curve.values[curve.defined]
        assert np.all(np.isfinite(v)) and np.all(v <= 1)
        assert np.all(np.isnan(curve.values[~curve.defined]))


def test_scenario3_paf_c_limit_oracle():
    rates = tuple(s.rate for s in scenario_registry(3).hazard_set.as_dict().values())
    o = constant_hazard_oracle(rates, 2000.0)
    dead = o["P03"] + o["P05"]
    assert dead == pytest.approx(0.357143, abs=1e-6)
    assert o["P03_0"] == pytest.approx(1 / 3, abs=1e-12)
    assert (dead - o["P03_0"]) / dead == pytest.approx(1 / 15, abs=1e-12)


# --- landmarks ------------------------------------------------------------

def test_landmark_oracle_scenario4():
    # exposed risk 0.5 (1 - e^{-1.2}); unexposed risk from the oracle; prevalence at l = 20
    r = tuple(s.rate for s in scenario_registry(4).hazard_set.as_dict().values())
    r1 = 0.5 * (1 - np.exp(-1.2))
    o30 = constant_hazard_oracle(r, 30)
    r0 = o30["P03"] + o30["P05"]
    o20 = constant_hazard_oracle(r, 20)
    pi = o20["P01"] / (o20["P00"] + o20["P01"])
    paf = pi * (r1 - r0) / (pi * r1 + (1 - pi) * r0)
    assert paf == pytest.approx(0.159, abs=5e-4)


def test_separate_identity_and_reasons():
    c = simulate_cohort(4, 5000, seed=2)
    res = paf_lm_separate(c, LandmarkGrid.from_spec("0:60:5", 30))
    assert res.skipped[0][0] == 0.0 and "no exposed" in res.skipped[0][1]
    for e in res:
        assert min(e.table.cells()) >= 5
        assert e.paf == pytest.approx(e.paf_from_rr, abs=1e-10)
        assert e.paf == pytest.approx(paf_crude(e.table), abs=0)


def test_separate_matches_loop_counts():
    c = simulate_cohort(7, 3000, seed=5)
    grid = LandmarkGrid.from_spec("1:15:2", 8)
    for e in paf_lm_separate(c, grid):
        assert e.table.cells() == oracles.landmark_counts(c, e.landmark, 8)


def test_all_landmarks_skipped():
    c = make_cohort([(None, 2.0, "death"), (None, 3.0, "discharge")])
    with pytest.raises(InfeasibleGridError) as info:
        paf_lm_separate(c, LandmarkGrid((0.0, 1.0), 5))
    assert [l for l, _ in info.value.skipped] == [0.0, 1.0]
    assert "grid infeasible" in str(info.value)


def test_saturated_supermodel_equals_separate():
    c = simulate_cohort(4, 10000, seed=3)
    grid = LandmarkGrid.from_spec("5:60:5", 30)
    sep = paf_lm_separate(c, grid)
    sup = paf_lm_supermodel(c, grid, basis="saturated")
    np.testing.assert_array_equal(sup.landmarks, sep.landmarks)
    np.testing.assert_allclose(sup.values, sep.values, atol=1e-6)


def test_constant_basis_on_null_data():
    c = simulate_cohort(2, 10000, seed=4)
    sup = paf_lm_supermodel(c, LandmarkGrid.from_spec("5:40:5", 30), basis="constant")
    assert np.ptp(sup.values) < 0.05
    assert np.all(np.abs(sup.values) < 0.1)


def test_supermodel_bases_and_bound():
    c = simulate_cohort(7, 10000, seed=5)
    grid = LandmarkGrid.from_spec("0:16:1", 8)
    for basis in ("constant", "linear", "quadratic", "saturated"):
        sup = paf_lm_supermodel(c, grid, basis=basis)
        assert np.all(sup.values <= 1) and sup.fit.converged
    with pytest.raises(ValueError):
        paf_lm_supermodel(c, grid, basis="cubic")


def test_null_effect_landmarks_near_zero():
    grid = LandmarkGrid.from_spec("5:40:5", 30)
    vals = np.array([paf_lm_separate(simulate_cohort(2, 10000, seed=1, stream=r), grid).values
                     for r in range(10)])
    assert np.all(np.abs(vals.mean(axis=0)) <= 0.03)


def test_smoother():
    x = np.arange(0.0, 50.0, 5.0)
    line = 0.01 * x - 0.1
    np.testing.assert_allclose(smooth_landmark_estimates(x, line), line, atol=1e-12)
    noisy = line + np.random.default_rng(0).normal(scale=0.02, size=len(x))
    sm = smooth_landmark_estimates(x, noisy)
    assert np.all(sm <= 1) and np.std(np.diff(sm)) < np.std(np.diff(noisy))


# --- time rescaling -------------------------------------------------------

@pytest.mark.parametrize("factor", [0.5, 2.0, 7.0])
def test_time_rescaling(factor):
    c = simulate_cohort(4, 3000, seed=9)
    s = c.rescaled(factor)
    t = np.linspace(0.5, 150, 40)
    for est in (ObservablePAF(), CounterfactualPAF()):
        a = est.fit(c).predict(t)
        b = type(est)().fit(s).predict(t * factor)
        np.testing.assert_allclose(a, b, atol=1e-12)
    assert CrudePAF().fit(c).paf_ == CrudePAF().fit(s).paf_
    a = LandmarkPAF(window=30, landmarks=[10.0, 20.0]).fit(c).values_
    b = LandmarkPAF(window=30 * factor, landmarks=[10.0 * factor, 20.0 * factor]).fit(s).values_
    np.testing.assert_allclose(a, b, atol=1e-12)


# --- bootstrap ------------------------------------------------------------

def test_bootstrap_single_replicate():
    c = simulate_cohort(4, 500, seed=1)
    band = bootstrap_band("paf_c", c, B=1, seed=3)
    np.testing.assert_array_equal(band.lower, band.replicates[0])
    np.testing.assert_array_equal(band.upper, band.replicates[0])


def test_bootstrap_deterministic():
    c = simulate_cohort(4, 500, seed=1)
    a = bootstrap_band("paf_o", c, B=20, seed=5)
    b = bootstrap_band("paf_o", c, B=20, seed=5)
    d = bootstrap_band("paf_o", c, B=20, seed=6)
    np.testing.assert_array_equal(a.lower, b.lower)
    np.testing.assert_array_equal(a.upper, b.upper)
    assert not np.array_equal(a.replicates, d.replicates)


def test_bootstrap_matches_explicit_resample():
    c = simulate_cohort(4, 300, seed=2)
    band = bootstrap_band("crude", c, B=5, seed=11)
    rng = np.random.default_rng(11)
    for b in range(5):
        counts = rng.multinomial(len(c), np.full(len(c), 1 / len(c)))
        idx = np.repeat(np.arange(len(c)), counts)
        sub = make_cohort([(None if np.isnan(c.infection_time[i]) else c.infection_time[i],
                            c.exit_time[i], "death" if c.death[i] else "discharge")
                           for i in idx])
        assert band.replicates[b, 0] == pytest.approx(paf_crude(fourfold_table(sub)), abs=1e-12)


def test_bootstrap_landmarks_and_band_order():
    c = simulate_cohort(4, 3000, seed=2)
    est = LandmarkPAF(window=30, landmarks="10:40:10")
    band = bootstrap_band(est, c, B=30, seed=1)
    assert np.all(band.lower <= band.upper)
    assert band.points.tolist() == [10, 20, 30, 40]


def test_bootstrap_argument_errors():
    c = simulate_cohort(4, 100, seed=1)
    with pytest.raises(ValueError):
        bootstrap_band("crude", c, B=0)
    with pytest.raises(ValueError):
        bootstrap_band("crude", c, level=1.0)
    with pytest.raises(ValueError):
        bootstrap_band("nope", c)


def test_bootstrap_too_many_failures():
    # five exposed deaths: most resamples lose a cell below the threshold
    rows = ([(1.0, 3.0, "death")] * 5 + [(1.0, 3.0, "discharge")] * 5
            + [(None, 3.0, "death")] * 5 + [(None, 3.0, "discharge")] * 5)
    c = make_cohort(rows)
    with pytest.raises(BootstrapError):
        bootstrap_band(LandmarkPAF(window=5, landmarks=[2.0]), c, B=50, seed=0)
