import warnings

import numpy as np
import pandas as pd
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tdpaf.estimators import (CounterfactualPAF, CrudePAF, LandmarkPAF, ObservablePAF,
                              check_cohort, make_estimator)
from tdpaf.glm import paf_greenland_drescher
from tdpaf.simulation import simulate_cohort

ALL = [CrudePAF(), ObservablePAF(), CounterfactualPAF(covariates=["z"], cap=20.0),
       LandmarkPAF(window=8, landmarks="1:10:1", method="supermodel", basis="linear")]


@pytest.mark.parametrize("est", ALL, ids=lambda e: type(e).__name__)
def test_params_and_clone(est):
    params = est.get_params()
    twin = clone(est)
    assert twin.get_params() == params
    twin.set_params(**params)
    assert repr(twin) == repr(est)


@pytest.mark.parametrize("est", ALL, ids=lambda e: type(e).__name__)
def test_predict_before_fit(est):
    with pytest.raises(NotFittedError):
        est.predict([1.0])


def test_make_estimator():
    assert isinstance(make_estimator("paf_lm", window=5), LandmarkPAF)
    with pytest.raises(ValueError):
        make_estimator("bogus")


def _frame(c, z):
    return pd.DataFrame({
        "id": c.ids, "infection_time": c.infection_time, "exit_time": c.exit_time,
        "exit_state": np.where(c.death, "death", "discharge"), "z": z,
    })


def test_dataframe_input():
    c = simulate_cohort(4, 1000, seed=1)
    z = np.random.default_rng(0).integers(0, 2, len(c)).astype(float)
    df = _frame(c, z)
    back = check_cohort(df)
    assert np.array_equal(back.exit_time, c.exit_time)
    assert back.covariate_names == ("z",)
    assert CrudePAF().fit(df).paf_ == CrudePAF().fit(c).paf_
    adj = CrudePAF(covariates=["z"]).fit(df)
    assert adj.paf_ == paf_greenland_drescher(back, ["z"]).paf
    assert adj.variance_ > 0
    with pytest.raises(ValueError):
        check_cohort(df.drop(columns="exit_state"))
    with pytest.raises(TypeError):
        check_cohort([1, 2, 3])


def test_dict_input_bad_state():
    with pytest.raises(ValueError, match="exit_state"):
        check_cohort({"exit_time": np.array([1.0]), "exit_state": np.array(["alive"])})


def test_curve_predict_and_defaults():
    c = simulate_cohort(4, 2000, seed=1)
    est = ObservablePAF().fit(c)
    pts = est.default_points()
    assert pts[0] == 0 and pts[-1] == min(np.floor(c.tau), 200)
    assert np.isnan(est.predict([0.0]))[0]
    assert est.predict().shape == est.curve_.values.shape


def test_counterfactual_with_covariate_weights():
    c = simulate_cohort(4, 2000, seed=1)
    z = np.random.default_rng(0).integers(0, 2, len(c)).astype(float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        est = CounterfactualPAF(covariates=["z"]).fit(_frame(c, z))
    plain = CounterfactualPAF().fit(c)
    # z is unrelated to the outcome, so weighting barely moves the curve
    t = np.arange(10.0, 150.0, 10.0)
    assert np.max(np.abs(est.predict(t) - plain.predict(t))) < 0.03
    assert est.weights_.matrix.shape[0] == len(c)


def test_landmark_predict_missing():
    c = simulate_cohort(4, 2000, seed=1)
    est = LandmarkPAF(window=30, landmarks="0:20:10").fit(c)
    out = est.predict([0.0, 10.0, 15.0])
    assert np.isnan(out[0]) and np.isnan(out[2]) and np.isfinite(out[1])
    assert est.skipped_[0][0] == 0.0
    with pytest.raises(ValueError):
        LandmarkPAF(method="pooled").fit(c)
