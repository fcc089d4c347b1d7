"""Population-attributable fractions for a time-dependent exposure with competing risks.

The package simulates cohorts from the extended illness-death model and
estimates four PAF estimands: crude, observable curve, counterfactual curve
and landmark.
"""

from .hazards import Constant, HazardSet, HazardSpec, Weibull, cumulative_hazard, hazard_at
from .cohort import (Cohort, FourfoldTable, LandmarkData, LandmarkGrid, PatientHistory,
                     fourfold_table, landmark_dataset, read_cohort, write_cohort)
from .simulation import SCENARIOS, Scenario, scenario_registry, simulate_cohort
from .aalen_johansen import (CensoredCif, TransitionCurves, aalen_johansen,
                             cif_censor_at_exposure, constant_hazard_oracle)
from .glm import (LogisticRegressionIRLS, fit_logistic, ipw_uninfected_weights,
                  paf_greenland_drescher)
from .paf import (paf_c_curve, paf_crude, paf_lm_separate, paf_lm_supermodel, paf_o_curve)
from .estimators import (CounterfactualPAF, CrudePAF, LandmarkPAF, ObservablePAF,
                         bootstrap_band)

__all__ = [
    "Constant",
    "HazardSet",
    "HazardSpec",
    "Weibull",
    "cumulative_hazard",
    "hazard_at",
    "Cohort",
    "FourfoldTable",
    "LandmarkData",
    "LandmarkGrid",
    "PatientHistory",
    "fourfold_table",
    "landmark_dataset",
    "read_cohort",
    "write_cohort",
    "SCENARIOS",
    "Scenario",
    "scenario_registry",
    "simulate_cohort",
    "CensoredCif",
    "TransitionCurves",
    "aalen_johansen",
    "cif_censor_at_exposure",
    "constant_hazard_oracle",
    "LogisticRegressionIRLS",
    "fit_logistic",
    "ipw_uninfected_weights",
    "paf_greenland_drescher",
    "paf_c_curve",
    "paf_crude",
    "paf_lm_separate",
    "paf_lm_supermodel",
    "paf_o_curve",
    "CounterfactualPAF",
    "CrudePAF",
    "LandmarkPAF",
    "ObservablePAF",
    "bootstrap_band",
]

__version__ = "0.1.0"
