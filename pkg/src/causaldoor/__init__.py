"""Covariate-adjusted estimation of the DOOR probability for two-arm studies."""
from .dataset import ColumnMap, DoorDataset, ModelSpec, load_csv, summarize, write_csv
from .estimator import DoorEstimator, LogisticPropensity, ProportionalOddsRegression
from .estimators import (CellProbEstimate, comparison_matrix, compute_cells, crude_cells,
                         door_from_cells, dr_cells, gformula_cells, iptw_cells,
                         sequential_dichotomized)
from .exceptions import (ConvergenceError, DegenerateVarianceError, DoorError, PositivityError,
                         ValidationError)
from .inference import (DoorEstimate, InfluenceMatrix, bootstrap_se, covariance, crude_influence,
                        door_inference, door_jacobian, dr_influence, gformula_influence,
                        iptw_influence)
from .pipeline import AnalysisReport, analyze, estimate_door
from .regression import (OutcomeFit, PropensityFit, fit_logistic, fit_proportional_odds,
                         score_and_information)

__version__ = "0.1.0"
