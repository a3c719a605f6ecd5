"""Feature-dependent linear stacking of regression models."""

from .errors import (ConfigError, DataError, FoldError, InvalidInputError, LearnerError,
                     ModelFormatError, NotPositiveDefiniteError, ShapeError, StageError,
                     UnsupportedVersionError)
from .evaluation import (EvalReport, MetricWithSE, error_correlation, mae_with_se, mse_with_se,
                         redundancy_flags, weight_summary)
from .learners import Dataset, FittedLearner, LearnerSpec
from .nn import TrainConfig
from .stacking import (ConstantWeights, OofMatrix, StackedModel, StackNet, build_oof_matrix,
                       cnns_head, cnns_weights, fit_breiman, fit_stacker, kfold_partition,
                       predict_stacked, simplex_project, theorem_weights, train_baseline_nn,
                       train_cnns, train_unns)

__version__ = "0.1.0"
