"""Autonomous characterization of a white circle from point light readings.

Nested sampling infers the circle; each next reading is taken where the
predictive distribution of the posterior ensemble has maximum entropy.
"""

from .estimators import CircleNestedSampler, PredictiveEntropy
from .experiment import (ExperimentConfig, ExperimentState, IterationRecord, StoppingRule,
                         bootstrap, run_experiment, step)
from .inquiry import (CandidateGrid, EmptyGrid, EntropyMap, InquiryConfig,
                      build_jittered_grid, entropy_map, histogram_entropy,
                      predictive_draws, select_measurement)
from .model import (Circle, Dataset, FieldBounds, Measurement, Prior, SensorResponse,
                    contains_point, log_likelihood, log_likelihood_point, log_prior,
                    sample_prior)
from .nested import (DegenerateWeights, ExplorationStalled, NestedRun, PosteriorEnsemble,
                     SamplerConfig, resample_ensemble, run_nested, summarize)
from .sensor import GroundTruth, SensorReading, SimulatedSensor

__version__ = "0.1.0"
