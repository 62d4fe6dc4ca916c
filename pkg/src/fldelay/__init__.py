"""Simulate and optimize quantized federated local SGD under a service-delay model."""

from .bound import ProblemConstants, check_bound, theorem1_rhs, theorem1_terms
from .constants import ProbeConfig, estimate_constants
from .delay import (
    ChannelProfile,
    CommCoeffs,
    ComputeProfile,
    DelayReport,
    alpha1,
    comm_delay,
    compute_delay,
    expected_rate,
    fit_compute_profile,
    preset_profile,
    rho,
    service_delay,
)
from .errors import (
    BudgetExceededError,
    ConfigurationError,
    DivergenceError,
    FLDelayError,
    InfeasibleError,
    InvalidArgumentError,
    NeedMoreSamplesError,
    SolverError,
)
from .partition import Partition, partition_data
from .quantization import QuantizerSpec, delta_coefficient, quantize, residual_second_moment
from .tasks import make_task
from .training import DeviceState, TrainingConfig, TrainingTrace, aggregate, local_round, make_devices, train

__version__ = "0.1.0"
