"""Flow matching toolkit: continuous, discrete (CTMC) and spherical flows in numpy."""

from .errors import (
    ArgumentError,
    ConfigurationError,
    DomainError,
    FMKitError,
    SimulationError,
    SingularityError,
    UnsupportedError,
)
from .scheduler import (
    CondOTScheduler,
    CosineScheduler,
    LinearVPScheduler,
    MixtureScheduler,
    PolynomialScheduler,
    VEScheduler,
    VPScheduler,
    make_scheduler,
    scale_time,
)
from .path import Parameterization, conditional_velocity, convert, sample_path
from .model import MLP, Adam, GaussianOracleVelocity, load_checkpoint, save_checkpoint
from .solver import SolveConfig, compute_likelihood, ode_sample, sde_sample

__version__ = "0.1.0"

# registers the denoiser checkpoint kind
from . import discrete, sphere  # noqa: E402,F401
