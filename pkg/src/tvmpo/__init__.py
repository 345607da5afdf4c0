"""Time-dependent variational Monte Carlo with periodic MPO density matrices."""

from .ansatz import MpoAnsatz, init_product, random_ansatz
from .config import RunConfig, parse_config
from .exact import DenseState, rk4_evolve
from .liouvillian import Coupling, LindbladianSpec, ModelParams, Ring, Torus, build_lindbladian
from .observables import ObservableRequest, measure
from .record import TrajectoryRecord
from .runner import compare, resume, run
from .sampler import SamplerConfig
from .tdvp import IntegratorConfig, RegularizationConfig, TdvpEngine, run_to_time

__all__ = [
    "Coupling",
    "DenseState",
    "IntegratorConfig",
    "LindbladianSpec",
    "ModelParams",
    "MpoAnsatz",
    "ObservableRequest",
    "RegularizationConfig",
    "Ring",
    "RunConfig",
    "SamplerConfig",
    "TdvpEngine",
    "Torus",
    "TrajectoryRecord",
    "build_lindbladian",
    "compare",
    "init_product",
    "measure",
    "parse_config",
    "random_ansatz",
    "resume",
    "rk4_evolve",
    "run",
    "run_to_time",
]
