"""Blip/sojourn path-sum simulator for the driven spin-boson model.

Units: hbar = 1, energies and frequencies in units of the tunneling
amplitude Delta, times in units of 1/Delta.
"""

from .bath import (
    BathSpec,
    KernelTable,
    build_kernel_table,
    correlator_r,
    correlator_s,
    spectral_density,
)
from .drive import (
    DriveProtocol,
    SystemSpec,
    Trajectory,
    bias_at,
    classical_work_split,
    g_integral,
    trajectory_from_path,
    w1_work,
    w_ns_rate,
)
from .engine import (
    EngineConfig,
    SeriesResult,
    order_n_term,
    transition_probability,
    transition_probability_niba,
    work_form_average,
)
from .errors import (
    BlipsumError,
    ConfigError,
    ConvergenceError,
    DomainError,
    ExtrapolationError,
    ResourceError,
)
from .kernels import (
    BlipPath,
    InfluenceFactors,
    h_phase,
    influence_factors,
    lambda_jk,
    phi_phase,
    q_amplitude,
    work_phase,
    x_jk,
)

__version__ = "0.1.0"
