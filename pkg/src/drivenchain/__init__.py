"""Energy growth of a harmonic chain driven by white noise at one site.

Library layout mirrors the analysis pipeline: `potential` holds the
interaction model and dispersion analysis, `kernels` the oscillatory
solution kernels and their long-time asymptotics, `theory` the closed-form
energy predictions, `simulate` the two Monte Carlo engines, and `cli` the
end-to-end verification harness.
"""

from .kernels import (
    DecayCheck,
    InitialData,
    KernelTable,
    build_kernel_table,
    homogeneous_solution,
    initial_energy,
    kernel_decay_check,
    kernel_f,
    kernel_h,
    kernel_x,
    kernel_y,
    stationary_phase_x,
    stationary_phase_y,
)
from .potential import (
    AssumptionError,
    DispersionAnalysis,
    InteractionPotential,
    PotentialError,
    analyze_dispersion,
    compute_dn,
    load_potential,
    nearest_neighbor_potential,
    omega_squared,
    potential_energy,
    potential_from_config,
)
from .quadrature import QuadratureError
from .simulate import (
    ChainState,
    EnergyReport,
    HorizonError,
    MCEnsemble,
    Propagator,
    build_propagator,
    chain_energy,
    increment_covariance,
    noise_basis,
    required_sites,
    series_blocks,
    simulate_chain,
    simulate_kernel_mc,
    step_exact,
    substep_covariance,
    verify_light_cone,
)
from .theory import (
    GlobalPrediction,
    GrowthConstantIdentity,
    LocalPrediction,
    predict_energy_variance,
    predict_global_energy,
    predict_local_kinetic,
    predict_local_potential,
    verify_Dn_equals_dn,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
