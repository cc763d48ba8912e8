"""gibbsflow: finite-volume Gibbs measures of Ising spins under spin-flip
dynamics -- exact engines, Monte Carlo, two-layer constrained systems,
uniqueness certificates, and non-Gibbsianness detection at desk scale."""

from .lattice import Box, Configuration, Region, Site, special_config
from .interactions import (
    CollarError,
    DobrushinReport,
    Interaction,
    TranslationClass,
    difference_interaction,
    dobrushin_norm,
    energy_delta,
    hamiltonian_bc,
    hamiltonian_free,
    interaction_from_json,
    interaction_norm,
    interaction_to_json,
    ising_interaction,
    single_site_interaction,
    zero_interaction,
)
from .gibbs import (
    Estimate,
    GibbsSpec,
    MCParams,
    conditional_prob,
    exact_measure,
    exact_two_bc_gap,
    glauber_sample,
    transfer_matrix_1d,
    two_bc_gap,
)
from .dynamics import (
    TIME_SCALE,
    FiniteDynamics,
    InteractionRates,
    PerturbationRates,
    ProductRates,
    SingleSiteKernel,
    Trajectory,
    backwards_operator,
    evolve_exact,
    gillespie_simulate,
    girsanov_bound,
    girsanov_weight,
    pca_kernel,
    rates_from_interaction,
    single_site_kernel,
    unbiased_product_rates,
)
from .twolayer import (
    DynamicalFields,
    compensation_time,
    constrained_hamiltonian,
    epsilon_from_delta,
    fields,
    fields_from_kernel,
    joint_consistency,
    joint_hamiltonian,
    joint_table_direct,
    joint_table_from_hamiltonian,
    joint_total_variation,
)
from .analysis import (
    ClusterHorizon,
    GapRow,
    GapScanResult,
    bad_config_gap,
    cluster_horizon,
    dobrushin_evolved,
    rn_boundary_sensitivity,
    rn_derivative_check,
    transition_scan,
)

__version__ = "0.1.0"
