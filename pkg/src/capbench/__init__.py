"""capbench: a benchmark toolkit for neural channel-capacity estimation.

Couples variational neural mutual-information estimators with a learned
input-distribution generator to estimate capacity and capacity-achieving
inputs for AWGN, optical-intensity, peak-power-constrained AWGN, Poisson,
and two-user MAC channels, cross-checked against analytic bounds and a
Blahut-Arimoto oracle.
"""

from .autodiff import Tensor, backward
from .bounds import (
    BoundValue,
    RateRegion,
    awgn_capacity,
    awgn_mac_region,
    blahut_arimoto,
    kramer_upper,
    oi_lower,
    oi_mac_region,
    oi_reference_bounds,
    poisson_reference_bounds,
    ppc_lower,
    ppc_upper,
)
from .channels import (
    ChannelSpec,
    ConstraintSpec,
    awgn_forward,
    channel_forward,
    mac_forward,
    poisson_forward,
    project_constraints,
)
from .estimators import (
    CriticNet,
    Diagnostics,
    EstimatorConfig,
    MIEstimate,
    build_estimator,
    chi2_upper_kl,
    chi2_variational,
)
from .mac import MacEstimate, cmi_entropy_based, run_mac_nce
from .ndt import NdtNet, SourceSpec, histogram, ndt_sample
from .nn import Activation, Adam, AdamState, Mlp, adam_update, mlp_forward
from .rng import RngStream, sample_poisson
from .trainer import (
    CapacityRunResult,
    TrainConfig,
    eval_final,
    run_discrete_search,
    run_nce,
)

__version__ = "0.1.0"
