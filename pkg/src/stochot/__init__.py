"""Stochastic optimal-transport map estimation toolbox."""

__version__ = "0.1.0"

from .measures import (  # noqa: F401
    DiscreteMeasure,
    dirac,
    empirical,
    ks_distance_1d,
    make_discrete,
    read_measure,
    sample,
    support_diameter,
    tv_distance,
    write_measure,
)
from .ot_core import (  # noqa: F401
    CostMatrix,
    EotSolution,
    TransportPlan,
    brute_force_ot,
    cost_matrix,
    exact_ot,
    ot_1d,
    round_plan_to_feasible,
    sinkhorn,
    wasserstein_p,
)
from .kernels import (  # noqa: F401
    DiscreteKernel,
    KernelPipeline,
    MonteCarloConfig,
    compose,
    evaluate_at,
    kernel_from_plan,
    pushforward,
    transport_cost,
)
from .error_metric import (  # noqa: F401
    EpReport,
    lp_map_distance,
    monge_gap_error,
    transportation_error,
)
from .estimators import (  # noqa: F401
    EstimatorConfig,
    build_estimator,
    cdf_estimator_1d,
    entropic_estimator,
    nn_estimator,
    null_estimator,
    robust_conv_estimator,
    rounding_estimator,
)
from .corruption import (  # noqa: F401
    CorruptionBudget,
    corrupt,
    lb_instance_tv,
    lb_instance_wp,
    robust_wp,
)
from .experiments import (  # noqa: F401
    ExperimentConfig,
    bootstrap_quantiles,
    gen_checkerboard,
    gen_figure2,
    gen_setting_a,
    gen_setting_b,
    run_experiment,
)
from .seeding import derive_rng, derive_seed  # noqa: F401
