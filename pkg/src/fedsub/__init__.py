"""Desk-scale model-heterogeneous federated learning simulator.

Submodels are magnitude-threshold masks over one flat parameter vector;
local training is threshold-controlled biased gradient descent; the server
folds updates with partial averaging over whichever clients hold each
coordinate. Structured baselines (HeteroFL-style static prefixes,
FedRolex-style rolling windows, greedy magnitude pruning) share the same
client/server machinery.
"""

from .params import (
    CapacityProfile,
    LayerLayout,
    LayerSpec,
    ParamVector,
    init_params,
    mlp_layout,
    slice_layer,
)
from .masking import (
    Mask,
    Threshold,
    eval_mask,
    full_mask,
    is_nested,
    ste_factor,
    topk_threshold,
)
from .network import (
    Batch,
    evaluate,
    finite_diff_grad,
    forward_loss,
    grad_frozen_mask,
    tcb_grad,
)
from .client import ClientUpdate, local_train_fiarse, local_train_fixed_mask
from .server import (
    AggResult,
    RoundPlan,
    aggregate_indexwise,
    aggregate_nested,
    expected_agg_coeff,
    extract_submodel,
    global_step,
    sample_clients,
)
from .baselines import (
    RollState,
    fedrolex_mask,
    heterofl_mask,
    initial_roll_state,
    pruning_greedy_round,
)
from .data import (
    ClientDataset,
    dirichlet_partition,
    gen_synthetic,
    global_test,
    load_csv_dataset,
)
from .metrics import (
    MaskHistory,
    capacity_sweep,
    exploration_rate,
    mask_churn,
    report_round,
)
from .config import (
    ConfigError,
    ExperimentConfig,
    emit_config,
    parse_config,
    parse_config_text,
)
from .runner import (
    MetricRow,
    NumericFailure,
    RunResult,
    emit_csv,
    load_metrics_csv,
    run_experiment,
)

__version__ = "0.1.0"
