"""Lifted linear modeling of vehicular platoon dynamics with stability analysis."""

from .baselines import DmdcModel, dmdc_fit, dmdc_fit_pairs, dmdc_rollout, idm_rollout
from .data import (
    Dataset,
    FollowerInit,
    NormScales,
    PlatoonTrajectory,
    StateSequence,
    VehicleTrace,
    derive_states,
    fit_normalization,
    generate_leader_profile,
    load_trajectories,
    simulate_platoon,
    split_dataset,
)
from .evaluation import (
    MetricReport,
    compare_models,
    phase_plane_export,
    position_metrics,
    reconstruct_positions,
)
from .idm import IdmParams, equilibrium_spacing, idm_accel
from .model import (
    EncoderParams,
    KoopmanModel,
    KoopmanOperator,
    TrainConfig,
    encode,
    load_model,
    loss_gradients,
    project,
    rollout,
    rollout_loss,
    rollout_physical,
    save_model,
    step,
    train,
)
from .stability import (
    ContinuousSystem,
    EigenReport,
    FrequencyResponse,
    d2c_zoh,
    local_stability,
    string_stability_sweep,
    transfer_gain,
)

__version__ = "0.1.0"
