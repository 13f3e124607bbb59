//! Probes on frozen representations and the value-bound check on tabular
//! instances.

mod diagnostic;
mod probe;
mod values;

pub use diagnostic::{latent_partition, LatentDiagnostic};
pub use probe::{
    collect_probe_dataset, probe_env_label, probe_loss, probe_loss_graph, probe_state, train_probe, CurvePoint,
    ProbeConfig, ProbeDataset, ProbeResult, TRAIN_FRACTION,
};
pub use values::{
    aggregate_and_solve, bound_sweep, check_partition_bound, check_value_bound, check_value_bound_core, greedy_policy,
    policy_evaluation, value_bound, value_iteration, BoundReport, SweepCase, SweepReport, GAP_TOL,
    MAX_ENUMERATED_POLICIES, SWEEP_GAMMA, SWEEP_HORIZONS, VI_TOL,
};
