//! Variance-driven acquisition over an ensemble of multitask models, plus
//! the synthetic labeling oracle used in place of quantum chemistry.

mod acquisition;
mod oracle;
mod pool;

pub use acquisition::{
    acquire, al_loop, ensemble_variance, predicted_graph, select_round, train_ensemble, AcquisitionConfig, AlError, ElementShift, Ensemble, History,
    RoundMetrics, RoundRecord, VarianceTable, TARGET_NAMES,
};
pub use oracle::{oracle_lp_counts, synth_label, synth_simg, OracleError, OracleRules};
pub use pool::{write_atomic, Label, Pool, PoolError};
