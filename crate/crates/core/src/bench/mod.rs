pub mod dataset;
pub mod output;
pub mod pathloss;
pub mod presets;
pub mod sweep;

pub use dataset::{build_offline_dataset, build_online_dataset, PILOT_AUGMENT_VAR};
pub use output::{csv_string, emit_csv, write_csv, BerPoint, DetectorKind, SweepVar, CSV_HEADER};
pub use pathloss::{zeta_from_distance, PathLossParams};
pub use presets::{preset, DEFAULT_TRIALS, PRESET_NAMES};
pub use sweep::{
    input_gain_for, prepare_models, run_ber_sweep, run_ber_sweep_with, run_single_frame, CmnetPlan,
    ExperimentConfig, ModelBank, PretrainPlan, PretrainRecord, SweepResult,
};
