//! Synthetic trajectory generators, the dataset container and its file
//! format, and sliding-window iteration.

mod dataset;
mod format;
mod oracle;
mod vortex;
mod windows;

pub use dataset::{DatasetMeta, Trajectory, TrajectoryDataset};
pub use format::{
    load_dataset, read_dataset, save_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION,
};
pub use oracle::{generate_linear_oracle, LinearOracle, LinearOracleConfig, LINEAR_ORACLE_ID};
pub use vortex::{generate_vortex_street, VortexStreetConfig, VELOCITY_BOUND, VORTEX_STREET_ID};
pub use windows::{sliding_windows, window_at, window_count, window_starts, WindowBatch, CONTEXT};
