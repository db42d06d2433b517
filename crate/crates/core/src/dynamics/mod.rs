//! Stochastic trajectory engine for write, storage, read-out and detection.

pub mod detection;
pub mod precession;
pub mod readout;
pub mod trials;
pub mod write;

pub use detection::{apply_detection_chain, ChainOutcome};
pub use precession::evolve_storage;
pub use readout::{ReadoutChannel, ReadoutEngine, ReadoutOutcome};
pub use trials::{
    run_trial_range, run_trials, ClickDataset, HeraldClick, ReadoutClick, ReadoutMode,
    TerminalChannel, TrialEngine, TrialPlan, TrialRecord,
};
pub use write::{WriteChannel, WriteEngine, WriteOutcome};
