#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cavity;
pub mod config;
pub mod constants;
pub mod dynamics;
pub mod error;
pub mod fit;
pub mod levels;
pub mod polarization;
pub mod pulse;
pub mod scan;
pub mod scenario;
pub mod stats;
pub mod storage;
pub mod tomography;
