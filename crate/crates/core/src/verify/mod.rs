//! Independent numerical oracles: finite differences, a direct-loop
//! convolution and a receptive-field probe.

pub mod gradcheck;
pub mod naive_conv;
pub mod receptive;
pub mod registry;

pub use gradcheck::{check_op, finite_diff_grad, relative_error, Case, GradCheckReport};
pub use naive_conv::naive_conv;
pub use receptive::{receptive_field_probe, ProbeLayer, ReceptiveField};
pub use registry::{run_all, run_check, CHECKS, DEFAULT_INSTANCES};
