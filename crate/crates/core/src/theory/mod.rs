//! Numerical checks of the static-inference stability cap and the routed
//! coverage, selection and stability bounds on finite instances. Every
//! expectation and supremum is computed by enumeration.

pub mod instances;
mod routed;
mod verify;
mod witness;

pub use routed::{
    h2_coverage_selection, h2_joint_and_separation, h2_stability_decomposition, CoverageReport, JointCaps,
    JointReport, Mechanism, Router, RouterKind, RoutedFamily, RoutingState, StabilityReport,
};
pub use verify::{instance_seed, run_verification, CheckRow, TheoremTable, VerifyConfig, VerifyReport};
pub use witness::{
    h1_bound_check, h1_general_bound_check, h1_measured_stability, h1_slice_floor, realized_psi, slice_floor,
    BoundFunctions, Environment, EnvironmentSuite, H1BoundReport, Sample, SliceFloor, Tabulated, WitnessModel,
    SWEEP_POINTS,
};
