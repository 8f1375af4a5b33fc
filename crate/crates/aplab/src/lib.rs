//! Desk-scale laboratory for k-term arithmetic-progression counts in
//! p-biased random subsets of Z/nZ.
//!
//! The counter obeys a central limit theorem but no local one: its pmf
//! oscillates with period G = Theta(n) because the degree-1 part of its
//! p-biased Fourier expansion moves on a lattice of that spacing while the
//! degree >= 3 tail only smears by a comparable Theta(n) width. This crate
//! holds the exact counting kernels, the decomposition and its exact
//! normalizers, the lattice/theta density model, and the Monte Carlo
//! machinery that exhibits the failure numerically.

pub mod cli;
pub mod count;
pub mod decomp;
pub mod error;
pub mod lattice;
pub mod selftest;
pub mod stats;
pub mod theta;

pub use count::{
    count_3ap_convolution, count_kap_naive, flip_delta, sample_subset, APParams, SubsetSample,
};
pub use decomp::{
    biased_transform, closed_form_low_degrees, component_direct, decompose, sigma_exact,
    sigma_exact_sq, sigma_table, sigma_table_cached, BiasedVector, DegreeComponents, SigmaTable,
};
pub use error::{Error, Result};
pub use lattice::{
    a_t, build_lattice_model, delta_param, in_l_alpha, predicted_l_probability, predicted_pmf,
    sandwich_check, IntervalFamily, LatticeModel, PmfPredictor,
};
pub use stats::{
    joint_cdf_check, kolmogorov_distance, lclt_interval_prediction, lclt_scan, run_mc,
    testfunction_check, ComponentSamples, ExperimentConfig, Histogram, McOutput, ScanReport,
};
pub use theta::{extremal_ratio, f_direct, f_fourier, variance_lower_bound, ThetaEvaluator};
