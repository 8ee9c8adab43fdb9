//! Learning the radial topology and hidden-node injection statistics of a
//! power distribution grid from nodal voltage second moments.
//!
//! The crate is organized around a linear-coupled power flow model on trees:
//!
//! - [`grid`] — validated radial topologies, candidate edge supersets, and the
//!   closed-form reduced Laplacian inverses all moment formulas rest on.
//! - [`moments`] — exact (analytic) and sampled (empirical) voltage second
//!   moments, and the pairwise φ difference-variance tables the learners read.
//! - [`sim`] — seeded scenario generation: random radial grids, Gaussian
//!   injection sampling, the power-flow solve, and measurement noise.
//! - [`learn`] — the estimators: MST topology recovery with full observation,
//!   the hidden-node variants for well-separated and merely non-adjacent
//!   hidden nodes, threshold configuration, and sample-complexity bounds.

pub mod grid;
pub mod learn;
pub mod moments;
pub mod sim;

pub use grid::{
    hinv_entry, hinv_matrix, reduced_laplacian_inverse, CandidateEdgeSet, GridError, GridTopology,
    Impedance, NodeId, TreeIndex, WeightKind,
};
pub use learn::{
    algorithm1, algorithm2, algorithm3, compute_bounds, kruskal_mst, InjectionMoments, LearnError,
    LearnedModel, SeparationBounds, Thresholds,
};
pub use moments::{
    analytic_phi_table, analytic_voltage_moments, empirical_phi_table, InjectionStatistics,
    MomentError, MomentTable, Provenance, VoltageMoments, VoltageSamples,
};
pub use sim::{
    add_measurement_noise, lcpf_solve, make_scenario, sample_injections, ExperimentConfig,
    HiddenPolicy, InjectionSamples, ScenarioTruth, SimError,
};
