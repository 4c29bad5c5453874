//! Bounded-capacity kinetic compartmental networks.
//!
//! A compartmental graph with capacities becomes a chemical reaction network
//! over particle and free-space species. This crate builds that network and
//! its Petri net, enumerates minimal siphons, certifies persistence with
//! exact rational conserved quantities, and simulates and numerically checks
//! the reduced dynamics on the capacity box.

pub mod conservation;
pub mod crn;
pub mod dynamics;
pub mod graph;
pub mod integrate;
pub mod lp;
pub mod persistence;
pub mod petri;
pub mod random;
pub mod rate;
pub mod verify;

pub use conservation::{
    left_null_space, positive_conserved_on_support, strictly_positive_conserved, CertificateError,
    ConservedQuantity,
};
pub use crn::{
    compartmental_crn, compartmental_species_names, triangle_exchange_network, Crn, CrnError,
    RateFunction, Reaction, StoichiometricMatrix,
};
pub use dynamics::{
    boundary_floor, matrix_measure_l1, total, BoundaryScanReport, ContractionReport, DynamicsError,
    EquilibriumOptions, EquilibriumResult, MonotonicityReport, PairOptions, ReducedSystem,
    RepulsionReport, SimOptions, Trajectory,
};
pub use graph::{CompartmentalGraph, GraphError, GraphSpec};
pub use persistence::{
    check_persistence_structural, check_persistence_theorem1, PersistenceMethod, PersistenceVerdict,
    Verdict,
};
pub use petri::{closed_form_siphons, PetriError, PetriNet, Siphon, SiphonMethod, SiphonReport};
pub use rate::{CustomRate, RateLaw, RateSpec};
pub use verify::{run_suite, Check, VerificationReport, VerifyConfig};
