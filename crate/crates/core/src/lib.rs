//! Classical training and verification of IQP and extended-IQP generative
//! models.

pub mod circuit;
pub mod diagnostics;
pub mod error;
pub mod forrelation;
pub mod rng;
pub mod statevector;
pub mod tn;
pub mod verify;
pub mod trainer;

pub use circuit::{
    bind, build_family, check_bipartite, connectivity_graph, phase_feature_map, random_ensemble_instance,
    AngleRef, Bipartition, BoundCircuit, BoundGate, Circuit, CircuitFamily, ConnectivityGraph, FamilyOptions,
    Gate,
};
pub use error::{Error, Result};
pub use statevector::{simulate, GammaConvention, ProbabilityTable, SampleCounts, StateVector};
