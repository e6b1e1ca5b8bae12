//! Discrete p-energies, renormalization eigenforms, Besov functionals, energy
//! measures and resistance geometry on post-critically finite self-similar sets.

pub mod besov;
pub mod config;
pub mod error;
pub mod graph_forms;
pub mod measures;
pub mod metric;
pub mod properties;
pub mod renorm;
pub mod structure;
pub mod suite;

pub use error::{ConfigError, IoError, RunError, SolveError, StructureError};
pub use graph_forms::{
    capacity, capacity_potential, cell_energies, cell_energies_two, dirichlet_solve, energy,
    energy_two, harmonic_extend, BoundaryForm, DiscreteFunction,
    EnergyModel, GraphForm, SampledForm,
};
pub use structure::{
    build_vertex_table, cell_adjacency, partition_scale, sample_measure, PcfStructure, SampleCloud,
    SelfSimilarMeasure, VertexTable, Word,
};
