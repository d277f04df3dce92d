//! Graph data model, ingestion, normalization, synthetic constructions, and
//! the 1-WL oracle.

pub mod graph;
pub mod io;
pub mod iso;
pub mod synth;
pub mod wl;

pub use graph::{normalize_adjacency, Csr, Graph, IngestStats, Masks, NormalizedAdjacency};
pub use io::{load_dataset, save_dataset, LoadedDataset};
pub use iso::{are_isomorphic, srg_parameters};
pub use wl::{cycle4_signature, wl_distinguishes, wl_refine, WlColoring};
