//! Stereoelectronics-infused molecular graphs: data formats, graph
//! construction, a small autodiff engine, the lone-pair and multitask
//! models, their losses, active learning and evaluation.

pub mod active_learning;
pub mod chem_io;
pub mod element;
pub mod eval_metrics;
pub mod graph;
pub mod losses;
pub mod models;
pub mod synth;
pub mod tensor;

pub use chem_io::{Molecule, NboRecord};
pub use element::Element;
pub use graph::{ExtendedGraph, NodeKind, NodeRef, SimgGraph};
