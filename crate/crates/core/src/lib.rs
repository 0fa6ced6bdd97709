//! ViDTA: drug–target affinity regression from a SMILES string and a protein
//! sequence.
//!
//! The drug is parsed into a heavy-atom graph, extended with a virtual node
//! connected to every atom, given Laplacian positional encodings and passed
//! through a graph transformer whose edges carry learned features. The
//! protein is integer-encoded and run through three 1-D convolutions with a
//! global max pool. A gated attention fusion combines both embeddings before
//! a four-layer regression head.

pub mod chem;
pub mod cli;
pub mod drug_encoder;
pub mod fusion_head;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod protein_encoder;
pub mod tensor;
