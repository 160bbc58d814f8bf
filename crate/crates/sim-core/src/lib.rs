//! Gated recurrent message passing over a scene-plus-persons graph.
//!
//! A frame is modeled as one scene node connected to M person nodes, with all
//! person pairs also connected. Starting from per-node unary class
//! distributions, the network repeatedly passes messages along the edges and
//! re-predicts every node's label after each step. Learned scalar gates on the
//! edges scale messages up or down, so the effective graph structure is part
//! of what training discovers; an L1 penalty on the gate values pushes the
//! structure toward sparsity.
//!
//! Everything is trained end to end with hand-written reverse-mode gradients
//! (see [`backward`]) and verified against a central finite-difference oracle
//! (see [`gradcheck`]).

pub mod ablate;
pub mod backward;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod loss;
pub mod optim;
pub mod params;
pub mod reference;
pub mod synth;
pub mod train;

pub use error::SimError;
pub use graph::{build_topology, validate_instance, Dims, Edge, FrameInstance, GraphTopology};
pub use inference::{forward, InferenceTrace, MessageState, Predictions};
pub use params::{init_params, ModelParams, ParamBlockSet, ParamGroup, WeightMode};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SimError>;
