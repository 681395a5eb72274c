//! Minimal multilayer-perceptron engine with reverse-mode gradients, an
//! Adam optimizer with decoupled weight decay, and the structured
//! identity-perturbation networks built on top.

mod checkpoint;
mod mlp;
mod optim;
mod structured;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use mlp::{Mlp, MlpGrads, MlpTrace};
pub use optim::OptimizerState;
pub use structured::{NetMode, PhaseSign, StructuredGrads, StructuredNetSet};
