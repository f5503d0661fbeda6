//! Small reverse-mode autodiff engine and MLP building blocks.
//!
//! Everything runs on `ndarray::Array2<f64>` on the CPU. The engine is sized
//! for toy and desk-scale models: it records a flat tape per forward pass and
//! keeps every intermediate alive until [`Tape::backward`] returns.

mod layers;
mod optim;
mod params;
mod tape;

pub use layers::{sinusoidal_embedding, Activation, Linear, Mlp};
pub use optim::Adam;
pub use params::{ParamGrads, ParamId, ParamStore};
pub use tape::{concat_cols, Gradients, Tape, Var};
