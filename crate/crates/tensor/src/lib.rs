//! Dense `f32` tensors, a define-by-run reverse-mode graph, the Adam optimizer
//! and a self-describing checkpoint format.
//!
//! Model parameters live in a [`ParamStore`] as plain [`Tensor`]s. Each training
//! step builds a fresh [`Graph`], registers the parameters it touches with
//! [`Graph::param`], records forward operations, and calls [`Graph::backward`]
//! on a scalar loss. The resulting [`Gradients`] are handed to [`Adam::step`].
//!
//! ```
//! use atvc_tensor::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let p = g.param("p", &Tensor::from_vec(vec![1.0, 2.0], &[2]).unwrap());
//! let sq = g.mul(p, p).unwrap();
//! let loss = g.sum(sq);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(p).unwrap().data(), &[2.0, 4.0]);
//! ```

mod adam;
mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
mod kernels;
mod ops;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use params::{GradMap, ParamStore};
pub use tensor::Tensor;

/// Deterministic RNG used for initialization and sampling across the workspace.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Build the workspace RNG from a seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
