//! Dense `f64` tensors and a tape-style reverse-mode differentiator.
//!
//! A [`Graph`] is rebuilt for every forward pass. Operations append nodes in
//! evaluation order, so the node list is already topologically sorted and
//! [`Graph::backward`] is a single reverse sweep.
//!
//! ```
//! use numcore::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let a = g.param("a", &Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
//! let b = g.constant(Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap());
//! let y = g.matmul(a, b).unwrap();
//! let loss = g.sum(y).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(g.value(loss).data(), &[11.0]);
//! assert_eq!(grads.param("a").unwrap(), &[3.0, 4.0]);
//! ```

mod error;
mod graph;
pub mod gradcheck;
mod kernels;
mod tensor;

pub use error::{NumError, Result};
pub use graph::{Activation, Binary, Gradients, Graph, Var};
pub use tensor::Tensor;
