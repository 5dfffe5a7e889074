//! Dense f64 arrays with reverse-mode automatic differentiation.
//!
//! Everything is 64-bit and sequential: the forward pass is bitwise
//! deterministic for fixed inputs, which is what makes coalition values
//! cacheable and the experiment pipeline reproducible. Broadcasting is
//! limited to scalars and a leading row dimension ((n,d) with (1,d)).

mod dense;
mod gradcheck;
mod graph;

pub use dense::{logsumexp_slice, Tensor};
pub use gradcheck::{grad_check, grad_check_multi, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
