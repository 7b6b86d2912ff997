//! Minimal dense tensor library with tape-based reverse-mode differentiation.
//!
//! Storage and compute are `f32`, row-major. Reductions and optimizer moments
//! accumulate in `f64`. Every public op checks its output for non-finite values
//! and reports [`TensorError::Domain`] instead of letting NaN/Inf escape.
//!
//! ```
//! use textrec_tensor::{ParamStore, Tape, Tensor};
//!
//! let mut store = ParamStore::new();
//! let w = store.add("w", Tensor::from_vec(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
//! let tape = Tape::new();
//! let x = tape.param(&store, w);
//! let loss = x.mul(x).unwrap().sum().unwrap();
//! tape.backward(loss, &mut store).unwrap();
//! assert_eq!(store.get(w).grad().data(), &[2.0, -4.0, 1.0]);
//! ```

pub mod adam;
pub mod checkpoint;
mod error;
pub mod exec;
pub mod gradcheck;
pub mod init;
pub mod kernels;
mod param;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::{Result, TensorError};
pub use exec::ExecPolicy;
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Bag, Tape, Var};
pub use tensor::Tensor;
