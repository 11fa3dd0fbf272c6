//! Dense tensors, a reverse-mode tape over the 1-D layer operations used by
//! MRM-Net, and the Adam optimizer.
//!
//! ```
//! use mrm_tensor::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param(Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq).unwrap();
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[2.0, -4.0, 1.0]);
//! ```

mod adam;
mod error;
pub mod gradcheck;
mod graph;
pub mod init;
pub mod io;
pub mod ops;
mod params;
mod scalar;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{Result, TensorError};
pub use graph::{Graph, OpKind, Var};
pub use ops::conv::conv_out_len;
pub use ops::loss::{DIST_TOL, KL_EPS};
pub use ops::pointwise::sigmoid;
pub use ops::{Mode, RunningStats, BN_EPS, BN_MOMENTUM, LN_EPS};
pub use params::ParamStore;
pub use scalar::Scalar;
pub use tensor::Tensor;
