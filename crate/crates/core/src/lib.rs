//! Low-rank tensor-train completion.
//!
//! Dense and TT tensor types, TT-SVD, Riemannian gradient descent on the
//! manifold of fixed TT rank with trimming, sequential second-order moment
//! initialization, diagnostics and an experiment harness.

pub mod bench;
pub mod completion;
pub mod diagnostics;
pub mod error;
pub mod init;
pub mod linalg;
pub mod observations;
pub mod rng;
pub mod tangent;
pub mod tensor;
pub mod tt;

pub use error::{Result, TtError};
pub use observations::ObservationSet;
pub use tensor::{DenseTensor, Shape, Tensor3, DEFAULT_DENSE_CAP};
pub use tt::{RankVector, TtTensor};
