//! Binary-neural-network toolkit: information-maximized forward
//! binarization, a distribution-sensitive two-stage gradient estimator,
//! end-to-end training of small binarized CNNs, and exact bit-packed
//! XNOR/Bitcount/Shift inference kernels.

pub mod autodiff;
pub mod bitpack;
pub mod dte;
pub mod error;
pub mod format;
pub mod imb;
pub mod kernels;
pub mod model;
pub mod optim;
pub mod tensor;

pub use error::{BinetError, Result};
pub use tensor::Tensor;
