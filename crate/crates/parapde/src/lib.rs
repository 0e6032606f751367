//! Learns parameter-to-solution maps of parametric PDEs with residual loss
//! functions whose value certifies the solution error: a first-order-system
//! least-squares formulation for a parametric diffusion problem and an
//! ultra-weak DPG formulation for parametric linear transport, both with
//! finite element coefficients predicted by a low-rank multilevel residual
//! network trained by L-BFGS.

pub mod elliptic;
pub mod error;
pub mod export;
pub mod lbfgs;
pub mod mesh;
pub mod numerics;
pub mod pipeline;
pub mod quadrature;
pub mod resnet;
pub mod residual;
pub mod transport;

pub use error::{Error, Result};
