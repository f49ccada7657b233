//! Signature-matrix structural analysis of DAE systems, with automatic
//! regularization by the linear-combination and expression-substitution
//! conversion methods.

pub mod expr;
pub mod frontend;
pub mod lc;
pub mod sigma;
pub mod jacobian;
pub mod es;
pub mod pipeline;
pub mod cli;
