//! Causal discovery on autocorrelated time series with latent confounders:
//! synthetic SCM generation, ground-truth oracle PAGs, an LPCMCI-style
//! discovery algorithm, scoring and a benchmark harness.

pub mod bench;
pub mod ci;
pub mod discovery;
pub mod eval;
pub mod graph;
pub mod oracle;
pub mod scm;
