//! Two-step sieve estimation of semiparametric multilayered sample-selection
//! models: selection into K + 1 ordered or multinomial categories in the
//! first stage, partially linear outcome regressions with control functions
//! in the second, plus a Monte Carlo engine and a gap-decomposition routine.

pub mod basis;
pub mod data;
pub mod decompose;
pub mod error;
pub mod firststage;
pub mod montecarlo;
pub mod optim;
pub mod pipeline;
pub mod secondstage;

pub use error::{Error, Result};
