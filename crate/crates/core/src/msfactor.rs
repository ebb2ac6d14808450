//! Markov-switching factor model: regime-dependent loadings and noise,
//! Hamilton filtering, Kim smoothing, and EM estimation.
//!
//! Each regime `j` draws `x_t ~ N(0, Lambda_j Lambda_j' + sigma2_j I)`, a
//! probabilistic-PCA density, and regimes follow a first-order Markov chain
//! started from its ergodic distribution.

mod em;
mod filter;
mod transition;

pub use em::{em_fit, em_fit_from, EmOptions, MsModel, MsModelReport, MsParams};
pub use filter::{hamilton_filter, hamilton_filter_log, kim_smoother, kim_smoother_pairwise, FilterOutput};
pub use transition::{ergodic_probs, TransitionMatrix};
