//! Simulation and inference for vote accumulation on a social news site.
//!
//! A story submitted to the site starts with its submitter's single vote
//! and becomes visible three ways: on the upcoming list (for a bounded
//! window), on the front page once its votes cross a promotion threshold,
//! and to the fans of everyone who has voted on it so far. Each viewer
//! votes with a story-specific probability, and each vote exposes the
//! story to a fresh batch of the voter's fans.
//!
//! The crate provides:
//!
//! - [`model`]: the closed-form ingredients (page-view tail, list
//!   positions, fan increment, visibility rates).
//! - [`ode`]: the mean-field solver producing dense vote trajectories
//!   through the promotion and removal discontinuities.
//! - [`montecarlo`]: an exact discrete-event simulation of the same
//!   process, used to validate the mean-field approximation and to
//!   generate synthetic observation data.
//! - [`fitting`]: per-story interest estimation, early-history
//!   prediction, a linear-extrapolation baseline, and the promotion
//!   boundary.
//! - [`stats`]: lognormal MLE with parametric-bootstrap goodness of fit,
//!   permutation tests, and error metrics.
//! - [`io`]: run configuration and the delimited table formats shared
//!   with the command-line tool.

pub mod fitting;
pub mod io;
pub mod model;
pub mod montecarlo;
pub mod ode;
pub mod special;
pub mod stats;

pub use fitting::{
    baseline_extrapolate, classify_promotion, estimate_interest, predict_from_early,
    promotion_boundary, FitError, FitResult, ObservationSeries,
};
pub use model::{
    fan_increment, front_page, ode_rhs, page_fraction, upcoming_page, visibility_rates,
    ListState, ModelError, SiteParams, StoryParams, StoryState, VisibilityRates,
};
pub use montecarlo::{
    generate_synthetic_dataset, simulate_ensemble, simulate_once, FanCountDistribution,
    InterestDistribution, McControls, McEnsemble, McError, SynthControls, SyntheticStory,
};
pub use ode::{
    promotion_time, solve_story, SolveControls, SolveError, Trajectory, TrajectoryKind,
    TrajectorySample,
};
pub use stats::{
    correlation_permutation_test, error_metrics, ks_randomization_test, lognormal_fit_with_gof,
    lognormal_mle, paired_correlation_test, ErrorMetrics, LognormalFit, StatsError,
};
