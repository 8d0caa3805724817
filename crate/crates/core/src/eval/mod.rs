//! Evaluation: dose-volume histograms, ANOVA and t-tests, and the
//! multi-method comparison that ties them together.

pub mod comparison;
pub mod dvh;
pub mod stats;

pub use comparison::{run_comparison, write_comparison, ChatBackend, ComparisonResult, EvalSettings, Method, StatsReport, TrialSet};
pub use dvh::{dvh, DvhCurve};
pub use stats::{one_way_anova, reg_inc_beta, two_sample_t, AnovaResult, TTestResult};
