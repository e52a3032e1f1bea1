//! Estimator suite built on the panel kernel.

mod iv;
mod linear;
mod moderation;
mod sample;
mod spec;
mod threshold;

pub use iv::{iv_closed_form, lag_name, lag_variable, tsls, TslsResult};
pub use linear::{fixed_effects, hausman_test, random_effects, HausmanResult};
pub use moderation::{
    center, centered_name, interaction_name, moderation_fit, moderator_moments, simple_slopes,
    simple_slopes_at, write_slopes_csv, SimpleSlope,
};
pub use sample::{read_region_map, read_region_map_path, split_sample};
pub use spec::{
    stars_for, two_sided_p, write_results_csv, EstimationResult, ModelSpec, SampleFilter, Term,
};
pub use threshold::{threshold_bootstrap, threshold_fit, write_lr_curve_csv, ThresholdFit};
