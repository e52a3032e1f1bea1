//! Panel-data kernel: balanced panel container, within transformation,
//! least-squares via orthogonal decomposition, robust covariances, and
//! descriptive statistics.

mod dataset;
mod ols;
mod stats;

pub(crate) use dataset::demean;
pub use dataset::{
    read_panel_csv, within_transform, write_panel_csv, Effects, PanelDataset, Role,
};
pub use ols::{
    design_from_panel, ols_fit, ols_fit_absorbed, sandwich_covariance, DesignMatrix, OlsFit,
    SandwichFlavor,
};
pub use stats::{
    correlation_matrix, describe, write_correlation_csv, write_describe_csv, CorrelationMatrix,
    DescribeRow,
};
