use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::panel::{Effects, PanelDataset, SandwichFlavor};

/// Restriction of the estimation sample by entity.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFilter {
    ExcludeEntities(Vec<String>),
    KeepEntities(Vec<String>),
}

/// What to regress on what, and how.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub dependent: String,
    /// The focal regressor whose coefficient the analysis is about.
    pub focal: String,
    pub controls: Vec<String>,
    pub effects: Effects,
    pub se_flavor: SandwichFlavor,
    pub sample_filter: Option<SampleFilter>,
}

impl ModelSpec {
    pub fn new(dependent: impl Into<String>, focal: impl Into<String>) -> Self {
        Self {
            dependent: dependent.into(),
            focal: focal.into(),
            controls: Vec::new(),
            effects: Effects::Both,
            se_flavor: SandwichFlavor::ClusterByEntity,
            sample_filter: None,
        }
    }

    pub fn with_controls(mut self, controls: &[&str]) -> Self {
        self.controls = controls.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_effects(mut self, effects: Effects) -> Self {
        self.effects = effects;
        self
    }

    pub fn with_se(mut self, flavor: SandwichFlavor) -> Self {
        self.se_flavor = flavor;
        self
    }

    pub fn with_filter(mut self, filter: SampleFilter) -> Self {
        self.sample_filter = Some(filter);
        self
    }

    /// Check the spec against a panel: columns exist, roles don't overlap.
    pub fn validate(&self, p: &PanelDataset) -> Result<()> {
        for col in
            std::iter::once(&self.dependent).chain(std::iter::once(&self.focal)).chain(&self.controls)
        {
            if !p.has_column(col) {
                return Err(Error::Invalid(format!("model references unknown column '{col}'")));
            }
        }
        if self.controls.contains(&self.focal) {
            return Err(Error::Invalid(format!(
                "focal column '{}' cannot also be a control",
                self.focal
            )));
        }
        if self.dependent == self.focal || self.controls.contains(&self.dependent) {
            return Err(Error::Invalid(format!(
                "dependent column '{}' cannot appear among regressors",
                self.dependent
            )));
        }
        let mut sorted = self.controls.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Invalid("duplicate control column".into()));
        }
        Ok(())
    }

    /// Apply the entity filter, if any, returning the estimation sample.
    pub fn apply_filter(&self, p: &PanelDataset) -> Result<PanelDataset> {
        match &self.sample_filter {
            None => Ok(p.clone()),
            Some(SampleFilter::KeepEntities(keep)) => p.select_entities(keep),
            Some(SampleFilter::ExcludeEntities(drop)) => {
                for id in drop {
                    if !p.entities().contains(id) {
                        return Err(Error::Invalid(format!(
                            "cannot exclude unknown entity '{id}'"
                        )));
                    }
                }
                let keep: Vec<String> =
                    p.entities().iter().filter(|e| !drop.contains(e)).cloned().collect();
                if keep.is_empty() {
                    return Err(Error::Invalid("sample filter excludes every entity".into()));
                }
                p.select_entities(&keep)
            }
        }
    }

    /// All regressor names in design order: focal first, then controls.
    pub fn regressors(&self) -> Vec<&str> {
        let mut out = vec![self.focal.as_str()];
        out.extend(self.controls.iter().map(String::as_str));
        out
    }
}

/// Significance stars at the 10/5/1% two-sided levels.
pub fn stars_for(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

/// Two-sided p-value of a t-statistic with `dof` residual degrees of
/// freedom.
pub fn two_sided_p(t: f64, dof: usize) -> f64 {
    if !t.is_finite() {
        return f64::NAN;
    }
    let dist = StudentsT::new(0.0, 1.0, dof as f64).expect("dof >= 1");
    2.0 * (1.0 - dist.cdf(t.abs()))
}

/// One reported coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
    pub stars: &'static str,
}

impl Term {
    pub fn from_estimate(name: impl Into<String>, estimate: f64, se: f64, dof: usize) -> Self {
        let t = estimate / se;
        let p = two_sided_p(t, dof);
        Term { name: name.into(), estimate, se, t, p, stars: stars_for(p) }
    }
}

/// A fitted model ready for reporting.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    /// Estimator family: `fe`, `re`, `tsls_stage1`, `tsls`, `moderation`, …
    pub model_kind: String,
    /// Column label used in rendered tables.
    pub label: String,
    pub terms: Vec<Term>,
    /// Covariance the reported SEs come from (robust by default).
    pub covariance: DMatrix<f64>,
    /// Classical covariance, kept for diagnostics (e.g. Hausman).
    pub classical_covariance: DMatrix<f64>,
    pub effects: Effects,
    pub se_flavor: SandwichFlavor,
    /// R² of the (transformed) estimating equation — the within R² for
    /// demeaned fits.
    pub r_squared: f64,
    pub n_obs: usize,
    pub dof: usize,
    pub diagnostics: BTreeMap<String, f64>,
}

impl EstimationResult {
    pub fn term(&self, name: &str) -> Option<&Term> {
        self.terms.iter().find(|t| t.name == name)
    }

    pub fn term_names(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(|t| t.name.as_str())
    }

    /// Index of a term, for covariance lookups.
    pub fn term_index(&self, name: &str) -> Option<usize> {
        self.terms.iter().position(|t| t.name == name)
    }
}

/// Write one model's terms as CSV `term,estimate,se,t,p,stars`.
pub fn write_results_csv(writer: impl Write, result: &EstimationResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["term", "estimate", "se", "t", "p", "stars"])
        .map_err(|e| Error::Data(format!("writing results csv: {e}")))?;
    for t in &result.terms {
        w.write_record([
            t.name.as_str(),
            &t.estimate.to_string(),
            &t.se.to_string(),
            &t.t.to_string(),
            &t.p.to_string(),
            t.stars,
        ])
        .map_err(|e| Error::Data(format!("writing results csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::Data(format!("writing results csv: {e}")))?;
    Ok(())
}
