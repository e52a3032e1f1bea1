use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::models::linear::{absorbed_for, package_fit};
use crate::models::spec::{EstimationResult, ModelSpec};
use crate::panel::{
    design_from_panel, ols_fit_absorbed, sandwich_covariance, Effects, PanelDataset,
};

/// Name of a lagged column: `L.x` for k=1, `Lk.x` for larger k.
pub fn lag_name(column: &str, k: usize) -> String {
    if k == 1 {
        format!("L.{column}")
    } else {
        format!("L{k}.{column}")
    }
}

/// Add a k-period within-entity lag of `column` and drop the first k years
/// (which have no lag), shrinking an N×T panel to N×(T−k) rows. `k = 0`
/// returns the panel unchanged.
pub fn lag_variable(p: &PanelDataset, column: &str, k: usize) -> Result<PanelDataset> {
    if k == 0 {
        return Ok(p.clone());
    }
    if k >= p.n_years() {
        return Err(Error::Invalid(format!(
            "lag {k} consumes the whole time span T={}",
            p.n_years()
        )));
    }
    let source = p.column(column)?.to_vec();
    let t = p.n_years();
    let trimmed = p.select_year_range(k)?;
    let t_new = trimmed.n_years();
    let mut lagged = Vec::with_capacity(p.n_entities() * t_new);
    for e in 0..p.n_entities() {
        for ti in 0..t_new {
            // Trimmed year index ti corresponds to original index ti + k.
            lagged.push(source[e * t + ti]);
        }
    }
    trimmed.with_column(lag_name(column, k), lagged, None)
}

/// Two-stage least squares result: both stages plus the weak-instrument
/// first-stage F statistic.
#[derive(Debug, Clone)]
pub struct TslsResult {
    pub second_stage: EstimationResult,
    pub first_stage: EstimationResult,
    /// Robust F on the excluded instrument (t² for one instrument),
    /// compared against the >10 weak-instrument rule of thumb.
    pub first_stage_f: f64,
    pub instrument: String,
}

/// Two-stage least squares with a single excluded instrument.
///
/// Stage 1 regresses the focal variable on the instrument and controls
/// (after the spec's within transformation); stage 2 replaces the focal
/// variable with its stage-1 fitted values. The reported second-stage
/// covariance uses the structural residuals `y − Xβ̂` with the *original*
/// focal values — not the naive fitted-regressor residuals, which would
/// understate the noise.
pub fn tsls(p: &PanelDataset, spec: &ModelSpec, instrument: &str) -> Result<TslsResult> {
    spec.validate(p)?;
    if !p.has_column(instrument) {
        return Err(Error::Invalid(format!("unknown instrument column '{instrument}'")));
    }
    if instrument == spec.dependent {
        return Err(Error::Invalid("instrument cannot be the dependent variable".into()));
    }
    if spec.controls.iter().any(|c| c == instrument) {
        return Err(Error::Invalid(format!(
            "instrument '{instrument}' already appears among the controls"
        )));
    }
    let sample = spec.apply_filter(p)?;

    // Within-transform everything the two stages touch.
    let mut columns: Vec<&str> = vec![spec.dependent.as_str(), spec.focal.as_str()];
    if instrument != spec.focal {
        columns.push(instrument);
    }
    columns.extend(spec.controls.iter().map(String::as_str));
    let mut demeaned = sample.within_transform(&columns, spec.effects)?;
    let intercept = spec.effects == Effects::None;
    let absorbed = absorbed_for(spec.effects, sample.n_entities(), sample.n_years());

    // A variable may instrument itself (the degenerate case that reproduces
    // OLS); alias it so the stage-1 design does not regress x on x by name.
    let iv_column = if instrument == spec.focal {
        let alias = format!("__iv_{instrument}");
        let copy = demeaned.column(instrument)?.to_vec();
        demeaned = demeaned.with_column(&alias, copy, None)?;
        alias
    } else {
        instrument.to_string()
    };

    // Stage 1: focal ~ instrument + controls.
    let mut stage1_regs: Vec<&str> = vec![iv_column.as_str()];
    stage1_regs.extend(spec.controls.iter().map(String::as_str));
    let mut d1 = design_from_panel(&demeaned, &spec.focal, &stage1_regs, intercept)?;
    for name in &mut d1.names {
        if *name == iv_column {
            *name = instrument.to_string();
        }
    }
    let fit1 = ols_fit_absorbed(&d1, absorbed)?;
    let robust1 = sandwich_covariance(&fit1, &d1, spec.se_flavor)?;
    let iv_idx = fit1.names.iter().position(|n| n == instrument).expect("instrument in stage 1");
    let iv_t = fit1.coefficients[iv_idx] / robust1[(iv_idx, iv_idx)].sqrt();
    let first_stage_f = iv_t * iv_t;
    let mut diag1 = BTreeMap::new();
    diag1.insert("first_stage_F".into(), first_stage_f);
    let first_stage = package_fit(
        "tsls_stage1",
        "First stage",
        &fit1,
        &d1,
        spec.effects,
        spec.se_flavor,
        diag1,
    )?;

    // Stage 2: dependent ~ fitted focal + controls.
    let fitted_name = format!("__fitted_{}", spec.focal);
    let with_fitted = demeaned
        .clone()
        .with_column(&fitted_name, fit1.fitted.iter().copied().collect(), None)?;
    let mut stage2_regs: Vec<&str> = vec![fitted_name.as_str()];
    stage2_regs.extend(spec.controls.iter().map(String::as_str));
    let mut d2 = design_from_panel(&with_fitted, &spec.dependent, &stage2_regs, intercept)?;
    // Report the coefficient under the focal variable's own name.
    for name in &mut d2.names {
        if *name == fitted_name {
            *name = spec.focal.clone();
        }
    }
    let fit2 = ols_fit_absorbed(&d2, absorbed)?;

    // Structural residuals: original (demeaned) focal, not fitted values.
    let d_orig = design_from_panel(&demeaned, &spec.dependent, &spec.regressors(), intercept)?;
    let structural_residuals = &d_orig.response - &d_orig.predictors * &fit2.coefficients;
    let ssr = structural_residuals.norm_squared();
    let mut fit_struct = fit2.clone();
    fit_struct.residuals = structural_residuals;
    fit_struct.ssr = ssr;
    fit_struct.sigma2 = ssr / fit_struct.dof as f64;
    fit_struct.covariance = &fit_struct.xtx_inv * fit_struct.sigma2;

    let mut diag2 = BTreeMap::new();
    diag2.insert("first_stage_F".into(), first_stage_f);
    diag2.insert("weak_instrument".into(), if first_stage_f > 10.0 { 0.0 } else { 1.0 });
    let second_stage = package_fit(
        "tsls",
        "2SLS",
        &fit_struct,
        &d2,
        spec.effects,
        spec.se_flavor,
        diag2,
    )?;

    Ok(TslsResult {
        second_stage,
        first_stage,
        first_stage_f,
        instrument: instrument.to_string(),
    })
}

/// Closed-form just-identified IV estimate `(ZᵀX)⁻¹Zᵀy`, exposed for
/// verification against the two-stage path.
pub fn iv_closed_form(
    z: &nalgebra::DMatrix<f64>,
    x: &nalgebra::DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    let ztx = z.transpose() * x;
    let ztx_inv = ztx
        .try_inverse()
        .ok_or_else(|| Error::Estimation("singular ZᵀX in closed-form IV".into()))?;
    Ok(ztx_inv * (z.transpose() * y))
}
