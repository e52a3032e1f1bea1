use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::models::spec::{EstimationResult, ModelSpec, Term};
use crate::panel::{
    design_from_panel, ols_fit_absorbed, sandwich_covariance, DesignMatrix, Effects, OlsFit,
    PanelDataset, SandwichFlavor,
};

/// Name used for year-indicator regressors.
pub(crate) fn year_dummy_name(year: i32) -> String {
    format!("year_{year}")
}

/// How many parameters a demeaning step absorbs: the contrast counts
/// `(N−1)` for entity effects and `(T−1)` for time effects, summed for
/// two-way demeaning. Reported degrees of freedom are `n − k − absorbed`.
pub(crate) fn absorbed_for(effects: Effects, n_entities: usize, n_years: usize) -> usize {
    match effects {
        Effects::Entity => n_entities - 1,
        Effects::Time => n_years - 1,
        Effects::Both => (n_entities - 1) + (n_years - 1),
        Effects::None => 0,
    }
}

/// Shared packaging: robust covariance, per-term stats, within R².
pub(crate) fn package_fit(
    model_kind: &str,
    label: &str,
    fit: &OlsFit,
    d: &DesignMatrix,
    effects: Effects,
    flavor: SandwichFlavor,
    mut diagnostics: BTreeMap<String, f64>,
) -> Result<EstimationResult> {
    diagnostics.insert("sigma2".into(), fit.sigma2);
    let robust = sandwich_covariance(fit, d, flavor)?;
    let terms: Vec<Term> = fit
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| Term::from_estimate(name.clone(), fit.coefficients[j], robust[(j, j)].sqrt(), fit.dof))
        .collect();
    // R² of the estimating equation. With an intercept (or any demeaned
    // response) the total sum of squares is centered.
    let has_intercept = fit.names.first().map(String::as_str) == Some("Constant");
    let tss = if has_intercept {
        let mean = d.response.mean();
        d.response.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
    } else {
        d.response.norm_squared()
    };
    let r_squared = if tss > 0.0 { 1.0 - fit.ssr / tss } else { 0.0 };
    Ok(EstimationResult {
        model_kind: model_kind.to_string(),
        label: label.to_string(),
        terms,
        covariance: robust,
        classical_covariance: fit.covariance.clone(),
        effects,
        se_flavor: flavor,
        r_squared,
        n_obs: fit.n,
        dof: fit.dof,
        diagnostics,
    })
}

/// Two-way (or one-way) fixed effects: within-transform the dependent and
/// all regressors, then least squares on the demeaned data with degrees of
/// freedom debited for the absorbed effects.
pub fn fixed_effects(p: &PanelDataset, spec: &ModelSpec) -> Result<EstimationResult> {
    spec.validate(p)?;
    let sample = spec.apply_filter(p)?;
    let mut columns: Vec<&str> = vec![spec.dependent.as_str()];
    columns.extend(spec.regressors());
    let demeaned = sample.within_transform(&columns, spec.effects)?;
    let intercept = spec.effects == Effects::None;
    let d = design_from_panel(&demeaned, &spec.dependent, &spec.regressors(), intercept)?;
    let absorbed = absorbed_for(spec.effects, sample.n_entities(), sample.n_years());
    let fit = ols_fit_absorbed(&d, absorbed)?;
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("n_entities".into(), sample.n_entities() as f64);
    diagnostics.insert("n_years".into(), sample.n_years() as f64);
    diagnostics.insert(
        "absorbed_entity".into(),
        if matches!(spec.effects, Effects::Entity | Effects::Both) {
            (sample.n_entities() - 1) as f64
        } else {
            0.0
        },
    );
    diagnostics.insert(
        "absorbed_time".into(),
        if matches!(spec.effects, Effects::Time | Effects::Both) {
            (sample.n_years() - 1) as f64
        } else {
            0.0
        },
    );
    package_fit("fe", "FE", &fit, &d, spec.effects, spec.se_flavor, diagnostics)
}

/// Build the RE design on a (possibly quasi-demeaned) panel: intercept,
/// focal, controls, and T−1 year indicators.
fn re_design(
    p: &PanelDataset,
    spec: &ModelSpec,
    theta: f64,
) -> Result<(DesignMatrix, Vec<String>)> {
    let n = p.n_obs();
    let t = p.n_years();
    let years = p.years().to_vec();
    let mut names: Vec<String> = vec!["Constant".to_string()];
    names.extend(spec.regressors().iter().map(|s| s.to_string()));
    for year in &years[1..] {
        names.push(year_dummy_name(*year));
    }
    let k = names.len();
    let mut x = DMatrix::zeros(n, k);
    // Quasi-demeaned intercept: 1 − θ (entity mean of a constant is itself).
    for i in 0..n {
        x[(i, 0)] = 1.0 - theta;
    }
    for (j, reg) in spec.regressors().iter().enumerate() {
        let raw = p.column(reg)?;
        let qd = quasi_demean(raw, p.n_entities(), t, theta);
        for i in 0..n {
            x[(i, 1 + j)] = qd[i];
        }
    }
    // Year dummies: raw value is 1 in that year; entity mean is 1/T.
    let offset = 1 + spec.regressors().len();
    for (dj, _) in years[1..].iter().enumerate() {
        for e in 0..p.n_entities() {
            for ti in 0..t {
                let raw = if ti == dj + 1 { 1.0 } else { 0.0 };
                x[(e * t + ti, offset + dj)] = raw - theta / t as f64;
            }
        }
    }
    let y_raw = p.column(&spec.dependent)?;
    let y = DVector::from_vec(quasi_demean(y_raw, p.n_entities(), t, theta));
    let cluster_ids = (0..n).map(|i| p.entity_of(i)).collect();
    let d = DesignMatrix::new(spec.dependent.clone(), y, names.clone(), x, cluster_ids)?;
    Ok((d, names))
}

fn quasi_demean(values: &[f64], n_entities: usize, n_years: usize, theta: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    for e in 0..n_entities {
        let slice = &values[e * n_years..(e + 1) * n_years];
        let mean = slice.iter().sum::<f64>() / n_years as f64;
        out.extend(slice.iter().map(|v| v - theta * mean));
    }
    out
}

/// Random effects via feasible GLS with Swamy–Arora variance components:
/// a random entity effect plus year indicators as ordinary regressors.
///
/// σ²_ε comes from the within (entity-demeaned) regression, the entity
/// variance from the between regression of entity means; a negative
/// estimate is floored at zero and flagged in `diagnostics`
/// (`variance_floored` = 1). The GLS itself is OLS on θ-quasi-demeaned
/// data with θ = 1 − √(σ²_ε / (σ²_ε + T·σ²_u)).
pub fn random_effects(p: &PanelDataset, spec: &ModelSpec) -> Result<EstimationResult> {
    spec.validate(p)?;
    let sample = spec.apply_filter(p)?;
    let n_e = sample.n_entities();
    let t = sample.n_years();
    let k_x = spec.regressors().len();

    // Within step: entity-demean y, regressors, and year dummies.
    let mut columns: Vec<&str> = vec![spec.dependent.as_str()];
    columns.extend(spec.regressors());
    let within = sample.within_transform(&columns, Effects::Entity)?;
    let (d_within_raw, _) = re_design(&within, spec, 1.0)?;
    // θ=1 wipes the intercept column; rebuild without it for the within fit.
    let k_z = k_x + (t - 1);
    let names_w: Vec<String> = d_within_raw.names[1..].to_vec();
    let x_w = d_within_raw.predictors.columns(1, k_z).into_owned();
    let d_within = DesignMatrix::new(
        spec.dependent.clone(),
        d_within_raw.response.clone(),
        names_w,
        x_w,
        d_within_raw.cluster_ids.clone(),
    )?;
    let fit_within = ols_fit_absorbed(&d_within, n_e)?;
    let sigma2_e = fit_within.sigma2;

    // Between step: entity means of y on entity means of regressors.
    let mut xb = DMatrix::zeros(n_e, 1 + k_x);
    let mut yb = DVector::zeros(n_e);
    let y_raw = sample.column(&spec.dependent)?;
    for e in 0..n_e {
        xb[(e, 0)] = 1.0;
        yb[e] = y_raw[e * t..(e + 1) * t].iter().sum::<f64>() / t as f64;
    }
    for (j, reg) in spec.regressors().iter().enumerate() {
        let raw = sample.column(reg)?;
        for e in 0..n_e {
            xb[(e, 1 + j)] = raw[e * t..(e + 1) * t].iter().sum::<f64>() / t as f64;
        }
    }
    let mut names_b = vec!["Constant".to_string()];
    names_b.extend(spec.regressors().iter().map(|s| s.to_string()));
    let d_between = DesignMatrix::new(
        spec.dependent.clone(),
        yb,
        names_b,
        xb,
        (0..n_e).collect(),
    )?;
    let fit_between = ols_fit_absorbed(&d_between, 0)?;
    let sigma2_between = fit_between.sigma2;

    let raw_sigma2_u = sigma2_between - sigma2_e / t as f64;
    let floored = raw_sigma2_u < 0.0;
    let sigma2_u = raw_sigma2_u.max(0.0);
    let theta = 1.0 - (sigma2_e / (sigma2_e + t as f64 * sigma2_u)).sqrt();

    // GLS step: OLS on quasi-demeaned data.
    let (d_gls, _) = re_design(&sample, spec, theta)?;
    let fit = ols_fit_absorbed(&d_gls, 0)?;

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("sigma2_e".into(), sigma2_e);
    diagnostics.insert("sigma2_u".into(), sigma2_u);
    diagnostics.insert("theta".into(), theta);
    diagnostics.insert("variance_floored".into(), if floored { 1.0 } else { 0.0 });
    diagnostics.insert("n_entities".into(), n_e as f64);
    diagnostics.insert("n_years".into(), t as f64);
    package_fit("re", "RE", &fit, &d_gls, Effects::None, spec.se_flavor, diagnostics)
}

/// Hausman specification test output.
#[derive(Debug, Clone, PartialEq)]
pub struct HausmanResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// True when the covariance contrast was not positive semidefinite and
    /// the statistic used the pseudo-inverse of its PSD part.
    pub non_psd_adjusted: bool,
}

/// Hausman test contrasting FE and RE slope coefficients:
/// `H = dᵀ (V_FE − V_RE)⁻¹ d` with classical covariances rescaled to a
/// common error variance (the within fit's), chi-square with one degree of
/// freedom per contrasted slope.
///
/// Contrasted terms are the FE result's coefficients (time-varying
/// regressors; any `Constant` or year-indicator rows are skipped); each
/// must be present in the RE result under the same name.
pub fn hausman_test(fe: &EstimationResult, re: &EstimationResult) -> Result<HausmanResult> {
    let contrast: Vec<&str> = fe
        .term_names()
        .filter(|n| *n != "Constant" && !n.starts_with("year_"))
        .collect();
    if contrast.is_empty() {
        return Err(Error::Invalid("no slope coefficients to contrast".into()));
    }
    let mut fe_idx = Vec::with_capacity(contrast.len());
    let mut re_idx = Vec::with_capacity(contrast.len());
    for name in &contrast {
        let fi = fe.term_index(name).expect("term from fe");
        let ri = re.term_index(name).ok_or_else(|| {
            Error::Invalid(format!("coefficient '{name}' missing from the random-effects result"))
        })?;
        fe_idx.push(fi);
        re_idx.push(ri);
    }
    let q = contrast.len();
    // Evaluate both covariances at the within fit's error variance (the
    // usual common-scale convention). With one scale the contrast reduces
    // to σ̂²·(G_w⁻¹ − G_q⁻¹) on the slope information matrices, which is
    // positive semidefinite; letting each fit keep its own σ̂² makes the
    // difference indefinite whenever correlated effects inflate the
    // quasi-demeaned residuals, draining the statistic exactly where it
    // should reject.
    let scale = match (fe.diagnostics.get("sigma2"), re.diagnostics.get("sigma2")) {
        (Some(s_fe), Some(s_re)) if *s_re > 0.0 => s_fe / s_re,
        _ => 1.0,
    };
    let mut d = DVector::zeros(q);
    let mut v = DMatrix::zeros(q, q);
    for a in 0..q {
        d[a] = fe.terms[fe_idx[a]].estimate - re.terms[re_idx[a]].estimate;
        for b in 0..q {
            v[(a, b)] = fe.classical_covariance[(fe_idx[a], fe_idx[b])]
                - scale * re.classical_covariance[(re_idx[a], re_idx[b])];
        }
    }
    // Symmetrize, then pseudo-invert the PSD part. A slightly indefinite
    // contrast (finite-sample noise) is flagged, not fatal.
    let v = (&v + v.transpose()) * 0.5;
    let eig = v.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    let cut = 1e-12 * max_eig.max(1e-300);
    let mut non_psd_adjusted = false;
    let mut pinv = DMatrix::zeros(q, q);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l < -cut {
            non_psd_adjusted = true;
        }
        if l > cut {
            let col = eig.eigenvectors.column(i);
            pinv += col * col.transpose() / l;
        }
    }
    let statistic = (d.transpose() * &pinv * &d)[(0, 0)].max(0.0);
    let p_value = if statistic == 0.0 {
        1.0
    } else {
        let chi = ChiSquared::new(q as f64).expect("q >= 1");
        1.0 - chi.cdf(statistic)
    };
    Ok(HausmanResult { statistic, dof: q, p_value, non_psd_adjusted })
}
