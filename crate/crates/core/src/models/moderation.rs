use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::models::linear::{absorbed_for, package_fit};
use crate::models::spec::{EstimationResult, ModelSpec};
use crate::panel::{design_from_panel, ols_fit_absorbed, Effects, PanelDataset};

/// Name of a grand-mean-centered copy of a column.
pub fn centered_name(column: &str) -> String {
    format!("C_{column}")
}

/// Name of the centered interaction column.
pub fn interaction_name(focal: &str, moderator: &str) -> String {
    format!("C_{focal} x C_{moderator}")
}

/// Add grand-mean-centered copies (`C_` prefix) of the named columns.
/// Centering a product's ingredients first removes the non-essential
/// collinearity between a main effect and its interaction term.
pub fn center(p: &PanelDataset, columns: &[&str]) -> Result<PanelDataset> {
    let mut out = p.clone();
    for col in columns {
        let values = out.column(col)?;
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
        out = out.with_column(centered_name(col), centered, None)?;
    }
    Ok(out)
}

/// Grand mean and (n−1) standard deviation of a column, the ingredients for
/// the conventional mean±sd moderator levels.
pub fn moderator_moments(p: &PanelDataset, column: &str) -> Result<(f64, f64)> {
    let values = p.column(column)?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Err(Error::Data(format!("column '{column}' too short for a standard deviation")));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Interaction model: dependent on focal, the centered-product interaction,
/// the moderator, and controls, under the spec's effects. The interaction
/// column is the elementwise product of the centered focal and centered
/// moderator, formed before the within transformation.
///
/// Regressor columns for the interaction or moderator that are numerically
/// zero after transformation (a constant moderator, say) are dropped rather
/// than reported as collinear, so a degenerate interaction collapses to the
/// plain fixed-effects fit; the count is reported under `dropped_terms`.
pub fn moderation_fit(
    p: &PanelDataset,
    spec: &ModelSpec,
    moderator: &str,
) -> Result<EstimationResult> {
    spec.validate(p)?;
    if !p.has_column(moderator) {
        return Err(Error::Invalid(format!("unknown moderator column '{moderator}'")));
    }
    if moderator == spec.dependent || moderator == spec.focal {
        return Err(Error::Invalid(format!(
            "moderator '{moderator}' already plays another role in the model"
        )));
    }
    if spec.controls.iter().any(|c| c == moderator) {
        return Err(Error::Invalid(format!(
            "moderator '{moderator}' already appears among the controls"
        )));
    }
    let sample = spec.apply_filter(p)?;
    let (m_mean, m_sd) = moderator_moments(&sample, moderator)?;

    let centered = center(&sample, &[&spec.focal, moderator])?;
    let c_focal = centered.column(&centered_name(&spec.focal))?;
    let c_mod = centered.column(&centered_name(moderator))?;
    let product: Vec<f64> = c_focal.iter().zip(c_mod).map(|(a, b)| a * b).collect();
    let inter_name = interaction_name(&spec.focal, moderator);
    let with_product = centered.with_column(&inter_name, product, None)?;

    let mut columns: Vec<&str> =
        vec![spec.dependent.as_str(), spec.focal.as_str(), inter_name.as_str(), moderator];
    columns.extend(spec.controls.iter().map(String::as_str));
    let demeaned = with_product.within_transform(&columns, spec.effects)?;

    // Drop the interaction/moderator columns if the transformation wiped
    // them out; scale the tolerance by the untransformed magnitude.
    let mut dropped = 0usize;
    let mut keep = |name: &str| -> Result<bool> {
        let transformed = demeaned.column(name)?;
        let raw = with_product.column(name)?;
        let raw_scale = raw.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let max = transformed.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let degenerate = max <= 1e-10 * (1.0 + raw_scale);
        if degenerate {
            dropped += 1;
        }
        Ok(!degenerate)
    };
    let mut regressors: Vec<&str> = vec![spec.focal.as_str()];
    if keep(&inter_name)? {
        regressors.push(inter_name.as_str());
    }
    if keep(moderator)? {
        regressors.push(moderator);
    }
    regressors.extend(spec.controls.iter().map(String::as_str));

    let intercept = spec.effects == Effects::None;
    let absorbed = absorbed_for(spec.effects, sample.n_entities(), sample.n_years());
    let d = design_from_panel(&demeaned, &spec.dependent, &regressors, intercept)?;
    let fit = ols_fit_absorbed(&d, absorbed)?;

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("moderator_mean".into(), m_mean);
    diagnostics.insert("moderator_sd".into(), m_sd);
    diagnostics.insert("dropped_terms".into(), dropped as f64);
    package_fit("moderation", "Moderation", &fit, &d, spec.effects, spec.se_flavor, diagnostics)
}

/// Slope of the focal variable at one moderator level.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpleSlope {
    pub level: f64,
    pub slope: f64,
    pub se: f64,
}

/// Focal-variable slopes at the conventional mean−sd / mean / mean+sd
/// moderator levels: slope(m) = β₁ + β₂·(m − m̄), with the delta-method
/// standard error from the fit covariance (exact, since the slope is linear
/// in the coefficients).
pub fn simple_slopes(
    fit: &EstimationResult,
    moderator_mean: f64,
    moderator_sd: f64,
) -> Result<Vec<SimpleSlope>> {
    let levels = [
        moderator_mean - moderator_sd,
        moderator_mean,
        moderator_mean + moderator_sd,
    ];
    simple_slopes_at(fit, moderator_mean, &levels)
}

/// Focal-variable slopes at caller-chosen moderator levels.
pub fn simple_slopes_at(
    fit: &EstimationResult,
    moderator_mean: f64,
    levels: &[f64],
) -> Result<Vec<SimpleSlope>> {
    let inter_idx = fit
        .terms
        .iter()
        .position(|t| t.name.contains(" x C_"))
        .ok_or_else(|| Error::Invalid("fit has no interaction term".into()))?;
    let inter_name = &fit.terms[inter_idx].name;
    let focal = inter_name
        .split(" x ")
        .next()
        .and_then(|s| s.strip_prefix("C_"))
        .ok_or_else(|| Error::Invalid(format!("malformed interaction term '{inter_name}'")))?;
    let focal_idx = fit
        .term_index(focal)
        .ok_or_else(|| Error::Invalid(format!("fit has no focal term '{focal}'")))?;

    let b1 = fit.terms[focal_idx].estimate;
    let b2 = fit.terms[inter_idx].estimate;
    let v11 = fit.covariance[(focal_idx, focal_idx)];
    let v22 = fit.covariance[(inter_idx, inter_idx)];
    let v12 = fit.covariance[(focal_idx, inter_idx)];
    Ok(levels
        .iter()
        .map(|&m| {
            let c = m - moderator_mean;
            let var = v11 + c * c * v22 + 2.0 * c * v12;
            SimpleSlope { level: m, slope: b1 + b2 * c, se: var.max(0.0).sqrt() }
        })
        .collect())
}

/// Write a simple-slopes series as CSV `level,slope,se`.
pub fn write_slopes_csv(writer: impl Write, slopes: &[SimpleSlope]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["level", "slope", "se"]).map_err(|e| Error::Data(e.to_string()))?;
    for s in slopes {
        w.write_record(&[s.level.to_string(), s.slope.to_string(), s.se.to_string()])
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Data(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::fixed_effects;
    use crate::models::linear::tests::build_panel;
    use crate::panel::within_transform;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn centering_basics() {
        let p = build_panel(
            2,
            2,
            vec![("k", vec![5.0, 5.0, 5.0, 5.0]), ("x", vec![1.0, 2.0, 3.0, 6.0])],
        );
        let c = center(&p, &["k", "x"]).unwrap();
        assert_eq!(c.column("C_k").unwrap(), &[0.0, 0.0, 0.0, 0.0]);
        let cx = c.column("C_x").unwrap();
        assert!(cx.iter().sum::<f64>().abs() < 1e-12);
        assert_eq!(cx, &[-2.0, -1.0, 0.0, 3.0]);
        // Centering an already centered column changes nothing.
        let twice = center(&c, &["C_x"]).unwrap();
        assert_eq!(twice.column("C_C_x").unwrap(), cx);
    }

    /// DGP: y = b1·x + b2·(x−x̄)(m−m̄) + b3·m + μ_i + λ_t + σ·ε.
    pub(crate) fn interaction_dgp(
        rng: &mut ChaCha8Rng,
        n_e: usize,
        t: usize,
        b1: f64,
        b2: f64,
        sigma: f64,
    ) -> PanelDataset {
        let mu: Vec<f64> = (0..n_e).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let lam: Vec<f64> = (0..t).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = n_e * t;
        let mut x = Vec::with_capacity(n);
        let mut m = Vec::with_capacity(n);
        for _ in 0..n {
            x.push(rng.sample::<f64, _>(StandardNormal));
            m.push(rng.sample::<f64, _>(StandardNormal) * 0.5 + 1.0);
        }
        let xbar = x.iter().sum::<f64>() / n as f64;
        let mbar = m.iter().sum::<f64>() / n as f64;
        let mut y = Vec::with_capacity(n);
        for e in 0..n_e {
            for ti in 0..t {
                let i = e * t + ti;
                let eps: f64 = rng.sample(StandardNormal);
                y.push(
                    b1 * x[i]
                        + b2 * (x[i] - xbar) * (m[i] - mbar)
                        + 0.7 * m[i]
                        + mu[e]
                        + lam[ti]
                        + sigma * eps,
                );
            }
        }
        build_panel(n_e, t, vec![("y", y), ("x", x), ("m", m)])
    }

    #[test]
    fn matches_hand_built_interaction_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = interaction_dgp(&mut rng, 8, 5, -1.0, 2.0, 0.3);
        let spec = ModelSpec::new("y", "x");
        let fit = moderation_fit(&p, &spec, "m").unwrap();

        // Oracle: explicit product column, same transformations.
        let x = p.column("x").unwrap();
        let m = p.column("m").unwrap();
        let n = p.n_obs();
        let xbar = x.iter().sum::<f64>() / n as f64;
        let mbar = m.iter().sum::<f64>() / n as f64;
        let product: Vec<f64> =
            (0..n).map(|i| (x[i] - xbar) * (m[i] - mbar)).collect();
        let with = p.clone().with_column("inter", product, None).unwrap();
        let demeaned =
            within_transform(&with, &["y", "x", "inter", "m"], Effects::Both).unwrap();
        let d = design_from_panel(&demeaned, "y", &["x", "inter", "m"], false).unwrap();
        let oracle = ols_fit_absorbed(&d, absorbed_for(Effects::Both, 8, 5)).unwrap();

        assert_relative_eq!(
            fit.term("x").unwrap().estimate,
            oracle.coefficients[0],
            max_relative = 1e-12
        );
        assert_relative_eq!(
            fit.term("C_x x C_m").unwrap().estimate,
            oracle.coefficients[1],
            max_relative = 1e-12
        );
        assert_relative_eq!(
            fit.term("m").unwrap().estimate,
            oracle.coefficients[2],
            max_relative = 1e-12
        );
    }

    #[test]
    fn planted_interaction_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = interaction_dgp(&mut rng, 30, 13, -1.679, -25.956, 30.0);
        let fit = moderation_fit(&p, &ModelSpec::new("y", "x"), "m").unwrap();
        let inter = fit.term("C_x x C_m").unwrap();
        assert!(
            (inter.estimate - (-25.956)).abs() < 3.0 * inter.se,
            "estimate {} se {}",
            inter.estimate,
            inter.se
        );
        // Large enough to be distinguished from zero as well.
        assert!(inter.estimate / inter.se < -3.0);
    }

    #[test]
    fn zero_interaction_size_control() {
        // Cluster-robust t needs a healthy cluster count for its nominal
        // size; 48 entities keeps the empirical rejection rate near 5%.
        let draws = 200;
        let mut accepted = 0;
        for seed in 0..draws {
            let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
            let p = interaction_dgp(&mut rng, 48, 13, -1.0, 0.0, 1.0);
            let fit = moderation_fit(&p, &ModelSpec::new("y", "x"), "m").unwrap();
            let inter = fit.term("C_x x C_m").unwrap();
            if (inter.estimate / inter.se).abs() < 1.96 {
                accepted += 1;
            }
        }
        assert!(accepted * 100 >= draws * 93, "accepted {accepted}/{draws}");
    }

    #[test]
    fn constant_moderator_collapses_to_baseline() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n_e = 10;
        let t = 6;
        let n = n_e * t;
        let mu: Vec<f64> = (0..n_e).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                -1.5 * x[i] + mu[i / t] + 0.2 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let m = vec![3.0; n];
        let p = build_panel(n_e, t, vec![("y", y), ("x", x), ("m", m)]);
        let spec = ModelSpec::new("y", "x").with_effects(Effects::Entity);
        let moderated = moderation_fit(&p, &spec, "m").unwrap();
        let baseline = fixed_effects(&p, &spec).unwrap();
        // Interaction and moderator columns vanish; shared coefficient matches.
        assert_eq!(moderated.diagnostics["dropped_terms"], 2.0);
        assert!(moderated.term("C_x x C_m").is_none());
        assert_relative_eq!(
            moderated.term("x").unwrap().estimate,
            baseline.term("x").unwrap().estimate,
            max_relative = 1e-10
        );
    }

    #[test]
    fn slope_arithmetic() {
        // Hand-built fit: β₁ = −1, β₂ = −2, identity-ish covariance.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = interaction_dgp(&mut rng, 6, 5, -1.0, -2.0, 0.0);
        let fit = moderation_fit(&p, &ModelSpec::new("y", "x"), "m").unwrap();
        let (mean, _) = moderator_moments(&p, "m").unwrap();
        let slopes = simple_slopes_at(&fit, mean, &[mean + 1.0]).unwrap();
        assert_relative_eq!(slopes[0].slope, -3.0, max_relative = 1e-6);

        // β₂ = 0: identical slope at every level.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p0 = interaction_dgp(&mut rng, 6, 5, -1.0, 0.0, 0.0);
        let fit0 = moderation_fit(&p0, &ModelSpec::new("y", "x"), "m").unwrap();
        let (mean0, sd0) = moderator_moments(&p0, "m").unwrap();
        let s = simple_slopes(&fit0, mean0, sd0).unwrap();
        assert_eq!(s.len(), 3);
        assert_relative_eq!(s[0].slope, s[1].slope, max_relative = 1e-6);
        assert_relative_eq!(s[1].slope, s[2].slope, max_relative = 1e-6);
        assert_eq!(s[0].level, mean0 - sd0);
        assert_eq!(s[2].level, mean0 + sd0);
    }

    #[test]
    fn delta_method_se_matches_parametric_bootstrap() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = interaction_dgp(&mut rng, 20, 8, -1.0, 3.0, 1.0);
        let fit = moderation_fit(&p, &ModelSpec::new("y", "x"), "m").unwrap();
        let (mean, sd) = moderator_moments(&p, "m").unwrap();
        let slopes = simple_slopes(&fit, mean, sd).unwrap();

        let i1 = fit.term_index("x").unwrap();
        let i2 = fit.term_index("C_x x C_m").unwrap();
        let sub = DMatrix::<f64>::from_fn(2, 2, |r, c| {
            let ids = [i1, i2];
            fit.covariance[(ids[r], ids[c])]
        });
        let chol = sub.cholesky().expect("covariance submatrix PSD");
        let l = chol.l();
        let b = DVector::<f64>::from_vec(vec![
            fit.terms[i1].estimate,
            fit.terms[i2].estimate,
        ]);
        let mut draws_rng = ChaCha8Rng::seed_from_u64(99);
        let reps = 4000;
        for (idx, level) in [mean - sd, mean, mean + sd].iter().enumerate() {
            let c = level - mean;
            let mut vals = Vec::with_capacity(reps);
            for _ in 0..reps {
                let z = DVector::<f64>::from_fn(2, |_, _| draws_rng.sample(StandardNormal));
                let bs = &b + &l * z;
                vals.push(bs[0] + bs[1] * c);
            }
            let m0 = vals.iter().sum::<f64>() / reps as f64;
            let var =
                vals.iter().map(|v| (v - m0).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
            let boot_se = var.sqrt();
            let delta_se = slopes[idx].se;
            assert!(
                (boot_se - delta_se).abs() / delta_se < 0.10,
                "level {level}: bootstrap {boot_se} vs delta {delta_se}"
            );
        }
    }

    #[test]
    fn slopes_csv_round_trip() {
        let slopes = vec![
            SimpleSlope { level: 0.5, slope: -1.25, se: 0.3 },
            SimpleSlope { level: 1.0, slope: -2.5, se: 0.4 },
        ];
        let mut buf = Vec::new();
        write_slopes_csv(&mut buf, &slopes).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("level,slope,se"));
        assert_eq!(lines.next(), Some("0.5,-1.25,0.3"));
        assert_eq!(lines.next(), Some("1,-2.5,0.4"));
    }

    #[test]
    fn moderator_role_clashes_rejected() {
        let p = build_panel(
            2,
            2,
            vec![
                ("y", vec![1.0, 2.0, 3.0, 4.0]),
                ("x", vec![1.0, 0.0, 2.0, 5.0]),
                ("m", vec![0.5, 1.5, 2.5, 3.5]),
            ],
        );
        let spec = ModelSpec::new("y", "x");
        assert!(moderation_fit(&p, &spec, "x").is_err());
        assert!(moderation_fit(&p, &spec, "nope").is_err());
        let spec2 = ModelSpec::new("y", "x").with_controls(&["m"]);
        assert!(moderation_fit(&p, &spec2, "m").is_err());
    }
}
