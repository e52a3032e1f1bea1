use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::linear::{absorbed_for, package_fit};
use crate::models::spec::{EstimationResult, ModelSpec};
use crate::panel::{demean, ols_fit_absorbed, DesignMatrix, Effects, PanelDataset};

/// Hansen's asymptotic 95% critical value for the no-nuisance threshold LR.
const LR_CRITICAL_95: f64 = 7.35;

/// Regime-switching regression result: thresholds, the regime fit, and the
/// likelihood-ratio profile used for threshold confidence sets.
#[derive(Debug, Clone)]
pub struct ThresholdFit {
    /// Regime slopes (one per regime) plus common controls.
    pub result: EstimationResult,
    /// Estimated thresholds, ascending.
    pub thresholds: Vec<f64>,
    /// (candidate, LR) profile from the final search for the first
    /// threshold; LR(θ̂) = 0 by construction.
    pub lr_curve: Vec<(f64, f64)>,
    /// Grid candidates with LR ≤ 7.35 — the 95% threshold confidence set.
    pub confidence_set: Vec<f64>,
    /// SSR of the 0-, 1-, … m-threshold fits along the sequential search;
    /// weakly decreasing.
    pub ssr_path: Vec<f64>,
    /// Sup-LR statistic for each added threshold: n·(S_{j−1} − S_j)/S_j.
    pub sup_lr: Vec<f64>,
    pub trim: f64,
}

/// Search machinery shared by the fit and its bootstrap: the response and
/// controls are transformed once; regime columns are rebuilt per candidate
/// because the indicator applies to the raw threshold variable.
struct Engine {
    x_raw: Vec<f64>,
    y: DVector<f64>,
    controls: Vec<(String, Vec<f64>)>,
    intercept: bool,
    cluster_ids: Vec<usize>,
    n_entities: usize,
    n_years: usize,
    effects: Effects,
    absorbed: usize,
    grid: Vec<f64>,
    min_regime: usize,
    focal: String,
    dependent: String,
}

impl Engine {
    fn build(p: &PanelDataset, spec: &ModelSpec, trim: f64) -> Result<Engine> {
        spec.validate(p)?;
        if !(trim > 0.0 && trim < 0.5) {
            return Err(Error::Invalid(format!("trim fraction {trim} outside (0, 0.5)")));
        }
        let sample = spec.apply_filter(p)?;
        let mut columns: Vec<&str> = vec![spec.dependent.as_str()];
        columns.extend(spec.controls.iter().map(String::as_str));
        let demeaned = sample.within_transform(&columns, spec.effects)?;

        let x_raw = sample.column(&spec.focal)?.to_vec();
        let n = sample.n_obs();
        let y = DVector::from_vec(demeaned.column(&spec.dependent)?.to_vec());
        let controls: Vec<(String, Vec<f64>)> = spec
            .controls
            .iter()
            .map(|c| Ok((c.clone(), demeaned.column(c)?.to_vec())))
            .collect::<Result<_>>()?;
        let cluster_ids = (0..n).map(|i| sample.entity_of(i)).collect();

        // Candidate grid: observed threshold values inside the trimmed
        // quantile range, deduplicated.
        let min_regime = ((trim * n as f64).ceil() as usize).max(1);
        let mut sorted = x_raw.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lo = ((trim * n as f64).ceil() as usize).min(n - 1);
        let hi = n - lo;
        let mut grid: Vec<f64> = sorted[lo..hi].to_vec();
        grid.dedup();
        // A threshold at the largest candidate would leave the upper regime
        // empty whenever that candidate is the sample maximum.
        let max_q = sorted[n - 1];
        grid.retain(|&g| g < max_q);
        if grid.is_empty() {
            return Err(Error::Estimation(
                "no admissible threshold candidates after trimming".into(),
            ));
        }

        Ok(Engine {
            x_raw,
            y,
            controls,
            intercept: spec.effects == Effects::None,
            cluster_ids,
            n_entities: sample.n_entities(),
            n_years: sample.n_years(),
            effects: spec.effects,
            absorbed: absorbed_for(spec.effects, sample.n_entities(), sample.n_years()),
            grid,
            min_regime,
            focal: spec.focal.clone(),
            dependent: spec.dependent.clone(),
        })
    }

    fn n(&self) -> usize {
        self.x_raw.len()
    }

    /// Observation counts per regime for a sorted threshold vector.
    fn regime_counts(&self, thresholds: &[f64]) -> Vec<usize> {
        let mut counts = vec![0usize; thresholds.len() + 1];
        for &q in &self.x_raw {
            let regime = thresholds.iter().take_while(|&&t| q > t).count();
            counts[regime] += 1;
        }
        counts
    }

    fn admissible(&self, thresholds: &[f64]) -> bool {
        self.regime_counts(thresholds).iter().all(|&c| c >= self.min_regime)
    }

    /// Design with one focal column per regime (within-transformed) plus the
    /// common controls; `thresholds` must be sorted.
    fn design(&self, thresholds: &[f64], response: &DVector<f64>) -> Result<DesignMatrix> {
        let n = self.n();
        let regimes = thresholds.len() + 1;
        let k = usize::from(self.intercept) + regimes + self.controls.len();
        let mut m = DMatrix::<f64>::zeros(n, k);
        let mut names = Vec::with_capacity(k);
        let mut col = 0;
        if self.intercept {
            m.column_mut(0).fill(1.0);
            names.push("Constant".to_string());
            col += 1;
        }
        for r in 0..regimes {
            let raw: Vec<f64> = (0..n)
                .map(|i| {
                    let q = self.x_raw[i];
                    let regime = thresholds.iter().take_while(|&&t| q > t).count();
                    if regime == r {
                        q
                    } else {
                        0.0
                    }
                })
                .collect();
            let transformed = demean(&raw, self.n_entities, self.n_years, self.effects);
            for (i, v) in transformed.iter().enumerate() {
                m[(i, col)] = *v;
            }
            names.push(regime_name(&self.focal, thresholds, r));
            col += 1;
        }
        for (name, values) in &self.controls {
            for (i, v) in values.iter().enumerate() {
                m[(i, col)] = *v;
            }
            names.push(name.clone());
            col += 1;
        }
        DesignMatrix::new(
            self.dependent.clone(),
            response.clone(),
            names,
            m,
            self.cluster_ids.clone(),
        )
    }

    fn ssr(&self, thresholds: &[f64], response: &DVector<f64>) -> Result<f64> {
        let d = self.design(thresholds, response)?;
        Ok(ols_fit_absorbed(&d, self.absorbed)?.ssr)
    }

    /// SSR-minimizing candidate for one new threshold holding `fixed`
    /// thresholds in place. Returns the winner and the (candidate, SSR)
    /// profile over admissible candidates.
    fn search(
        &self,
        fixed: &[f64],
        response: &DVector<f64>,
    ) -> Result<(f64, f64, Vec<(f64, f64)>)> {
        let candidates: Vec<f64> = self
            .grid
            .iter()
            .copied()
            .filter(|&c| !fixed.contains(&c))
            .filter(|&c| {
                let mut t = fixed.to_vec();
                t.push(c);
                t.sort_by(|a, b| a.partial_cmp(b).unwrap());
                self.admissible(&t)
            })
            .collect();
        if candidates.is_empty() {
            return Err(Error::Estimation(format!(
                "no threshold candidate leaves every regime at least {} observations",
                self.min_regime
            )));
        }
        let profile: Vec<(f64, f64)> = candidates
            .par_iter()
            .map(|&c| {
                let mut t = fixed.to_vec();
                t.push(c);
                t.sort_by(|a, b| a.partial_cmp(b).unwrap());
                self.ssr(&t, response).map(|s| (c, s))
            })
            .collect::<Result<_>>()?;
        let mut best = profile[0];
        for &(c, s) in &profile[1..] {
            if s < best.1 {
                best = (c, s);
            }
        }
        Ok((best.0, best.1, profile))
    }
}

fn regime_name(focal: &str, thresholds: &[f64], regime: usize) -> String {
    if thresholds.is_empty() {
        return focal.to_string();
    }
    if regime == 0 {
        format!("{focal} [q<={:.4}]", thresholds[0])
    } else if regime == thresholds.len() {
        format!("{focal} [q>{:.4}]", thresholds[regime - 1])
    } else {
        format!("{focal} [{:.4}<q<={:.4}]", thresholds[regime - 1], thresholds[regime])
    }
}

fn lr_profile(profile: &[(f64, f64)], s_min: f64, n: usize) -> Vec<(f64, f64)> {
    profile.iter().map(|&(c, s)| (c, (s - s_min) * n as f64 / s_min)).collect()
}

/// Regime-switching regression in the threshold-panel tradition: the focal
/// variable is its own threshold variable, only the focal slope switches
/// regimes, and thresholds are found by SSR-minimizing grid search over
/// observed values (tails trimmed, every regime at least `trim·n` rows). A
/// second threshold is searched sequentially holding the first fixed, after
/// which the first is refined holding the second.
pub fn threshold_fit(
    p: &PanelDataset,
    spec: &ModelSpec,
    max_thresholds: usize,
    trim: f64,
) -> Result<ThresholdFit> {
    if !(1..=2).contains(&max_thresholds) {
        return Err(Error::Invalid(format!(
            "max_thresholds must be 1 or 2, got {max_thresholds}"
        )));
    }
    let engine = Engine::build(p, spec, trim)?;
    let n = engine.n();
    let response = engine.y.clone();

    let s0 = engine.ssr(&[], &response)?;
    let (t1, s1, profile1) = engine.search(&[], &response)?;
    let mut ssr_path = vec![s0, s1];
    let mut thresholds = vec![t1];
    let mut final_profile = profile1;
    let mut final_ssr = s1;

    if max_thresholds == 2 {
        let (t2, s2, _) = engine.search(&[t1], &response)?;
        // Refine the first threshold holding the second fixed; the original
        // t1 is among the candidates, so refinement can only improve.
        let (t1r, s2r, profile_r) = engine.search(&[t2], &response)?;
        debug_assert!(s2r <= s2 + 1e-9 * s2.abs());
        thresholds = vec![t1r, t2];
        thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ssr_path.push(s2r);
        final_profile = profile_r;
        final_ssr = s2r;
    }

    let sup_lr: Vec<f64> = ssr_path
        .windows(2)
        .map(|w| (w[0] - w[1]).max(0.0) * n as f64 / w[1])
        .collect();
    let lr_curve = lr_profile(&final_profile, final_ssr, n);
    let confidence_set: Vec<f64> =
        lr_curve.iter().filter(|(_, lr)| *lr <= LR_CRITICAL_95).map(|(c, _)| *c).collect();

    let d = engine.design(&thresholds, &response)?;
    let fit = ols_fit_absorbed(&d, engine.absorbed)?;
    let mut diagnostics = BTreeMap::new();
    for (i, t) in thresholds.iter().enumerate() {
        diagnostics.insert(format!("threshold_{}", i + 1), *t);
    }
    for (i, lr) in sup_lr.iter().enumerate() {
        diagnostics.insert(format!("sup_lr_{}", i + 1), *lr);
    }
    diagnostics.insert("grid_size".into(), engine.grid.len() as f64);
    diagnostics.insert("min_regime_size".into(), engine.min_regime as f64);
    let result = package_fit(
        "threshold",
        "Threshold",
        &fit,
        &d,
        spec.effects,
        spec.se_flavor,
        diagnostics,
    )?;

    Ok(ThresholdFit {
        result,
        thresholds,
        lr_curve,
        confidence_set,
        ssr_path,
        sup_lr,
        trim,
    })
}

/// Fixed-regressor bootstrap p-value for each threshold: errors are redrawn
/// by resampling whole entity residual blocks from the null fit (the model
/// with one fewer threshold), the sup-LR statistic is recomputed on each
/// synthetic response, and p is the fraction of replicates at least as large
/// as the observed statistic. Deterministic given `seed`.
pub fn threshold_bootstrap(
    p: &PanelDataset,
    spec: &ModelSpec,
    fit: &ThresholdFit,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if reps < 100 {
        return Err(Error::Invalid(format!("bootstrap needs at least 100 reps, got {reps}")));
    }
    let engine = Engine::build(p, spec, fit.trim)?;
    let n = engine.n();
    let t = engine.n_years;
    let n_e = engine.n_entities;
    let response = engine.y.clone();

    let mut p_values = Vec::with_capacity(fit.thresholds.len());
    for j in 1..=fit.thresholds.len() {
        // Null model with j−1 thresholds, refit on the real response.
        let null_thresholds: Vec<f64> = if j == 1 {
            Vec::new()
        } else {
            vec![engine.search(&[], &response)?.0]
        };
        let d_null = engine.design(&null_thresholds, &response)?;
        let null_fit = ols_fit_absorbed(&d_null, engine.absorbed)?;
        let fitted = &d_null.predictors * &null_fit.coefficients;
        let residuals = &response - &fitted;
        let observed = fit.sup_lr[j - 1];

        let exceed: usize = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((j as u64) << 32) | rep as u64);
                let mut y_star = fitted.clone();
                for e in 0..n_e {
                    let donor = rng.random_range(0..n_e);
                    for ti in 0..t {
                        y_star[e * t + ti] += residuals[donor * t + ti];
                    }
                }
                let (s_null, s_alt) = if j == 1 {
                    let s_null = engine.ssr(&[], &y_star)?;
                    let (_, s_alt, _) = engine.search(&[], &y_star)?;
                    (s_null, s_alt)
                } else {
                    // Same sequential structure as the real fit: best single
                    // threshold on the synthetic response, then a second
                    // conditional on it. A replicate with no admissible
                    // second candidate contributes LR* = 0.
                    let (t1_star, s1_star, _) = engine.search(&[], &y_star)?;
                    match engine.search(&[t1_star], &y_star) {
                        Ok((_, s2_star, _)) => (s1_star, s2_star),
                        Err(Error::Estimation(_)) => (s1_star, s1_star),
                        Err(e) => return Err(e),
                    }
                };
                let lr = (s_null - s_alt).max(0.0) * n as f64 / s_alt;
                Ok(usize::from(lr >= observed))
            })
            .collect::<Result<Vec<usize>>>()?
            .into_iter()
            .sum();
        p_values.push(exceed as f64 / reps as f64);
    }
    Ok(p_values)
}

/// Write an LR profile as CSV `theta,lr`.
pub fn write_lr_curve_csv(writer: impl Write, curve: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["theta", "lr"]).map_err(|e| Error::Data(e.to_string()))?;
    for (theta, lr) in curve {
        w.write_record(&[theta.to_string(), lr.to_string()])
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Data(e.to_string()))?;
    Ok(())
}
