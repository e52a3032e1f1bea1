use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::dataset::PanelDataset;

/// Regression-ready data: response, named predictor columns, and the
/// entity label of each row (for clustered covariances).
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub response_name: String,
    pub response: DVector<f64>,
    pub names: Vec<String>,
    pub predictors: DMatrix<f64>,
    /// Cluster label per row (entity index).
    pub cluster_ids: Vec<usize>,
}

impl DesignMatrix {
    pub fn new(
        response_name: impl Into<String>,
        response: DVector<f64>,
        names: Vec<String>,
        predictors: DMatrix<f64>,
        cluster_ids: Vec<usize>,
    ) -> Result<Self> {
        let n = response.len();
        let k = predictors.ncols();
        if predictors.nrows() != n {
            return Err(Error::Invalid(format!(
                "predictor rows {} do not match response length {n}",
                predictors.nrows()
            )));
        }
        if names.len() != k {
            return Err(Error::Invalid(format!(
                "{} predictor names for {k} columns",
                names.len()
            )));
        }
        if cluster_ids.len() != n {
            return Err(Error::Invalid(format!(
                "{} cluster labels for {n} rows",
                cluster_ids.len()
            )));
        }
        if n < k + 1 {
            return Err(Error::Estimation(format!(
                "need at least k+1 = {} observations, got {n}",
                k + 1
            )));
        }
        if response.iter().any(|v| !v.is_finite()) || predictors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("design matrix contains non-finite values".into()));
        }
        Ok(Self { response_name: response_name.into(), response, names, predictors, cluster_ids })
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn k(&self) -> usize {
        self.predictors.ncols()
    }
}

/// Build a design matrix from panel columns, optionally prefixing an
/// intercept column named `Constant`. Cluster labels are entity indices.
pub fn design_from_panel(
    p: &PanelDataset,
    dependent: &str,
    regressors: &[&str],
    intercept: bool,
) -> Result<DesignMatrix> {
    let y = DVector::from_column_slice(p.column(dependent)?);
    let n = p.n_obs();
    let mut names = Vec::new();
    let mut cols: Vec<&[f64]> = Vec::new();
    for r in regressors {
        if *r == dependent {
            return Err(Error::Invalid(format!(
                "column '{r}' cannot be both dependent and regressor"
            )));
        }
        cols.push(p.column(r)?);
        names.push(r.to_string());
    }
    let k = cols.len() + usize::from(intercept);
    let mut x = DMatrix::zeros(n, k);
    let mut offset = 0;
    if intercept {
        names.insert(0, "Constant".to_string());
        x.column_mut(0).fill(1.0);
        offset = 1;
    }
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            x[(i, j + offset)] = *v;
        }
    }
    let cluster_ids = (0..n).map(|i| p.entity_of(i)).collect();
    DesignMatrix::new(dependent, y, names, x, cluster_ids)
}

/// Least-squares fit with named coefficients.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub names: Vec<String>,
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    pub fitted: DVector<f64>,
    /// Residual variance `SSR / dof`.
    pub sigma2: f64,
    /// Classical covariance `sigma2 · (XᵀX)⁻¹`.
    pub covariance: DMatrix<f64>,
    /// `(XᵀX)⁻¹`, the bread of sandwich covariances.
    pub xtx_inv: DMatrix<f64>,
    pub ssr: f64,
    pub n: usize,
    pub k: usize,
    /// Parameters absorbed outside the design (demeaned effects), counted
    /// into the residual degrees of freedom.
    pub absorbed: usize,
    /// `n − k − absorbed`.
    pub dof: usize,
}

/// Modified Gram–Schmidt rank screen. Returns an error naming the first
/// linearly dependent column together with the accepted columns that
/// explain it.
fn check_rank(d: &DesignMatrix) -> Result<()> {
    let n = d.n();
    let k = d.k();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(k); // orthonormal q_i
    let mut accepted: Vec<usize> = Vec::with_capacity(k);
    // r[i][m]: coefficient of q_i in accepted column m (upper triangular).
    let mut r: Vec<Vec<f64>> = Vec::with_capacity(k);
    const REL_TOL: f64 = 1e-10;

    for j in 0..k {
        let col = DVector::from_column_slice(d.predictors.column(j).as_slice());
        let scale = col.norm();
        if scale == 0.0 {
            return Err(Error::Estimation(format!(
                "rank deficiency: column '{}' is identically zero",
                d.names[j]
            )));
        }
        let mut v = col;
        let mut coeffs = Vec::with_capacity(basis.len());
        for q in &basis {
            let c = q.dot(&v);
            v -= q * c;
            coeffs.push(c);
        }
        // Second MGS sweep for numerical safety near the tolerance edge.
        for (i, q) in basis.iter().enumerate() {
            let c = q.dot(&v);
            v -= q * c;
            coeffs[i] += c;
        }
        let norm = v.norm();
        if norm <= REL_TOL * scale * (n as f64).sqrt() {
            // Dependent: express column j in terms of accepted originals by
            // back-substituting through the MGS triangle.
            let m = basis.len();
            let mut beta = coeffs.clone();
            for i in (0..m).rev() {
                for l in (i + 1)..m {
                    let adj = r[l][i] * beta[l];
                    beta[i] -= adj;
                }
                beta[i] /= r[i][i];
            }
            let max_b = beta.iter().fold(0.0f64, |acc, b| acc.max(b.abs()));
            let mut culprits: Vec<&str> = beta
                .iter()
                .enumerate()
                .filter(|(_, b)| b.abs() > 1e-6 * max_b.max(1e-300))
                .map(|(i, _)| d.names[accepted[i]].as_str())
                .collect();
            culprits.push(&d.names[j]);
            return Err(Error::Estimation(format!(
                "rank deficiency: columns [{}] are linearly dependent",
                culprits.join(", ")
            )));
        }
        // Accept column j: record its triangle column (coeffs + diagonal).
        let mut rj = coeffs;
        rj.push(norm);
        r.push(rj);
        basis.push(v / norm);
        accepted.push(j);
    }
    Ok(())
}

/// Ordinary least squares via QR (orthogonal decomposition; the normal
/// equations are never formed). `absorbed` counts parameters removed by a
/// prior demeaning step; residual degrees of freedom are
/// `n − k − absorbed`.
pub fn ols_fit_absorbed(d: &DesignMatrix, absorbed: usize) -> Result<OlsFit> {
    check_rank(d)?;
    let n = d.n();
    let k = d.k();
    if n <= k + absorbed {
        return Err(Error::Estimation(format!(
            "no residual degrees of freedom: n={n}, k={k}, absorbed={absorbed}"
        )));
    }
    let dof = n - k - absorbed;

    let qr = d.predictors.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let qty = q.transpose() * &d.response;
    let coefficients = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Estimation("singular R factor in QR solve".into()))?;

    let fitted = &d.predictors * &coefficients;
    let residuals = &d.response - &fitted;
    let ssr = residuals.norm_squared();
    let sigma2 = ssr / dof as f64;

    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Estimation("singular R factor in covariance solve".into()))?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let covariance = &xtx_inv * sigma2;

    Ok(OlsFit {
        names: d.names.clone(),
        coefficients,
        residuals,
        fitted,
        sigma2,
        covariance,
        xtx_inv,
        ssr,
        n,
        k,
        absorbed,
        dof,
    })
}

/// [`ols_fit_absorbed`] with nothing absorbed.
pub fn ols_fit(d: &DesignMatrix) -> Result<OlsFit> {
    ols_fit_absorbed(d, 0)
}

/// Robust covariance flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SandwichFlavor {
    Hc1,
    #[default]
    ClusterByEntity,
}

impl std::str::FromStr for SandwichFlavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hc1" => Ok(SandwichFlavor::Hc1),
            "cluster" | "cluster_by_entity" => Ok(SandwichFlavor::ClusterByEntity),
            other => Err(Error::Invalid(format!("unknown se flavor '{other}'"))),
        }
    }
}

impl std::fmt::Display for SandwichFlavor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SandwichFlavor::Hc1 => "hc1",
            SandwichFlavor::ClusterByEntity => "cluster",
        })
    }
}

/// Heteroskedasticity-robust covariance.
///
/// * `hc1`: `(XᵀX)⁻¹ (Σ e_i² x_i x_iᵀ) (XᵀX)⁻¹ · n/dof`.
/// * `cluster_by_entity`: meat `Σ_g (X_gᵀe_g)(X_gᵀe_g)ᵀ` with the
///   `G/(G−1) · (n−1)/dof` small-sample factor.
///
/// `dof` is the fit's residual degrees of freedom (`n−k` when nothing was
/// absorbed, matching the textbook factors; absorbed effects shrink it).
pub fn sandwich_covariance(
    fit: &OlsFit,
    d: &DesignMatrix,
    flavor: SandwichFlavor,
) -> Result<DMatrix<f64>> {
    let n = fit.n;
    let k = fit.k;
    if d.n() != n || d.k() != k {
        return Err(Error::Invalid("design matrix does not match the fit".into()));
    }
    match flavor {
        SandwichFlavor::Hc1 => {
            let mut meat = DMatrix::zeros(k, k);
            for i in 0..n {
                let e = fit.residuals[i];
                let xi = d.predictors.row(i);
                for a in 0..k {
                    for b in 0..k {
                        meat[(a, b)] += e * e * xi[a] * xi[b];
                    }
                }
            }
            let factor = n as f64 / fit.dof as f64;
            Ok(&fit.xtx_inv * meat * &fit.xtx_inv * factor)
        }
        SandwichFlavor::ClusterByEntity => {
            let mut groups: std::collections::BTreeMap<usize, DVector<f64>> =
                std::collections::BTreeMap::new();
            for i in 0..n {
                let score = groups
                    .entry(d.cluster_ids[i])
                    .or_insert_with(|| DVector::zeros(k));
                let e = fit.residuals[i];
                let xi = d.predictors.row(i);
                for a in 0..k {
                    score[a] += e * xi[a];
                }
            }
            let g = groups.len();
            if g < 2 {
                return Err(Error::Estimation(format!(
                    "clustered covariance needs at least 2 clusters, got {g}"
                )));
            }
            let mut meat = DMatrix::zeros(k, k);
            for score in groups.values() {
                meat += score * score.transpose();
            }
            let factor =
                g as f64 / (g as f64 - 1.0) * (n as f64 - 1.0) / fit.dof as f64;
            Ok(&fit.xtx_inv * meat * &fit.xtx_inv * factor)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn design(y: &[f64], cols: &[(&str, Vec<f64>)], clusters: Vec<usize>) -> DesignMatrix {
        let n = y.len();
        let k = cols.len();
        let mut x = DMatrix::zeros(n, k);
        for (j, (_, col)) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                x[(i, j)] = *v;
            }
        }
        DesignMatrix::new(
            "y",
            DVector::from_column_slice(y),
            cols.iter().map(|(n, _)| n.to_string()).collect(),
            x,
            clusters,
        )
        .unwrap()
    }

    #[test]
    fn exact_fit_line() {
        let d = design(
            &[1.0, 2.0, 3.0],
            &[("Constant", vec![1.0, 1.0, 1.0]), ("x", vec![1.0, 2.0, 3.0])],
            vec![0, 0, 1],
        );
        let fit = ols_fit(&d).unwrap();
        assert_relative_eq!(fit.coefficients[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(fit.coefficients[1], 1.0, epsilon = 1e-12);
        assert!(fit.ssr < 1e-20);
    }

    #[test]
    fn duplicated_column_names_both_culprits() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let d = design(
            &[1.0, 0.0, 2.0, 1.0],
            &[
                ("Constant", vec![1.0; 4]),
                ("gea", x.clone()),
                ("gea_copy", x),
            ],
            vec![0, 0, 1, 1],
        );
        let err = ols_fit(&d).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("gea") && msg.contains("gea_copy"), "{msg}");
        assert!(!msg.contains("Constant"), "{msg}");
    }

    #[test]
    fn zero_column_is_reported() {
        let d = design(
            &[1.0, 0.0, 2.0],
            &[("Constant", vec![1.0; 3]), ("z", vec![0.0; 3])],
            vec![0, 1, 1],
        );
        let err = ols_fit(&d).unwrap_err();
        assert!(err.to_string().contains("identically zero"), "{err}");
    }

    #[test]
    fn linear_combination_is_reported() {
        // c = 2a - b: all three named.
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let b = vec![2.0, 1.0, 4.0, 0.0, 3.0];
        let c: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - y).collect();
        let d = design(
            &[1.0, 0.0, 2.0, 1.0, 3.0],
            &[("a", a), ("b", b), ("c", c)],
            vec![0, 0, 1, 1, 1],
        );
        let err = ols_fit(&d).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('a') && msg.contains('b') && msg.contains('c'), "{msg}");
    }

    #[test]
    fn matches_pseudo_inverse_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 50;
        let k = 3;
        let x = DMatrix::from_fn(n, k, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let y = DVector::from_fn(n, |_, _| rng.random::<f64>() * 10.0 - 5.0);
        let d = DesignMatrix::new(
            "y",
            y.clone(),
            vec!["a".into(), "b".into(), "c".into()],
            x.clone(),
            (0..n).map(|i| i % 5).collect(),
        )
        .unwrap();
        let fit = ols_fit(&d).unwrap();
        // Textbook pseudo-inverse solution (normal equations + inverse).
        let xtx = x.transpose() * &x;
        let beta = xtx.try_inverse().unwrap() * x.transpose() * &y;
        for j in 0..k {
            assert_relative_eq!(fit.coefficients[j], beta[j], max_relative = 1e-9);
        }
    }

    #[test]
    fn residuals_orthogonal_to_predictors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 80;
        let x = DMatrix::from_fn(n, 4, |_, j| rng.random::<f64>() + j as f64 * 0.1);
        let y = DVector::from_fn(n, |_, _| rng.random::<f64>() * 3.0);
        let d = DesignMatrix::new(
            "y",
            y.clone(),
            (0..4).map(|j| format!("x{j}")).collect(),
            x.clone(),
            vec![0; n],
        )
        .unwrap();
        let fit = ols_fit(&d).unwrap();
        let xte = x.transpose() * &fit.residuals;
        assert!(xte.amax() <= 1e-8 * y.norm(), "X'e = {xte}");
    }

    #[test]
    fn dof_accounts_for_absorbed_parameters() {
        let d = design(
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            &[("x", vec![0.1, 0.4, 0.2, 0.8, 0.5, 0.9])],
            vec![0, 0, 1, 1, 2, 2],
        );
        let plain = ols_fit(&d).unwrap();
        assert_eq!(plain.dof, 5);
        let absorbed = ols_fit_absorbed(&d, 3).unwrap();
        assert_eq!(absorbed.dof, 2);
        // Same coefficients, inflated variance.
        assert_relative_eq!(
            plain.coefficients[0],
            absorbed.coefficients[0],
            max_relative = 1e-12
        );
        assert!(absorbed.sigma2 > plain.sigma2);
        assert!(ols_fit_absorbed(&d, 5).is_err());
    }

    #[test]
    fn hand_built_cluster_sandwich() {
        // 6 observations, 2 clusters, k=2. Oracle computed by the explicit
        // Σ_g (Xᵍᵀεᵍ)(Xᵍᵀεᵍ)ᵀ formula below, independent of the
        // implementation's accumulation order.
        let y = [1.0, 2.0, 1.5, 3.0, 2.0, 4.0];
        let cols = [
            ("Constant", vec![1.0; 6]),
            ("x", vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]),
        ];
        let clusters = vec![0, 0, 0, 1, 1, 1];
        let d = design(&y, &cols, clusters.clone());
        let fit = ols_fit(&d).unwrap();
        let got = sandwich_covariance(&fit, &d, SandwichFlavor::ClusterByEntity).unwrap();

        let mut meat = DMatrix::<f64>::zeros(2, 2);
        for g in 0..2usize {
            let mut s = DVector::<f64>::zeros(2);
            for i in 0..6 {
                if clusters[i] == g {
                    s[0] += fit.residuals[i] * 1.0;
                    s[1] += fit.residuals[i] * d.predictors[(i, 1)];
                }
            }
            meat += &s * s.transpose();
        }
        let factor = 2.0 / 1.0 * 5.0 / 4.0; // G/(G-1) * (n-1)/(n-k)
        let oracle = &fit.xtx_inv * meat * &fit.xtx_inv * factor;
        for a in 0..2 {
            for b in 0..2 {
                assert_relative_eq!(got[(a, b)], oracle[(a, b)], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn hc1_close_to_classical_under_homoskedasticity() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() });
        let y = DVector::from_fn(n, |i, _| {
            2.0 + 0.5 * x[(i, 1)] + (rng.random::<f64>() - 0.5) * 2.0
        });
        let d = DesignMatrix::new(
            "y",
            y,
            vec!["Constant".into(), "x".into()],
            x,
            (0..n).map(|i| i % 100).collect(),
        )
        .unwrap();
        let fit = ols_fit(&d).unwrap();
        let hc1 = sandwich_covariance(&fit, &d, SandwichFlavor::Hc1).unwrap();
        for j in 0..2 {
            let rel = (hc1[(j, j)] - fit.covariance[(j, j)]).abs() / fit.covariance[(j, j)];
            assert!(rel < 0.05, "relative gap {rel}");
        }
    }

    #[test]
    fn single_cluster_is_an_error() {
        let d = design(
            &[1.0, 2.0, 3.0],
            &[("x", vec![1.0, 2.0, 4.0])],
            vec![7, 7, 7],
        );
        let fit = ols_fit(&d).unwrap();
        assert!(sandwich_covariance(&fit, &d, SandwichFlavor::ClusterByEntity).is_err());
    }

    #[test]
    fn too_few_rows_rejected() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let res = DesignMatrix::new(
            "y",
            DVector::from_column_slice(&[1.0, 2.0]),
            vec!["a".into(), "b".into()],
            x,
            vec![0, 1],
        );
        assert!(res.is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn symmetric_psd(m: &DMatrix<f64>) -> bool {
            let sym = (m - m.transpose()).amax() <= 1e-8 * (1.0 + m.amax());
            let eig = m.clone().symmetric_eigen();
            let floor = -1e-10 * m.trace().abs().max(1e-300);
            sym && eig.eigenvalues.iter().all(|&l| l >= floor)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            /// Classical and sandwich covariances stay symmetric PSD on
            /// random well-posed systems.
            #[test]
            fn covariances_are_psd(seed in 0u64..500) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = 40;
                let k = 3;
                let x = DMatrix::from_fn(n, k, |_, j| {
                    if j == 0 { 1.0 } else { rng.random::<f64>() * 2.0 - 1.0 }
                });
                let y = DVector::from_fn(n, |_, _| rng.random::<f64>() * 4.0 - 2.0);
                let d = DesignMatrix::new(
                    "y",
                    y,
                    (0..k).map(|j| format!("x{j}")).collect(),
                    x,
                    (0..n).map(|i| i % 8).collect(),
                )
                .unwrap();
                let fit = ols_fit(&d).unwrap();
                prop_assert!(symmetric_psd(&fit.covariance));
                let hc1 = sandwich_covariance(&fit, &d, SandwichFlavor::Hc1).unwrap();
                prop_assert!(symmetric_psd(&hc1));
                let cl = sandwich_covariance(&fit, &d, SandwichFlavor::ClusterByEntity).unwrap();
                prop_assert!(symmetric_psd(&cl));
            }
        }
    }
}
