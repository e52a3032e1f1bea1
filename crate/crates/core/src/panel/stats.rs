use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::panel::dataset::PanelDataset;

/// Summary row for one panel variable.
#[derive(Debug, Clone, PartialEq)]
pub struct DescribeRow {
    pub variable: String,
    pub obs: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Per-column moments over the full panel; std uses the n−1 denominator.
pub fn describe(p: &PanelDataset) -> Vec<DescribeRow> {
    p.column_names()
        .map(|name| {
            let values = p.column(name).expect("column exists");
            describe_column(name, values)
        })
        .collect()
}

fn describe_column(name: &str, values: &[f64]) -> DescribeRow {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    DescribeRow { variable: name.to_string(), obs: n, mean, std: var.sqrt(), min, max }
}

/// Pearson correlations between the named columns, unit diagonal.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
}

pub fn correlation_matrix(p: &PanelDataset, columns: &[&str]) -> Result<CorrelationMatrix> {
    if columns.is_empty() {
        return Err(Error::Invalid("correlation matrix needs at least one column".into()));
    }
    if p.n_obs() < 2 {
        return Err(Error::Invalid("correlation matrix needs at least 2 observations".into()));
    }
    let n = p.n_obs() as f64;
    let mut centered: Vec<Vec<f64>> = Vec::with_capacity(columns.len());
    let mut norms: Vec<f64> = Vec::with_capacity(columns.len());
    for name in columns {
        let values = p.column(name)?;
        let mean = values.iter().sum::<f64>() / n;
        let dev: Vec<f64> = values.iter().map(|v| v - mean).collect();
        let ss = dev.iter().map(|v| v * v).sum::<f64>();
        if ss == 0.0 {
            return Err(Error::Data(format!(
                "column '{name}' is constant; correlation undefined"
            )));
        }
        centered.push(dev);
        norms.push(ss.sqrt());
    }
    let k = columns.len();
    let mut values = DMatrix::zeros(k, k);
    for a in 0..k {
        values[(a, a)] = 1.0;
        for b in (a + 1)..k {
            let dot: f64 = centered[a].iter().zip(&centered[b]).map(|(x, y)| x * y).sum();
            let r = dot / (norms[a] * norms[b]);
            values[(a, b)] = r;
            values[(b, a)] = r;
        }
    }
    Ok(CorrelationMatrix { names: columns.iter().map(|s| s.to_string()).collect(), values })
}

/// Write describe() rows as CSV `variable,obs,mean,std,min,max`.
pub fn write_describe_csv(writer: impl Write, rows: &[DescribeRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["variable", "obs", "mean", "std", "min", "max"])
        .map_err(|e| Error::Data(format!("writing describe csv: {e}")))?;
    for r in rows {
        w.write_record([
            r.variable.as_str(),
            &r.obs.to_string(),
            &r.mean.to_string(),
            &r.std.to_string(),
            &r.min.to_string(),
            &r.max.to_string(),
        ])
        .map_err(|e| Error::Data(format!("writing describe csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::Data(format!("writing describe csv: {e}")))?;
    Ok(())
}

/// Write a correlation matrix as CSV: header `variable,<names...>`, one row
/// per variable.
pub fn write_correlation_csv(writer: impl Write, m: &CorrelationMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["variable".to_string()];
    header.extend(m.names.iter().cloned());
    w.write_record(&header).map_err(|e| Error::Data(format!("writing correlation csv: {e}")))?;
    for (i, name) in m.names.iter().enumerate() {
        let mut record = vec![name.clone()];
        for j in 0..m.names.len() {
            record.push(m.values[(i, j)].to_string());
        }
        w.write_record(&record)
            .map_err(|e| Error::Data(format!("writing correlation csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::Data(format!("writing correlation csv: {e}")))?;
    Ok(())
}
