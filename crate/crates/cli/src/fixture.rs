//! Deterministic synthetic fixture: a report corpus, an energy ledger, and
//! a control panel, calibrated so the assembled workbench panel reproduces
//! published summary moments with a known planted attention coefficient.
//!
//! The attention column is only ever planted *through the corpus*: each
//! region-year document carries exactly the keyword count that makes
//! `hits / tokens × 100` reproduce the calibrated value, and emissions are
//! only ever planted through fuel quantities that the accounting chain
//! re-aggregates. Running the full pipeline on the fixture therefore
//! exercises every stage, not just the estimators.

use std::fs;
use std::path::{Path, PathBuf};

use ecopanel_core::error::{Error, Result};
use ecopanel_core::text::KeywordDictionary;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Attention → emissions slope planted in the synthetic panel.
pub const PLANTED_BETA: f64 = -1.679;

/// Calibration targets per variable: mean, std (n−1), min, max.
pub const MOMENT_TARGETS: [(&str, f64, f64, f64, f64); 9] = [
    ("CO2", 10.151, 7.054, 2.627, 43.601),
    ("GEA", 0.592, 0.208, 0.122, 1.405),
    ("IT", 0.059, 0.038, 0.014, 0.236),
    ("ER", 0.003, 0.003, 0.000, 0.025),
    ("ENE", 0.033, 0.023, 0.003, 0.104),
    ("INDU", 1.082, 0.622, 0.500, 5.169),
    ("FDI", 0.022, 0.017, 0.000, 0.082),
    ("LNPE", 7.399, 1.825, 0.000, 10.713),
    ("LNEXP", 4.482, 0.781, 1.671, 6.617),
];

const FIRST_YEAR: i32 = 2007;
const N_YEARS: usize = 13;
/// Default document length. One keyword hit is 100/4000 = 0.025 index
/// points, so calibrated attention values are snapped to that grid.
const BASE_TOKENS: usize = 4_000;
/// The documents carrying the exact attention extremes get their own
/// lengths so the extreme values need no rounding at all:
/// 61/50000 × 100 = 0.122 and 281/20000 × 100 = 1.405.
const MIN_DOC_TOKENS: usize = 50_000;
const MAX_DOC_TOKENS: usize = 20_000;

/// Filler vocabulary for document text. None of these contain (or
/// concatenate into, across whitespace) any dictionary keyword.
const FILLERS: [&str; 5] = ["经济", "发展", "工作", "建设", "改革"];

/// Fuel mix used by the energy ledger: published heat/carbon/oxidation
/// parameters and the share of each region-year's emissions assigned to
/// the fuel.
const FUELS: [(&str, f64, &str, f64, f64, f64); 3] = [
    ("raw_coal", 20908.0, "kJ/t", 26.37, 0.94, 0.60),
    ("diesel", 42652.0, "kJ/t", 20.2, 0.98, 0.25),
    ("natural_gas", 38931.0, "kJ/m3", 15.3, 0.99, 0.15),
];

/// What `make_fixture` wrote and where.
#[derive(Debug, Clone)]
pub struct FixtureReport {
    pub dir: PathBuf,
    /// The ready-to-run config file inside `dir`.
    pub config: PathBuf,
    pub planted_beta: f64,
    pub entities: usize,
    pub years: usize,
}

struct Target {
    mean: f64,
    std: f64,
    min: f64,
    max: f64,
}

fn target(name: &str) -> Target {
    let (_, mean, std, min, max) = *MOMENT_TARGETS
        .iter()
        .find(|(n, ..)| *n == name)
        .expect("moment target exists");
    Target { mean, std, min, max }
}

/// 30 entity ids, pre-sorted: 8 central, 11 east, 11 west.
fn entity_ids() -> Vec<String> {
    let mut ids = Vec::with_capacity(30);
    ids.extend((1..=8).map(|i| format!("c{i:02}")));
    ids.extend((1..=11).map(|i| format!("e{i:02}")));
    ids.extend((1..=11).map(|i| format!("w{i:02}")));
    ids
}

fn region_of(id: &str) -> &'static str {
    match id.as_bytes()[0] {
        b'c' => "central",
        b'e' => "east",
        _ => "west",
    }
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
}

fn affine_to(v: &mut [f64], mean: f64, std: f64) {
    let (m, s) = moments(v);
    let scale = if s > 0.0 { std / s } else { 0.0 };
    for x in v.iter_mut() {
        *x = mean + (*x - m) * scale;
    }
}

fn argmin(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, x)| if *x < v[best] { i } else { best })
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
}

/// Alternating projection onto the target moments: rescale to the exact
/// mean/std, clamp into range, pin the running extremes to the exact
/// bounds, repeat. Converges to a vector whose min/max are exact and whose
/// mean/std sit well inside the 2% acceptance envelope.
fn calibrate(v: &mut [f64], t: &Target) {
    for _ in 0..500 {
        affine_to(v, t.mean, t.std);
        for x in v.iter_mut() {
            *x = x.clamp(t.min, t.max);
        }
        v[argmin(v)] = t.min;
        v[argmax(v)] = t.max;
        let (m, s) = moments(v);
        if (m - t.mean).abs() <= 1e-9 * t.mean.abs().max(1.0) && (s - t.std).abs() <= 1e-9 * t.std
        {
            break;
        }
    }
}

fn two_way_demean(v: &[f64], n_e: usize, t: usize) -> Vec<f64> {
    let n = n_e * t;
    let grand = v.iter().sum::<f64>() / n as f64;
    let mut by_e = vec![0.0; n_e];
    let mut by_t = vec![0.0; t];
    for i in 0..n {
        by_e[i / t] += v[i];
        by_t[i % t] += v[i];
    }
    for m in &mut by_e {
        *m /= t as f64;
    }
    for m in &mut by_t {
        *m /= n_e as f64;
    }
    (0..n).map(|i| v[i] - by_e[i / t] - by_t[i % t] + grand).collect()
}

/// Everything the writers need, generated in one deterministic pass.
struct FixtureData {
    ids: Vec<String>,
    years: Vec<i32>,
    /// Ground-truth attention values, exactly `hits/tokens×100`; the
    /// pipeline re-derives them from the written documents.
    #[cfg_attr(not(test), allow(dead_code))]
    gea: Vec<f64>,
    /// Document length and keyword count per row; `hits/tokens×100` equals
    /// `gea` exactly.
    tokens: Vec<usize>,
    hits: Vec<usize>,
    co2: Vec<f64>,
    population: Vec<f64>,
    /// Moderator + controls in panel column order.
    panel_columns: Vec<(&'static str, Vec<f64>)>,
}

fn generate(seed: u64) -> FixtureData {
    let ids = entity_ids();
    let n_e = ids.len();
    let t = N_YEARS;
    let n = n_e * t;
    let years: Vec<i32> = (0..t as i32).map(|k| FIRST_YEAR + k).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    // Attention index: a stationary AR(1) within each entity (so a lagged
    // value is a relevant instrument), lognormal marginal, snapped to the
    // per-document hit grid.
    let mut gea = vec![0.0; n];
    for e in 0..n_e {
        let mut z = normal(&mut rng);
        gea[e * t] = (0.35 * z).exp();
        for k in 1..t {
            z = 0.7 * z + (1.0 - 0.7f64 * 0.7).sqrt() * normal(&mut rng);
            gea[e * t + k] = (0.35 * z).exp();
        }
    }
    let gt = target("GEA");
    calibrate(&mut gea, &gt);
    let grid = 100.0 / BASE_TOKENS as f64;
    for x in gea.iter_mut() {
        *x = (*x / grid).round() * grid;
    }
    let r_gmin = argmin(&gea);
    let r_gmax = argmax(&gea);
    let mut tokens = vec![BASE_TOKENS; n];
    tokens[r_gmin] = MIN_DOC_TOKENS;
    tokens[r_gmax] = MAX_DOC_TOKENS;
    gea[r_gmin] = gt.min;
    gea[r_gmax] = gt.max;
    let hits: Vec<usize> =
        (0..n).map(|i| (gea[i] * tokens[i] as f64 / 100.0).round() as usize).collect();
    // Re-derive each value exactly as the index pipeline will compute it,
    // so the panel round-trips bit-for-bit through the corpus.
    for i in 0..n {
        gea[i] = hits[i] as f64 / tokens[i] as f64 * 100.0;
    }

    // Moderator, negatively correlated with attention.
    let (gm, gs) = moments(&gea);
    let w = (1.0 - 0.163f64 * 0.163).sqrt();
    let mut it: Vec<f64> =
        gea.iter().map(|g| -0.163 * (g - gm) / gs).map(|z| z + w * normal(&mut rng)).collect();
    calibrate(&mut it, &target("IT"));

    // Controls, independent of attention.
    let mut er: Vec<f64> = (0..n).map(|_| (1.0 * normal(&mut rng)).exp()).collect();
    calibrate(&mut er, &target("ER"));
    let mut ene: Vec<f64> = (0..n).map(|_| (0.6 * normal(&mut rng)).exp()).collect();
    calibrate(&mut ene, &target("ENE"));
    let mut indu: Vec<f64> = (0..n).map(|_| (0.5 * normal(&mut rng)).exp()).collect();
    calibrate(&mut indu, &target("INDU"));
    let mut fdi: Vec<f64> = (0..n).map(|_| (0.8 * normal(&mut rng)).exp()).collect();
    calibrate(&mut fdi, &target("FDI"));
    let mut lnpe: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    calibrate(&mut lnpe, &target("LNPE"));
    let mut lnexp: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    calibrate(&mut lnexp, &target("LNEXP"));

    // Emissions: planted slope on attention plus an error made of a
    // dominant entity effect, a mild year drift, and idiosyncratic noise.
    let mut mu: Vec<f64> = (0..n_e).map(|_| (0.8 * normal(&mut rng)).exp()).collect();
    let mu_mean = mu.iter().sum::<f64>() / n_e as f64;
    for m in &mut mu {
        *m -= mu_mean;
    }
    let mut lam: Vec<f64> =
        (0..t).map(|k| 0.25 * (k as f64 - (t as f64 - 1.0) / 2.0) + 0.3 * normal(&mut rng)).collect();
    let lam_mean = lam.iter().sum::<f64>() / t as f64;
    for l in &mut lam {
        *l -= lam_mean;
    }
    let mut d: Vec<f64> =
        (0..n).map(|i| 6.5 * mu[i / t] + lam[i % t] + 0.8 * normal(&mut rng)).collect();

    // The exact emission extremes are planted on the two rows whose
    // two-way-demeaned attention is closest to zero (in distinct
    // entities), so pinning them cannot tilt the planted slope.
    let g_til = two_way_demean(&gea, n_e, t);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| g_til[a].abs().total_cmp(&g_til[b].abs()));
    let r_hi = order[0];
    let r_lo = *order[1..].iter().find(|&&r| r / t != r_hi / t).expect("two entities");

    let ct = target("CO2");
    let inset = 0.01 * (ct.max - ct.min);
    let mut co2 = vec![0.0; n];
    for _ in 0..300 {
        // Affine map on the error alone: solve a + c·d so that
        // β·g + a + c·d has exactly the target mean and variance. The
        // planted slope is never rescaled.
        let (dm, ds) = moments(&d);
        let vg = {
            let (_, s) = moments(&gea);
            s * s
        };
        let vd = ds * ds;
        let cgd = covariance(&gea, &d);
        let b = PLANTED_BETA;
        let disc = (b * cgd).powi(2) - vd * (b * b * vg - ct.std * ct.std);
        let c = (-b * cgd + disc.sqrt()) / vd;
        let a = ct.mean - b * gm - c * dm;
        for i in 0..n {
            d[i] = a + c * d[i];
            co2[i] = b * gea[i] + d[i];
        }
        for (i, x) in co2.iter_mut().enumerate() {
            if i != r_lo && i != r_hi {
                *x = x.clamp(ct.min + inset, ct.max - inset);
            }
        }
        co2[r_lo] = ct.min;
        co2[r_hi] = ct.max;
        for i in 0..n {
            d[i] = co2[i] - b * gea[i];
        }
        let (m, s) = moments(&co2);
        if (m - ct.mean).abs() <= 1e-9 && (s - ct.std).abs() <= 1e-9 {
            break;
        }
    }

    // Population in 10⁴ persons, mildly growing; emissions enter the
    // ledger as total mass so the accounting chain divides back down.
    let pop_base: Vec<f64> = (0..n_e).map(|_| (3000.0f64.ln() + 0.4 * normal(&mut rng)).exp()).collect();
    let population: Vec<f64> = (0..n)
        .map(|i| (pop_base[i / t] * (1.0 + 0.006 * (i % t) as f64) * (1.0 + 0.01 * normal(&mut rng))).max(50.0))
        .collect();

    FixtureData {
        ids,
        years,
        gea,
        tokens,
        hits,
        co2,
        population,
        panel_columns: vec![
            ("IT", it),
            ("ER", er),
            ("ENE", ene),
            ("INDU", indu),
            ("FDI", fdi),
            ("LNPE", lnpe),
            ("LNEXP", lnexp),
        ],
    }
}

/// One document's text: `hits` dictionary keywords spread evenly through
/// filler tokens, wrapped every 20 tokens. `cursor` rotates through the
/// dictionary across documents so every keyword appears in the corpus.
fn doc_text(keywords: &[&str], hits: usize, tokens: usize, cursor: &mut usize) -> String {
    let mut is_hit = vec![false; tokens];
    for j in 0..hits {
        is_hit[j * tokens / hits] = true;
    }
    let mut out = String::with_capacity(tokens * 8);
    for (pos, hit) in is_hit.iter().enumerate() {
        let tok = if *hit {
            let k = keywords[*cursor % keywords.len()];
            *cursor += 1;
            k
        } else {
            FILLERS[pos % FILLERS.len()]
        };
        out.push_str(tok);
        out.push(if (pos + 1) % 20 == 0 { '\n' } else { ' ' });
    }
    out
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    w.write_record(header).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for row in rows {
        w.write_record(row).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Generate the full fixture tree under `dir`: corpus documents, emission
/// factor / energy / population files, the control panel, a region map, a
/// moment-target file, and a ready-to-run `fixture.toml`.
pub fn make_fixture(dir: &Path, seed: u64) -> Result<FixtureReport> {
    let data = generate(seed);
    let n_e = data.ids.len();
    let t = data.years.len();
    let corpus_dir = dir.join("corpus");
    fs::create_dir_all(&corpus_dir).map_err(|e| Error::io(&corpus_dir, e))?;

    // Corpus documents.
    let dict = KeywordDictionary::default_dictionary();
    let keywords: Vec<&str> = dict.keywords().map(|(k, _)| k).collect();
    let mut cursor = 0usize;
    for i in 0..n_e * t {
        let text = doc_text(&keywords, data.hits[i], data.tokens[i], &mut cursor);
        let path = corpus_dir.join(format!("{}_{}.txt", data.ids[i / t], data.years[i % t]));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }

    // Emission factors and the energy ledger that reconstructs the planted
    // per-capita emissions through the accounting chain.
    let factor_rows: Vec<Vec<String>> = FUELS
        .iter()
        .map(|(id, h, unit, ch, cor, _)| {
            vec![id.to_string(), h.to_string(), unit.to_string(), ch.to_string(), "tC/TJ".into(), cor.to_string()]
        })
        .collect();
    write_csv(
        &dir.join("factors.csv"),
        &["fuel_id", "H", "H_unit", "CH", "CH_unit", "COR"],
        &factor_rows,
    )?;

    let mut energy_rows = Vec::with_capacity(n_e * t * FUELS.len());
    let mut pop_rows = Vec::with_capacity(n_e * t);
    for i in 0..n_e * t {
        let id = &data.ids[i / t];
        let year = data.years[i % t];
        let total = data.co2[i] * data.population[i];
        for (fuel, h, unit, ch, cor, share) in FUELS {
            let cef = h * ch * cor * (44.0 / 12.0) * 1e-6;
            let physical = unit.split_once('/').expect("unit has a physical part").1;
            let qty = total * share / cef;
            energy_rows.push(vec![
                id.clone(),
                year.to_string(),
                fuel.to_string(),
                qty.to_string(),
                physical.to_string(),
            ]);
        }
        pop_rows.push(vec![id.clone(), year.to_string(), data.population[i].to_string()]);
    }
    write_csv(
        &dir.join("energy.csv"),
        &["region_id", "year", "fuel_id", "quantity", "unit"],
        &energy_rows,
    )?;
    write_csv(&dir.join("population.csv"), &["region_id", "year", "population"], &pop_rows)?;

    // Control panel (attention and emissions arrive via the pipeline).
    let mut header = vec!["entity", "year"];
    header.extend(data.panel_columns.iter().map(|(name, _)| *name));
    let panel_rows: Vec<Vec<String>> = (0..n_e * t)
        .map(|i| {
            let mut row = vec![data.ids[i / t].clone(), data.years[i % t].to_string()];
            row.extend(data.panel_columns.iter().map(|(_, v)| v[i].to_string()));
            row
        })
        .collect();
    write_csv(&dir.join("panel.csv"), &header, &panel_rows)?;

    let region_rows: Vec<Vec<String>> =
        data.ids.iter().map(|id| vec![id.clone(), region_of(id).to_string()]).collect();
    write_csv(&dir.join("regions.csv"), &["entity", "region"], &region_rows)?;

    // Moment targets, with the planted slope recorded as a constant row.
    let mut moment_rows: Vec<Vec<String>> = MOMENT_TARGETS
        .iter()
        .map(|(name, mean, std, min, max)| {
            vec![name.to_string(), mean.to_string(), std.to_string(), min.to_string(), max.to_string()]
        })
        .collect();
    moment_rows.push(vec![
        "planted_beta".into(),
        PLANTED_BETA.to_string(),
        "0".into(),
        PLANTED_BETA.to_string(),
        PLANTED_BETA.to_string(),
    ]);
    write_csv(&dir.join("moments.csv"), &["variable", "mean", "std", "min", "max"], &moment_rows)?;

    let config = dir.join("fixture.toml");
    let toml = format!(
        r#"version = 1
out_dir = "out"
seed = {seed}

[corpus]
dir = "corpus"
pattern = "*.txt"
segmenter = "whitespace"
variant = "percent"

[carbon]
factors = "factors.csv"
energy = "energy.csv"
population = "population.csv"

[panel]
path = "panel.csv"
dependent = "CO2"
focal = "GEA"
controls = ["ER", "ENE", "INDU", "FDI", "LNPE", "LNEXP"]
moderator = "IT"
effects = "both"
se = "cluster"

[[model]]
kind = "describe"
label = "Summary statistics"

[[model]]
kind = "correlate"
label = "Pairwise correlations"

[[model]]
kind = "fe"
label = "FE baseline"

[[model]]
kind = "re"
label = "Random effects"

[[model]]
kind = "hausman"
label = "Hausman contrast"

[[model]]
kind = "tsls"
label = "2SLS lag IV"
lag = 1

[[model]]
kind = "moderation"
label = "IT moderation"

[[model]]
kind = "threshold"
label = "Attention threshold"
thresholds = 1
trim = 0.05
reps = 300

[[model]]
kind = "split"
label = "Regional subsamples"
region_map = "regions.csv"
"#
    );
    fs::write(&config, toml).map_err(|e| Error::io(&config, e))?;

    Ok(FixtureReport {
        dir: dir.to_path_buf(),
        config,
        planted_beta: PLANTED_BETA,
        entities: n_e,
        years: t,
    })
}
