//! Config-driven pipeline: corpus index → carbon accounting → panel
//! assembly → model suite → rendered table. Every artifact lands in the
//! config's output directory with a deterministic name, so two runs with
//! the same inputs and seed produce byte-identical trees.

use std::collections::BTreeMap;
use std::fs;
use std::fs::File;
use std::path::Path;

use ecopanel_core::carbon::{
    assemble_results, read_energy_csv, read_factor_csv, read_population_csv, write_carbon_csv,
    CarbonResult,
};
use ecopanel_core::error::{Error, Result};
use ecopanel_core::models::{
    fixed_effects, hausman_test, lag_name, lag_variable, moderation_fit, random_effects,
    read_region_map_path, simple_slopes, split_sample, threshold_bootstrap, threshold_fit, tsls,
    write_lr_curve_csv, write_results_csv, write_slopes_csv, EstimationResult, ModelSpec,
    SampleFilter,
};
use ecopanel_core::panel::{
    correlation_matrix, describe, read_panel_csv, write_correlation_csv, write_describe_csv,
    write_panel_csv, Effects, PanelDataset, Role,
};
use ecopanel_core::text::{
    aggregate_index, index_corpus, load_corpus, write_index_csv, write_series_csv, AttentionIndex,
    GroupBy, IndexVariant, KeywordDictionary, SegmenterKind,
};

use crate::config::{parse_se, ModelConfig, PanelConfig, RunConfig};
use crate::table::{Cell, RegressionTable};

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

fn ensure_out_dir(config: &RunConfig) -> Result<()> {
    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    // A leftover failure report from an earlier run would shadow this one's
    // outcome; the report in an output directory must describe its latest run.
    let stale = config.out_dir.join("error.json");
    if stale.exists() {
        fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
    }
    Ok(())
}

/// Index the configured corpus and write `index.csv`, `gea_by_year.csv`,
/// and `gea_by_region.csv` into the output directory.
pub fn run_index(config: &RunConfig) -> Result<Vec<AttentionIndex>> {
    let c = config
        .corpus
        .as_ref()
        .ok_or_else(|| Error::Invalid("config has no [corpus] section".into()))?;
    let dict = match &c.dictionary {
        Some(path) => KeywordDictionary::from_path(path)?,
        None => KeywordDictionary::default_dictionary(),
    };
    let segmenter = c.segmenter.parse::<SegmenterKind>()?.build()?;
    let variant = c.variant.parse::<IndexVariant>()?;
    let corpus = load_corpus(&c.dir, &c.pattern)?;
    let indices = index_corpus(&corpus, &dict, segmenter.as_ref(), variant)?;

    ensure_out_dir(config)?;
    write_index_csv(create(&config.out_dir.join("index.csv"))?, &indices)?;
    let by_year = aggregate_index(&indices, GroupBy::Year)?;
    write_series_csv(create(&config.out_dir.join("gea_by_year.csv"))?, &by_year, "year")?;
    let by_region = aggregate_index(&indices, GroupBy::Region)?;
    write_series_csv(create(&config.out_dir.join("gea_by_region.csv"))?, &by_region, "region")?;
    Ok(indices)
}

/// Run the carbon accounting chain and write `carbon.csv`.
pub fn run_carbon(config: &RunConfig) -> Result<Vec<CarbonResult>> {
    let c = config
        .carbon
        .as_ref()
        .ok_or_else(|| Error::Invalid("config has no [carbon] section".into()))?;
    let factors = read_factor_csv(&c.factors)?;
    let accounts = read_energy_csv(&c.energy)?;
    let population = read_population_csv(&c.population)?;
    let results = assemble_results(&accounts, &factors, &population)?;
    ensure_out_dir(config)?;
    write_carbon_csv(create(&config.out_dir.join("carbon.csv"))?, &results)?;
    Ok(results)
}

/// Merge the corpus index and per-capita emissions into the control panel,
/// aligned on the panel's entity × year grid. Every cell must be covered.
pub fn assemble_panel(
    config: &RunConfig,
    indices: &[AttentionIndex],
    carbon: &[CarbonResult],
) -> Result<PanelDataset> {
    let p_cfg = config
        .panel
        .as_ref()
        .ok_or_else(|| Error::Invalid("config has no [panel] section".into()))?;
    let gea_col = p_cfg.gea_column.clone().unwrap_or_else(|| p_cfg.focal.clone());
    let co2_col = p_cfg.carbon_column.clone().unwrap_or_else(|| p_cfg.dependent.clone());
    let mut roles = config.roles();
    let gea_role = roles.remove(&gea_col).unwrap_or(Role::Regressor);
    let co2_role = roles.remove(&co2_col).unwrap_or(Role::Dependent);
    let base = read_panel_csv(&p_cfg.path, roles)?;

    let gea_map: BTreeMap<(&str, i32), f64> =
        indices.iter().map(|ix| ((ix.region_id.as_str(), ix.year), ix.gea)).collect();
    let co2_map: BTreeMap<(&str, i32), f64> =
        carbon.iter().map(|r| ((r.region_id.as_str(), r.year), r.per_capita)).collect();
    let mut gea = Vec::with_capacity(base.n_obs());
    let mut co2 = Vec::with_capacity(base.n_obs());
    for e in base.entities() {
        for y in base.years() {
            gea.push(*gea_map.get(&(e.as_str(), *y)).ok_or_else(|| {
                Error::Data(format!("no attention index for panel cell {e}/{y}"))
            })?);
            co2.push(*co2_map.get(&(e.as_str(), *y)).ok_or_else(|| {
                Error::Data(format!("no emission record for panel cell {e}/{y}"))
            })?);
        }
    }
    base.with_column(gea_col, gea, Some(gea_role))?.with_column(co2_col, co2, Some(co2_role))
}

fn default_label(kind: &str) -> &'static str {
    match kind {
        "fe" => "FE",
        "re" => "RE",
        "tsls" => "2SLS",
        "moderation" => "Moderation",
        "threshold" => "Threshold",
        "hausman" => "Hausman",
        "describe" => "Describe",
        "correlate" => "Correlations",
        _ => "Split",
    }
}

fn effects_str(e: Effects) -> &'static str {
    match e {
        Effects::Entity => "entity",
        Effects::Time => "time",
        Effects::Both => "both",
        Effects::None => "none",
    }
}

fn base_spec(p_cfg: &PanelConfig, m: &ModelConfig) -> Result<ModelSpec> {
    let effects = m.effects.as_deref().unwrap_or(&p_cfg.effects).parse::<Effects>()?;
    let se = parse_se(m.se.as_deref().unwrap_or(&p_cfg.se))?;
    let controls = m.controls.clone().unwrap_or_else(|| p_cfg.controls.clone());
    let control_refs: Vec<&str> = controls.iter().map(String::as_str).collect();
    let mut spec = ModelSpec::new(&p_cfg.dependent, &p_cfg.focal)
        .with_controls(&control_refs)
        .with_effects(effects)
        .with_se(se);
    if !m.exclude_entities.is_empty() {
        spec = spec.with_filter(SampleFilter::ExcludeEntities(m.exclude_entities.clone()));
    }
    Ok(spec)
}

struct Suite<'a> {
    config: &'a RunConfig,
    /// Rendered table columns, in suite order.
    table: Vec<EstimationResult>,
    /// One summary row per rendered column:
    /// model,kind,label,effects,se,r_squared,n_obs,dof,results_file.
    summary: Vec<Vec<String>>,
}

impl Suite<'_> {
    fn record(&mut self, idx: usize, kind: &str, file: &str, mut result: EstimationResult, label: String) -> Result<()> {
        write_results_csv(create(&self.config.out_dir.join(file))?, &result)?;
        result.label = label;
        self.summary.push(vec![
            idx.to_string(),
            kind.to_string(),
            result.label.clone(),
            effects_str(result.effects).to_string(),
            match result.se_flavor {
                ecopanel_core::panel::SandwichFlavor::Hc1 => "hc1".to_string(),
                ecopanel_core::panel::SandwichFlavor::ClusterByEntity => "cluster".to_string(),
            },
            result.r_squared.to_string(),
            result.n_obs.to_string(),
            result.dof.to_string(),
            file.to_string(),
        ]);
        self.table.push(result);
        Ok(())
    }
}

/// Run every configured model against the panel, writing one result file
/// per model plus `table.txt` and `summary.csv`.
pub fn run_models(config: &RunConfig, panel: &PanelDataset) -> Result<()> {
    let p_cfg = config
        .panel
        .as_ref()
        .ok_or_else(|| Error::Invalid("config has no [panel] section".into()))?;
    ensure_out_dir(config)?;
    let mut suite = Suite { config, table: Vec::new(), summary: Vec::new() };

    for (i, m) in config.models.iter().enumerate() {
        let label = m.label.clone().unwrap_or_else(|| default_label(&m.kind).to_string());
        let prefix = format!("m{i:02}_{}", m.kind);
        let sample = match m.year_range {
            Some((first, last)) => panel.select_years(first, last)?,
            None => panel.clone(),
        };
        match m.kind.as_str() {
            "describe" => {
                let rows = describe(&sample);
                let rows = match &m.columns {
                    Some(cols) => {
                        for c in cols {
                            if !sample.has_column(c) {
                                return Err(Error::Invalid(format!(
                                    "describe references unknown column '{c}'"
                                )));
                            }
                        }
                        rows.into_iter().filter(|r| cols.contains(&r.variable)).collect()
                    }
                    None => rows,
                };
                write_describe_csv(create(&config.out_dir.join(format!("{prefix}.csv")))?, &rows)?;
            }
            "correlate" => {
                let default_cols: Vec<String> = match &m.columns {
                    Some(cols) => cols.clone(),
                    None => {
                        let mut cols = vec![p_cfg.dependent.clone(), p_cfg.focal.clone()];
                        if let Some(mo) = &p_cfg.moderator {
                            cols.push(mo.clone());
                        }
                        cols.extend(p_cfg.controls.iter().cloned());
                        cols
                    }
                };
                let refs: Vec<&str> = default_cols.iter().map(String::as_str).collect();
                let matrix = correlation_matrix(&sample, &refs)?;
                write_correlation_csv(
                    create(&config.out_dir.join(format!("{prefix}.csv")))?,
                    &matrix,
                )?;
            }
            "fe" => {
                let spec = base_spec(p_cfg, m)?;
                let r = fixed_effects(&sample, &spec)?;
                suite.record(i, "fe", &format!("{prefix}_results.csv"), r, label)?;
            }
            "re" => {
                let spec = base_spec(p_cfg, m)?;
                let r = random_effects(&sample, &spec)?;
                suite.record(i, "re", &format!("{prefix}_results.csv"), r, label)?;
            }
            "hausman" => {
                let spec = base_spec(p_cfg, m)?;
                let fe = fixed_effects(&sample, &spec)?;
                let re = random_effects(&sample, &spec)?;
                let h = hausman_test(&fe, &re)?;
                let path = config.out_dir.join(format!("{prefix}.csv"));
                let mut w = csv::Writer::from_writer(create(&path)?);
                w.write_record(["statistic", "dof", "p_value", "non_psd_adjusted"])
                    .and_then(|()| {
                        w.write_record([
                            h.statistic.to_string(),
                            h.dof.to_string(),
                            h.p_value.to_string(),
                            h.non_psd_adjusted.to_string(),
                        ])
                    })
                    .and_then(|()| w.flush().map_err(csv::Error::from))
                    .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            }
            "tsls" => {
                let spec = base_spec(p_cfg, m)?;
                let (iv_panel, instrument) = match (m.lag, &m.instrument) {
                    (Some(k), None) => {
                        (lag_variable(&sample, &p_cfg.focal, k)?, lag_name(&p_cfg.focal, k))
                    }
                    (None, Some(col)) => (sample.clone(), col.clone()),
                    _ => unreachable!("validated: exactly one instrument source"),
                };
                let r = tsls(&iv_panel, &spec, &instrument)?;
                write_results_csv(
                    create(&config.out_dir.join(format!("{prefix}_first_stage.csv")))?,
                    &r.first_stage,
                )?;
                suite.record(i, "tsls", &format!("{prefix}_results.csv"), r.second_stage, label)?;
            }
            "moderation" => {
                let spec = base_spec(p_cfg, m)?;
                let moderator = m
                    .moderator
                    .as_ref()
                    .or(p_cfg.moderator.as_ref())
                    .expect("validated: moderator present");
                let r = moderation_fit(&sample, &spec, moderator)?;
                let mean = r.diagnostics["moderator_mean"];
                let sd = r.diagnostics["moderator_sd"];
                let slopes = simple_slopes(&r, mean, sd)?;
                write_slopes_csv(
                    create(&config.out_dir.join(format!("{prefix}_slopes.csv")))?,
                    &slopes,
                )?;
                suite.record(i, "moderation", &format!("{prefix}_results.csv"), r, label)?;
            }
            "threshold" => {
                let spec = base_spec(p_cfg, m)?;
                let k = m.thresholds.unwrap_or(1);
                let trim = m.trim.unwrap_or(0.05);
                let fit = threshold_fit(&sample, &spec, k, trim)?;
                let reps = m.reps.unwrap_or(300);
                let seed = m.seed.unwrap_or(config.seed);
                let p_values = threshold_bootstrap(&sample, &spec, &fit, reps, seed)?;
                write_lr_curve_csv(
                    create(&config.out_dir.join(format!("{prefix}_lr_curve.csv")))?,
                    &fit.lr_curve,
                )?;
                let tests_path = config.out_dir.join(format!("{prefix}_tests.csv"));
                let mut w = csv::Writer::from_writer(create(&tests_path)?);
                w.write_record(["threshold", "sup_lr", "p_value"])
                    .map_err(|e| Error::Data(format!("{}: {e}", tests_path.display())))?;
                for j in 0..fit.thresholds.len() {
                    w.write_record([
                        fit.thresholds[j].to_string(),
                        fit.sup_lr[j].to_string(),
                        p_values[j].to_string(),
                    ])
                    .map_err(|e| Error::Data(format!("{}: {e}", tests_path.display())))?;
                }
                w.flush().map_err(|e| Error::io(&tests_path, e))?;
                suite.record(i, "threshold", &format!("{prefix}_results.csv"), fit.result, label)?;
            }
            "split" => {
                let map_path = m.region_map.as_ref().expect("validated: region_map present");
                let map = read_region_map_path(map_path)?;
                let spec = base_spec(p_cfg, m)?;
                let parts = split_sample(&sample, &map)?;
                for (region, sub) in parts {
                    let r = fixed_effects(&sub, &spec)?;
                    let file = format!("{prefix}_{region}_results.csv");
                    suite.record(i, "split", &file, r, format!("{label} {region}"))?;
                }
            }
            other => return Err(Error::Invalid(format!("unknown model kind '{other}'"))),
        }
    }

    let summary_path = config.out_dir.join("summary.csv");
    let mut w = csv::Writer::from_writer(create(&summary_path)?);
    w.write_record([
        "model",
        "kind",
        "label",
        "effects",
        "se",
        "r_squared",
        "n_obs",
        "dof",
        "results_file",
    ])
    .map_err(|e| Error::Data(format!("{}: {e}", summary_path.display())))?;
    for row in &suite.summary {
        w.write_record(row)
            .map_err(|e| Error::Data(format!("{}: {e}", summary_path.display())))?;
    }
    w.flush().map_err(|e| Error::io(&summary_path, e))?;

    if !suite.table.is_empty() {
        let refs: Vec<&EstimationResult> = suite.table.iter().collect();
        let rendered = RegressionTable::from_results(&refs)?.render();
        let path = config.out_dir.join("table.txt");
        fs::write(&path, rendered).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Model suite on a pre-assembled panel (the `estimate` subcommand).
pub fn execute_estimate(config: &RunConfig) -> Result<()> {
    let p_cfg = config
        .panel
        .as_ref()
        .ok_or_else(|| Error::Invalid("config has no [panel] section".into()))?;
    let panel = read_panel_csv(&p_cfg.path, config.roles())?;
    run_models(config, &panel)
}

/// Full chain (the `run` subcommand): index, carbon, assembly (written as
/// `panel_assembled.csv`), then the model suite.
pub fn execute_run(config: &RunConfig) -> Result<()> {
    let indices = run_index(config)?;
    let carbon = run_carbon(config)?;
    let panel = assemble_panel(config, &indices, &carbon)?;
    let path = config.out_dir.join("panel_assembled.csv");
    write_panel_csv(create(&path)?, &panel)?;
    run_models(config, &panel)
}

#[derive(Debug, serde::Deserialize)]
struct SummaryRow {
    #[allow(dead_code)]
    model: usize,
    #[allow(dead_code)]
    kind: String,
    label: String,
    effects: String,
    #[allow(dead_code)]
    se: String,
    r_squared: f64,
    n_obs: usize,
    #[allow(dead_code)]
    dof: usize,
    results_file: String,
}

#[derive(Debug, serde::Deserialize)]
struct ResultRow {
    term: String,
    estimate: f64,
    se: f64,
    #[allow(dead_code)]
    t: f64,
    #[allow(dead_code)]
    p: f64,
    #[serde(default)]
    stars: String,
}

/// Rebuild `table.txt` from `summary.csv` and the per-model result files,
/// without refitting anything (the `render` subcommand). Returns the
/// rendered text after writing it.
pub fn render_from_dir(out_dir: &Path) -> Result<String> {
    let summary_path = out_dir.join("summary.csv");
    if !summary_path.is_file() {
        return Err(Error::Data(format!("{}: no summary.csv to render from", out_dir.display())));
    }
    let mut reader = csv::Reader::from_path(&summary_path)
        .map_err(|e| Error::Data(format!("{}: {e}", summary_path.display())))?;
    let rows: Vec<SummaryRow> = reader
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Data(format!("{}: {e}", summary_path.display())))?;
    if rows.is_empty() {
        return Err(Error::Data("summary.csv lists no rendered models".into()));
    }

    let mut labels = Vec::with_capacity(rows.len());
    let mut entity_effects = Vec::with_capacity(rows.len());
    let mut time_effects = Vec::with_capacity(rows.len());
    let mut r_squared = Vec::with_capacity(rows.len());
    let mut observations = Vec::with_capacity(rows.len());
    let mut terms: Vec<String> = Vec::new();
    let mut columns: Vec<BTreeMap<String, Cell>> = Vec::with_capacity(rows.len());
    for row in &rows {
        labels.push(row.label.clone());
        let effects = row.effects.parse::<Effects>()?;
        entity_effects.push(matches!(effects, Effects::Entity | Effects::Both));
        time_effects.push(matches!(effects, Effects::Time | Effects::Both));
        r_squared.push(row.r_squared);
        observations.push(row.n_obs);
        let path = out_dir.join(&row.results_file);
        let mut r = csv::Reader::from_path(&path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let mut cells = BTreeMap::new();
        for record in r.deserialize::<ResultRow>() {
            let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            if !terms.contains(&record.term) {
                terms.push(record.term.clone());
            }
            cells.insert(
                record.term,
                Cell { estimate: record.estimate, se: record.se, stars: record.stars },
            );
        }
        columns.push(cells);
    }
    let table = RegressionTable {
        labels,
        rows: terms
            .into_iter()
            .map(|t| {
                let cells = columns.iter().map(|c| c.get(&t).cloned()).collect();
                (t, cells)
            })
            .collect(),
        entity_effects,
        time_effects,
        r_squared,
        observations,
    };
    let rendered = table.render();
    let path = out_dir.join("table.txt");
    fs::write(&path, &rendered).map_err(|e| Error::io(&path, e))?;
    Ok(rendered)
}
