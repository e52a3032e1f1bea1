use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::error::{Error, Result};

/// Semantic tag for a panel column, assigned from the run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Dependent,
    Regressor,
    Moderator,
    Control,
    Instrument,
    Id,
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dependent" => Ok(Role::Dependent),
            "regressor" => Ok(Role::Regressor),
            "moderator" => Ok(Role::Moderator),
            "control" => Ok(Role::Control),
            "instrument" => Ok(Role::Instrument),
            "id" => Ok(Role::Id),
            other => Err(Error::Invalid(format!("unknown column role '{other}'"))),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Dependent => "dependent",
            Role::Regressor => "regressor",
            Role::Moderator => "moderator",
            Role::Control => "control",
            Role::Instrument => "instrument",
            Role::Id => "id",
        })
    }
}

/// Which effects an estimator absorbs or includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effects {
    Entity,
    Time,
    #[default]
    Both,
    None,
}

impl FromStr for Effects {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "entity" => Ok(Effects::Entity),
            "time" => Ok(Effects::Time),
            "both" | "twoway" | "two-way" => Ok(Effects::Both),
            "none" => Ok(Effects::None),
            other => Err(Error::Invalid(format!("unknown effects spec '{other}'"))),
        }
    }
}

/// Balanced panel: every entity observed in every year, for every column.
///
/// Values are stored entity-major: the observation for entity `e` (by
/// sorted index) in year `t` (by sorted index) lives at `e * T + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    entities: Vec<String>,
    years: Vec<i32>,
    columns: IndexMap<String, Vec<f64>>,
    roles: BTreeMap<String, Role>,
}

impl PanelDataset {
    /// Build from pre-aligned columns (entity-major order). Entities and
    /// years must be sorted and unique; every column must have N·T finite
    /// values.
    pub fn new(
        entities: Vec<String>,
        years: Vec<i32>,
        columns: IndexMap<String, Vec<f64>>,
        roles: BTreeMap<String, Role>,
    ) -> Result<Self> {
        if entities.is_empty() || years.is_empty() {
            return Err(Error::Invalid("panel requires at least one entity and one year".into()));
        }
        if entities.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("panel entities must be sorted and unique".into()));
        }
        if years.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("panel years must be sorted and unique".into()));
        }
        let n = entities.len() * years.len();
        for (name, values) in &columns {
            if values.len() != n {
                return Err(Error::Invalid(format!(
                    "column '{name}' has {} values, panel needs {n}",
                    values.len()
                )));
            }
            if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
                let (e, t) = (bad / years.len(), bad % years.len());
                return Err(Error::Data(format!(
                    "column '{name}' is non-finite at entity '{}' year {}",
                    entities[e], years[t]
                )));
            }
        }
        for name in roles.keys() {
            if !columns.contains_key(name) {
                return Err(Error::Invalid(format!("role assigned to unknown column '{name}'")));
            }
        }
        Ok(Self { entities, years, columns, roles })
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn n_obs(&self) -> usize {
        self.entities.len() * self.years.len()
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Invalid(format!("unknown panel column '{name}'")))
    }

    pub fn role(&self, name: &str) -> Option<Role> {
        self.roles.get(name).copied()
    }

    pub fn roles(&self) -> &BTreeMap<String, Role> {
        &self.roles
    }

    /// Columns tagged with a given role, in column order.
    pub fn columns_with_role(&self, role: Role) -> Vec<&str> {
        self.columns
            .keys()
            .filter(|name| self.roles.get(*name) == Some(&role))
            .map(String::as_str)
            .collect()
    }

    /// Flat index of (entity index, year index).
    pub fn obs_index(&self, entity: usize, year: usize) -> usize {
        entity * self.years.len() + year
    }

    pub fn value(&self, name: &str, entity: usize, year: usize) -> Result<f64> {
        Ok(self.column(name)?[self.obs_index(entity, year)])
    }

    /// Entity index of a flat observation index.
    pub fn entity_of(&self, obs: usize) -> usize {
        obs / self.years.len()
    }

    /// Add a column (errors on duplicate name or wrong length).
    pub fn with_column(
        mut self,
        name: impl Into<String>,
        values: Vec<f64>,
        role: Option<Role>,
    ) -> Result<Self> {
        let name = name.into();
        if self.columns.contains_key(&name) {
            return Err(Error::Invalid(format!("column '{name}' already exists")));
        }
        if values.len() != self.n_obs() {
            return Err(Error::Invalid(format!(
                "column '{name}' has {} values, panel needs {}",
                values.len(),
                self.n_obs()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("column '{name}' contains non-finite values")));
        }
        if let Some(role) = role {
            self.roles.insert(name.clone(), role);
        }
        self.columns.insert(name, values);
        Ok(self)
    }

    /// Restrict to a subset of entities (balanced sub-panel).
    pub fn select_entities(&self, keep: &[String]) -> Result<Self> {
        let mut keep_sorted: Vec<String> = keep.to_vec();
        keep_sorted.sort();
        keep_sorted.dedup();
        let mut indices = Vec::with_capacity(keep_sorted.len());
        for id in &keep_sorted {
            match self.entities.binary_search(id) {
                Ok(i) => indices.push(i),
                Err(_) => {
                    return Err(Error::Invalid(format!("unknown entity '{id}' in selection")));
                }
            }
        }
        if indices.is_empty() {
            return Err(Error::Invalid("entity selection is empty".into()));
        }
        let t = self.years.len();
        let columns = self
            .columns
            .iter()
            .map(|(name, values)| {
                let mut sub = Vec::with_capacity(indices.len() * t);
                for &e in &indices {
                    sub.extend_from_slice(&values[e * t..(e + 1) * t]);
                }
                (name.clone(), sub)
            })
            .collect();
        PanelDataset::new(keep_sorted, self.years.clone(), columns, self.roles.clone())
    }

    /// Restrict to a contiguous subset of years by index range.
    pub fn select_year_range(&self, first_year_idx: usize) -> Result<Self> {
        if first_year_idx >= self.years.len() {
            return Err(Error::Invalid(format!(
                "year range start {first_year_idx} out of bounds for T={}",
                self.years.len()
            )));
        }
        let t = self.years.len();
        let kept_years = self.years[first_year_idx..].to_vec();
        let columns = self
            .columns
            .iter()
            .map(|(name, values)| {
                let mut sub = Vec::with_capacity(self.entities.len() * kept_years.len());
                for e in 0..self.entities.len() {
                    sub.extend_from_slice(&values[e * t + first_year_idx..(e + 1) * t]);
                }
                (name.clone(), sub)
            })
            .collect();
        PanelDataset::new(self.entities.clone(), kept_years, columns, self.roles.clone())
    }

    /// Restrict to the years in `[first, last]` (inclusive, by year value).
    pub fn select_years(&self, first: i32, last: i32) -> Result<Self> {
        if first > last {
            return Err(Error::Invalid(format!("year range {first}..{last} is empty")));
        }
        let keep: Vec<usize> =
            (0..self.years.len()).filter(|&i| self.years[i] >= first && self.years[i] <= last).collect();
        if keep.is_empty() {
            return Err(Error::Invalid(format!(
                "no years of the panel fall in {first}..{last}"
            )));
        }
        let t = self.years.len();
        let kept_years: Vec<i32> = keep.iter().map(|&i| self.years[i]).collect();
        let columns = self
            .columns
            .iter()
            .map(|(name, values)| {
                let mut sub = Vec::with_capacity(self.entities.len() * kept_years.len());
                for e in 0..self.entities.len() {
                    sub.extend(keep.iter().map(|&i| values[e * t + i]));
                }
                (name.clone(), sub)
            })
            .collect();
        PanelDataset::new(self.entities.clone(), kept_years, columns, self.roles.clone())
    }

    /// Two-way (or one-way) demeaning of the named columns:
    /// `x̃ = x − x̄_entity − x̄_year + x̄`. Other columns pass through.
    pub fn within_transform(&self, column_names: &[&str], effects: Effects) -> Result<Self> {
        let mut out = self.clone();
        for name in column_names {
            let values = self.column(name)?;
            let transformed = demean(values, self.entities.len(), self.years.len(), effects);
            *out.columns.get_mut(*name).expect("column exists") = transformed;
        }
        Ok(out)
    }
}

/// Demean one entity-major column according to the effects spec.
pub(crate) fn demean(values: &[f64], n_entities: usize, n_years: usize, effects: Effects) -> Vec<f64> {
    let n = values.len();
    debug_assert_eq!(n, n_entities * n_years);
    let grand = values.iter().sum::<f64>() / n as f64;
    let mut entity_means = vec![0.0; n_entities];
    let mut year_means = vec![0.0; n_years];
    for e in 0..n_entities {
        for t in 0..n_years {
            let v = values[e * n_years + t];
            entity_means[e] += v;
            year_means[t] += v;
        }
    }
    for m in &mut entity_means {
        *m /= n_years as f64;
    }
    for m in &mut year_means {
        *m /= n_entities as f64;
    }
    let mut out = Vec::with_capacity(n);
    for e in 0..n_entities {
        for t in 0..n_years {
            let v = values[e * n_years + t];
            let w = match effects {
                Effects::Entity => v - entity_means[e],
                Effects::Time => v - year_means[t],
                Effects::Both => v - entity_means[e] - year_means[t] + grand,
                Effects::None => v,
            };
            out.push(w);
        }
    }
    out
}

/// Free-function form of [`PanelDataset::within_transform`].
pub fn within_transform(p: &PanelDataset, columns: &[&str], effects: Effects) -> Result<PanelDataset> {
    p.within_transform(columns, effects)
}

/// Read a long-format panel CSV `entity,year,<var1>,<var2>,...`, checking
/// balance: every entity must appear in exactly the global year set, once.
pub fn read_panel_csv(path: &Path, roles: BTreeMap<String, Role>) -> Result<PanelDataset> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    let cols: Vec<String> = headers.iter().map(str::to_string).collect();
    if cols.len() < 3 || cols[0] != "entity" || cols[1] != "year" {
        return Err(Error::Data(format!(
            "{}: panel header must start with entity,year and carry at least one variable",
            path.display()
        )));
    }
    let var_names = &cols[2..];
    let mut rows: BTreeMap<(String, i32), Vec<f64>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if record.len() != cols.len() {
            return Err(Error::Data(format!(
                "{}: row with {} fields, header has {}",
                path.display(),
                record.len(),
                cols.len()
            )));
        }
        let entity = record[0].to_string();
        let year: i32 = record[1]
            .parse()
            .map_err(|_| Error::Data(format!("{}: bad year '{}'", path.display(), &record[1])))?;
        let mut values = Vec::with_capacity(var_names.len());
        for (i, name) in var_names.iter().enumerate() {
            let v: f64 = record[i + 2].parse().map_err(|_| {
                Error::Data(format!(
                    "{}: bad value '{}' for {name} at {entity}/{year}",
                    path.display(),
                    &record[i + 2]
                ))
            })?;
            values.push(v);
        }
        if rows.insert((entity.clone(), year), values).is_some() {
            return Err(Error::Data(format!(
                "{}: duplicate row for {entity}/{year}",
                path.display()
            )));
        }
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: panel file has no rows", path.display())));
    }

    let mut entities: Vec<String> = rows.keys().map(|(e, _)| e.clone()).collect();
    entities.dedup();
    let mut years: Vec<i32> = rows.keys().map(|&(_, y)| y).collect();
    years.sort_unstable();
    years.dedup();

    // Balance check: every entity × year cell must be present.
    for e in &entities {
        for y in &years {
            if !rows.contains_key(&(e.clone(), *y)) {
                return Err(Error::Data(format!(
                    "{}: unbalanced panel, missing row for {e}/{y}",
                    path.display()
                )));
            }
        }
    }
    if rows.len() != entities.len() * years.len() {
        return Err(Error::Data(format!("{}: unbalanced panel", path.display())));
    }

    let mut columns: IndexMap<String, Vec<f64>> = var_names
        .iter()
        .map(|n| (n.clone(), Vec::with_capacity(rows.len())))
        .collect();
    if columns.len() != var_names.len() {
        return Err(Error::Data(format!("{}: duplicate variable column", path.display())));
    }
    for e in &entities {
        for y in &years {
            let values = &rows[&(e.clone(), *y)];
            for (i, name) in var_names.iter().enumerate() {
                columns.get_mut(name).expect("column exists").push(values[i]);
            }
        }
    }
    PanelDataset::new(entities, years, columns, roles)
}

/// Write a panel as long-format CSV `entity,year,<vars...>`.
pub fn write_panel_csv(writer: impl Write, p: &PanelDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["entity".to_string(), "year".to_string()];
    header.extend(p.column_names().map(str::to_string));
    w.write_record(&header).map_err(|e| Error::Data(format!("writing panel csv: {e}")))?;
    for (e, entity) in p.entities().iter().enumerate() {
        for (t, year) in p.years().iter().enumerate() {
            let mut record = vec![entity.clone(), year.to_string()];
            for name in p.column_names() {
                record.push(p.value(name, e, t)?.to_string());
            }
            w.write_record(&record).map_err(|e| Error::Data(format!("writing panel csv: {e}")))?;
        }
    }
    w.flush().map_err(|e| Error::Data(format!("writing panel csv: {e}")))?;
    Ok(())
}
