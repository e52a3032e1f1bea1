//! Energy-balance carbon accounting.
//!
//! Per-fuel emission factors are derived from a (heat value, carbon per
//! heat, oxidation rate) triple; regional totals sum consumption times
//! factor over fuels, and dividing by population yields per-capita
//! emissions. Totals are interpreted as CO₂ mass — the 44/12 molar
//! carbon→CO₂ conversion is part of the factor.
//!
//! Factor values are *data*, not code: they ship in an editable CSV (see
//! `data/factor_template.csv`) and are validated, never invented, here.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Parameters defining one fuel's emission factor.
#[derive(Debug, Clone, PartialEq, serde::Deserialize, serde::Serialize)]
pub struct EmissionFactorParams {
    pub fuel_id: String,
    /// Average low calorific value, declared as energy per physical unit.
    #[serde(rename = "H")]
    pub heat_value: f64,
    /// Unit label of `heat_value`, `<energy>/<physical>` (e.g. `kJ/t`).
    #[serde(rename = "H_unit")]
    pub heat_unit: String,
    /// Carbon content per unit calorific value.
    #[serde(rename = "CH")]
    pub carbon_per_heat: f64,
    /// Unit label of `carbon_per_heat` (e.g. `tC/TJ`).
    #[serde(rename = "CH_unit")]
    pub carbon_unit: String,
    /// Carbon oxidation rate, a fraction in (0, 1].
    #[serde(rename = "COR")]
    pub oxidation_rate: f64,
}

impl EmissionFactorParams {
    fn validate(&self) -> Result<()> {
        if self.fuel_id.trim().is_empty() {
            return Err(Error::Invalid("emission factor with empty fuel_id".into()));
        }
        if !(self.heat_value.is_finite() && self.heat_value > 0.0) {
            return Err(Error::Invalid(format!(
                "fuel '{}': heat value must be positive and finite, got {}",
                self.fuel_id, self.heat_value
            )));
        }
        if !(self.carbon_per_heat.is_finite() && self.carbon_per_heat > 0.0) {
            return Err(Error::Invalid(format!(
                "fuel '{}': carbon content must be positive and finite, got {}",
                self.fuel_id, self.carbon_per_heat
            )));
        }
        if !(self.oxidation_rate.is_finite()
            && self.oxidation_rate > 0.0
            && self.oxidation_rate <= 1.0)
        {
            return Err(Error::Invalid(format!(
                "fuel '{}': oxidation rate must lie in (0, 1], got {}",
                self.fuel_id, self.oxidation_rate
            )));
        }
        Ok(())
    }

    /// The physical-unit part of the declared heat unit (`kJ/t` → `t`).
    pub fn physical_unit(&self) -> Result<&str> {
        match self.heat_unit.split_once('/') {
            Some((energy, physical)) if !energy.is_empty() && !physical.is_empty() => Ok(physical),
            _ => Err(Error::Invalid(format!(
                "fuel '{}': heat unit '{}' is not of the form <energy>/<physical>",
                self.fuel_id, self.heat_unit
            ))),
        }
    }
}

/// One fuel's consumption with its declared physical unit.
#[derive(Debug, Clone, PartialEq)]
pub struct FuelQuantity {
    pub value: f64,
    pub unit: String,
}

/// Fossil-fuel consumption of one region-year, by fuel.
#[derive(Debug, Clone, PartialEq)]
pub struct FuelAccount {
    pub region_id: String,
    pub year: i32,
    pub quantities: BTreeMap<String, FuelQuantity>,
}

impl FuelAccount {
    fn validate(&self) -> Result<()> {
        for (fuel, q) in &self.quantities {
            if !(q.value.is_finite() && q.value >= 0.0) {
                return Err(Error::Invalid(format!(
                    "account {}/{}: quantity of '{}' must be finite and non-negative, got {}",
                    self.region_id, self.year, fuel, q.value
                )));
            }
        }
        Ok(())
    }
}

/// Carbon accounting output for one region-year.
#[derive(Debug, Clone, PartialEq)]
pub struct CarbonResult {
    pub region_id: String,
    pub year: i32,
    /// Emission factor per fuel actually present in the account.
    pub factors: BTreeMap<String, f64>,
    /// Total CO₂ mass.
    pub total: f64,
    pub population: f64,
    pub per_capita: f64,
}

/// Emission factor: `H × CH × COR × (44/12) × 10⁻⁶`.
pub fn emission_factor(p: &EmissionFactorParams) -> Result<f64> {
    p.validate()?;
    Ok(p.heat_value * p.carbon_per_heat * p.oxidation_rate * (44.0 / 12.0) * 1e-6)
}

/// Compute factors for a parameter list, rejecting duplicate fuel ids.
pub fn factor_table(params: &[EmissionFactorParams]) -> Result<BTreeMap<String, f64>> {
    let mut table = BTreeMap::new();
    for p in params {
        let cef = emission_factor(p)?;
        if table.insert(p.fuel_id.clone(), cef).is_some() {
            return Err(Error::Data(format!("duplicate factor row for fuel '{}'", p.fuel_id)));
        }
    }
    Ok(table)
}

/// Refuse to combine heat values and consumption with mismatched declared
/// units: each account entry's unit must equal the physical part of the
/// matching factor's heat unit.
pub fn audit_units(account: &FuelAccount, params: &[EmissionFactorParams]) -> Result<()> {
    let by_fuel: BTreeMap<&str, &EmissionFactorParams> =
        params.iter().map(|p| (p.fuel_id.as_str(), p)).collect();
    for (fuel, q) in &account.quantities {
        if let Some(p) = by_fuel.get(fuel.as_str()) {
            let physical = p.physical_unit()?;
            if q.unit != physical {
                return Err(Error::Data(format!(
                    "account {}/{}: '{}' consumption declared in '{}' but factor heat unit '{}' implies '{}'",
                    account.region_id, account.year, fuel, q.unit, p.heat_unit, physical
                )));
            }
        }
    }
    Ok(())
}

/// Total CO₂ of one account: `C = Σ E_i × CEF_i`. Every fuel with positive
/// consumption must have a factor; zero-quantity fuels may go without.
pub fn total_emissions(account: &FuelAccount, factors: &BTreeMap<String, f64>) -> Result<f64> {
    account.validate()?;
    let mut total = 0.0;
    for (fuel, q) in &account.quantities {
        match factors.get(fuel) {
            Some(cef) => total += q.value * cef,
            None if q.value > 0.0 => {
                return Err(Error::Data(format!(
                    "account {}/{}: no emission factor for consumed fuel '{}'",
                    account.region_id, account.year, fuel
                )));
            }
            None => {}
        }
    }
    Ok(total)
}

/// Per-capita emissions: `C / population`, requiring a positive population.
pub fn per_capita_emissions(total: f64, population: f64) -> Result<f64> {
    if !(population.is_finite() && population > 0.0) {
        return Err(Error::Data(format!("population must be positive, got {population}")));
    }
    Ok(total / population)
}

/// Run the full accounting chain for a set of accounts: audit units,
/// compute factors, totals, and per-capita values. Results are sorted by
/// (region, year).
pub fn assemble_results(
    accounts: &[FuelAccount],
    params: &[EmissionFactorParams],
    population: &BTreeMap<(String, i32), f64>,
) -> Result<Vec<CarbonResult>> {
    let table = factor_table(params)?;
    let mut results = Vec::with_capacity(accounts.len());
    for account in accounts {
        audit_units(account, params)?;
        let total = total_emissions(account, &table)?;
        let pop = *population.get(&(account.region_id.clone(), account.year)).ok_or_else(|| {
            Error::Data(format!(
                "no population record for {}/{}",
                account.region_id, account.year
            ))
        })?;
        let per_capita = per_capita_emissions(total, pop)?;
        let factors = account
            .quantities
            .keys()
            .filter_map(|fuel| table.get(fuel).map(|cef| (fuel.clone(), *cef)))
            .collect();
        results.push(CarbonResult {
            region_id: account.region_id.clone(),
            year: account.year,
            factors,
            total,
            population: pop,
            per_capita,
        });
    }
    results.sort_by(|a, b| (a.region_id.as_str(), a.year).cmp(&(b.region_id.as_str(), b.year)));
    Ok(results)
}

/// Read the factor file: CSV `fuel_id,H,H_unit,CH,CH_unit,COR`.
pub fn read_factor_csv(path: &Path) -> Result<Vec<EmissionFactorParams>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for row in reader.deserialize::<EmissionFactorParams>() {
        let p = row.map_err(|e| csv_err(path, e))?;
        p.validate()?;
        out.push(p);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("factor file {} has no rows", path.display())));
    }
    Ok(out)
}

#[derive(Debug, serde::Deserialize)]
struct EnergyRow {
    region_id: String,
    year: i32,
    fuel_id: String,
    quantity: f64,
    unit: String,
}

/// Read the energy file (CSV `region_id,year,fuel_id,quantity,unit`),
/// grouping rows into one account per region-year. Duplicate
/// (region, year, fuel) rows are rejected rather than summed.
pub fn read_energy_csv(path: &Path) -> Result<Vec<FuelAccount>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut grouped: BTreeMap<(String, i32), BTreeMap<String, FuelQuantity>> = BTreeMap::new();
    for row in reader.deserialize::<EnergyRow>() {
        let r = row.map_err(|e| csv_err(path, e))?;
        let cell = grouped.entry((r.region_id.clone(), r.year)).or_default();
        if cell
            .insert(r.fuel_id.clone(), FuelQuantity { value: r.quantity, unit: r.unit })
            .is_some()
        {
            return Err(Error::Data(format!(
                "duplicate energy row for {}/{} fuel '{}'",
                r.region_id, r.year, r.fuel_id
            )));
        }
    }
    let accounts: Vec<FuelAccount> = grouped
        .into_iter()
        .map(|((region_id, year), quantities)| FuelAccount { region_id, year, quantities })
        .collect();
    for a in &accounts {
        a.validate()?;
    }
    Ok(accounts)
}

#[derive(Debug, serde::Deserialize)]
struct PopulationRow {
    region_id: String,
    year: i32,
    population: f64,
}

/// Read the population file (CSV `region_id,year,population`).
pub fn read_population_csv(path: &Path) -> Result<BTreeMap<(String, i32), f64>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = BTreeMap::new();
    for row in reader.deserialize::<PopulationRow>() {
        let r = row.map_err(|e| csv_err(path, e))?;
        if !(r.population.is_finite() && r.population > 0.0) {
            return Err(Error::Data(format!(
                "population for {}/{} must be positive, got {}",
                r.region_id, r.year, r.population
            )));
        }
        if out.insert((r.region_id.clone(), r.year), r.population).is_some() {
            return Err(Error::Data(format!(
                "duplicate population row for {}/{}",
                r.region_id, r.year
            )));
        }
    }
    Ok(out)
}

/// Write results as CSV `region_id,year,total_emissions,population,per_capita`.
pub fn write_carbon_csv(writer: impl Write, results: &[CarbonResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["region_id", "year", "total_emissions", "population", "per_capita"])
        .map_err(|e| Error::Data(format!("writing carbon csv: {e}")))?;
    for r in results {
        w.write_record([
            r.region_id.as_str(),
            &r.year.to_string(),
            &r.total.to_string(),
            &r.population.to_string(),
            &r.per_capita.to_string(),
        ])
        .map_err(|e| Error::Data(format!("writing carbon csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::Data(format!("writing carbon csv: {e}")))?;
    Ok(())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}
