use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::panel::PanelDataset;

/// Split a panel into one balanced sub-panel per region label. Every entity
/// must be mapped; labels are free-form (the conventional split is
/// east/central/west) and the result is keyed by label in sorted order.
pub fn split_sample(
    p: &PanelDataset,
    region_map: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, PanelDataset>> {
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for entity in p.entities() {
        let region = region_map.get(entity).ok_or_else(|| {
            Error::Data(format!("entity '{entity}' missing from the region map"))
        })?;
        groups.entry(region.clone()).or_default().push(entity.clone());
    }
    let mut out = BTreeMap::new();
    for (region, entities) in groups {
        out.insert(region, p.select_entities(&entities)?);
    }
    Ok(out)
}

/// Read a region map CSV with header `entity,region`.
pub fn read_region_map(reader: impl Read) -> Result<BTreeMap<String, String>> {
    let mut rdr = csv::Reader::from_reader(reader);
    {
        let headers = rdr.headers().map_err(|e| Error::Data(e.to_string()))?;
        if headers.len() < 2 || &headers[0] != "entity" || &headers[1] != "region" {
            return Err(Error::Data(format!(
                "region map header must be entity,region (got {})",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }
    let mut map = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Data(e.to_string()))?;
        let entity = record.get(0).unwrap_or("").trim().to_string();
        let region = record.get(1).unwrap_or("").trim().to_string();
        if entity.is_empty() || region.is_empty() {
            return Err(Error::Data("region map row with empty entity or region".into()));
        }
        if map.insert(entity.clone(), region).is_some() {
            return Err(Error::Data(format!("duplicate region map entry for '{entity}'")));
        }
    }
    Ok(map)
}

/// Read a region map from a file path.
pub fn read_region_map_path(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_region_map(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::linear::tests::build_panel;

    fn map_for(p: &PanelDataset, sizes: &[(&str, usize)]) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        let mut it = p.entities().iter();
        for (region, count) in sizes {
            for _ in 0..*count {
                map.insert(it.next().unwrap().clone(), region.to_string());
            }
        }
        map
    }

    #[test]
    fn three_way_split_row_counts() {
        let n_e = 30;
        let t = 13;
        let x: Vec<f64> = (0..n_e * t).map(|i| i as f64).collect();
        let p = build_panel(n_e, t, vec![("x", x)]);
        let map = map_for(&p, &[("east", 11), ("central", 8), ("west", 11)]);
        let splits = split_sample(&p, &map).unwrap();
        assert_eq!(splits["east"].n_obs(), 143);
        assert_eq!(splits["central"].n_obs(), 104);
        assert_eq!(splits["west"].n_obs(), 143);
        // Partition: every original row appears in exactly one split.
        let total: usize = splits.values().map(PanelDataset::n_obs).sum();
        assert_eq!(total, p.n_obs());
        let mut seen: Vec<(String, i32)> = Vec::new();
        for sub in splits.values() {
            for e in sub.entities() {
                for y in sub.years() {
                    seen.push((e.clone(), *y));
                }
            }
        }
        seen.sort();
        let mut expected: Vec<(String, i32)> = Vec::new();
        for e in p.entities() {
            for y in p.years() {
                expected.push((e.clone(), *y));
            }
        }
        expected.sort();
        assert_eq!(seen, expected);
    }

    #[test]
    fn unmapped_entity_named_in_error() {
        let p = build_panel(3, 2, vec![("x", vec![0.0; 6])]);
        let mut map = BTreeMap::new();
        map.insert("e00".to_string(), "east".to_string());
        map.insert("e02".to_string(), "west".to_string());
        let err = split_sample(&p, &map).unwrap_err();
        assert!(err.to_string().contains("e01"), "{err}");
    }

    #[test]
    fn region_map_csv_round_trip() {
        let csv = "entity,region\ne00,east\ne01,central\n";
        let map = read_region_map(csv.as_bytes()).unwrap();
        assert_eq!(map["e00"], "east");
        assert_eq!(map["e01"], "central");
        assert!(read_region_map("foo,bar\ne,x\n".as_bytes()).is_err());
        assert!(read_region_map("entity,region\ne00,east\ne00,west\n".as_bytes()).is_err());
        assert!(read_region_map("entity,region\n,east\n".as_bytes()).is_err());
    }
}
