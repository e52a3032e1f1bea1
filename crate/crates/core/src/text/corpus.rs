use std::path::Path;

use crate::error::{Error, Result};

/// One report document attributed to a region-year cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub region_id: String,
    pub year: i32,
    pub text: String,
}

impl Document {
    pub fn new(region_id: impl Into<String>, year: i32, text: impl Into<String>) -> Result<Self> {
        let region_id = region_id.into();
        let text = text.into();
        if region_id.trim().is_empty() {
            return Err(Error::Invalid("document with empty region_id".into()));
        }
        if !(1000..=9999).contains(&year) {
            return Err(Error::Invalid(format!("implausible document year {year}")));
        }
        if text.is_empty() {
            return Err(Error::Invalid(format!("document {region_id}/{year} has empty text")));
        }
        Ok(Self { region_id, year, text })
    }
}

/// A set of documents with at most one document per region-year.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    documents: Vec<Document>,
}

impl Corpus {
    /// Build a corpus, rejecting duplicate region-year pairs. Documents are
    /// kept sorted by (region, year) so iteration order is deterministic.
    pub fn new(mut documents: Vec<Document>) -> Result<Self> {
        documents.sort_by(|a, b| (a.region_id.as_str(), a.year).cmp(&(b.region_id.as_str(), b.year)));
        for pair in documents.windows(2) {
            if pair[0].region_id == pair[1].region_id && pair[0].year == pair[1].year {
                return Err(Error::Data(format!(
                    "duplicate document for region '{}' year {}",
                    pair[0].region_id, pair[0].year
                )));
            }
        }
        Ok(Self { documents })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, region_id: &str, year: i32) -> Option<&Document> {
        self.documents
            .binary_search_by(|d| (d.region_id.as_str(), d.year).cmp(&(region_id, year)))
            .ok()
            .map(|i| &self.documents[i])
    }
}

/// Match a file name against a pattern containing at most one `*` wildcard.
fn matches_pattern(name: &str, pattern: &str) -> Result<bool> {
    let mut parts = pattern.split('*');
    let prefix = parts.next().unwrap_or("");
    match parts.next() {
        None => Ok(name == pattern),
        Some(suffix) => {
            if parts.next().is_some() {
                return Err(Error::Invalid(format!("pattern '{pattern}' has more than one '*'")));
            }
            Ok(name.len() >= prefix.len() + suffix.len()
                && name.starts_with(prefix)
                && name.ends_with(suffix))
        }
    }
}

/// Parse `<region>_<year>` from a file stem, splitting at the *last*
/// underscore so region ids may themselves contain underscores.
fn parse_stem(stem: &str) -> Result<(String, i32)> {
    let (region, year) = stem.rsplit_once('_').ok_or_else(|| {
        Error::Data(format!("file stem '{stem}' is not of the form <region>_<year>"))
    })?;
    let year: i32 = year
        .parse()
        .map_err(|_| Error::Data(format!("file stem '{stem}' has a non-numeric year part")))?;
    Ok((region.to_string(), year))
}

/// Load every file under `dir` whose name matches `pattern` (one `*`
/// wildcard; e.g. `*.txt`), attributing each to the region-year encoded in
/// its name as `<region>_<year>.<ext>`. Files are read as UTF-8. An empty
/// match set is allowed but logged, since it usually means a path typo.
pub fn load_corpus(dir: &Path, pattern: &str) -> Result<Corpus> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names: Vec<String> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_file() {
            if let Some(name) = entry.file_name().to_str() {
                if matches_pattern(name, pattern)? {
                    names.push(name.to_string());
                }
            }
        }
    }
    // Directory iteration order is platform-dependent; sort for determinism.
    names.sort();
    if names.is_empty() {
        log::warn!("no files matching '{}' under {}", pattern, dir.display());
    }
    let mut documents = Vec::with_capacity(names.len());
    for name in names {
        let path = dir.join(&name);
        let stem = Path::new(&name).file_stem().and_then(|s| s.to_str()).unwrap_or(&name);
        let (region_id, year) = parse_stem(stem)?;
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        documents.push(Document::new(region_id, year, text)?);
    }
    Ok(Corpus::new(documents)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stem_parses_at_last_underscore() {
        assert_eq!(parse_stem("east_coast_2011").unwrap(), ("east_coast".to_string(), 2011));
        assert_eq!(parse_stem("e01_2007").unwrap(), ("e01".to_string(), 2007));
        assert!(parse_stem("nounderscore").is_err());
        assert!(parse_stem("region_notayear").is_err());
    }

    #[test]
    fn corpus_rejects_duplicates() {
        let docs = vec![
            Document::new("a", 2010, "x").unwrap(),
            Document::new("a", 2010, "y").unwrap(),
        ];
        assert!(Corpus::new(docs).is_err());
    }

    #[test]
    fn corpus_sorted_and_searchable() {
        let docs = vec![
            Document::new("b", 2011, "x").unwrap(),
            Document::new("a", 2012, "y").unwrap(),
            Document::new("a", 2011, "z").unwrap(),
        ];
        let corpus = Corpus::new(docs).unwrap();
        let keys: Vec<(&str, i32)> =
            corpus.documents().iter().map(|d| (d.region_id.as_str(), d.year)).collect();
        assert_eq!(keys, vec![("a", 2011), ("a", 2012), ("b", 2011)]);
        assert_eq!(corpus.get("a", 2012).unwrap().text, "y");
        assert!(corpus.get("c", 2011).is_none());
    }

    #[test]
    fn load_corpus_reads_matching_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("r1_2007.txt"), "环保 文本").unwrap();
        std::fs::write(dir.path().join("r2_2008.txt"), "生态 文本").unwrap();
        std::fs::write(dir.path().join("notes.md"), "ignored").unwrap();
        let corpus = load_corpus(dir.path(), "*.txt").unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.get("r1", 2007).unwrap().text, "环保 文本");
    }

    #[test]
    fn load_corpus_rejects_bad_stems() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("badname.txt"), "text").unwrap();
        assert!(load_corpus(dir.path(), "*.txt").is_err());
    }

    #[test]
    fn pattern_matching() {
        assert!(matches_pattern("a_2007.txt", "*.txt").unwrap());
        assert!(!matches_pattern("a_2007.csv", "*.txt").unwrap());
        assert!(matches_pattern("report_a_2007.txt", "report_*.txt").unwrap());
        assert!(matches_pattern("exact.txt", "exact.txt").unwrap());
        assert!(matches_pattern("x", "*").unwrap());
        assert!(matches_pattern_err("a*b*c"));
    }

    fn matches_pattern_err(pat: &str) -> bool {
        matches_pattern("anything", pat).is_err()
    }
}
