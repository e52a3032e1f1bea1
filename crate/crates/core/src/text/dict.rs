use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

/// One topical dimension of the dictionary: a name plus its member keywords.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dimension {
    pub name: String,
    pub keywords: Vec<String>,
}

/// Dictionary of literal keyword strings grouped into named dimensions.
///
/// Keywords are matched as literal substrings (longest match wins, see
/// [`count_keywords`](crate::text::count_keywords)). ASCII keywords match
/// case-insensitively; everything else matches exactly.
#[derive(Debug, Clone)]
pub struct KeywordDictionary {
    dimensions: Vec<Dimension>,
}

impl KeywordDictionary {
    /// Build a dictionary, validating that every dimension has at least one
    /// keyword, keywords are non-empty, and no keyword repeats anywhere.
    pub fn new(dimensions: Vec<Dimension>) -> Result<Self> {
        if dimensions.is_empty() {
            return Err(Error::Invalid("dictionary has no dimensions".into()));
        }
        let mut seen: HashSet<&str> = HashSet::new();
        for dim in &dimensions {
            if dim.name.trim().is_empty() {
                return Err(Error::Invalid("dimension with empty name".into()));
            }
            if dim.keywords.is_empty() {
                return Err(Error::Invalid(format!("dimension '{}' has no keywords", dim.name)));
            }
            for kw in &dim.keywords {
                if kw.is_empty() {
                    return Err(Error::Invalid(format!("empty keyword in dimension '{}'", dim.name)));
                }
                if !seen.insert(kw.as_str()) {
                    return Err(Error::Invalid(format!("duplicate keyword '{kw}' in dictionary")));
                }
            }
        }
        Ok(Self { dimensions })
    }

    /// Parse the dictionary file format: one `[dimension name]` header per
    /// block, one keyword per line. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut dimensions: Vec<Dimension> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                dimensions.push(Dimension { name: name.trim().to_string(), keywords: Vec::new() });
            } else {
                let dim = dimensions.last_mut().ok_or_else(|| {
                    Error::Data(format!("dictionary line {} appears before any [dimension] header", lineno + 1))
                })?;
                dim.keywords.push(line.to_string());
            }
        }
        Self::new(dimensions)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// The dictionary the tool ships with: three dimensions of environmental
    /// governance keywords (Chinese surface forms plus `PM2.5`).
    pub fn default_dictionary() -> Self {
        Self::parse(DEFAULT_DICTIONARY).expect("bundled dictionary is valid")
    }

    pub fn dimensions(&self) -> &[Dimension] {
        &self.dimensions
    }

    /// All keywords with the index of the dimension they belong to.
    pub fn keywords(&self) -> impl Iterator<Item = (&str, usize)> {
        self.dimensions
            .iter()
            .enumerate()
            .flat_map(|(di, dim)| dim.keywords.iter().map(move |kw| (kw.as_str(), di)))
    }

    pub fn keyword_count(&self) -> usize {
        self.dimensions.iter().map(|d| d.keywords.len()).sum()
    }
}

/// Bundled default dictionary (see `crates/core/data/keywords.txt`).
pub const DEFAULT_DICTIONARY: &str = include_str!("../../data/keywords.txt");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dictionary_shape() {
        let dict = KeywordDictionary::default_dictionary();
        assert_eq!(dict.dimensions().len(), 3);
        let sizes: Vec<usize> = dict.dimensions().iter().map(|d| d.keywords.len()).collect();
        assert_eq!(sizes, vec![4, 8, 5]);
        assert_eq!(dict.keyword_count(), 17);
        assert!(dict.keywords().any(|(kw, _)| kw == "PM2.5"));
        assert!(dict.keywords().any(|(kw, _)| kw == "环保"));
    }

    #[test]
    fn rejects_duplicate_keyword() {
        let dims = vec![
            Dimension { name: "a".into(), keywords: vec!["x".into()] },
            Dimension { name: "b".into(), keywords: vec!["x".into()] },
        ];
        assert!(KeywordDictionary::new(dims).is_err());
    }

    #[test]
    fn rejects_empty_dimension() {
        let dims = vec![Dimension { name: "a".into(), keywords: vec![] }];
        assert!(KeywordDictionary::new(dims).is_err());
    }

    #[test]
    fn parse_round_trip() {
        let text = "# comment\n[protection]\nalpha\nbeta\n\n[control]\ngamma\n";
        let dict = KeywordDictionary::parse(text).unwrap();
        assert_eq!(dict.dimensions().len(), 2);
        assert_eq!(dict.dimensions()[0].keywords, vec!["alpha", "beta"]);
        assert_eq!(dict.dimensions()[1].keywords, vec!["gamma"]);
    }

    #[test]
    fn keyword_before_header_is_an_error() {
        assert!(KeywordDictionary::parse("orphan\n[dim]\nkw\n").is_err());
    }
}
