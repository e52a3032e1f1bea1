use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::text::corpus::{Corpus, Document};
use crate::text::dict::KeywordDictionary;
use crate::text::segment::Segmenter;

/// Keyword hits for one document, broken out per keyword and per dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordCounts {
    pub per_keyword: BTreeMap<String, u64>,
    pub per_dimension: BTreeMap<String, u64>,
    pub total_hits: u64,
}

/// How the attention index is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexVariant {
    /// Hits per hundred tokens: `hits / total_tokens * 100`.
    Percent,
    /// Raw hit count, unscaled by document length.
    Count,
}

impl fmt::Display for IndexVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IndexVariant::Percent => "percent",
            IndexVariant::Count => "count",
        })
    }
}

impl FromStr for IndexVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "percent" => Ok(IndexVariant::Percent),
            "count" => Ok(IndexVariant::Count),
            other => Err(Error::Invalid(format!("unknown index variant '{other}'"))),
        }
    }
}

/// Attention-index value for one region-year document.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionIndex {
    pub region_id: String,
    pub year: i32,
    pub gea: f64,
    pub variant: IndexVariant,
    pub total_tokens: usize,
}

struct PreparedKeyword<'a> {
    keyword: &'a str,
    /// Index into the flattened keyword list (dimension order).
    id: usize,
    /// Fully-ASCII keywords match case-insensitively.
    ascii: bool,
}

/// Reusable longest-match scanner for one dictionary.
///
/// Matching is literal-substring, non-overlapping, left to right; at each
/// position the longest matching keyword wins, with equal lengths broken by
/// lexicographic keyword order so results never depend on dictionary file
/// order. The scan advances byte-by-byte but can only ever match at UTF-8
/// character boundaries, because a keyword's first byte is never a UTF-8
/// continuation byte.
pub struct KeywordMatcher<'a> {
    dict: &'a KeywordDictionary,
    /// Keyword names and owning-dimension index, in flattened id order.
    flat: Vec<(&'a str, usize)>,
    /// For each possible first byte, the candidate keywords, longest first.
    buckets: Vec<Vec<PreparedKeyword<'a>>>,
}

impl<'a> KeywordMatcher<'a> {
    pub fn new(dict: &'a KeywordDictionary) -> Self {
        let flat: Vec<(&str, usize)> = dict.keywords().collect();
        let mut buckets: Vec<Vec<PreparedKeyword<'a>>> = (0..256).map(|_| Vec::new()).collect();
        for (id, &(keyword, _dim)) in flat.iter().enumerate() {
            let ascii = keyword.is_ascii();
            let first = keyword.as_bytes()[0];
            if ascii {
                let lower = first.to_ascii_lowercase();
                let upper = first.to_ascii_uppercase();
                buckets[lower as usize].push(PreparedKeyword { keyword, id, ascii });
                if upper != lower {
                    buckets[upper as usize].push(PreparedKeyword { keyword, id, ascii });
                }
            } else {
                buckets[first as usize].push(PreparedKeyword { keyword, id, ascii });
            }
        }
        for bucket in &mut buckets {
            bucket.sort_by(|a, b| {
                b.keyword.len().cmp(&a.keyword.len()).then_with(|| a.keyword.cmp(b.keyword))
            });
        }
        Self { dict, flat, buckets }
    }

    /// Count keyword hits in `text`.
    pub fn count(&self, text: &str) -> KeywordCounts {
        let bytes = text.as_bytes();
        let mut hits = vec![0u64; self.flat.len()];
        let mut i = 0;
        while i < bytes.len() {
            let bucket = &self.buckets[bytes[i] as usize];
            let rest = &bytes[i..];
            let mut advanced = false;
            for cand in bucket {
                let kb = cand.keyword.as_bytes();
                if kb.len() > rest.len() {
                    continue;
                }
                let head = &rest[..kb.len()];
                let matched =
                    if cand.ascii { head.eq_ignore_ascii_case(kb) } else { head == kb };
                if matched {
                    hits[cand.id] += 1;
                    i += kb.len();
                    advanced = true;
                    break;
                }
            }
            if !advanced {
                i += 1;
            }
        }

        let mut per_keyword = BTreeMap::new();
        let mut per_dimension: BTreeMap<String, u64> = self
            .dict
            .dimensions()
            .iter()
            .map(|d| (d.name.clone(), 0u64))
            .collect();
        let mut total_hits = 0u64;
        for (id, &(keyword, dim)) in self.flat.iter().enumerate() {
            per_keyword.insert(keyword.to_string(), hits[id]);
            *per_dimension.get_mut(&self.dict.dimensions()[dim].name).expect("dimension present") +=
                hits[id];
            total_hits += hits[id];
        }
        KeywordCounts { per_keyword, per_dimension, total_hits }
    }
}

/// Count keyword hits in one document. Builds a fresh matcher; to scan a
/// whole corpus use [`index_corpus`], which reuses one matcher.
pub fn count_keywords(doc: &Document, dict: &KeywordDictionary) -> KeywordCounts {
    KeywordMatcher::new(dict).count(&doc.text)
}

/// Total countable tokens in a document under the given segmenter.
pub fn total_tokens(doc: &Document, segmenter: &dyn Segmenter) -> usize {
    segmenter.token_count(&doc.text)
}

/// Compute the attention index for one region-year from its counts and
/// token total. A document with zero countable tokens is an error: it
/// carries no usable signal and a percent index would divide by zero.
pub fn gea_index(
    region_id: &str,
    year: i32,
    counts: &KeywordCounts,
    total_tokens: usize,
    variant: IndexVariant,
) -> Result<AttentionIndex> {
    if total_tokens == 0 {
        return Err(Error::Data(format!(
            "document {region_id}/{year} has no countable tokens"
        )));
    }
    let gea = match variant {
        IndexVariant::Percent => counts.total_hits as f64 / total_tokens as f64 * 100.0,
        IndexVariant::Count => counts.total_hits as f64,
    };
    Ok(AttentionIndex { region_id: region_id.to_string(), year, gea, variant, total_tokens })
}

/// Index every document in the corpus. Documents are scanned in parallel;
/// results come back in corpus order (sorted by region, then year).
pub fn index_corpus(
    corpus: &Corpus,
    dict: &KeywordDictionary,
    segmenter: &dyn Segmenter,
    variant: IndexVariant,
) -> Result<Vec<AttentionIndex>> {
    let matcher = KeywordMatcher::new(dict);
    corpus
        .documents()
        .par_iter()
        .map(|doc| {
            let counts = matcher.count(&doc.text);
            let tokens = segmenter.token_count(&doc.text);
            gea_index(&doc.region_id, doc.year, &counts, tokens, variant)
        })
        .collect()
}

/// Axis for aggregating per-document index values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Year,
    Region,
}

/// Mean index per year or per region, sorted by group key. All inputs must
/// share one variant; averaging percents with raw counts is meaningless.
pub fn aggregate_index(indices: &[AttentionIndex], group_by: GroupBy) -> Result<Vec<(String, f64)>> {
    if indices.is_empty() {
        return Err(Error::Invalid("cannot aggregate an empty index set".into()));
    }
    let variant = indices[0].variant;
    if indices.iter().any(|ix| ix.variant != variant) {
        return Err(Error::Invalid("cannot aggregate indices with mixed variants".into()));
    }
    let mut groups: BTreeMap<String, (f64, u64)> = BTreeMap::new();
    for ix in indices {
        let key = match group_by {
            // Four-digit years sort correctly as strings; Document::new
            // guarantees the range.
            GroupBy::Year => ix.year.to_string(),
            GroupBy::Region => ix.region_id.clone(),
        };
        let entry = groups.entry(key).or_insert((0.0, 0));
        entry.0 += ix.gea;
        entry.1 += 1;
    }
    Ok(groups.into_iter().map(|(k, (sum, n))| (k, sum / n as f64)).collect())
}

/// Write per-document index values as CSV with the stable header
/// `region_id,year,gea,variant,total_tokens`.
pub fn write_index_csv(writer: impl Write, indices: &[AttentionIndex]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["region_id", "year", "gea", "variant", "total_tokens"])
        .map_err(|e| Error::Data(format!("writing index csv: {e}")))?;
    for ix in indices {
        w.write_record([
            ix.region_id.as_str(),
            &ix.year.to_string(),
            &ix.gea.to_string(),
            &ix.variant.to_string(),
            &ix.total_tokens.to_string(),
        ])
        .map_err(|e| Error::Data(format!("writing index csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::Data(format!("writing index csv: {e}")))?;
    Ok(())
}

/// Write aggregated means as CSV with header `<key>,gea_mean`.
pub fn write_series_csv(
    writer: impl Write,
    series: &[(String, f64)],
    key_name: &str,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([key_name, "gea_mean"])
        .map_err(|e| Error::Data(format!("writing series csv: {e}")))?;
    for (key, mean) in series {
        w.write_record([key.as_str(), &mean.to_string()])
            .map_err(|e| Error::Data(format!("writing series csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::Data(format!("writing series csv: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::dict::Dimension;
    use crate::text::segment::{FixedWindowSegmenter, WhitespaceSegmenter};

    fn dict_of(keywords: &[&str]) -> KeywordDictionary {
        KeywordDictionary::new(vec![Dimension {
            name: "d".into(),
            keywords: keywords.iter().map(|s| s.to_string()).collect(),
        }])
        .unwrap()
    }

    fn doc(text: &str) -> Document {
        Document::new("r", 2010, text).unwrap()
    }

    #[test]
    fn counts_repeated_and_distinct_keywords() {
        let dict = KeywordDictionary::default_dictionary();
        let counts = count_keywords(&doc("环保环保生态"), &dict);
        assert_eq!(counts.per_keyword["环保"], 2);
        assert_eq!(counts.per_keyword["生态"], 1);
        assert_eq!(counts.total_hits, 3);
        assert_eq!(counts.per_dimension["Environmental protection"], 2);
        assert_eq!(counts.per_dimension["Ecological civilization"], 1);
    }

    #[test]
    fn longest_match_wins_and_consumes() {
        let dict = dict_of(&["低碳", "碳"]);
        let counts = count_keywords(&doc("低碳"), &dict);
        assert_eq!(counts.per_keyword["低碳"], 1);
        assert_eq!(counts.per_keyword["碳"], 0);

        let counts = count_keywords(&doc("低碳碳低"), &dict);
        assert_eq!(counts.per_keyword["低碳"], 1);
        assert_eq!(counts.per_keyword["碳"], 1);
    }

    #[test]
    fn equal_length_tie_breaks_lexicographically() {
        let a = dict_of(&["ab", "aa"]);
        let b = dict_of(&["aa", "ab"]);
        let text = doc("aab");
        let ca = count_keywords(&text, &a);
        let cb = count_keywords(&text, &b);
        assert_eq!(ca, cb);
        assert_eq!(ca.per_keyword["aa"], 1);
        assert_eq!(ca.per_keyword["ab"], 0);
    }

    #[test]
    fn ascii_keywords_match_case_insensitively() {
        let dict = KeywordDictionary::default_dictionary();
        let counts = count_keywords(&doc("pm2.5浓度与PM2.5监测和Pm2.5"), &dict);
        assert_eq!(counts.per_keyword["PM2.5"], 3);
    }

    #[test]
    fn cjk_keywords_match_exactly() {
        let dict = dict_of(&["环保"]);
        // Similar but distinct characters must not match.
        let counts = count_keywords(&doc("環保 环境 环保"), &dict);
        assert_eq!(counts.total_hits, 1);
    }

    #[test]
    fn no_matches_inside_consumed_span() {
        let dict = dict_of(&["环境治理", "治理"]);
        let counts = count_keywords(&doc("环境治理"), &dict);
        assert_eq!(counts.per_keyword["环境治理"], 1);
        assert_eq!(counts.per_keyword["治理"], 0);
    }

    #[test]
    fn percent_index_math() {
        let counts = KeywordCounts {
            per_keyword: BTreeMap::new(),
            per_dimension: BTreeMap::new(),
            total_hits: 5,
        };
        let ix = gea_index("r", 2010, &counts, 400, IndexVariant::Percent).unwrap();
        assert_eq!(ix.gea, 1.25);
        let ix = gea_index("r", 2010, &counts, 400, IndexVariant::Count).unwrap();
        assert_eq!(ix.gea, 5.0);
    }

    #[test]
    fn zero_token_document_is_an_error() {
        let counts = KeywordCounts {
            per_keyword: BTreeMap::new(),
            per_dimension: BTreeMap::new(),
            total_hits: 0,
        };
        assert!(gea_index("r", 2010, &counts, 0, IndexVariant::Percent).is_err());
        assert!(gea_index("r", 2010, &counts, 0, IndexVariant::Count).is_err());
    }

    #[test]
    fn punctuation_only_document_errors_through_pipeline() {
        let dict = KeywordDictionary::default_dictionary();
        let corpus = Corpus::new(vec![Document::new("r", 2010, "，。！？ …").unwrap()]).unwrap();
        let err = index_corpus(&corpus, &dict, &WhitespaceSegmenter, IndexVariant::Percent);
        assert!(err.is_err());
    }

    #[test]
    fn index_corpus_orders_by_region_year() {
        let dict = dict_of(&["环保"]);
        let corpus = Corpus::new(vec![
            Document::new("b", 2010, "环保 报告").unwrap(),
            Document::new("a", 2011, "环保 环保 文本 四 个").unwrap(),
        ])
        .unwrap();
        let out = index_corpus(&corpus, &dict, &WhitespaceSegmenter, IndexVariant::Percent).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].region_id, "a");
        assert_eq!(out[0].gea, 2.0 / 5.0 * 100.0);
        assert_eq!(out[1].region_id, "b");
        assert_eq!(out[1].gea, 50.0);
    }

    #[test]
    fn window_segmenter_through_pipeline() {
        let dict = dict_of(&["环保"]);
        let corpus = Corpus::new(vec![Document::new("r", 2010, "环保环保环保环保环保").unwrap()])
            .unwrap();
        let seg = FixedWindowSegmenter::new(2).unwrap();
        let out = index_corpus(&corpus, &dict, &seg, IndexVariant::Percent).unwrap();
        assert_eq!(out[0].total_tokens, 5);
        assert_eq!(out[0].gea, 100.0);
    }

    #[test]
    fn aggregate_by_year_and_region() {
        let mk = |r: &str, y: i32, g: f64| AttentionIndex {
            region_id: r.into(),
            year: y,
            gea: g,
            variant: IndexVariant::Percent,
            total_tokens: 100,
        };
        let idx = vec![mk("a", 2010, 1.0), mk("b", 2010, 3.0), mk("a", 2011, 5.0)];
        let by_year = aggregate_index(&idx, GroupBy::Year).unwrap();
        assert_eq!(by_year, vec![("2010".to_string(), 2.0), ("2011".to_string(), 5.0)]);
        let by_region = aggregate_index(&idx, GroupBy::Region).unwrap();
        assert_eq!(by_region, vec![("a".to_string(), 3.0), ("b".to_string(), 3.0)]);
    }

    #[test]
    fn aggregate_rejects_mixed_variants_and_empty() {
        let mk = |v: IndexVariant| AttentionIndex {
            region_id: "a".into(),
            year: 2010,
            gea: 1.0,
            variant: v,
            total_tokens: 10,
        };
        let mixed = vec![mk(IndexVariant::Percent), mk(IndexVariant::Count)];
        assert!(aggregate_index(&mixed, GroupBy::Year).is_err());
        assert!(aggregate_index(&[], GroupBy::Year).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let idx = vec![AttentionIndex {
            region_id: "e01".into(),
            year: 2007,
            gea: 1.25,
            variant: IndexVariant::Percent,
            total_tokens: 400,
        }];
        let mut buf = Vec::new();
        write_index_csv(&mut buf, &idx).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "region_id,year,gea,variant,total_tokens\ne01,2007,1.25,percent,400\n");
    }

    #[test]
    fn variant_parse_display() {
        assert_eq!("percent".parse::<IndexVariant>().unwrap(), IndexVariant::Percent);
        assert_eq!("Count".parse::<IndexVariant>().unwrap(), IndexVariant::Count);
        assert!("ratio".parse::<IndexVariant>().is_err());
        assert_eq!(IndexVariant::Percent.to_string(), "percent");
    }

    /// Naive character-boundary oracle for the scanner: same longest-match
    /// rule, implemented over `char_indices` instead of raw bytes.
    fn oracle_count(text: &str, dict: &KeywordDictionary) -> BTreeMap<String, u64> {
        let mut sorted: Vec<&str> = dict.keywords().map(|(k, _)| k).collect();
        sorted.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        let mut counts: BTreeMap<String, u64> =
            sorted.iter().map(|k| (k.to_string(), 0)).collect();
        let positions: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
        let mut pi = 0;
        while pi < positions.len() {
            let at = positions[pi];
            let rest = &text[at..];
            let mut matched_len = None;
            for kw in &sorted {
                let matched = if kw.is_ascii() {
                    rest.len() >= kw.len()
                        && rest.as_bytes()[..kw.len()].eq_ignore_ascii_case(kw.as_bytes())
                } else {
                    rest.starts_with(kw)
                };
                if matched {
                    *counts.get_mut(*kw).unwrap() += 1;
                    matched_len = Some(kw.len());
                    break;
                }
            }
            match matched_len {
                Some(len) => {
                    let target = at + len;
                    while pi < positions.len() && positions[pi] < target {
                        pi += 1;
                    }
                }
                None => pi += 1,
            }
        }
        counts
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn token_strategy() -> impl Strategy<Value = String> {
            prop_oneof![
                Just("环保".to_string()),
                Just("低碳".to_string()),
                Just("PM2.5".to_string()),
                Just("绿水青山".to_string()),
                Just("环境".to_string()),
                Just("治理文本".to_string()),
                Just("报告".to_string()),
                Just("carbon".to_string()),
                Just("pm2.5city".to_string()),
                Just("！？".to_string()),
                "[a-z]{1,6}",
                "[\\u{4e00}-\\u{4e20}]{1,4}",
            ]
        }

        proptest! {
            /// Scanner agrees with the naive char-boundary oracle on
            /// arbitrary mixed-script soup (and never panics mid-UTF-8).
            #[test]
            fn scanner_matches_oracle(parts in proptest::collection::vec(token_strategy(), 0..40), joiner in prop_oneof![Just(""), Just(" ")]) {
                let text = parts.join(joiner);
                let dict = KeywordDictionary::default_dictionary();
                let matcher = KeywordMatcher::new(&dict);
                let counts = matcher.count(&text);
                prop_assert_eq!(&counts.per_keyword, &oracle_count(&text, &dict));
            }

            /// Duplicating a document doubles hits and tokens, leaving the
            /// percent index unchanged; the count variant exactly doubles.
            #[test]
            fn duplication_leaves_percent_invariant(parts in proptest::collection::vec(token_strategy(), 1..30)) {
                let text = format!("{}\n", parts.join(" "));
                let dict = KeywordDictionary::default_dictionary();
                let seg = WhitespaceSegmenter;
                let matcher = KeywordMatcher::new(&dict);

                let single = matcher.count(&text);
                let tokens_single = seg.token_count(&text);
                prop_assume!(tokens_single > 0);

                let doubled_text = text.repeat(2);
                let doubled = matcher.count(&doubled_text);
                let tokens_doubled = seg.token_count(&doubled_text);

                prop_assert_eq!(doubled.total_hits, 2 * single.total_hits);
                prop_assert_eq!(tokens_doubled, 2 * tokens_single);

                let p1 = gea_index("r", 2010, &single, tokens_single, IndexVariant::Percent).unwrap();
                let p2 = gea_index("r", 2010, &doubled, tokens_doubled, IndexVariant::Percent).unwrap();
                prop_assert_eq!(p1.gea, p2.gea);

                let c1 = gea_index("r", 2010, &single, tokens_single, IndexVariant::Count).unwrap();
                let c2 = gea_index("r", 2010, &doubled, tokens_doubled, IndexVariant::Count).unwrap();
                prop_assert_eq!(c2.gea, 2.0 * c1.gea);
            }

            /// Duplication invariance also holds under the fixed-window
            /// segmenter when the filler keeps halves window-aligned.
            #[test]
            fn duplication_invariant_under_window(n_kw in 0usize..6, pad in 0usize..8) {
                // Keyword block padded to even char length with a neutral
                // filler, so the seam of text+text is window-aligned and
                // cannot create or destroy matches.
                let mut text = String::new();
                for _ in 0..n_kw {
                    text.push_str("低碳");
                }
                for _ in 0..(2 * pad + 2) {
                    text.push('的');
                }
                let dict = dict_of(&["低碳"]);
                let matcher = KeywordMatcher::new(&dict);
                let seg = FixedWindowSegmenter::new(2).unwrap();

                let single = matcher.count(&text);
                let t1 = seg.token_count(&text);
                let doubled_text = text.repeat(2);
                let doubled = matcher.count(&doubled_text);
                let t2 = seg.token_count(&doubled_text);

                prop_assert_eq!(doubled.total_hits, 2 * single.total_hits);
                prop_assert_eq!(t2, 2 * t1);
            }

            /// Per-dimension totals reconcile with per-keyword totals.
            #[test]
            fn dimension_totals_reconcile(parts in proptest::collection::vec(token_strategy(), 0..40)) {
                let text = parts.join("");
                let dict = KeywordDictionary::default_dictionary();
                let counts = KeywordMatcher::new(&dict).count(&text);
                let kw_sum: u64 = counts.per_keyword.values().sum();
                let dim_sum: u64 = counts.per_dimension.values().sum();
                prop_assert_eq!(kw_sum, counts.total_hits);
                prop_assert_eq!(dim_sum, counts.total_hits);
            }

            /// Adding a keyword that does not contain any existing keyword
            /// as a substring never decreases total hits. (A longer keyword
            /// that *contains* an existing one can legitimately shadow
            /// several of its hits under longest-match counting.)
            #[test]
            fn adding_disjoint_keyword_is_monotone(parts in proptest::collection::vec(token_strategy(), 0..30), extra in "[\\u{4e30}-\\u{4e40}]{1,3}") {
                let text = parts.join("");
                let base = vec!["环保".to_string(), "低碳".to_string(), "PM2.5".to_string()];
                prop_assume!(!base.iter().any(|k| extra.contains(k.as_str())));
                let before = {
                    let d = KeywordDictionary::new(vec![Dimension { name: "d".into(), keywords: base.clone() }]).unwrap();
                    KeywordMatcher::new(&d).count(&text).total_hits
                };
                let after = {
                    let mut kws = base;
                    kws.push(extra);
                    let d = KeywordDictionary::new(vec![Dimension { name: "d".into(), keywords: kws }]).unwrap();
                    KeywordMatcher::new(&d).count(&text).total_hits
                };
                prop_assert!(after >= before);
            }
        }
    }
}
