use std::str::FromStr;

use crate::error::{Error, Result};

/// A token "counts" only if it carries at least one alphanumeric character;
/// punctuation-only fragments are noise and are excluded from totals.
fn is_countable(token: &str) -> bool {
    token.chars().any(|c| c.is_alphanumeric())
}

/// Strategy for turning raw document text into a token total.
///
/// Only the *count* matters downstream (the attention index divides keyword
/// hits by it), so segmenters report a number rather than materialising
/// token lists.
pub trait Segmenter: Send + Sync {
    /// Number of countable tokens in `text`.
    fn token_count(&self, text: &str) -> usize;
    /// Stable name used in logs and config files.
    fn name(&self) -> &'static str;
}

/// Splits on Unicode whitespace. Suits delimited scripts and pre-spaced text.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceSegmenter;

impl Segmenter for WhitespaceSegmenter {
    fn token_count(&self, text: &str) -> usize {
        text.split_whitespace().filter(|t| is_countable(t)).count()
    }

    fn name(&self) -> &'static str {
        "whitespace"
    }
}

/// Counts alphanumeric characters and divides by a fixed window width,
/// rounding up. A crude proxy for word segmentation of undelimited scripts:
/// window 2 approximates the dominant two-character word length.
#[derive(Debug, Clone, Copy)]
pub struct FixedWindowSegmenter {
    window: usize,
}

impl FixedWindowSegmenter {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Invalid("fixed-window segmenter requires window >= 1".into()));
        }
        Ok(Self { window })
    }

    pub fn window(&self) -> usize {
        self.window
    }
}

impl Segmenter for FixedWindowSegmenter {
    fn token_count(&self, text: &str) -> usize {
        let chars = text.chars().filter(|c| c.is_alphanumeric()).count();
        chars.div_ceil(self.window)
    }

    fn name(&self) -> &'static str {
        "window"
    }
}

/// Treats each line as one externally produced token (e.g. the output of a
/// dedicated word segmenter run offline).
#[derive(Debug, Clone, Copy, Default)]
pub struct PreSegmented;

impl Segmenter for PreSegmented {
    fn token_count(&self, text: &str) -> usize {
        text.lines().map(str::trim).filter(|t| !t.is_empty() && is_countable(t)).count()
    }

    fn name(&self) -> &'static str {
        "pretokenized"
    }
}

/// Config-friendly segmenter selector. Accepts `whitespace`, `window:<n>`
/// (plain `window` means width 2), and `pretokenized`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmenterKind {
    Whitespace,
    Window(usize),
    PreSegmented,
}

impl SegmenterKind {
    pub fn build(&self) -> Result<Box<dyn Segmenter>> {
        Ok(match *self {
            SegmenterKind::Whitespace => Box::new(WhitespaceSegmenter),
            SegmenterKind::Window(w) => Box::new(FixedWindowSegmenter::new(w)?),
            SegmenterKind::PreSegmented => Box::new(PreSegmented),
        })
    }
}

impl FromStr for SegmenterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("whitespace") {
            return Ok(SegmenterKind::Whitespace);
        }
        if s.eq_ignore_ascii_case("pretokenized") || s.eq_ignore_ascii_case("presegmented") {
            return Ok(SegmenterKind::PreSegmented);
        }
        if s.eq_ignore_ascii_case("window") {
            return Ok(SegmenterKind::Window(2));
        }
        if let Some(rest) = s.strip_prefix("window:") {
            let w: usize = rest
                .trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("bad window width in segmenter '{s}'")))?;
            if w == 0 {
                return Err(Error::Invalid("window width must be >= 1".into()));
            }
            return Ok(SegmenterKind::Window(w));
        }
        Err(Error::Invalid(format!(
            "unknown segmenter '{s}' (expected whitespace, window[:n], or pretokenized)"
        )))
    }
}
