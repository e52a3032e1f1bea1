use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ecopanel_core::error::{Error, Result};
use ecopanel_core::panel::{Effects, Role, SandwichFlavor};
use ecopanel_core::text::{IndexVariant, SegmenterKind};
use serde::Deserialize;

/// Schema version this build understands.
pub const CONFIG_VERSION: u32 = 1;

/// Top-level run configuration, deserialized from TOML. Relative paths are
/// resolved against the config file's directory so a generated fixture tree
/// is self-contained.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Output directory; overridable with `--out`.
    pub out_dir: PathBuf,
    /// Default RNG seed for seeded models; overridable with `--seed`.
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub corpus: Option<CorpusConfig>,
    pub carbon: Option<CarbonConfig>,
    pub panel: Option<PanelConfig>,
    #[serde(default, rename = "model")]
    pub models: Vec<ModelConfig>,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub dir: PathBuf,
    /// Keyword dictionary path; the built-in dictionary when omitted.
    pub dictionary: Option<PathBuf>,
    /// `whitespace`, `window`, `window:N`, or `pretokenized`.
    #[serde(default = "default_segmenter")]
    pub segmenter: String,
    /// `percent` or `count`.
    #[serde(default = "default_variant")]
    pub variant: String,
    /// File-stem filter, at most one `*`.
    #[serde(default = "default_pattern")]
    pub pattern: String,
}

fn default_segmenter() -> String {
    "whitespace".into()
}

fn default_variant() -> String {
    "percent".into()
}

fn default_pattern() -> String {
    "*".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarbonConfig {
    pub factors: PathBuf,
    pub energy: PathBuf,
    pub population: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelConfig {
    pub path: PathBuf,
    pub dependent: String,
    pub focal: String,
    #[serde(default)]
    pub controls: Vec<String>,
    #[serde(default)]
    pub moderator: Option<String>,
    /// `both` (default), `entity`, `time`, or `none`.
    #[serde(default = "default_effects")]
    pub effects: String,
    /// `cluster` (default) or `hc1`.
    #[serde(default = "default_se")]
    pub se: String,
    /// Column name for the corpus-derived index when assembling
    /// (`run` pipeline); defaults to the focal name.
    pub gea_column: Option<String>,
    /// Column name for the per-capita emissions when assembling; defaults
    /// to the dependent name.
    pub carbon_column: Option<String>,
}

fn default_effects() -> String {
    "both".into()
}

fn default_se() -> String {
    "cluster".into()
}

/// One entry of the model suite.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `fe`, `re`, `hausman`, `tsls`, `moderation`, `threshold`,
    /// `describe`, `correlate`, or `split`.
    pub kind: String,
    /// Table column header; a kind-specific default when omitted.
    pub label: Option<String>,
    pub effects: Option<String>,
    pub se: Option<String>,
    /// Override the panel-level control set for this model.
    pub controls: Option<Vec<String>>,
    /// Drop these entities before fitting.
    #[serde(default)]
    pub exclude_entities: Vec<String>,
    /// Keep only years in `[first, last]`.
    pub year_range: Option<(i32, i32)>,
    /// tsls: lag depth for a self-instrument built from the focal column.
    pub lag: Option<usize>,
    /// tsls: existing column to use as the instrument.
    pub instrument: Option<String>,
    /// moderation: moderator column (falls back to `panel.moderator`).
    pub moderator: Option<String>,
    /// threshold: number of thresholds (1 or 2).
    pub thresholds: Option<usize>,
    /// threshold: trimmed tail fraction for the candidate grid.
    pub trim: Option<f64>,
    /// threshold: bootstrap replications.
    pub reps: Option<usize>,
    /// threshold: bootstrap seed override.
    pub seed: Option<u64>,
    /// split: entity→region CSV path.
    pub region_map: Option<PathBuf>,
    /// describe/correlate: column subset (all model variables otherwise).
    pub columns: Option<Vec<String>>,
}

pub const MODEL_KINDS: [&str; 9] =
    ["fe", "re", "hausman", "tsls", "moderation", "threshold", "describe", "correlate", "split"];

impl RunConfig {
    /// Load a config file and resolve its relative paths against the file's
    /// directory. Does not validate; call [`RunConfig::validate`].
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Invalid(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        anchor(&mut self.out_dir);
        if let Some(c) = &mut self.corpus {
            anchor(&mut c.dir);
            if let Some(d) = &mut c.dictionary {
                anchor(d);
            }
        }
        if let Some(c) = &mut self.carbon {
            anchor(&mut c.factors);
            anchor(&mut c.energy);
            anchor(&mut c.population);
        }
        if let Some(p) = &mut self.panel {
            anchor(&mut p.path);
        }
        for m in &mut self.models {
            if let Some(r) = &mut m.region_map {
                anchor(r);
            }
        }
    }

    /// Structural validation: schema version, recognized enum values,
    /// kind-specific required fields, and existence of every referenced
    /// input path. Runs before any work so a bad config writes nothing.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Invalid(format!(
                "config version {} not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if let Some(c) = &self.corpus {
            require_dir(&c.dir)?;
            if let Some(d) = &c.dictionary {
                require_file(d)?;
            }
            c.segmenter.parse::<SegmenterKind>()?;
            c.variant.parse::<IndexVariant>()?;
        }
        if let Some(c) = &self.carbon {
            require_file(&c.factors)?;
            require_file(&c.energy)?;
            require_file(&c.population)?;
        }
        if let Some(p) = &self.panel {
            require_file(&p.path)?;
            if p.dependent.trim().is_empty() || p.focal.trim().is_empty() {
                return Err(Error::Invalid("panel.dependent and panel.focal are required".into()));
            }
            if p.dependent == p.focal {
                return Err(Error::Invalid(format!(
                    "'{}' cannot be both dependent and focal",
                    p.dependent
                )));
            }
            for c in &p.controls {
                if *c == p.dependent || *c == p.focal {
                    return Err(Error::Invalid(format!(
                        "control '{c}' duplicates another variable role"
                    )));
                }
            }
            p.effects.parse::<Effects>()?;
            parse_se(&p.se)?;
        }
        for (i, m) in self.models.iter().enumerate() {
            let at = |msg: String| Error::Invalid(format!("model #{i} ({}): {msg}", m.kind));
            if !MODEL_KINDS.contains(&m.kind.as_str()) {
                return Err(Error::Invalid(format!(
                    "model #{i}: unknown kind '{}' (expected one of {MODEL_KINDS:?})",
                    m.kind
                )));
            }
            if self.panel.is_none() && m.kind != "describe" {
                return Err(at("a [panel] section is required to run models".into()));
            }
            if let Some(e) = &m.effects {
                e.parse::<Effects>()?;
            }
            if let Some(s) = &m.se {
                parse_se(s)?;
            }
            match m.kind.as_str() {
                "tsls" => match (&m.lag, &m.instrument) {
                    (Some(0), _) => return Err(at("lag must be at least 1".into())),
                    (Some(_), Some(_)) => {
                        return Err(at("give either lag or instrument, not both".into()))
                    }
                    (None, None) => {
                        return Err(at("tsls needs lag = k or instrument = \"column\"".into()))
                    }
                    _ => {}
                },
                "moderation" => {
                    let fallback = self.panel.as_ref().and_then(|p| p.moderator.as_ref());
                    if m.moderator.is_none() && fallback.is_none() {
                        return Err(at("moderation needs a moderator column".into()));
                    }
                }
                "threshold" => {
                    let k = m.thresholds.unwrap_or(1);
                    if !(1..=2).contains(&k) {
                        return Err(at(format!("thresholds must be 1 or 2, got {k}")));
                    }
                    let trim = m.trim.unwrap_or(0.05);
                    if !(trim > 0.0 && trim < 0.5) {
                        return Err(at(format!("trim {trim} outside (0, 0.5)")));
                    }
                    let reps = m.reps.unwrap_or(300);
                    if reps < 100 {
                        return Err(at(format!("bootstrap needs at least 100 reps, got {reps}")));
                    }
                }
                "split" => {
                    let map = m
                        .region_map
                        .as_ref()
                        .ok_or_else(|| at("split needs region_map = \"file.csv\"".into()))?;
                    require_file(map)?;
                }
                _ => {}
            }
            if let Some((first, last)) = m.year_range {
                if first > last {
                    return Err(at(format!("empty year range {first}..{last}")));
                }
            }
        }
        Ok(())
    }

    /// Role map for the panel reader, derived from the panel section.
    pub fn roles(&self) -> BTreeMap<String, Role> {
        let mut roles = BTreeMap::new();
        if let Some(p) = &self.panel {
            roles.insert(p.dependent.clone(), Role::Dependent);
            roles.insert(p.focal.clone(), Role::Regressor);
            for c in &p.controls {
                roles.insert(c.clone(), Role::Control);
            }
            if let Some(m) = &p.moderator {
                roles.insert(m.clone(), Role::Moderator);
            }
        }
        roles
    }
}

pub fn parse_se(s: &str) -> Result<SandwichFlavor> {
    match s.trim().to_ascii_lowercase().as_str() {
        "cluster" => Ok(SandwichFlavor::ClusterByEntity),
        "hc1" => Ok(SandwichFlavor::Hc1),
        other => Err(Error::Invalid(format!("unknown se flavor '{other}' (cluster or hc1)"))),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("missing input file: {}", path.display())))
    }
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("missing input directory: {}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, content).unwrap();
        p
    }

    fn minimal_panel_config(dir: &Path) -> PathBuf {
        write(dir, "panel.csv", "entity,year,y,x\na,2007,1,2\na,2008,2,1\nb,2007,0,1\nb,2008,3,4\n");
        write(
            dir,
            "run.toml",
            r#"
version = 1
out_dir = "out"

[panel]
path = "panel.csv"
dependent = "y"
focal = "x"

[[model]]
kind = "fe"
"#,
        )
    }

    #[test]
    fn loads_and_validates_minimal_config() {
        let tmp = tempfile::tempdir().unwrap();
        let path = minimal_panel_config(tmp.path());
        let config = RunConfig::load(&path).unwrap();
        config.validate().unwrap();
        assert_eq!(config.seed, 42);
        assert!(config.out_dir.ends_with("out"));
        assert!(config.panel.as_ref().unwrap().path.is_absolute() || config.panel.as_ref().unwrap().path.exists());
    }

    #[test]
    fn unknown_model_kind_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "panel.csv", "entity,year,y,x\na,2007,1,2\n");
        let path = write(
            tmp.path(),
            "run.toml",
            "version = 1\nout_dir = \"o\"\n[panel]\npath = \"panel.csv\"\ndependent = \"y\"\nfocal = \"x\"\n[[model]]\nkind = \"mystery\"\n",
        );
        let config = RunConfig::load(&path).unwrap();
        let err = config.validate().unwrap_err();
        assert!(matches!(err, Error::Invalid(_)));
        assert!(err.to_string().contains("mystery"));
    }

    #[test]
    fn unknown_key_rejected_at_parse() {
        let tmp = tempfile::tempdir().unwrap();
        let path = write(tmp.path(), "run.toml", "version = 1\nout_dir = \"o\"\ntypo = 3\n");
        assert!(RunConfig::load(&path).is_err());
    }

    #[test]
    fn missing_input_file_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = write(
            tmp.path(),
            "run.toml",
            "version = 1\nout_dir = \"o\"\n[panel]\npath = \"nope.csv\"\ndependent = \"y\"\nfocal = \"x\"\n",
        );
        let config = RunConfig::load(&path).unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn tsls_requires_exactly_one_instrument_source() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "panel.csv", "entity,year,y,x\na,2007,1,2\n");
        let base = "version = 1\nout_dir = \"o\"\n[panel]\npath = \"panel.csv\"\ndependent = \"y\"\nfocal = \"x\"\n[[model]]\nkind = \"tsls\"\n";
        let path = write(tmp.path(), "a.toml", base);
        assert!(RunConfig::load(&path).unwrap().validate().is_err());
        let path = write(tmp.path(), "b.toml", &format!("{base}lag = 1\n"));
        RunConfig::load(&path).unwrap().validate().unwrap();
        let path = write(tmp.path(), "c.toml", &format!("{base}lag = 1\ninstrument = \"z\"\n"));
        assert!(RunConfig::load(&path).unwrap().validate().is_err());
    }

    #[test]
    fn wrong_version_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = write(tmp.path(), "run.toml", "version = 9\nout_dir = \"o\"\n");
        let config = RunConfig::load(&path).unwrap();
        assert!(config.validate().is_err());
    }
}
