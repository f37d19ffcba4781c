//! Flat TOML run configuration. Command-line flags take precedence over file values.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use discnn::dataset::GlyphKind;
use discnn::detect::DetectConfig;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // data
    pub synthetic: Option<bool>,
    pub seed: Option<u64>,
    pub n_pos: Option<usize>,
    pub n_neg: Option<usize>,
    pub glyph: Option<GlyphKind>,
    pub stl10_images: Option<PathBuf>,
    pub stl10_labels: Option<PathBuf>,
    pub stl10_classes: Option<Vec<u8>>,
    pub positive_class: Option<u8>,
    // training
    pub lambda: Option<f64>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    // detection
    pub min_sws: Option<usize>,
    pub thr: Option<f64>,
    pub link_distance: Option<f64>,
    pub batch_cap: Option<usize>,
    pub range: Option<[usize; 2]>,
    pub stride_div: Option<usize>,
    pub wa_div: Option<usize>,
    pub workers: Option<usize>,
    // paths
    pub model: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub json: Option<PathBuf>,
    pub annotated: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow::anyhow!("invalid config {}: {}", path.display(), e.message()))
    }
}

/// Flag value, else config value, else an error naming both.
pub fn required<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T> {
    match flag.or(file) {
        Some(v) => Ok(v),
        None => bail!(
            "missing required setting `{}` (flag --{} or config key {})",
            name,
            name.replace('_', "-"),
            name
        ),
    }
}

/// Detection settings from flags over config.
pub struct DetectFlags {
    pub min_sws: Option<usize>,
    pub thr: Option<f64>,
    pub link_distance: Option<f64>,
    pub batch_cap: Option<usize>,
    pub range: Option<[usize; 2]>,
    pub stride_div: Option<usize>,
    pub wa_div: Option<usize>,
}

impl DetectFlags {
    pub fn resolve(self, cfg: &RunConfig) -> Result<DetectConfig> {
        let mut d = DetectConfig::new(
            required(self.min_sws, cfg.min_sws, "min_sws")?,
            required(self.thr, cfg.thr, "thr")?,
        );
        d.link_distance = self.link_distance.or(cfg.link_distance);
        if let Some(c) = self.batch_cap.or(cfg.batch_cap) {
            d.batch_cap = c;
        }
        d.range = self.range.or(cfg.range).map(|[hi, lo]| (hi, lo));
        if let Some(v) = self.stride_div.or(cfg.stride_div) {
            d.stride_div = v;
        }
        if let Some(v) = self.wa_div.or(cfg.wa_div) {
            d.wa_div = v;
        }
        d.validate()?;
        Ok(d)
    }
}

/// One `[[class]]` table of a registry file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    pub checkpoint: PathBuf,
    pub min_sws: usize,
    pub thr: f64,
    pub link_distance: Option<f64>,
    pub batch_cap: Option<usize>,
    pub range: Option<[usize; 2]>,
    pub stride_div: Option<usize>,
    pub wa_div: Option<usize>,
}

impl ClassSpec {
    pub fn detect_config(&self) -> Result<DetectConfig> {
        DetectFlags {
            min_sws: Some(self.min_sws),
            thr: Some(self.thr),
            link_distance: self.link_distance,
            batch_cap: self.batch_cap,
            range: self.range,
            stride_div: self.stride_div,
            wa_div: self.wa_div,
        }
        .resolve(&RunConfig::default())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryFile {
    #[serde(rename = "class", default)]
    pub classes: Vec<ClassSpec>,
}

impl RegistryFile {
    /// Reads a registry; relative checkpoint paths are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read registry {}", path.display()))?;
        let mut reg: RegistryFile =
            toml::from_str(&text).map_err(|e| anyhow::anyhow!("invalid registry {}: {}", path.display(), e.message()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for c in &mut reg.classes {
            if c.checkpoint.is_relative() {
                c.checkpoint = base.join(&c.checkpoint);
            }
        }
        Ok(reg)
    }
}
