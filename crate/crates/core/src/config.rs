//! Run configuration (TOML) and its content digests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PadError, Result};
use crate::eval::ClassifierConfig;
use crate::features::ExtractorConfig;
use crate::model::ProtocolSpec;
use crate::preprocess::{AlignGeometry, ExtractOptions, DEFAULT_DECODER, DEFAULT_RATE_HZ};
use crate::propmaps::PropMapParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default = "default_cache")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_models")]
    pub model_dir: PathBuf,
    #[serde(default = "default_reports")]
    pub report_dir: PathBuf,
}

fn default_cache() -> PathBuf {
    "cache".into()
}
fn default_models() -> PathBuf {
    "models".into()
}
fn default_reports() -> PathBuf {
    "reports".into()
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            cache_dir: default_cache(),
            model_dir: default_models(),
            report_dir: default_reports(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub manifest: PathBuf,
    /// Native frame rate of frame-directory media.
    #[serde(default)]
    pub fps_native: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    #[serde(default = "default_decoder")]
    pub decoder: String,
    #[serde(default)]
    pub geometry: AlignGeometry,
}

fn default_rate() -> f64 {
    DEFAULT_RATE_HZ
}
fn default_decoder() -> String {
    DEFAULT_DECODER.to_string()
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            rate_hz: DEFAULT_RATE_HZ,
            decoder: default_decoder(),
            geometry: AlignGeometry::default(),
        }
    }
}

impl PreprocessConfig {
    pub fn extract_options(&self, fps_native: Option<f64>) -> ExtractOptions {
        ExtractOptions {
            rate_hz: self.rate_hz,
            fps_native,
            decoder: self.decoder.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub datasets: Vec<DatasetEntry>,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub propmaps: PropMapParams,
    #[serde(default)]
    pub features: ExtractorConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub protocol: Option<ProtocolSpec>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn sha256_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| PadError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PadError::io(path, e))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        RunConfig::from_toml(&text, base).map_err(|e| match e {
            PadError::Config(m) => PadError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.preprocess.rate_hz > 0.0) {
            return Err(PadError::Config("preprocess.rate_hz must be positive".into()));
        }
        for p in [&self.classifier.stage1, &self.classifier.fusion] {
            if !(p.c > 0.0) || !(p.tol > 0.0) {
                return Err(PadError::Config("classifier C and tol must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() || p.as_os_str().is_empty() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn resolve_template(&self, t: &str) -> String {
        if t.is_empty() {
            t.to_string()
        } else {
            self.resolve(Path::new(t)).display().to_string()
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.resolve(&self.paths.cache_dir)
    }

    pub fn model_dir(&self) -> PathBuf {
        self.resolve(&self.paths.model_dir)
    }

    pub fn report_dir(&self) -> PathBuf {
        self.resolve(&self.paths.report_dir)
    }

    /// Map parameters with file locations resolved.
    pub fn propmaps_resolved(&self) -> PropMapParams {
        let mut p = self.propmaps.clone();
        p.depth.path_template = self.resolve_template(&p.depth.path_template);
        p
    }

    /// Extractor settings with file locations resolved.
    pub fn features_resolved(&self) -> ExtractorConfig {
        let mut f = self.features.clone();
        f.root = self.resolve(&f.root);
        f
    }

    /// SHA-256 of the canonical JSON of every setting that affects results
    /// (output directories excluded).
    pub fn digest(&self) -> String {
        let mut view = self.clone();
        view.paths = Paths::default();
        sha256_json(&view)
    }

    pub fn frames_digest(&self) -> String {
        sha256_json(&("frames", self.preprocess.rate_hz, &self.preprocess.decoder))
    }

    pub fn align_digest(&self) -> String {
        sha256_json(&("align", &self.preprocess))
    }

    pub fn maps_digest(&self) -> String {
        sha256_json(&("maps", &self.preprocess, &self.propmaps))
    }

    pub fn features_digest(&self) -> String {
        sha256_json(&("features", &self.preprocess, &self.propmaps, &self.features))
    }
}
