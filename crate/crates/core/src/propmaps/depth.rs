//! Depth maps come from outside: precomputed PFM files, an external
//! estimator command, or a constant map for tests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};
use crate::external;
use crate::pfm;
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthMode {
    Precomputed,
    Constant,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthProviderConfig {
    pub mode: DepthMode,
    /// Map file location; `{sample_id}` and `{index}` are substituted.
    /// For the external mode this is where the command writes its output.
    #[serde(default)]
    pub path_template: String,
    /// External command; `{frame}` (aligned PNG), `{output}`, `{sample_id}`
    /// and `{index}` are substituted.
    #[serde(default)]
    pub command: String,
}

impl Default for DepthProviderConfig {
    fn default() -> Self {
        DepthProviderConfig {
            mode: DepthMode::Constant,
            path_template: String::new(),
            command: String::new(),
        }
    }
}

impl DepthProviderConfig {
    pub fn map_path(&self, sample_id: &str, index: usize) -> PathBuf {
        PathBuf::from(external::fill(
            &self.path_template,
            &[("sample_id", sample_id.to_string()), ("index", index.to_string())],
        ))
    }
}

/// Min-max rescale into [0,1]; a constant map becomes all 0.5.
pub fn rescale_unit(raw: &Raster) -> Raster {
    let (lo, hi) = raw.min_max();
    let range = hi - lo;
    let data = if range > 0.0 {
        raw.data.iter().map(|&v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.5; raw.data.len()]
    };
    Raster { data, ..raw.clone() }
}

/// Reads a single-channel depth file as stored (no rescaling).
pub fn load_raw(path: &Path) -> Result<Raster> {
    let r = pfm::read(path)?;
    if r.channels != 1 {
        return Err(PadError::format(path, "depth map must be single-channel (Pf)"));
    }
    if r.data.iter().any(|v| !v.is_finite()) {
        return Err(PadError::format(path, "depth map has non-finite values"));
    }
    Ok(r)
}

/// Produces the unit-range depth raster for one aligned frame.
/// `frame_png` is only needed by the external mode.
pub fn provide_depth(
    cfg: &DepthProviderConfig,
    sample_id: &str,
    index: usize,
    size: (usize, usize),
    strict: bool,
    frame_png: Option<&Path>,
) -> Result<Raster> {
    let path = match cfg.mode {
        DepthMode::Constant => return Ok(Raster::filled(size.0, size.1, 1, 0.5)),
        DepthMode::Precomputed => cfg.map_path(sample_id, index),
        DepthMode::External => {
            let out = cfg.map_path(sample_id, index);
            let frame = frame_png.ok_or_else(|| {
                PadError::Internal("external depth provider needs the aligned frame".into())
            })?;
            if let Some(dir) = out.parent() {
                std::fs::create_dir_all(dir).map_err(|e| PadError::io(dir, e))?;
            }
            external::run_template(
                &cfg.command,
                &[
                    ("frame", frame.display().to_string()),
                    ("output", out.display().to_string()),
                    ("sample_id", sample_id.to_string()),
                    ("index", index.to_string()),
                ],
            )?;
            out
        }
    };
    let raw = load_raw(&path)?;
    let raw = if (raw.width, raw.height) != size {
        let msg = format!(
            "depth map {} is {}x{}, aligned frame is {}x{}",
            path.display(),
            raw.width,
            raw.height,
            size.0,
            size.1
        );
        if strict {
            return Err(PadError::Dimension {
                what: path.display().to_string(),
                expected: format!("{}x{}", size.0, size.1),
                found: format!("{}x{}", raw.width, raw.height),
            });
        }
        log::warn!("{msg}; resizing");
        raw.resize_bilinear(size.0, size.1)
    } else {
        raw
    };
    Ok(rescale_unit(&raw))
}
