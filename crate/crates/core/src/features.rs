//! Fixed-length feature vectors per (frame, property map).
//!
//! Features come from one of three extractors: precomputed PADF files, an
//! external command that turns a map file into a PADF file, or the built-in
//! handcrafted descriptor.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cache::write_atomic;
use crate::error::{PadError, Result};
use crate::external;
use crate::model::PropertyKind;
use crate::propmaps::PropertyMap;
use crate::raster::Raster;

pub const FEATURE_DIM: usize = 2048;

const PADF_MAGIC: &[u8; 4] = b"PADF";
const PADF_VERSION: u16 = 1;
const PADF_HEADER: usize = 10;

pub const FALLBACK_ID: &str = "fallback-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f32>,
    pub kind: PropertyKind,
    pub sample_id: String,
    pub frame_index: usize,
    pub extractor_id: String,
}

impl FeatureVector {
    pub fn new(
        values: Vec<f32>,
        kind: PropertyKind,
        sample_id: impl Into<String>,
        frame_index: usize,
        extractor_id: impl Into<String>,
    ) -> Result<Self> {
        check_values(&values, "feature vector")?;
        Ok(FeatureVector {
            values,
            kind,
            sample_id: sample_id.into(),
            frame_index,
            extractor_id: extractor_id.into(),
        })
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

fn check_values(values: &[f32], what: &str) -> Result<()> {
    if values.len() != FEATURE_DIM {
        return Err(PadError::Dimension {
            what: what.to_string(),
            expected: FEATURE_DIM.to_string(),
            found: values.len().to_string(),
        });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(PadError::InvalidInput(format!("{what}: component {i} is not finite")));
    }
    Ok(())
}

pub fn encode_padf(values: &[f32]) -> Result<Vec<u8>> {
    check_values(values, "feature vector")?;
    let mut out = Vec::with_capacity(PADF_HEADER + 4 * values.len());
    out.extend_from_slice(PADF_MAGIC);
    out.extend_from_slice(&PADF_VERSION.to_le_bytes());
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_padf(bytes: &[u8], path: &Path) -> Result<Vec<f32>> {
    if bytes.len() < PADF_HEADER || &bytes[..4] != PADF_MAGIC {
        return Err(PadError::format(path, "not a PADF feature file"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != PADF_VERSION {
        return Err(PadError::format(path, format!("unsupported PADF version {version}")));
    }
    let count = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let body = &bytes[PADF_HEADER..];
    if body.len() != 4 * count {
        return Err(PadError::format(
            path,
            format!("header declares {count} values but body holds {} bytes", body.len()),
        ));
    }
    let values: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    check_values(&values, &path.display().to_string())?;
    Ok(values)
}

pub fn read_padf(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| PadError::io(path, e))?;
    decode_padf(&bytes, path)
}

pub fn write_padf(path: &Path, values: &[f32]) -> Result<()> {
    write_atomic(path, &encode_padf(values)?)
}

/// `{sample_id}/{property}/{index}.padf` under `root`.
pub fn feature_path(root: &Path, sample_id: &str, kind: PropertyKind, index: usize) -> PathBuf {
    root.join(sample_id).join(kind.name()).join(format!("{index}.padf"))
}

/// Handcrafted descriptor layout:
///
/// | range        | content                                          |
/// |--------------|--------------------------------------------------|
/// | 0..768       | 16x16 area resize, channel-major, 3 channels     |
/// | 768..960     | 8x8 mean pool, 3 channels                        |
/// | 960..1728    | 256-bin histogram per channel, each sums to 1    |
/// | 1728..1984   | 16x16 grid of mean gradient magnitude            |
/// | 1984..2048   | zero                                             |
///
/// Single-channel maps are replicated to three channels.
pub fn fallback_descriptor(map: &Raster) -> Vec<f32> {
    let rgb = if map.channels == 3 {
        map.clone()
    } else {
        Raster::from_fn(map.width, map.height, 3, |x, y, _| map.get(x, y, 0))
    };
    let mut out = Vec::with_capacity(FEATURE_DIM);
    for size in [16, 8] {
        let small = rgb.resize_area(size, size);
        for c in 0..3 {
            out.extend(small.plane(c));
        }
    }
    for c in 0..3 {
        let plane = rgb.plane(c);
        let mut hist = [0f64; 256];
        for &v in &plane {
            let bin = ((v as f64 * 256.0).floor().max(0.0) as usize).min(255);
            hist[bin] += 1.0;
        }
        out.extend(hist.iter().map(|&h| (h / plane.len() as f64) as f32));
    }
    out.extend(gradient_magnitude(&rgb).resize_area(16, 16).data);
    out.resize(FEATURE_DIM, 0.0);
    out
}

/// Central-difference gradient magnitude of the channel mean, clamped at
/// the border.
fn gradient_magnitude(rgb: &Raster) -> Raster {
    let (w, h) = (rgb.width, rgb.height);
    let lum = |x: usize, y: usize| -> f64 { rgb.pixel(x, y).iter().map(|&v| v as f64).sum::<f64>() / 3.0 };
    Raster::from_fn(w, h, 1, |x, y, _| {
        let gx = lum((x + 1).min(w - 1), y) - lum(x.saturating_sub(1), y);
        let gy = lum(x, (y + 1).min(h - 1)) - lum(x, y.saturating_sub(1));
        (0.5 * (gx * gx + gy * gy).sqrt()) as f32
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorMode {
    Fallback,
    Precomputed,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub mode: ExtractorMode,
    /// Root of the `{sample_id}/{property}/{index}.padf` tree: read by the
    /// precomputed mode, written by the external command.
    #[serde(default)]
    pub root: PathBuf,
    /// External command; `{map}`, `{output}`, `{property}`, `{sample_id}`
    /// and `{index}` are substituted. The map is written as PFM.
    #[serde(default)]
    pub command: String,
    /// Overrides the derived extractor id.
    #[serde(default)]
    pub id: Option<String>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            mode: ExtractorMode::Fallback,
            root: PathBuf::new(),
            command: String::new(),
            id: None,
        }
    }
}

impl ExtractorConfig {
    pub fn extractor_id(&self) -> String {
        if let Some(id) = &self.id {
            return id.clone();
        }
        match self.mode {
            ExtractorMode::Fallback => FALLBACK_ID.to_string(),
            ExtractorMode::Precomputed => format!("precomputed:{}", self.root.display()),
            ExtractorMode::External => format!("external:{}", self.command),
        }
    }
}

pub fn extract_features(map: &PropertyMap, sample_id: &str, cfg: &ExtractorConfig) -> Result<FeatureVector> {
    let id = cfg.extractor_id();
    let values = match cfg.mode {
        ExtractorMode::Fallback => fallback_descriptor(&map.data),
        ExtractorMode::Precomputed => read_padf(&feature_path(&cfg.root, sample_id, map.kind, map.source_frame))?,
        ExtractorMode::External => {
            let out = feature_path(&cfg.root, sample_id, map.kind, map.source_frame);
            let map_file = out.with_extension("pfm");
            crate::pfm::write(&map_file, &map.data)?;
            let run = external::run_template(
                &cfg.command,
                &[
                    ("map", map_file.display().to_string()),
                    ("output", out.display().to_string()),
                    ("property", map.kind.name().to_string()),
                    ("sample_id", sample_id.to_string()),
                    ("index", map.source_frame.to_string()),
                ],
            );
            let _ = fs::remove_file(&map_file);
            run?;
            read_padf(&out)?
        }
    };
    FeatureVector::new(values, map.kind, sample_id, map.source_frame, id)
}

/// Errors unless every vector carries the same extractor id.
pub fn check_extractor_ids<'a>(vectors: impl IntoIterator<Item = &'a FeatureVector>) -> Result<Option<String>> {
    let mut seen: Option<&str> = None;
    for v in vectors {
        match seen {
            None => seen = Some(&v.extractor_id),
            Some(id) if id != v.extractor_id => {
                return Err(PadError::ExtractorMismatch {
                    expected: id.to_string(),
                    found: v.extractor_id.clone(),
                })
            }
            _ => {}
        }
    }
    Ok(seen.map(str::to_string))
}

/// Per-component standardization fitted on training vectors. Components with
/// zero variance keep unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| PadError::InvalidInput("no rows to standardize".into()))?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for j in 0..d {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(kind: PropertyKind, data: Raster, frame: usize) -> PropertyMap {
        PropertyMap {
            kind,
            data,
            source_frame: frame,
        }
    }

    #[test]
    fn padf_layout() {
        let v: Vec<f32> = (0..FEATURE_DIM).map(|i| i as f32 * 0.5).collect();
        let bytes = encode_padf(&v).unwrap();
        assert_eq!(&bytes[..4], b"PADF");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &2048u32.to_le_bytes());
        assert_eq!(bytes.len(), 10 + 4 * 2048);
        assert_eq!(&bytes[14..18], &0.5f32.to_le_bytes());
    }

    #[test]
    fn short_file_names_expected_dimension() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"PADF");
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1024u32.to_le_bytes());
        for _ in 0..1024 {
            bytes.extend_from_slice(&1.0f32.to_le_bytes());
        }
        let err = decode_padf(&bytes, Path::new("x.padf")).unwrap_err();
        assert!(matches!(err, PadError::Dimension { .. }));
        assert!(err.to_string().contains("2048"), "{err}");
    }

    #[test]
    fn truncated_and_foreign_files_rejected() {
        let bytes = encode_padf(&vec![0.0; FEATURE_DIM]).unwrap();
        assert!(decode_padf(&bytes[..100], Path::new("t")).is_err());
        assert!(decode_padf(b"PADMxxxxxxxx", Path::new("t")).is_err());
    }

    #[test]
    fn precomputed_loads_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let v: Vec<f32> = (0..FEATURE_DIM).map(|i| (i as f32).sin() * 1e-3).collect();
        write_padf(&feature_path(dir.path(), "s", PropertyKind::Saliency, 5), &v).unwrap();
        let cfg = ExtractorConfig {
            mode: ExtractorMode::Precomputed,
            root: dir.path().to_path_buf(),
            ..Default::default()
        };
        let m = map(PropertyKind::Saliency, Raster::filled(4, 4, 1, 0.0), 5);
        let f = extract_features(&m, "s", &cfg).unwrap();
        assert_eq!(
            f.values.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            v.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(f.frame_index, 5);
    }

    #[test]
    fn one_config_one_extractor_id() {
        let cfg = ExtractorConfig::default();
        let a = extract_features(&map(PropertyKind::Depth, Raster::filled(8, 8, 1, 0.2), 0), "a", &cfg).unwrap();
        let b = extract_features(&map(PropertyKind::Depth, Raster::filled(8, 8, 1, 0.7), 1), "b", &cfg).unwrap();
        assert_eq!(a.extractor_id, b.extractor_id);
        assert_eq!(check_extractor_ids([&a, &b]).unwrap().as_deref(), Some(FALLBACK_ID));
        let mut c = b.clone();
        c.extractor_id = "other".into();
        assert!(matches!(check_extractor_ids([&a, &c]), Err(PadError::ExtractorMismatch { .. })));
    }

    #[test]
    fn uniform_map_descriptor() {
        let d = fallback_descriptor(&Raster::filled(224, 224, 1, 0.5));
        assert_eq!(d.len(), FEATURE_DIM);
        for c in 0..3 {
            let h = &d[960 + 256 * c..960 + 256 * (c + 1)];
            assert_eq!(h[128], 1.0);
            assert_eq!(h.iter().sum::<f32>(), 1.0);
        }
        assert!(d[1728..1984].iter().all(|&v| v == 0.0));
        assert!(d[1984..].iter().all(|&v| v == 0.0));
        assert!(d[..960].iter().all(|&v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn rotation_keeps_histograms_moves_grid() {
        let m = Raster::from_fn(224, 224, 3, |x, y, c| ((x * 3 + y * 7 + c * 11) % 97) as f32 / 97.0 * (x as f32 / 224.0));
        let a = fallback_descriptor(&m);
        let b = fallback_descriptor(&m.rotate180());
        assert_eq!(a[960..1728], b[960..1728]);
        assert_ne!(a[..768], b[..768]);
        assert_ne!(a[1728..1984], b[1728..1984]);
        // the spatial grid of the rotated map is the reversed grid
        for c in 0..3 {
            for i in 0..256 {
                let (x, y) = (a[c * 256 + i], b[c * 256 + 255 - i]);
                assert!((x - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn standardizer_centres_columns() {
        let rows = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = Standardizer::fit(&rows).unwrap();
        assert_eq!(s.apply(&rows[0]), vec![-1.0, 0.0]);
        assert_eq!(s.apply(&rows[1]), vec![1.0, 0.0]);
    }

    #[cfg(unix)]
    #[test]
    fn external_extractor_reads_written_file() {
        use std::os::unix::fs::PermissionsExt;
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("fixed.padf");
        let v: Vec<f32> = (0..FEATURE_DIM).map(|i| i as f32).collect();
        write_padf(&src, &v).unwrap();
        let script = dir.path().join("x.sh");
        fs::write(&script, format!("#!/bin/sh\ntest -f \"$1\" && cp {} \"$2\"\n", src.display())).unwrap();
        fs::set_permissions(&script, fs::Permissions::from_mode(0o755)).unwrap();
        let cfg = ExtractorConfig {
            mode: ExtractorMode::External,
            root: dir.path().join("feat"),
            command: format!("{} {{map}} {{output}}", script.display()),
            id: Some("resnet".into()),
        };
        let f = extract_features(&map(PropertyKind::Illuminant, Raster::filled(4, 4, 3, 1.0 / 3.0), 2), "s", &cfg).unwrap();
        assert_eq!(f.values, v);
        assert_eq!(f.extractor_id, "resnet");
        assert!(feature_path(&cfg.root, "s", PropertyKind::Illuminant, 2).exists());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn padf_round_trip(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f32> = (0..FEATURE_DIM).map(|_| f32::from_bits(rng.gen::<u32>() & 0xBF7F_FFFF)).collect();
            let back = decode_padf(&encode_padf(&v).unwrap(), Path::new("p")).unwrap();
            prop_assert_eq!(
                back.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                v.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }

        #[test]
        fn descriptor_is_finite_and_deterministic(w in 4usize..40, h in 4usize..40, ch in prop::sample::select(vec![1usize, 3]), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = Raster::from_fn(w, h, ch, |_, _, _| rng.gen::<f32>());
            let a = fallback_descriptor(&m);
            prop_assert_eq!(a.len(), FEATURE_DIM);
            prop_assert!(a.iter().all(|v| v.is_finite()));
            prop_assert_eq!(a, fallback_descriptor(&m));
        }
    }
}
