//! Per-sample stage execution with the on-disk stage cache.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{write_atomic, Stage, StageCache};
use crate::classify::{model_file, SvmModel};
use crate::config::RunConfig;
use crate::error::{PadError, Result};
use crate::eval::protocol::{attack_types_of, evaluate_models, train_models, Thresholds};
use crate::eval::{EvalReport, SampleFeatures, TrainedModels};
use crate::features::{extract_features, read_padf, write_padf, FeatureVector};
use crate::model::{
    load_manifest, resolve_protocol, DatasetManifest, ManifestOptions, PropertyKind, ProtocolSpec, ResolvedProtocol,
    SampleRecord,
};
use crate::pfm;
use crate::preprocess::{align_sequence, extract_frames, read_landmarks, Frame, FrameSequence};
use crate::propmaps::{compute_maps, PropertyMap};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FrameIndex {
    index: usize,
    timestamp_s: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureMeta {
    extractor_id: String,
    frames: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageSummary {
    pub samples: usize,
    pub frames: usize,
    /// Samples served from the cache.
    pub cached: usize,
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub cache: StageCache,
    pub strict: bool,
    /// Recompute stages even when cached.
    pub force: bool,
    pool: rayon::ThreadPool,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| PadError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PadError::format(path, e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value).expect("serializes").as_bytes())
}

fn read_png(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|e| PadError::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8())
}

pub(crate) fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| PadError::format(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

fn frame_png(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("{index:06}.png"))
}

impl Pipeline {
    /// `jobs` bounds the worker threads; `None` uses every core.
    pub fn new(cfg: RunConfig, strict: bool, force: bool, jobs: Option<usize>) -> Result<Self> {
        let cache = StageCache::from_env_or(&cfg.cache_dir());
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.unwrap_or(0))
            .build()
            .map_err(|e| PadError::Internal(e.to_string()))?;
        Ok(Pipeline {
            cfg,
            cache,
            strict,
            force,
            pool,
        })
    }

    pub fn load_manifests(&self) -> Result<Vec<DatasetManifest>> {
        if self.cfg.datasets.is_empty() {
            return Err(PadError::Config("no [[datasets]] configured".into()));
        }
        self.cfg
            .datasets
            .iter()
            .map(|d| {
                load_manifest(
                    &self.cfg.resolve(&d.manifest),
                    &ManifestOptions {
                        strict: self.strict,
                        fps_native: d.fps_native,
                    },
                )
            })
            .collect()
    }

    fn store_frames(&self, dir: &Path, frames: &[Frame]) -> Result<()> {
        for f in frames {
            write_png(&frame_png(dir, f.index), &f.pixels)?;
        }
        let index: Vec<FrameIndex> = frames
            .iter()
            .map(|f| FrameIndex {
                index: f.index,
                timestamp_s: f.timestamp_s,
            })
            .collect();
        write_json(&dir.join("frames.json"), &index)
    }

    fn load_frames(&self, dir: &Path) -> Result<Vec<Frame>> {
        let index: Vec<FrameIndex> = read_json(&dir.join("frames.json"))?;
        index
            .into_iter()
            .map(|fi| {
                Ok(Frame {
                    pixels: read_png(&frame_png(dir, fi.index))?,
                    timestamp_s: fi.timestamp_s,
                    index: fi.index,
                })
            })
            .collect()
    }

    fn cached(&self, stage: Stage, digest: &str, id: &str) -> bool {
        !self.force && self.cache.is_complete(stage, digest, id)
    }

    /// Frames sampled at the configured rate.
    pub fn frames(&self, rec: &SampleRecord, fps_native: Option<f64>) -> Result<Vec<Frame>> {
        let digest = self.cfg.frames_digest();
        let dir = self.cache.sample_dir(Stage::Frames, &digest, &rec.sample_id);
        if self.cached(Stage::Frames, &digest, &rec.sample_id) {
            return self.load_frames(&dir);
        }
        let seq = extract_frames(
            &rec.sample_id,
            &rec.media_path,
            &self.cfg.preprocess.extract_options(fps_native),
        )?;
        Ok(seq.frames)
    }

    fn write_frames_stage(&self, rec: &SampleRecord, fps_native: Option<f64>) -> Result<(usize, bool)> {
        let digest = self.cfg.frames_digest();
        if self.cached(Stage::Frames, &digest, &rec.sample_id) {
            return Ok((self.cache.completed_items(Stage::Frames, &digest, &rec.sample_id).unwrap_or(0), true));
        }
        let frames = self.frames(rec, fps_native)?;
        let dir = self.cache.sample_dir(Stage::Frames, &digest, &rec.sample_id);
        self.store_frames(&dir, &frames)?;
        self.cache.mark_complete(Stage::Frames, &digest, &rec.sample_id, frames.len())?;
        Ok((frames.len(), false))
    }

    /// Aligned canonical crops, cached as PNG.
    pub fn aligned(&self, rec: &SampleRecord, fps_native: Option<f64>) -> Result<(Vec<Frame>, bool)> {
        let digest = self.cfg.align_digest();
        let dir = self.cache.sample_dir(Stage::Align, &digest, &rec.sample_id);
        if self.cached(Stage::Align, &digest, &rec.sample_id) {
            return Ok((self.load_frames(&dir)?, true));
        }
        let seq = FrameSequence {
            sample_id: rec.sample_id.clone(),
            frames: self.frames(rec, fps_native)?,
        };
        let landmarks = rec.landmarks_path.as_deref().map(read_landmarks).transpose()?;
        let aligned = align_sequence(&seq, landmarks.as_deref(), &self.cfg.preprocess.geometry)?;
        self.store_frames(&dir, &aligned.frames)?;
        self.cache.mark_complete(Stage::Align, &digest, &rec.sample_id, aligned.len())?;
        Ok((aligned.frames, false))
    }

    fn map_path(dir: &Path, kind: PropertyKind, index: usize) -> PathBuf {
        dir.join(kind.name()).join(format!("{index}.pfm"))
    }

    /// Depth, illuminant and saliency maps per aligned frame, cached as PFM.
    pub fn maps(&self, rec: &SampleRecord, fps_native: Option<f64>) -> Result<(Vec<[PropertyMap; 3]>, bool)> {
        let digest = self.cfg.maps_digest();
        let dir = self.cache.sample_dir(Stage::Maps, &digest, &rec.sample_id);
        if self.cached(Stage::Maps, &digest, &rec.sample_id) {
            let index: Vec<usize> = read_json(&dir.join("frames.json"))?;
            let maps = index
                .into_iter()
                .map(|i| -> Result<[PropertyMap; 3]> {
                    let load = |kind: PropertyKind| -> Result<PropertyMap> {
                        Ok(PropertyMap {
                            kind,
                            data: pfm::read(&Self::map_path(&dir, kind, i))?,
                            source_frame: i,
                        })
                    };
                    Ok([load(PropertyKind::Depth)?, load(PropertyKind::Illuminant)?, load(PropertyKind::Saliency)?])
                })
                .collect::<Result<_>>()?;
            return Ok((maps, true));
        }
        let (frames, _) = self.aligned(rec, fps_native)?;
        let align_dir = self
            .cache
            .sample_dir(Stage::Align, &self.cfg.align_digest(), &rec.sample_id);
        let params = self.cfg.propmaps_resolved();
        let maps: Vec<[PropertyMap; 3]> = frames
            .iter()
            .map(|f| compute_maps(f, &rec.sample_id, &params, self.strict, Some(&frame_png(&align_dir, f.index))))
            .collect::<Result<_>>()?;
        for m in maps.iter().flatten() {
            m.check()?;
            pfm::write(&Self::map_path(&dir, m.kind, m.source_frame), &m.data)?;
        }
        let index: Vec<usize> = frames.iter().map(|f| f.index).collect();
        write_json(&dir.join("frames.json"), &index)?;
        self.cache.mark_complete(Stage::Maps, &digest, &rec.sample_id, index.len())?;
        Ok((maps, false))
    }

    fn padf_path(dir: &Path, kind: PropertyKind, index: usize) -> PathBuf {
        dir.join(kind.name()).join(format!("{index}.padf"))
    }

    /// Feature vectors per aligned frame, cached as PADF.
    pub fn features(&self, rec: &SampleRecord, fps_native: Option<f64>) -> Result<(SampleFeatures, bool)> {
        let digest = self.cfg.features_digest();
        let dir = self.cache.sample_dir(Stage::Features, &digest, &rec.sample_id);
        let id = &rec.sample_id;
        if self.cached(Stage::Features, &digest, id) {
            let meta: FeatureMeta = read_json(&dir.join("meta.json"))?;
            let frames = meta
                .frames
                .iter()
                .map(|&i| -> Result<[FeatureVector; 3]> {
                    let load = |kind: PropertyKind| -> Result<FeatureVector> {
                        FeatureVector::new(read_padf(&Self::padf_path(&dir, kind, i))?, kind, id.clone(), i, meta.extractor_id.clone())
                    };
                    Ok([load(PropertyKind::Depth)?, load(PropertyKind::Illuminant)?, load(PropertyKind::Saliency)?])
                })
                .collect::<Result<_>>()?;
            return Ok((
                SampleFeatures {
                    sample_id: id.clone(),
                    frames,
                },
                true,
            ));
        }
        let (maps, _) = self.maps(rec, fps_native)?;
        let extractor = self.cfg.features_resolved();
        let frames: Vec<[FeatureVector; 3]> = maps
            .iter()
            .map(|m| -> Result<[FeatureVector; 3]> {
                Ok([
                    extract_features(&m[0], id, &extractor)?,
                    extract_features(&m[1], id, &extractor)?,
                    extract_features(&m[2], id, &extractor)?,
                ])
            })
            .collect::<Result<_>>()?;
        for f in frames.iter().flatten() {
            write_padf(&Self::padf_path(&dir, f.kind, f.frame_index), &f.values)?;
        }
        write_json(
            &dir.join("meta.json"),
            &FeatureMeta {
                extractor_id: extractor.extractor_id(),
                frames: frames.iter().map(|f| f[0].frame_index).collect(),
            },
        )?;
        self.cache.mark_complete(Stage::Features, &digest, id, frames.len())?;
        Ok((
            SampleFeatures {
                sample_id: id.clone(),
                frames,
            },
            false,
        ))
    }

    fn records_with_fps(manifests: &[DatasetManifest]) -> Vec<(&SampleRecord, Option<f64>)> {
        manifests
            .iter()
            .flat_map(|m| m.records.iter().map(move |r| (r, m.fps_native)))
            .collect()
    }

    /// Runs one stage (and whatever it depends on) over every sample.
    pub fn run_stage(&self, manifests: &[DatasetManifest], stage: Stage) -> Result<StageSummary> {
        let records = Self::records_with_fps(manifests);
        let results: Vec<(usize, bool)> = self.pool.install(|| {
            records
                .par_iter()
                .map(|&(r, fps)| match stage {
                    Stage::Frames => self.write_frames_stage(r, fps),
                    Stage::Align => self.aligned(r, fps).map(|(f, c)| (f.len(), c)),
                    Stage::Maps => self.maps(r, fps).map(|(m, c)| (m.len(), c)),
                    Stage::Features => self.features(r, fps).map(|(f, c)| (f.frames.len(), c)),
                })
                .collect::<Result<_>>()
        })?;
        Ok(StageSummary {
            samples: results.len(),
            frames: results.iter().map(|r| r.0).sum(),
            cached: results.iter().filter(|r| r.1).count(),
        })
    }

    /// Features of the given records, computed or loaded from the cache.
    pub fn features_for(
        &self,
        records: &[SampleRecord],
        manifests: &[DatasetManifest],
    ) -> Result<BTreeMap<String, SampleFeatures>> {
        let fps: BTreeMap<&str, Option<f64>> = manifests
            .iter()
            .map(|m| (m.dataset_name.as_str(), m.fps_native))
            .collect();
        let out: Vec<SampleFeatures> = self.pool.install(|| {
            records
                .par_iter()
                .map(|r| {
                    self.features(r, fps.get(r.dataset_name.as_str()).copied().flatten())
                        .map(|x| x.0)
                })
                .collect::<Result<_>>()
        })?;
        Ok(out.into_iter().map(|f| (f.sample_id.clone(), f)).collect())
    }

    pub fn protocol_spec(&self) -> Result<&ProtocolSpec> {
        self.cfg
            .protocol
            .as_ref()
            .ok_or_else(|| PadError::Config("no [protocol] configured".into()))
    }

    pub fn resolve(&self, manifests: &[DatasetManifest]) -> Result<ResolvedProtocol> {
        resolve_protocol(self.protocol_spec()?, manifests, self.cfg.seed)
    }

    pub fn train(&self, manifests: &[DatasetManifest]) -> Result<(ResolvedProtocol, TrainedModels)> {
        let protocol = self.resolve(manifests)?;
        let records: Vec<SampleRecord> = protocol.train.iter().chain(&protocol.dev).cloned().collect();
        let features = self.features_for(&records, manifests)?;
        let models = self.pool.install(|| train_models(&protocol, &features, &self.cfg.classifier, &self.cfg.digest()))?;
        Ok((protocol, models))
    }

    pub fn evaluate(&self, manifests: &[DatasetManifest], models: &TrainedModels) -> Result<EvalReport> {
        let protocol = self.resolve(manifests)?;
        let features = self.features_for(&protocol.test, manifests)?;
        self.pool.install(|| {
            evaluate_models(
                models,
                &protocol.test,
                &features,
                &attack_types_of(&protocol),
                &self.protocol_spec()?.summary(),
                self.cfg.seed,
                &self.cfg.digest(),
            )
        })
    }
}

const THRESHOLDS_FILE: &str = "thresholds.json";

#[derive(Debug, Serialize, Deserialize)]
struct ThresholdsFile {
    config_digest: String,
    thresholds: Thresholds,
}

fn model_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.padm"))
}

pub fn save_models(dir: &Path, models: &TrainedModels, digest: &str) -> Result<()> {
    for m in models.stage1.iter().chain([&models.fusion]).chain(&models.concatenated) {
        model_file::save(&model_path(dir, m.target.name()), m)?;
    }
    write_json(
        &dir.join(THRESHOLDS_FILE),
        &ThresholdsFile {
            config_digest: digest.to_string(),
            thresholds: models.thresholds.clone(),
        },
    )
}

/// Loads models written by [`save_models`] under the same config digest.
pub fn load_models(dir: &Path, digest: &str) -> Result<TrainedModels> {
    let t: ThresholdsFile = read_json(&dir.join(THRESHOLDS_FILE))?;
    let check = |d: &str, what: &str| {
        if d != digest {
            Err(PadError::DigestMismatch(format!("{what} was trained under config {d}, current config is {digest}")))
        } else {
            Ok(())
        }
    };
    check(&t.config_digest, THRESHOLDS_FILE)?;
    let load = |name: &str| -> Result<SvmModel> {
        let m = model_file::load(&model_path(dir, name))?;
        check(&m.config_digest, name)?;
        Ok(m)
    };
    Ok(TrainedModels {
        stage1: [load("depth")?, load("illuminant")?, load("saliency")?],
        fusion: load("fusion")?,
        concatenated: if t.thresholds.concatenated.is_some() {
            Some(load("concatenated")?)
        } else {
            None
        },
        thresholds: t.thresholds,
    })
}

/// Writes map interchange files (PFM, illuminant PNG) for inspection.
pub fn export_maps(dir: &Path, sample_id: &str, maps: &[[PropertyMap; 3]]) -> Result<()> {
    for m in maps.iter().flatten() {
        let ext = if m.kind == PropertyKind::Illuminant { "png" } else { "pfm" };
        let p = dir
            .join(crate::cache::sanitize(sample_id))
            .join(m.kind.name())
            .join(format!("{}.{ext}", m.source_frame));
        crate::propmaps::write_map(&p, m)?;
    }
    Ok(())
}
