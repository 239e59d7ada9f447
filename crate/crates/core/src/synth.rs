//! Synthetic face videos with known labels, for smoke tests and the
//! end-to-end check.
//!
//! Bona fide videos get a curved depth map, a slightly varying coloured
//! illuminant with a specular highlight, and fine skin texture. Attacks get
//! a flat depth map, a neutral illuminant, a smoothed texture and a dark
//! bezel around the frame.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetEntry, RunConfig};
use crate::error::{PadError, Result};
use crate::features::{ExtractorConfig, ExtractorMode};
use crate::model::{DatasetManifest, DevSource, Label, ProtocolSpec, SampleRecord, Split};
use crate::pfm;
use crate::pipeline::write_png;
use crate::preprocess::{format_landmarks, AlignGeometry, EyeLandmarks};
use crate::propmaps::DepthMode;
use crate::raster::Raster;

pub const DATASET_NAME: &str = "synth";
pub const FPS: f64 = 10.0;
pub const ATTACK_TYPES: [&str; 3] = ["print", "mobile", "highdef"];
pub const DEPTH_TEMPLATE: &str = "depth/{sample_id}/{index}.pfm";

const BEZEL: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub videos_per_subject: usize,
    pub frames_per_video: usize,
    pub seed: u64,
    pub attack_fraction: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_subjects: 10,
            videos_per_subject: 4,
            frames_per_video: 10,
            seed: 0,
            attack_fraction: 0.5,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.videos_per_subject == 0 || self.frames_per_video == 0 {
            return Err(PadError::InvalidInput("synthetic dataset sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.attack_fraction) {
            return Err(PadError::InvalidInput("attack_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Video `i` (subject-major order) is an attack when the running count
    /// `floor(i * af)` steps up, which spreads attacks evenly.
    pub fn is_attack(&self, i: usize) -> bool {
        let af = self.attack_fraction;
        ((i + 1) as f64 * af).floor() > (i as f64 * af).floor()
    }

    /// Subject count of the dev and test splits.
    pub fn held_out_subjects(&self) -> (usize, usize) {
        match self.n_subjects {
            1 => (0, 0),
            2 => (0, 1),
            s => {
                let k = ((0.2 * s as f64).round() as usize).max(1);
                (k, k)
            }
        }
    }
}

pub fn sample_id(subject: usize, video: usize) -> String {
    format!("s{subject:03}_v{video:02}")
}

fn subject_splits(spec: &SynthSpec) -> Vec<Split> {
    let mut order: Vec<usize> = (0..spec.n_subjects).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (n_dev, n_test) = spec.held_out_subjects();
    let mut splits = vec![Split::Train; spec.n_subjects];
    for (rank, &s) in order.iter().enumerate() {
        if rank < n_test {
            splits[s] = Split::Test;
        } else if rank < n_test + n_dev {
            splits[s] = Split::Dev;
        }
    }
    splits
}

#[derive(Debug, Clone, Copy)]
struct Face {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    skin: [f64; 3],
    background: [f64; 3],
}

impl Face {
    fn new(rng: &mut ChaCha8Rng, geom: &AlignGeometry) -> Self {
        let s = geom.canonical_size as f64;
        let tone = rng.gen_range(0.55..0.9);
        Face {
            cx: s / 2.0,
            cy: s * rng.gen_range(0.50..0.54),
            ax: s * rng.gen_range(0.30..0.34),
            ay: s * rng.gen_range(0.40..0.44),
            skin: [tone, tone * rng.gen_range(0.72..0.82), tone * rng.gen_range(0.58..0.7)],
            background: [rng.gen_range(0.2..0.6), rng.gen_range(0.2..0.6), rng.gen_range(0.2..0.6)],
        }
    }

    /// Normalised radius; below 1 inside the face.
    fn radius2(&self, x: f64, y: f64) -> f64 {
        ((x - self.cx) / self.ax).powi(2) + ((y - self.cy) / self.ay).powi(2)
    }
}

fn jittered_illuminant(rng: &mut ChaCha8Rng, base: [f64; 3]) -> [f64; 3] {
    let e: Vec<f64> = base.iter().map(|&b| (b + rng.gen_range(-0.05..=0.05)).max(0.05)).collect();
    let s: f64 = e.iter().sum();
    [e[0] / s, e[1] / s, e[2] / s]
}

fn render_frame(
    face: &Face,
    label: Label,
    illuminant: [f64; 3],
    shift: (f64, f64),
    geom: &AlignGeometry,
    rng: &mut ChaCha8Rng,
) -> RgbImage {
    let n = geom.canonical_size as usize;
    let attack = label == Label::Attack;
    let eyes = geom.canonical_landmarks();
    let texture_amp = if attack { 0.015 } else { 0.07 };
    let mut noise: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    if attack {
        // a reproduction loses fine texture
        let src = noise.clone();
        for y in 1..n - 1 {
            for x in 1..n - 1 {
                let mut acc = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        acc += src[(y + dy - 1) * n + x + dx - 1];
                    }
                }
                noise[y * n + x] = acc / 9.0;
            }
        }
    }
    let light = [-0.4f64, -0.5, 0.77];
    let highlight = (face.cx + 0.1 * face.ax, face.cy - 0.35 * face.ay);
    let mut img = RgbImage::new(n as u32, n as u32);
    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = (x as f64 + 0.5 - shift.0, y as f64 + 0.5 - shift.1);
            let r2 = face.radius2(fx, fy);
            let mut rgb = [0.0f64; 3];
            if r2 < 1.0 {
                let nx = (fx - face.cx) / face.ax;
                let ny = (fy - face.cy) / face.ay;
                let nz = (1.0 - r2).sqrt();
                let lambert = (nx * light[0] + ny * light[1] + nz * light[2]).max(0.0);
                let shading = if attack { 0.55 + 0.25 * lambert } else { 0.25 + 0.75 * lambert };
                let tex = 1.0 + texture_amp * noise[y * n + x];
                let mut albedo = face.skin;
                let eye_d = [eyes.left, eyes.right]
                    .iter()
                    .map(|e| ((fx - e.0) / 9.0).powi(2) + ((fy - e.1) / 5.0).powi(2))
                    .fold(f64::INFINITY, f64::min);
                if eye_d < 1.0 {
                    albedo = [0.12, 0.1, 0.1];
                }
                let spec = if attack {
                    0.0
                } else {
                    let d2 = ((fx - highlight.0) / (0.18 * face.ax)).powi(2) + ((fy - highlight.1) / (0.12 * face.ay)).powi(2);
                    0.45 * (-d2).exp()
                };
                for c in 0..3 {
                    rgb[c] = 3.0 * illuminant[c] * (albedo[c] * shading * tex + spec);
                }
            } else {
                let grad = 0.85 + 0.3 * fy / n as f64;
                for c in 0..3 {
                    rgb[c] = 3.0 * illuminant[c] * face.background[c] * grad * (1.0 + 0.5 * texture_amp * noise[y * n + x]);
                }
            }
            if attack && (x < BEZEL || y < BEZEL || x >= n - BEZEL || y >= n - BEZEL) {
                rgb = [0.04, 0.04, 0.05];
            }
            let px = rgb.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img
}

/// Depth in the aligned frame: a dome over the face for bona fide, a flat
/// plane for attacks.
fn render_depth(face: &Face, label: Label, geom: &AlignGeometry) -> Raster {
    let n = geom.canonical_size as usize;
    Raster::from_fn(n, n, 1, |x, y, _| match label {
        Label::Attack => 0.5,
        Label::Bonafide => {
            let r2 = face.radius2(x as f64 + 0.5, y as f64 + 0.5);
            (1.0 - r2).max(0.0).sqrt() as f32
        }
    })
}

fn video_seed(seed: u64, subject: usize, video: usize) -> u64 {
    seed ^ ((subject as u64) << 32 | video as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn relative(p: &str) -> PathBuf {
    PathBuf::from(p)
}

/// Writes frames, landmark sidecars, depth maps, `manifest.jsonl` and a
/// ready-to-run `run.toml` under `out_dir`.
pub fn generate_synthetic_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let geom = AlignGeometry::default();
    let splits = subject_splits(spec);
    let mut records = Vec::new();
    let mut n_attacks = 0usize;
    for subject in 0..spec.n_subjects {
        let mut subject_rng = ChaCha8Rng::seed_from_u64(video_seed(spec.seed, subject, usize::MAX >> 32));
        let base_face = Face::new(&mut subject_rng, &geom);
        for video in 0..spec.videos_per_subject {
            let i = subject * spec.videos_per_subject + video;
            let label = if spec.is_attack(i) { Label::Attack } else { Label::Bonafide };
            let attack_type = (label == Label::Attack).then(|| {
                n_attacks += 1;
                ATTACK_TYPES[(n_attacks - 1) % ATTACK_TYPES.len()].to_string()
            });
            let id = sample_id(subject, video);
            let mut rng = ChaCha8Rng::seed_from_u64(video_seed(spec.seed, subject, video));
            let mut face = base_face;
            for c in 0..3 {
                face.background[c] = (face.background[c] + rng.gen_range(-0.1..0.1)).clamp(0.1, 0.9);
            }
            let base_ill = match label {
                Label::Attack => [1.0 / 3.0; 3],
                Label::Bonafide => {
                    let warm = rng.gen_range(0.0..0.06);
                    [1.0 / 3.0 + warm, 1.0 / 3.0, 1.0 / 3.0 - warm]
                }
            };
            let frame_dir = out_dir.join("frames").join(&id);
            let depth_dir = out_dir.join("depth").join(&id);
            fs::create_dir_all(&frame_dir).map_err(|e| PadError::io(&frame_dir, e))?;
            fs::create_dir_all(&depth_dir).map_err(|e| PadError::io(&depth_dir, e))?;
            let mut landmark_lines = String::new();
            let depth = render_depth(&face, label, &geom);
            for k in 0..spec.frames_per_video {
                let ill = match label {
                    Label::Attack => base_ill,
                    Label::Bonafide => jittered_illuminant(&mut rng, base_ill),
                };
                let shift = (rng.gen_range(-3.0..=3.0f64).round(), rng.gen_range(-3.0..=3.0f64).round());
                let img = render_frame(&face, label, ill, shift, &geom, &mut rng);
                write_png(&frame_dir.join(format!("{k:06}.png")), &img)?;
                let c = geom.canonical_landmarks();
                let lm = EyeLandmarks {
                    left: (c.left.0 + shift.0, c.left.1 + shift.1),
                    right: (c.right.0 + shift.0, c.right.1 + shift.1),
                };
                landmark_lines.push_str(&format_landmarks(&lm));
                landmark_lines.push('\n');
                pfm::write(&depth_dir.join(format!("{k}.pfm")), &depth)?;
            }
            let lm_path = out_dir.join("landmarks").join(format!("{id}.txt"));
            fs::create_dir_all(lm_path.parent().unwrap()).map_err(|e| PadError::io(&lm_path, e))?;
            fs::write(&lm_path, landmark_lines).map_err(|e| PadError::io(&lm_path, e))?;
            records.push(SampleRecord {
                sample_id: id.clone(),
                media_path: relative(&format!("frames/{id}")),
                label,
                attack_type,
                subject_id: format!("s{subject:03}"),
                split: splits[subject],
                dataset_name: DATASET_NAME.into(),
                landmarks_path: Some(relative(&format!("landmarks/{id}.txt"))),
            });
        }
    }
    let manifest = DatasetManifest {
        dataset_name: DATASET_NAME.into(),
        records,
        fps_native: Some(FPS),
    };
    manifest.validate()?;
    manifest.write_jsonl(&out_dir.join("manifest.jsonl"))?;
    let toml_path = out_dir.join("run.toml");
    fs::write(&toml_path, run_config(spec).to_toml()).map_err(|e| PadError::io(&toml_path, e))?;
    Ok(manifest)
}

/// Configuration that runs the full pipeline on a generated dataset.
pub fn run_config(spec: &SynthSpec) -> RunConfig {
    let mut cfg = RunConfig {
        seed: spec.seed,
        ..Default::default()
    };
    cfg.datasets.push(DatasetEntry {
        manifest: "manifest.jsonl".into(),
        fps_native: Some(FPS),
    });
    cfg.preprocess.rate_hz = FPS;
    cfg.propmaps.depth.mode = DepthMode::Precomputed;
    cfg.propmaps.depth.path_template = DEPTH_TEMPLATE.into();
    cfg.features = ExtractorConfig {
        mode: ExtractorMode::Fallback,
        ..Default::default()
    };
    cfg.protocol = match spec.held_out_subjects() {
        (d, _) if d > 0 => Some(ProtocolSpec::intra(DATASET_NAME, DevSource::DevSplit)),
        _ => None,
    };
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{load_manifest, ManifestOptions};
    use crate::preprocess::read_landmarks;
    use std::collections::{BTreeMap, BTreeSet};

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            n_subjects: 2,
            videos_per_subject: 1,
            frames_per_video: 3,
            seed,
            attack_fraction: 0.5,
        }
    }

    fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
                }
            }
        }
        out
    }

    #[test]
    fn small_dataset_layout() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic_dataset(&small(7), dir.path()).unwrap();
        assert_eq!(m.records.len(), 2);
        let pngs: usize = m
            .records
            .iter()
            .map(|r| fs::read_dir(dir.path().join(&r.media_path)).unwrap().count())
            .sum();
        assert_eq!(pngs, 6);
        for r in &m.records {
            let lm = read_landmarks(&dir.path().join(r.landmarks_path.as_ref().unwrap())).unwrap();
            assert_eq!(lm.len(), 3);
            assert!(lm.iter().all(|l| l.is_some()));
        }
        assert_eq!(m.records.iter().filter(|r| r.label == Label::Attack).count(), 1);
        let loaded = load_manifest(&dir.path().join("manifest.jsonl"), &ManifestOptions { strict: true, fps_native: None }).unwrap();
        assert_eq!(loaded.records.len(), 2);
        let cfg = RunConfig::load(&dir.path().join("run.toml")).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.propmaps.depth.mode, DepthMode::Precomputed);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_synthetic_dataset(&small(7), a.path()).unwrap();
        generate_synthetic_dataset(&small(7), b.path()).unwrap();
        assert_eq!(tree(a.path()), tree(b.path()));
        let c = tempfile::tempdir().unwrap();
        generate_synthetic_dataset(&small(8), c.path()).unwrap();
        assert_ne!(tree(a.path()), tree(c.path()));
    }

    #[test]
    fn depth_is_curved_only_for_bona_fide() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic_dataset(&small(3), dir.path()).unwrap();
        for r in &m.records {
            let d = pfm::read(&dir.path().join("depth").join(&r.sample_id).join("0.pfm")).unwrap();
            let mean = d.data.iter().map(|&v| v as f64).sum::<f64>() / d.data.len() as f64;
            let var = d.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d.data.len() as f64;
            match r.label {
                Label::Attack => assert_eq!(var, 0.0),
                Label::Bonafide => assert!(var > 0.01, "variance {var}"),
            }
        }
    }

    #[test]
    fn splits_are_subject_disjoint_and_balanced() {
        let spec = SynthSpec {
            n_subjects: 10,
            videos_per_subject: 4,
            frames_per_video: 1,
            seed: 5,
            attack_fraction: 0.5,
        };
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic_dataset(&spec, dir.path()).unwrap();
        let mut by_split: BTreeMap<Split, BTreeSet<String>> = BTreeMap::new();
        for r in &m.records {
            by_split.entry(r.split).or_default().insert(r.subject_id.clone());
        }
        assert_eq!(by_split[&Split::Dev].len(), 2);
        assert_eq!(by_split[&Split::Test].len(), 2);
        assert_eq!(by_split[&Split::Train].len(), 6);
        let all: Vec<&String> = by_split.values().flatten().collect();
        assert_eq!(all.len(), 10);
        for split in [Split::Train, Split::Dev, Split::Test] {
            let recs = m.split(split);
            let attacks = recs.iter().filter(|r| r.label == Label::Attack).count();
            assert_eq!(2 * attacks, recs.len());
        }
        let types: BTreeSet<_> = m.records.iter().filter_map(|r| r.attack_type.clone()).collect();
        assert_eq!(types.len(), 3);
    }

    #[test]
    fn attack_count_tracks_fraction() {
        for (n, af) in [(7usize, 0.3), (10, 0.5), (9, 1.0), (5, 0.0), (13, 0.77)] {
            let spec = SynthSpec {
                n_subjects: n,
                videos_per_subject: 1,
                frames_per_video: 1,
                seed: 0,
                attack_fraction: af,
            };
            let attacks = (0..n).filter(|&i| spec.is_attack(i)).count();
            assert!((attacks as f64 - af * n as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn held_out_sizes() {
        let s = |n| SynthSpec { n_subjects: n, ..Default::default() }.held_out_subjects();
        assert_eq!(s(1), (0, 0));
        assert_eq!(s(2), (0, 1));
        assert_eq!(s(3), (1, 1));
        assert_eq!(s(10), (2, 2));
        assert_eq!(s(20), (4, 4));
    }

    proptest::proptest! {
        #[test]
        fn attacks_spread_evenly(n in 1usize..200, af in 0.0f64..=1.0) {
            let spec = SynthSpec { n_subjects: n, videos_per_subject: 1, attack_fraction: af, ..Default::default() };
            let mut attacks = 0;
            for i in 0..n {
                attacks += spec.is_attack(i) as usize;
                // every prefix holds floor(af * len) attacks
                proptest::prop_assert_eq!(attacks, ((i + 1) as f64 * af).floor() as usize);
            }
        }

        #[test]
        fn split_sizes_follow_subject_count(n in 1usize..60, seed in proptest::prelude::any::<u64>()) {
            let spec = SynthSpec { n_subjects: n, seed, ..Default::default() };
            let splits = subject_splits(&spec);
            proptest::prop_assert_eq!(&splits, &subject_splits(&spec));
            let count = |x: Split| splits.iter().filter(|&&s| s == x).count();
            let (dev, test) = spec.held_out_subjects();
            proptest::prop_assert_eq!((count(Split::Dev), count(Split::Test)), (dev, test));
            proptest::prop_assert!(count(Split::Train) >= 1);
        }
    }
}
